#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "safe_fbsde/trainer.hpp"

namespace safe_fbsde {

/// One line of train_log.jsonl (no wall-clock fields, so logs are
/// reproducible).
nlohmann::json iteration_json(const IterationLog& entry);

/// t, x_0..x_{n-1}, u_0..u_{m-1}, V, h_<name>... ; the control cells of the
/// terminal row are "nan".
void write_trajectory_csv(std::ostream& out, const Trajectory& trajectory, double dt,
                          const std::vector<std::string>& barrier_names);

/// t, mean_x..., std_x..., mean_u..., mean_V
void write_mean_trajectory_csv(std::ostream& out, const EvaluationResult& result, double dt);

nlohmann::json evaluation_json(const EvaluationResult& result,
                               const std::vector<std::string>& barrier_names);

/// Barrier name reduced to [A-Za-z0-9_-] for use in file names.
std::string file_safe(const std::string& name);

std::vector<std::string> barrier_names(const BarrierSet& barriers);

void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace safe_fbsde
