#include "safe_fbsde/artifacts.hpp"

#include <cctype>
#include <fstream>
#include <iomanip>

namespace safe_fbsde {
namespace {

void put(std::ostream& out, double v) {
  if (std::isnan(v)) {
    out << "nan";
  } else {
    out << v;
  }
}

nlohmann::json to_array(const Vector& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

}  // namespace

nlohmann::json iteration_json(const IterationLog& e) {
  nlohmann::json j;
  j["iteration"] = e.iteration;
  j["loss"] = {{"total", e.loss.total},
               {"value", e.loss.value_term},
               {"gradient", e.loss.gradient_term},
               {"terminal_value", e.loss.terminal_value_term},
               {"terminal_gradient", e.loss.terminal_gradient_term},
               {"weight_decay", e.loss.weight_decay_term}};
  j["min_h"] = e.min_h;
  j["psi"] = e.psi;
  j["qp"] = {{"solves", e.qp.solves},
             {"mean_iterations", e.qp.mean_iterations},
             {"max_iterations", e.qp.max_iterations},
             {"max_residual", e.qp.max_residual},
             {"polished_fraction", e.qp.polished_fraction}};
  return j;
}

void write_trajectory_csv(std::ostream& out, const Trajectory& tr, double dt,
                          const std::vector<std::string>& names) {
  const auto n_x = tr.states.cols();
  const auto n_u = tr.controls.cols();
  out << "t";
  for (Eigen::Index i = 0; i < n_x; ++i) out << ",x" << i;
  for (Eigen::Index i = 0; i < n_u; ++i) out << ",u" << i;
  out << ",V";
  for (const auto& n : names) out << ",h_" << n;
  out << "\n" << std::setprecision(17);
  const int steps = tr.horizon();
  for (int t = 0; t <= steps; ++t) {
    put(out, t * dt);
    for (Eigen::Index i = 0; i < n_x; ++i) {
      out << ",";
      put(out, tr.states(t, i));
    }
    for (Eigen::Index i = 0; i < n_u; ++i) {
      out << ",";
      put(out, t < steps ? tr.controls(t, i) : std::nan(""));
    }
    out << ",";
    put(out, tr.values[t]);
    for (Eigen::Index b = 0; b < tr.barrier_values.cols(); ++b) {
      out << ",";
      put(out, tr.barrier_values(t, b));
    }
    out << "\n";
  }
}

void write_mean_trajectory_csv(std::ostream& out, const EvaluationResult& r, double dt) {
  const auto n_x = r.mean_states.cols();
  const auto n_u = r.mean_controls.cols();
  const auto rows = r.mean_states.rows();
  out << "t";
  for (Eigen::Index i = 0; i < n_x; ++i) out << ",mean_x" << i;
  for (Eigen::Index i = 0; i < n_x; ++i) out << ",std_x" << i;
  for (Eigen::Index i = 0; i < n_u; ++i) out << ",mean_u" << i;
  out << ",mean_V\n" << std::setprecision(17);
  for (Eigen::Index t = 0; t < rows; ++t) {
    put(out, static_cast<double>(t) * dt);
    for (Eigen::Index i = 0; i < n_x; ++i) {
      out << ",";
      put(out, r.mean_states(t, i));
    }
    for (Eigen::Index i = 0; i < n_x; ++i) {
      out << ",";
      put(out, r.std_states(t, i));
    }
    for (Eigen::Index i = 0; i < n_u; ++i) {
      out << ",";
      put(out, t < r.mean_controls.rows() ? r.mean_controls(t, i) : std::nan(""));
    }
    out << ",";
    put(out, r.mean_values[t]);
    out << "\n";
  }
}

nlohmann::json evaluation_json(const EvaluationResult& r, const std::vector<std::string>& names) {
  nlohmann::json j;
  j["num_rollouts"] = r.trajectories.size();
  j["terminal_error_mean"] = to_array(r.terminal_error_mean);
  j["terminal_error_std"] = to_array(r.terminal_error_std);
  j["terminal_error_abs_mean"] = to_array(r.terminal_error_abs_mean);
  j["barriers"] = names;
  j["min_h"] = to_array(r.min_h);
  j["min_h_overall"] = r.min_h_overall;
  j["mean_initial_value"] = r.mean_values.size() ? r.mean_values[0] : 0.0;
  return j;
}

std::string file_safe(const std::string& name) {
  std::string out;
  for (char ch : name) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) || ch == '_' || ch == '-') {
      out.push_back(ch);
    } else if (ch == ',' || ch == '(' || ch == '@' || ch == '.') {
      out.push_back('_');
    }
  }
  while (!out.empty() && out.back() == '_') out.pop_back();
  return out;
}

std::vector<std::string> barrier_names(const BarrierSet& barriers) {
  std::vector<std::string> names;
  for (const auto& b : barriers) names.push_back(b->name());
  return names;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace safe_fbsde
