#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "safe_fbsde/tape.hpp"

namespace safe_fbsde {

/// A scalar function of a parameter set together with its analytic gradient.
struct Computation {
  std::function<double(const ParameterSet&)> value;
  std::function<GradientSet(const ParameterSet&)> gradient;
  /// Optional digest of the non-smooth structure (e.g. QP active sets) at a
  /// point. Coordinates whose perturbations change it are skipped.
  std::function<std::uint64_t(const ParameterSet&)> signature;
};

struct FdSettings {
  double epsilon = 1e-6;       // step = epsilon * max(1, |theta|)
  double denominator_floor = 1e-6;
};

struct TensorCheck {
  std::string name;
  std::size_t checked = 0;
  std::size_t skipped = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

struct FdReport {
  std::vector<TensorCheck> tensors;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
};

/// |a - f| / max(|a|, |f|, floor)
double relative_error(double analytic, double numeric, double floor = 1e-6);

/// Central differences on every scalar of `params`. Noise and anything else
/// random inside `computation` must be fixed by the caller so that both
/// perturbations see the same samples.
FdReport finite_difference_check(const Computation& computation, const ParameterSet& params,
                                 const FdSettings& settings = {});

}  // namespace safe_fbsde
