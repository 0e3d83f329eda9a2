#include "safe_fbsde/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace safe_fbsde {

double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

FdReport finite_difference_check(const Computation& computation, const ParameterSet& params,
                                 const FdSettings& settings) {
  if (!(settings.epsilon > 0.0)) throw std::invalid_argument("finite_difference_check: epsilon must be > 0");
  const GradientSet analytic = computation.gradient(params);
  if (!analytic.same_layout(params)) throw std::invalid_argument("gradient layout mismatch");
  const bool use_sig = static_cast<bool>(computation.signature);
  const std::uint64_t base_sig = use_sig ? computation.signature(params) : 0;

  FdReport report;
  ParameterSet probe = params;
  for (std::size_t k = 0; k < params.size(); ++k) {
    TensorCheck tc;
    tc.name = params[k].name;
    const auto count = params[k].value.size();
    for (Eigen::Index i = 0; i < count; ++i) {
      const double theta = params[k].value.data()[i];
      const double h = settings.epsilon * std::max(1.0, std::abs(theta));
      double& slot = probe[k].value.data()[i];

      slot = theta + h;
      const double f_plus = computation.value(probe);
      const bool same_plus = !use_sig || computation.signature(probe) == base_sig;
      slot = theta - h;
      const double f_minus = computation.value(probe);
      const bool same_minus = !use_sig || computation.signature(probe) == base_sig;
      slot = theta;

      if (!same_plus || !same_minus) {
        ++tc.skipped;
        continue;
      }
      const double numeric = (f_plus - f_minus) / (2.0 * h);
      const double a = analytic[k].value.data()[i];
      const double rel = relative_error(a, numeric, settings.denominator_floor);
      ++tc.checked;
      tc.max_abs_error = std::max(tc.max_abs_error, std::abs(a - numeric));
      if (tc.checked == 1 || rel > tc.max_rel_error) {
        tc.max_rel_error = rel;
        tc.worst_index = static_cast<std::size_t>(i);
        tc.worst_analytic = a;
        tc.worst_numeric = numeric;
      }
    }
    report.max_rel_error = std::max(report.max_rel_error, tc.max_rel_error);
    report.checked += tc.checked;
    report.skipped += tc.skipped;
    report.tensors.push_back(std::move(tc));
  }
  return report;
}

}  // namespace safe_fbsde
