#pragma once

#include <stdexcept>
#include <string>

#include <Eigen/Core>
#include <unsupported/Eigen/AutoDiff>

namespace safe_fbsde {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Forward-mode scalar used to differentiate dynamics and barrier rows with
// respect to the state. The derivative vector lives on the stack; states
// wider than kMaxAdStateDim are rejected by seed_state().
inline constexpr int kMaxAdStateDim = 32;
using AdDerivative = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kMaxAdStateDim, 1>;
using AdScalar = Eigen::AutoDiffScalar<AdDerivative>;
using AdVector = Eigen::Matrix<AdScalar, Eigen::Dynamic, 1>;
using AdMatrix = Eigen::Matrix<AdScalar, Eigen::Dynamic, Eigen::Dynamic>;

/// Lifts x to AD scalars with the identity as seed, so that the derivative
/// part of any scalar function of the result is its state gradient.
AdVector seed_state(const Vector& x);

/// Constants built inside AD code carry empty derivative vectors; mixing those
/// with sized ones is undefined in Eigen, so every AD result is padded to n.
inline AdScalar pad_derivatives(AdScalar s, Eigen::Index n) {
  if (s.derivatives().size() != n) s.derivatives() = AdDerivative::Zero(n);
  return s;
}
template <class M>
M pad_derivatives(M m, Eigen::Index n) {
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    if (m.data()[i].derivatives().size() != n) m.data()[i].derivatives() = AdDerivative::Zero(n);
  }
  return m;
}

/// AD zero with an n-wide zero derivative.
inline AdScalar ad_zero(Eigen::Index n) { return AdScalar(0.0, AdDerivative::Zero(n)); }

class InfeasibleProblem : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericalFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SafetyViolation : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UnsafeStart : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace safe_fbsde
