#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "safe_fbsde/dynamics.hpp"

namespace safe_fbsde {

/// Zeroing barrier h(x) >= 0 with linear class-K function alpha(h) = gamma * h.
///
/// All bundled barriers are "position term minus mu * velocity^2", so the
/// Hessian is constant and the Ito trace term 1/2 tr(H Sigma Sigma^T) does not
/// depend on the state.
class Barrier {
 public:
  Barrier(double mu, double gamma);
  virtual ~Barrier() = default;

  virtual std::string name() const = 0;
  virtual int state_dim() const = 0;

  virtual double value(const Vector& x) const = 0;
  virtual Vector gradient(const Vector& x) const = 0;
  virtual AdScalar value(const AdVector& x) const = 0;
  virtual AdVector gradient(const AdVector& x) const = 0;
  virtual Matrix hessian() const = 0;

  /// 1/2 tr(d2h/dx2 Sigma(x) Sigma(x)^T)
  double trace_term(const Vector& x, const SystemModel& system) const;
  double alpha(double h) const { return gamma_ * h; }

  double mu() const { return mu_; }
  double gamma() const { return gamma_; }

 private:
  double mu_;
  double gamma_;
};

using BarrierPtr = std::shared_ptr<const Barrier>;
using BarrierSet = std::vector<BarrierPtr>;

/// (theta_h - theta)(theta - theta_l) - mu theta_dot^2 on state [theta, theta_dot].
BarrierPtr pendulum_box_barrier(double theta_low, double theta_high, double mu, double gamma);
/// Cart position box on the cart-pole state.
BarrierPtr cartpole_position_barrier(double x_low, double x_high, double mu, double gamma);
/// Pole angle box on the cart-pole state.
BarrierPtr cartpole_angle_barrier(double theta_low, double theta_high, double mu, double gamma);
/// Circular obstacle for car `car` of a num_cars stack.
BarrierPtr car_obstacle_barrier(double ox, double oy, double radius, double mu, double gamma,
                                int car = 0, int num_cars = 1);
/// Separation between cars i and j: |p_i - p_j|^2 - (2 r)^2 - mu (v_i^2 + v_j^2).
BarrierPtr car_pair_barrier(int i, int j, double car_radius, double mu, double gamma, int num_cars);

/// All C(k, 2) pair barriers for k cars, ordered (0,1), (0,2), ..., (k-2,k-1).
BarrierSet all_car_pair_barriers(int num_cars, double car_radius, double mu, double gamma);

/// One row of C u <= d:  c = -(dh/dx)^T G,  d = gamma h + (dh/dx)^T f + trace term.
struct ConstraintRow {
  Vector c;
  double d = 0.0;
};

ConstraintRow constraint_row(const Barrier& barrier, const SystemModel& system, const Vector& x);

/// Same row with state derivatives carried along. The trace term enters as a
/// constant.
struct AdConstraintRow {
  AdVector c;
  AdScalar d;
};

AdConstraintRow constraint_row(const Barrier& barrier, const SystemModel& system,
                               const AdVector& x, double trace_term);

struct RelativeDegreeReport {
  std::size_t samples = 0;
  std::size_t nonzero = 0;
  double fraction_nonzero = 0.0;
  /// Indices of samples where |L_g h| <= tolerance (control drops out of the row).
  std::vector<std::size_t> flagged;
};

RelativeDegreeReport relative_degree_check(const Barrier& barrier, const SystemModel& system,
                                           std::span<const Vector> samples,
                                           double tolerance = 1e-12);

}  // namespace safe_fbsde
