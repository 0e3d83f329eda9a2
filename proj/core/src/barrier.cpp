#include "safe_fbsde/barrier.hpp"

#include <cmath>
#include <sstream>

namespace safe_fbsde {

Barrier::Barrier(double mu, double gamma) : mu_(mu), gamma_(gamma) {
  if (!(mu >= 0.0) || !std::isfinite(mu)) throw std::invalid_argument("barrier mu must be >= 0");
  if (!(gamma > 0.0) || !std::isfinite(gamma)) {
    throw std::invalid_argument("barrier gamma must be > 0");
  }
}

double Barrier::trace_term(const Vector& x, const SystemModel& system) const {
  const Matrix sigma = system.diffusion(x);
  return 0.5 * (hessian() * sigma * sigma.transpose()).trace();
}

namespace {

template <class T>
using VecT = Eigen::Matrix<T, Eigen::Dynamic, 1>;

template <class Derived>
class BarrierImpl : public Barrier {
 public:
  using Barrier::Barrier;

  double value(const Vector& x) const final { return self().template value_t<double>(x); }
  Vector gradient(const Vector& x) const final { return self().template gradient_t<double>(x); }
  AdScalar value(const AdVector& x) const final {
    return pad_derivatives(self().template value_t<AdScalar>(x), x.size());
  }
  AdVector gradient(const AdVector& x) const final {
    return pad_derivatives(AdVector(self().template gradient_t<AdScalar>(x)), x.size());
  }

 private:
  const Derived& self() const { return static_cast<const Derived&>(*this); }
};

// (high - x_p)(x_p - low) - mu x_v^2 over one position/velocity pair.
class BoxBarrier final : public BarrierImpl<BoxBarrier> {
 public:
  BoxBarrier(std::string name, int n_x, int pos, int vel, double low, double high, double mu,
             double gamma)
      : BarrierImpl(mu, gamma), name_(std::move(name)), n_x_(n_x), pos_(pos), vel_(vel),
        low_(low), high_(high) {
    if (!(high > low)) {
      std::ostringstream os;
      os << name_ << ": upper bound " << high << " must exceed lower bound " << low;
      throw std::invalid_argument(os.str());
    }
  }

  std::string name() const override { return name_; }
  int state_dim() const override { return n_x_; }

  template <class T>
  T value_t(const VecT<T>& x) const {
    return (high_ - x[pos_]) * (x[pos_] - low_) - mu() * x[vel_] * x[vel_];
  }

  template <class T>
  VecT<T> gradient_t(const VecT<T>& x) const {
    VecT<T> g(n_x_);
    for (int i = 0; i < n_x_; ++i) g[i] = T(0.0);
    g[pos_] = high_ - 2.0 * x[pos_] + low_;
    g[vel_] = -2.0 * mu() * x[vel_];
    return g;
  }

  Matrix hessian() const override {
    Matrix h = Matrix::Zero(n_x_, n_x_);
    h(pos_, pos_) = -2.0;
    h(vel_, vel_) = -2.0 * mu();
    return h;
  }

 private:
  std::string name_;
  int n_x_;
  int pos_;
  int vel_;
  double low_;
  double high_;
};

class ObstacleBarrier final : public BarrierImpl<ObstacleBarrier> {
 public:
  ObstacleBarrier(double ox, double oy, double radius, double mu, double gamma, int car,
                  int num_cars)
      : BarrierImpl(mu, gamma), ox_(ox), oy_(oy), radius_(radius), base_(4 * car),
        n_x_(4 * num_cars) {
    if (!(radius > 0.0)) throw std::invalid_argument("obstacle radius must be > 0");
    if (car < 0 || car >= num_cars) throw std::invalid_argument("obstacle car index out of range");
  }

  std::string name() const override {
    std::ostringstream os;
    os << "obstacle_" << ox_ << "_" << oy_ << "_r" << radius_;
    if (base_ > 0) os << "_car" << base_ / 4;
    return os.str();
  }
  int state_dim() const override { return n_x_; }

  template <class T>
  T value_t(const VecT<T>& x) const {
    const T dx = x[base_] - ox_;
    const T dy = x[base_ + 1] - oy_;
    const T& v = x[base_ + 3];
    return dx * dx + dy * dy - radius_ * radius_ - mu() * v * v;
  }

  template <class T>
  VecT<T> gradient_t(const VecT<T>& x) const {
    VecT<T> g(n_x_);
    for (int i = 0; i < n_x_; ++i) g[i] = T(0.0);
    g[base_] = 2.0 * (x[base_] - ox_);
    g[base_ + 1] = 2.0 * (x[base_ + 1] - oy_);
    g[base_ + 3] = -2.0 * mu() * x[base_ + 3];
    return g;
  }

  Matrix hessian() const override {
    Matrix h = Matrix::Zero(n_x_, n_x_);
    h(base_, base_) = 2.0;
    h(base_ + 1, base_ + 1) = 2.0;
    h(base_ + 3, base_ + 3) = -2.0 * mu();
    return h;
  }

 private:
  double ox_;
  double oy_;
  double radius_;
  int base_;
  int n_x_;
};

class CarPairBarrier final : public BarrierImpl<CarPairBarrier> {
 public:
  CarPairBarrier(int i, int j, double car_radius, double mu, double gamma, int num_cars)
      : BarrierImpl(mu, gamma), i_(i), j_(j), min_dist_(2.0 * car_radius), n_x_(4 * num_cars) {
    if (!(car_radius > 0.0)) throw std::invalid_argument("car radius must be > 0");
    if (i < 0 || j < 0 || i >= num_cars || j >= num_cars || i == j) {
      throw std::invalid_argument("car pair indices must be distinct and in range");
    }
  }

  std::string name() const override {
    return "pair_" + std::to_string(i_) + "_" + std::to_string(j_);
  }
  int state_dim() const override { return n_x_; }

  template <class T>
  T value_t(const VecT<T>& x) const {
    const int a = 4 * i_;
    const int b = 4 * j_;
    const T dx = x[a] - x[b];
    const T dy = x[a + 1] - x[b + 1];
    return dx * dx + dy * dy - min_dist_ * min_dist_ -
           mu() * (x[a + 3] * x[a + 3] + x[b + 3] * x[b + 3]);
  }

  template <class T>
  VecT<T> gradient_t(const VecT<T>& x) const {
    const int a = 4 * i_;
    const int b = 4 * j_;
    VecT<T> g(n_x_);
    for (int k = 0; k < n_x_; ++k) g[k] = T(0.0);
    const T dx = x[a] - x[b];
    const T dy = x[a + 1] - x[b + 1];
    g[a] = 2.0 * dx;
    g[a + 1] = 2.0 * dy;
    g[a + 3] = -2.0 * mu() * x[a + 3];
    g[b] = -2.0 * dx;
    g[b + 1] = -2.0 * dy;
    g[b + 3] = -2.0 * mu() * x[b + 3];
    return g;
  }

  Matrix hessian() const override {
    const int a = 4 * i_;
    const int b = 4 * j_;
    Matrix h = Matrix::Zero(n_x_, n_x_);
    for (int k = 0; k < 2; ++k) {
      h(a + k, a + k) = 2.0;
      h(b + k, b + k) = 2.0;
      h(a + k, b + k) = -2.0;
      h(b + k, a + k) = -2.0;
    }
    h(a + 3, a + 3) = -2.0 * mu();
    h(b + 3, b + 3) = -2.0 * mu();
    return h;
  }

 private:
  int i_;
  int j_;
  double min_dist_;
  int n_x_;
};

void check_shapes(const Barrier& barrier, const SystemModel& system, Eigen::Index x_size) {
  if (barrier.state_dim() != system.state_dim() || x_size != system.state_dim()) {
    std::ostringstream os;
    os << "barrier " << barrier.name() << " expects n_x=" << barrier.state_dim() << ", system "
       << system.name() << " has n_x=" << system.state_dim() << ", state has " << x_size;
    throw std::invalid_argument(os.str());
  }
}

}  // namespace

BarrierPtr pendulum_box_barrier(double theta_low, double theta_high, double mu, double gamma) {
  return std::make_shared<BoxBarrier>("pendulum_angle", 2, 0, 1, theta_low, theta_high, mu, gamma);
}

BarrierPtr cartpole_position_barrier(double x_low, double x_high, double mu, double gamma) {
  return std::make_shared<BoxBarrier>("cart_position", 4, 0, 2, x_low, x_high, mu, gamma);
}

BarrierPtr cartpole_angle_barrier(double theta_low, double theta_high, double mu, double gamma) {
  return std::make_shared<BoxBarrier>("pole_angle", 4, 1, 3, theta_low, theta_high, mu, gamma);
}

BarrierPtr car_obstacle_barrier(double ox, double oy, double radius, double mu, double gamma,
                                int car, int num_cars) {
  return std::make_shared<ObstacleBarrier>(ox, oy, radius, mu, gamma, car, num_cars);
}

BarrierPtr car_pair_barrier(int i, int j, double car_radius, double mu, double gamma,
                            int num_cars) {
  return std::make_shared<CarPairBarrier>(i, j, car_radius, mu, gamma, num_cars);
}

BarrierSet all_car_pair_barriers(int num_cars, double car_radius, double mu, double gamma) {
  BarrierSet out;
  for (int i = 0; i < num_cars; ++i) {
    for (int j = i + 1; j < num_cars; ++j) {
      out.push_back(car_pair_barrier(i, j, car_radius, mu, gamma, num_cars));
    }
  }
  return out;
}

ConstraintRow constraint_row(const Barrier& barrier, const SystemModel& system, const Vector& x) {
  check_shapes(barrier, system, x.size());
  const Vector grad = barrier.gradient(x);
  ConstraintRow row;
  row.c = -(system.actuation(x).transpose() * grad);
  row.d = barrier.alpha(barrier.value(x)) + grad.dot(system.drift(x)) +
          barrier.trace_term(x, system);
  return row;
}

AdConstraintRow constraint_row(const Barrier& barrier, const SystemModel& system,
                               const AdVector& x, double trace_term) {
  check_shapes(barrier, system, x.size());
  const AdVector grad = barrier.gradient(x);
  const AdMatrix g = system.actuation(x);
  const AdVector f = system.drift(x);
  AdConstraintRow row;
  row.c.resize(g.cols());
  for (Eigen::Index j = 0; j < g.cols(); ++j) {
    AdScalar acc = ad_zero(x.size());
    for (Eigen::Index i = 0; i < g.rows(); ++i) acc += grad[i] * g(i, j);
    row.c[j] = -acc;
  }
  AdScalar lie_f = ad_zero(x.size());
  for (Eigen::Index i = 0; i < f.size(); ++i) lie_f += grad[i] * f[i];
  row.d = barrier.gamma() * barrier.value(x) + lie_f + trace_term;
  return row;
}

RelativeDegreeReport relative_degree_check(const Barrier& barrier, const SystemModel& system,
                                           std::span<const Vector> samples, double tolerance) {
  RelativeDegreeReport report;
  report.samples = samples.size();
  for (std::size_t k = 0; k < samples.size(); ++k) {
    const Vector& x = samples[k];
    check_shapes(barrier, system, x.size());
    const Vector lgh = system.actuation(x).transpose() * barrier.gradient(x);
    if (lgh.lpNorm<Eigen::Infinity>() > tolerance) {
      ++report.nonzero;
    } else {
      report.flagged.push_back(k);
    }
  }
  report.fraction_nonzero =
      samples.empty() ? 0.0 : static_cast<double>(report.nonzero) / static_cast<double>(samples.size());
  return report;
}

}  // namespace safe_fbsde
