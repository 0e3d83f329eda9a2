#include "safe_fbsde/dynamics.hpp"

#include <cmath>
#include <sstream>

namespace safe_fbsde {

AdVector seed_state(const Vector& x) {
  const auto n = static_cast<int>(x.size());
  if (n > kMaxAdStateDim) {
    throw std::invalid_argument("state dimension " + std::to_string(n) +
                                " exceeds the AD limit of " + std::to_string(kMaxAdStateDim));
  }
  AdVector out(n);
  for (int i = 0; i < n; ++i) {
    out[i].value() = x[i];
    out[i].derivatives() = AdDerivative::Unit(n, i);
  }
  return out;
}

namespace {

template <class Derived>
class ControlAffineSystem : public SystemModel {
 public:
  Vector drift(const Vector& x) const final { return self().template drift_t<double>(x); }
  Matrix actuation(const Vector& x) const final { return self().template actuation_t<double>(x); }
  AdVector drift(const AdVector& x) const final {
    return pad_derivatives(AdVector(self().template drift_t<AdScalar>(x)), x.size());
  }
  AdMatrix actuation(const AdVector& x) const final {
    return pad_derivatives(AdMatrix(self().template actuation_t<AdScalar>(x)), x.size());
  }
  Matrix diffusion(const Vector&) const final { return sigma_matrix_; }

 protected:
  Matrix sigma_matrix_;

 private:
  const Derived& self() const { return static_cast<const Derived&>(*this); }
};

class Pendulum final : public ControlAffineSystem<Pendulum> {
 public:
  explicit Pendulum(const PendulumParams& p) : p_(p), inertia_(p.mass * p.length * p.length) {
    params_ = {{"mass", p.mass},       {"length", p.length}, {"damping", p.damping},
               {"gravity", p.gravity}, {"sigma", p.sigma},   {"inertia", inertia_}};
    sigma_matrix_ = Matrix::Zero(2, 2);
    sigma_matrix_(1, 1) = p.sigma;
  }

  std::string name() const override { return "pendulum"; }
  int state_dim() const override { return 2; }
  int control_dim() const override { return 1; }
  int noise_dim() const override { return 2; }

  template <class T>
  Eigen::Matrix<T, Eigen::Dynamic, 1> drift_t(const Eigen::Matrix<T, Eigen::Dynamic, 1>& x) const {
    using std::sin;
    Eigen::Matrix<T, Eigen::Dynamic, 1> f(2);
    f[0] = x[1];
    f[1] = -(p_.damping / inertia_) * x[1] - (p_.gravity / p_.length) * sin(x[0]);
    return f;
  }

  template <class T>
  Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic> actuation_t(
      const Eigen::Matrix<T, Eigen::Dynamic, 1>&) const {
    Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic> g(2, 1);
    g(0, 0) = T(0.0);
    g(1, 0) = T(1.0 / inertia_);
    return g;
  }

 private:
  PendulumParams p_;
  double inertia_;
};

class CartPole final : public ControlAffineSystem<CartPole> {
 public:
  explicit CartPole(const CartPoleParams& p) : p_(p) {
    params_ = {{"cart_mass", p.cart_mass}, {"pole_mass", p.pole_mass}, {"length", p.length},
               {"gravity", p.gravity},     {"sigma", p.sigma}};
    sigma_matrix_ = Matrix::Zero(4, 4);
    sigma_matrix_(2, 2) = p.sigma;
    sigma_matrix_(3, 3) = p.sigma;
  }

  std::string name() const override { return "cartpole"; }
  int state_dim() const override { return 4; }
  int control_dim() const override { return 1; }
  int noise_dim() const override { return 4; }

  template <class T>
  Eigen::Matrix<T, Eigen::Dynamic, 1> drift_t(const Eigen::Matrix<T, Eigen::Dynamic, 1>& x) const {
    using std::cos;
    using std::sin;
    const T s = sin(x[1]);
    const T c = cos(x[1]);
    const T w2 = x[3] * x[3];
    const T denom = p_.cart_mass + p_.pole_mass * s * s;
    Eigen::Matrix<T, Eigen::Dynamic, 1> f(4);
    f[0] = x[2];
    f[1] = x[3];
    f[2] = p_.pole_mass * s * (p_.length * w2 + p_.gravity * c) / denom;
    f[3] = (-p_.pole_mass * p_.length * w2 * c * s - (p_.cart_mass + p_.pole_mass) * p_.gravity * s) /
           (p_.length * denom);
    return f;
  }

  template <class T>
  Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic> actuation_t(
      const Eigen::Matrix<T, Eigen::Dynamic, 1>& x) const {
    using std::cos;
    using std::sin;
    const T s = sin(x[1]);
    const T denom = p_.cart_mass + p_.pole_mass * s * s;
    Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic> g(4, 1);
    g(0, 0) = T(0.0);
    g(1, 0) = T(0.0);
    g(2, 0) = 1.0 / denom;
    g(3, 0) = -cos(x[1]) / (p_.length * denom);
    return g;
  }

 private:
  CartPoleParams p_;
};

class Car2d final : public ControlAffineSystem<Car2d> {
 public:
  Car2d(int num_cars, const CarParams& p) : num_cars_(num_cars) {
    params_ = {{"num_cars", static_cast<double>(num_cars)}, {"sigma", p.sigma}};
    const int n = 4 * num_cars;
    sigma_matrix_ = Matrix::Zero(n, n);
    for (int k = 0; k < num_cars; ++k) {
      sigma_matrix_(4 * k + 2, 4 * k + 2) = p.sigma;
      sigma_matrix_(4 * k + 3, 4 * k + 3) = p.sigma;
    }
  }

  std::string name() const override { return "car2d"; }
  int state_dim() const override { return 4 * num_cars_; }
  int control_dim() const override { return 2 * num_cars_; }
  int noise_dim() const override { return 4 * num_cars_; }

  template <class T>
  Eigen::Matrix<T, Eigen::Dynamic, 1> drift_t(const Eigen::Matrix<T, Eigen::Dynamic, 1>& x) const {
    using std::cos;
    using std::sin;
    Eigen::Matrix<T, Eigen::Dynamic, 1> f(4 * num_cars_);
    for (int k = 0; k < num_cars_; ++k) {
      const T& heading = x[4 * k + 2];
      const T& v = x[4 * k + 3];
      f[4 * k + 0] = v * cos(heading);
      f[4 * k + 1] = v * sin(heading);
      f[4 * k + 2] = T(0.0);
      f[4 * k + 3] = T(0.0);
    }
    return f;
  }

  template <class T>
  Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic> actuation_t(
      const Eigen::Matrix<T, Eigen::Dynamic, 1>& x) const {
    Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic> g(4 * num_cars_, 2 * num_cars_);
    for (Eigen::Index r = 0; r < g.rows(); ++r) {
      for (Eigen::Index c = 0; c < g.cols(); ++c) g(r, c) = T(0.0);
    }
    for (int k = 0; k < num_cars_; ++k) {
      g(4 * k + 2, 2 * k) = x[4 * k + 3];  // heading rate = v * u_steer
      g(4 * k + 3, 2 * k + 1) = T(1.0);
    }
    return g;
  }

 private:
  int num_cars_;
};

void require_positive(double value, const char* what) {
  if (!(value > 0.0) || !std::isfinite(value)) {
    std::ostringstream os;
    os << what << " must be positive and finite, got " << value;
    throw std::invalid_argument(os.str());
  }
}

void require_nonnegative(double value, const char* what) {
  if (!(value >= 0.0) || !std::isfinite(value)) {
    std::ostringstream os;
    os << what << " must be non-negative and finite, got " << value;
    throw std::invalid_argument(os.str());
  }
}

}  // namespace

SystemPtr make_pendulum(const PendulumParams& params) {
  require_positive(params.mass, "pendulum mass");
  require_positive(params.length, "pendulum length");
  require_nonnegative(params.damping, "pendulum damping");
  require_nonnegative(params.gravity, "gravity");
  require_nonnegative(params.sigma, "sigma");
  return std::make_shared<Pendulum>(params);
}

SystemPtr make_cartpole(const CartPoleParams& params) {
  require_positive(params.cart_mass, "cart mass");
  require_nonnegative(params.pole_mass, "pole mass");
  require_positive(params.length, "pole length");
  require_nonnegative(params.gravity, "gravity");
  require_nonnegative(params.sigma, "sigma");
  return std::make_shared<CartPole>(params);
}

SystemPtr make_car2d(int num_cars, const CarParams& params) {
  if (num_cars < 1) throw std::invalid_argument("num_cars must be >= 1");
  if (4 * num_cars > kMaxAdStateDim) {
    throw std::invalid_argument("too many cars for the AD state limit");
  }
  require_nonnegative(params.sigma, "sigma");
  return std::make_shared<Car2d>(num_cars, params);
}

Vector euler_maruyama_step(const SystemModel& system, const Vector& x, const Vector& u, double dt,
                           const Vector& dw) {
  if (x.size() != system.state_dim() || u.size() != system.control_dim() ||
      dw.size() != system.noise_dim()) {
    std::ostringstream os;
    os << "euler_maruyama_step: shape mismatch (x " << x.size() << "/" << system.state_dim()
       << ", u " << u.size() << "/" << system.control_dim() << ", dw " << dw.size() << "/"
       << system.noise_dim() << ")";
    throw std::invalid_argument(os.str());
  }
  if (!(dt > 0.0)) throw std::invalid_argument("euler_maruyama_step: dt must be positive");
  return x + (system.drift(x) + system.actuation(x) * u) * dt + system.diffusion(x) * dw;
}

NoiseStream::NoiseStream(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(a),    static_cast<std::uint32_t>(a >> 32),
                    static_cast<std::uint32_t>(b),    static_cast<std::uint32_t>(b >> 32)};
  engine_.seed(seq);
}

void NoiseStream::reseed(std::uint64_t seed) {
  engine_.seed(seed);
  normal_.reset();
}

Vector NoiseStream::sample(int n_w, double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("sample_noise: dt must be positive");
  const double scale = std::sqrt(dt);
  Vector dw(n_w);
  for (int i = 0; i < n_w; ++i) dw[i] = scale * normal_(engine_);
  return dw;
}

double NoiseStream::uniform(double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(engine_);
}

double NoiseStream::normal() { return normal_(engine_); }

}  // namespace safe_fbsde
