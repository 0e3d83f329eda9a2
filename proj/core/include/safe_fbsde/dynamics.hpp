#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <random>
#include <string>

#include "safe_fbsde/types.hpp"

namespace safe_fbsde {

// Control-affine Ito SDE  dx = (f(x) + G(x) u) dt + Sigma(x) dw.
//
// drift/actuation come in a double and an AD flavour so the tape can pull
// state Jacobians of f + G u and of the barrier rows. The diffusion is
// treated as state independent by the tape (true for every bundled system).
class SystemModel {
 public:
  virtual ~SystemModel() = default;

  virtual std::string name() const = 0;
  virtual int state_dim() const = 0;
  virtual int control_dim() const = 0;
  virtual int noise_dim() const = 0;

  virtual Vector drift(const Vector& x) const = 0;
  virtual Matrix actuation(const Vector& x) const = 0;
  virtual Matrix diffusion(const Vector& x) const = 0;

  virtual AdVector drift(const AdVector& x) const = 0;
  virtual AdMatrix actuation(const AdVector& x) const = 0;

  const std::map<std::string, double>& params() const { return params_; }
  double param(const std::string& key) const { return params_.at(key); }

 protected:
  std::map<std::string, double> params_;
};

using SystemPtr = std::shared_ptr<const SystemModel>;

struct PendulumParams {
  double mass = 2.0;
  double length = 0.5;
  double damping = 0.1;
  double gravity = 9.81;
  double sigma = 1.0;
};

struct CartPoleParams {
  double cart_mass = 1.0;
  double pole_mass = 0.01;
  double length = 0.5;
  double gravity = 9.81;
  double sigma = 1.0;
};

struct CarParams {
  double sigma = 0.1;
};

/// State [theta, theta_dot]; inertia I = m l^2.
SystemPtr make_pendulum(const PendulumParams& params);
/// State [x_c, theta, x_c_dot, theta_dot]; single horizontal force input.
SystemPtr make_cartpole(const CartPoleParams& params);
/// num_cars unicycle-like cars stacked as [p_x, p_y, heading, v] each, with
/// controls [steering rate, acceleration] per car.
SystemPtr make_car2d(int num_cars, const CarParams& params);

/// x' = x + f(x) dt + G(x) u dt + Sigma(x) dw
Vector euler_maruyama_step(const SystemModel& system, const Vector& x, const Vector& u,
                           double dt, const Vector& dw);

/// Seeded Brownian increment source. Entries are i.i.d. N(0, dt).
class NoiseStream {
 public:
  explicit NoiseStream(std::uint64_t seed) { reseed(seed); }
  /// Independent sub-stream keyed by (seed, a, b), e.g. (run seed, iteration, element).
  NoiseStream(std::uint64_t seed, std::uint64_t a, std::uint64_t b);

  void reseed(std::uint64_t seed);
  Vector sample(int n_w, double dt);
  double uniform(double lo, double hi);
  double normal();
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

inline Vector sample_noise(NoiseStream& stream, int n_w, double dt) { return stream.sample(n_w, dt); }

}  // namespace safe_fbsde
