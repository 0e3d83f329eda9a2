#include <cmath>
#include <numbers>
#include <vector>

#include <gtest/gtest.h>

#include "safe_fbsde/barrier.hpp"

using namespace safe_fbsde;

namespace {

constexpr double kPi = std::numbers::pi;

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

struct Case {
  BarrierPtr barrier;
  SystemPtr system;
  int velocities;  // velocity variables appearing in h
};

std::vector<Case> all_barriers() {
  const auto pend = make_pendulum({});
  const auto cp = make_cartpole({});
  const auto car1 = make_car2d(1, {});
  const auto car4 = make_car2d(4, {});
  return {
      {pendulum_box_barrier(2 * kPi / 3, 4 * kPi / 3, 0.05, 0.5), pend, 1},
      {cartpole_position_barrier(-10, 10, 0.1, 1.0), cp, 1},
      {cartpole_angle_barrier(kPi / 2, 3 * kPi / 2, 10.0, 100.0), cp, 1},
      {car_obstacle_barrier(1, 1, 0.3, 0.05, 1.0), car1, 1},
      {car_obstacle_barrier(1, 0, 0.3, 0.05, 1.0, 2, 4), car4, 1},
      {car_pair_barrier(1, 3, 0.05, 0.1, 1.0, 4), car4, 2},
  };
}

Vector random_state(NoiseStream& rng, int n) {
  Vector x(n);
  for (auto& v : x) v = rng.uniform(-3.0, 3.0);
  return x;
}

}  // namespace

TEST(PendulumBarrier, UprightValue) {
  const auto b = pendulum_box_barrier(2 * kPi / 3, 4 * kPi / 3, 0.05, 0.5);
  EXPECT_NEAR(b->value(vec({kPi, 0.0})), std::pow(kPi / 3, 2), 1e-14);
  EXPECT_NEAR(b->value(vec({kPi, 0.0})), 1.09662, 1e-5);
  EXPECT_NEAR(b->value(vec({4 * kPi / 3, 0.0})), 0.0, 1e-14);
  EXPECT_NEAR(b->value(vec({2 * kPi / 3, 0.0})), 0.0, 1e-14);
}

TEST(PendulumBarrier, TraceTerm) {
  const auto b = pendulum_box_barrier(2 * kPi / 3, 4 * kPi / 3, 0.05, 0.5);
  EXPECT_NEAR(b->trace_term(vec({kPi, 0.0}), *make_pendulum({})), -0.05, 1e-15);
}

TEST(PendulumBarrier, InvalidBounds) {
  EXPECT_THROW(pendulum_box_barrier(1.0, 1.0, 0.05, 0.5), std::invalid_argument);
  EXPECT_THROW(pendulum_box_barrier(0.0, 1.0, -0.1, 0.5), std::invalid_argument);
  EXPECT_THROW(pendulum_box_barrier(0.0, 1.0, 0.1, 0.0), std::invalid_argument);
}

TEST(CartPositionBarrier, Values) {
  const auto b = cartpole_position_barrier(-10, 10, 0.1, 1.0);
  EXPECT_DOUBLE_EQ(b->value(Vector(Vector::Zero(4))), 100.0);
  EXPECT_DOUBLE_EQ(b->value(vec({10, 0.3, 0, 1.0})), 0.0);
  const Vector g = b->gradient(vec({1, 0, 2, 0}));
  EXPECT_TRUE(g.isApprox(vec({-2, 0, -0.4, 0}), 1e-15));
}

TEST(PoleAngleBarrier, Values) {
  const auto b = cartpole_angle_barrier(kPi / 2, 3 * kPi / 2, 0.1, 1.0);
  EXPECT_NEAR(b->value(vec({0.7, kPi, -1.0, 0.0})), 2.4674, 1e-4);
  EXPECT_NEAR(b->value(vec({0.0, kPi / 2, 0.0, 0.0})), 0.0, 1e-14);
}

TEST(ObstacleBarrier, Values) {
  const auto b = car_obstacle_barrier(1, 1, 0.3, 0.05, 1.0);
  EXPECT_NEAR(b->value(Vector(Vector::Zero(4))), 1.91, 1e-14);
  EXPECT_NEAR(b->value(vec({1.3, 1.0, 2.0, 0.0})), 0.0, 1e-14);
}

TEST(PairBarrier, Values) {
  const auto b = car_pair_barrier(0, 1, 0.05, 0.1, 1.0, 2);
  EXPECT_NEAR(b->value(vec({0, 0, 0, 0.1, 2, 0, 0, 0.1})), 3.988, 1e-14);
  EXPECT_NEAR(b->value(vec({0, 0, 0, 0, 0.1, 0, 1, 0})), 0.0, 1e-15);
  EXPECT_EQ(all_car_pair_barriers(4, 0.05, 0.1, 1.0).size(), 6u);
}

TEST(PairBarrier, GradientOnlyInOwnBlocks) {
  const auto b = car_pair_barrier(1, 3, 0.05, 0.1, 1.0, 4);
  NoiseStream rng(5);
  const Vector g = b->gradient(random_state(rng, 16));
  for (int k = 0; k < 16; ++k) {
    if (k / 4 == 0 || k / 4 == 2) EXPECT_EQ(g[k], 0.0);
  }
}

TEST(AllBarriers, GradientMatchesDifferences) {
  NoiseStream rng(11);
  for (const auto& c : all_barriers()) {
    for (int trial = 0; trial < 100; ++trial) {
      const Vector x = random_state(rng, c.system->state_dim());
      const Vector g = c.barrier->gradient(x);
      for (Eigen::Index j = 0; j < x.size(); ++j) {
        Vector xp = x, xm = x;
        const double h = 1e-6 * std::max(1.0, std::abs(x[j]));
        xp[j] += h;
        xm[j] -= h;
        const double fd = (c.barrier->value(xp) - c.barrier->value(xm)) / (2 * h);
        const double scale = std::max({std::abs(fd), std::abs(g[j]), 1e-3});
        ASSERT_LE(std::abs(fd - g[j]) / scale, 1e-5) << c.barrier->name() << " coord " << j;
      }
    }
  }
}

TEST(AllBarriers, TraceTermIsConstant) {
  NoiseStream rng(12);
  for (const auto& c : all_barriers()) {
    const double sigma = c.system->diffusion(Vector::Zero(c.system->state_dim())).maxCoeff();
    const double expected = -c.barrier->mu() * sigma * sigma * c.velocities;
    for (int trial = 0; trial < 10; ++trial) {
      const Vector x = random_state(rng, c.system->state_dim());
      EXPECT_NEAR(c.barrier->trace_term(x, *c.system), expected, 1e-12) << c.barrier->name();
    }
  }
}

TEST(AllBarriers, AdRowMatchesDoubleRowAndDifferences) {
  NoiseStream rng(13);
  for (const auto& c : all_barriers()) {
    const Vector x = random_state(rng, c.system->state_dim());
    const ConstraintRow row = constraint_row(*c.barrier, *c.system, x);
    const double tr = c.barrier->trace_term(x, *c.system);
    const AdConstraintRow ad = constraint_row(*c.barrier, *c.system, seed_state(x), tr);
    EXPECT_NEAR(ad.d.value(), row.d, 1e-12 * (1 + std::abs(row.d)));
    for (Eigen::Index j = 0; j < x.size(); ++j) {
      Vector xp = x, xm = x;
      xp[j] += 1e-6;
      xm[j] -= 1e-6;
      const double fd =
          (constraint_row(*c.barrier, *c.system, xp).d - constraint_row(*c.barrier, *c.system, xm).d) /
          2e-6;
      EXPECT_NEAR(ad.d.derivatives()[j], fd, 1e-5 * (1 + std::abs(fd))) << c.barrier->name();
    }
  }
}

TEST(ConstraintRow, PendulumExamples) {
  const auto p = make_pendulum({});
  const auto b = pendulum_box_barrier(2 * kPi / 3, 4 * kPi / 3, 0.05, 0.5);
  const ConstraintRow at_rest = constraint_row(*b, *p, vec({2.5, 0.0}));
  EXPECT_EQ(at_rest.c[0], 0.0);
  const ConstraintRow moving = constraint_row(*b, *p, vec({kPi, 1.0}));
  EXPECT_NEAR(moving.c[0], 0.2, 1e-15);
  const ConstraintRow upright = constraint_row(*b, *p, vec({kPi, 0.0}));
  EXPECT_NEAR(upright.d, 0.5 * std::pow(kPi / 3, 2) - 0.05, 1e-12);
  EXPECT_NEAR(upright.d, 0.49831, 1e-5);
}

TEST(ConstraintRow, ShapeMismatch) {
  const auto b = pendulum_box_barrier(2 * kPi / 3, 4 * kPi / 3, 0.05, 0.5);
  EXPECT_THROW(constraint_row(*b, *make_cartpole({}), Vector::Zero(4)), std::invalid_argument);
}

TEST(RelativeDegree, PendulumVelocityFactor) {
  const auto p = make_pendulum({});
  const auto b = pendulum_box_barrier(2 * kPi / 3, 4 * kPi / 3, 0.05, 0.5);
  NoiseStream rng(3);
  std::vector<Vector> moving;
  for (int i = 0; i < 50; ++i) moving.push_back(vec({rng.uniform(2.2, 4.0), rng.uniform(0.1, 2.0)}));
  const auto rep = relative_degree_check(*b, *p, moving);
  EXPECT_EQ(rep.fraction_nonzero, 1.0);
  EXPECT_TRUE(rep.flagged.empty());

  const std::vector<Vector> still{vec({3.0, 0.0}), vec({3.0, 0.5})};
  const auto rep2 = relative_degree_check(*b, *p, still);
  ASSERT_EQ(rep2.flagged.size(), 1u);
  EXPECT_EQ(rep2.flagged[0], 0u);
}

TEST(RelativeDegree, ObstacleAtZeroSpeed) {
  const auto car = make_car2d(1, {});
  const auto b = car_obstacle_barrier(1, 1, 0.3, 0.05, 1.0);
  const std::vector<Vector> s{vec({0, 0, 0.4, 0.0})};
  EXPECT_EQ(relative_degree_check(*b, *car, s).flagged.size(), 1u);
}
