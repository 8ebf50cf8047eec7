#include "bdtwine/coupling.hpp"
#include "bdtwine/io.hpp"
#include "bdtwine/passage.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace bdtwine;

namespace {

BirthDeathSpec<double> two_state() {
  Vec b(2), d(2);
  b << 1, 1;
  d << 1, 0;
  return {b, d};
}

BirthDeathSpec<double> one_state(double rate) {
  Vec b(1), d(1);
  b << rate;
  d << 0;
  return {b, d};
}

TripleCoupling triple(const BirthDeathSpec<double>& spec) {
  return build_triple_coupling(spec, build_plus_chain(spec), build_minus_chain(spec));
}

}  // namespace

TEST(PairCoupling, IdentityLinkIsDiagonal) {
  const Mat g = build_generator(random_spec(3, 5)).dense();
  const double theta = shared_theta({&g});
  const auto pc = build_pair_coupling(g, Mat::Identity(4, 4), g, theta);
  ASSERT_EQ(pc.states.size(), 4u);
  for (const auto& [x, y] : pc.states) EXPECT_EQ(x, y);
  const auto r = verify_pair_coupling(pc, 50);
  EXPECT_EQ(r.conditional_deviation, 0.0);
  EXPECT_LE(r.worst(), 1e-13);
}

TEST(PairCoupling, PlusLevelTwoStateExact) {
  const auto spec = two_state();
  const auto plus = build_plus_chain(spec);
  const Mat g = build_generator(spec).dense();
  const Mat gp = build_generator(plus.pure_birth).dense();
  const auto pc = build_pair_coupling(gp, plus.composed.matrix(), g, shared_theta({&g, &gp}));
  const auto r = verify_pair_coupling(pc, 50);
  EXPECT_LE(r.conditional_deviation, 1e-10);
  EXPECT_LE(r.marginal_deviation, 1e-10);
  EXPECT_LE(r.transition_deviation, 1e-10);
}

TEST(PairCoupling, SwappedRowsAreDetected) {
  const auto spec = two_state();
  const auto plus = build_plus_chain(spec);
  const Mat g = build_generator(spec).dense();
  const Mat gp = build_generator(plus.pure_birth).dense();
  const auto pc = build_pair_coupling(gp, plus.composed.matrix(), g, shared_theta({&g, &gp}));
  Mat joint = pc.joint;
  joint.row(1).swap(joint.row(2));
  const auto r = verify_pair_coupling(with_joint(pc, joint), 50);
  EXPECT_GT(r.worst(), 1e-3);
}

TEST(PairCoupling, RejectsBrokenIntertwining) {
  const auto spec = random_spec(3, 9);
  const auto plus = build_plus_chain(spec);
  const Mat g = build_generator(spec).dense();
  const Mat gp = build_generator(plus.pure_birth).dense();
  Mat k = plus.composed.matrix();
  k(2, 0) += 1e-3;
  k.row(2) /= k.row(2).sum();
  EXPECT_THROW(build_pair_coupling(gp, k, g, shared_theta({&g, &gp})), InvariantError);
  EXPECT_THROW(build_pair_coupling(gp, plus.composed.matrix(), g, 0.1), InvariantError);
}

TEST(TripleCoupling, SingleStateChainsCoincide) {
  const auto t = triple(one_state(2.0));
  EXPECT_EQ(t.plus_birth.birth(1), 2.0);
  EXPECT_EQ(t.minus_birth.birth(1), 2.0);
  EXPECT_EQ(t.lower.states.size(), 2u);
  const auto e = simulate_triple(t, 1, 1000, {.keep_paths = true});
  for (const auto& p : e.paths) {
    ASSERT_EQ(p.events.size(), 2u);
    EXPECT_EQ(p.events[1].state, (TripleState{1, 1, 1}));
  }
  std::vector<double> times = e.arrival_times;
  const double d = stats::ks_statistic(times, [](double s) { return 1 - std::exp(-2.0 * s); });
  EXPECT_LT(d, stats::kKsCritical01 / std::sqrt(1000.0));
}

TEST(TripleCoupling, SecondLevelResidualTwoState) {
  const auto t = triple(two_state());
  // K+(2, .) is the point mass at 2, so the pairs are (0,0), (1,0), (1,1), (2,2).
  EXPECT_EQ(t.upper.states.size(), 4u);
  EXPECT_LE(t.second_level_residual, 1e-10);
}

TEST(TripleCoupling, ExactOracleBothLevels) {
  for (int seed = 0; seed < 4; ++seed) {
    const auto spec = random_spec(2 + seed % 2, 60 + seed);
    const auto t = triple(spec);
    EXPECT_LE(verify_pair_coupling(t.upper, 50).worst(), 1e-10);
    EXPECT_LE(verify_pair_coupling(t.lower, 50).worst(), 1e-10);
  }
}

TEST(TripleCoupling, EncodeDecodeRoundTrip) {
  const auto t = triple(random_spec(4, 3));
  for (int i = 0; i < static_cast<int>(t.lower.states.size()); ++i) {
    const TripleState s = t.decode(i);
    EXPECT_LE(s.minus, s.middle);
    EXPECT_LE(s.middle, s.plus);
    EXPECT_EQ(t.encode(s), i);
  }
  EXPECT_EQ(t.encode({0, 2, 1}), -1);
}

TEST(CheckPath, FlagsEachViolation) {
  CoupledPath ok{{{0, {0, 0, 0}}, {1, {0, 0, 1}}, {2, {0, 1, 1}}, {3, {2, 2, 2}}}, 3};
  EXPECT_EQ(check_path(ok, 2).total(), 0);
  CoupledPath sandwich{{{0, {0, 0, 0}}, {1, {0, 1, 0}}, {2, {2, 2, 2}}}, 2};
  EXPECT_EQ(check_path(sandwich, 2).sandwich, 1);
  CoupledPath alone{{{0, {0, 0, 0}}, {1, {0, 1, 2}}, {2, {2, 2, 2}}}, 2};
  EXPECT_EQ(check_path(alone, 2).arrival, 1);
  CoupledPath late{{{0, {0, 0, 0}}, {1, {2, 2, 2}}}, 3};
  EXPECT_EQ(check_path(late, 2).arrival, 1);
  CoupledPath back{{{0, {0, 0, 0}}, {1, {0, 0, 2}}, {2, {0, 0, 1}}, {3, {2, 2, 2}}}, 3};
  EXPECT_GE(check_path(back, 2).monotonicity, 1);
  CoupledPath open{{{0, {0, 0, 0}}, {1, {0, 0, 1}}}, 1};
  EXPECT_EQ(check_path(open, 2).unfinished, 1);
}

TEST(Simulation, DeterministicAcrossThreads) {
  const auto t = triple(random_spec(4, 8));
  SimulationOptions one;
  one.snapshot_times = {1.0, 5.0};
  SimulationOptions four = one;
  four.threads = 4;
  const auto a = simulate_triple(t, 123, 2000, one);
  const auto b = simulate_triple(t, 123, 2000, four);
  EXPECT_EQ(a.arrival_times, b.arrival_times);
  EXPECT_EQ(a.total_steps, b.total_steps);
  for (std::size_t s = 0; s < 2; ++s)
    for (int i = 0; i < 2000; ++i) ASSERT_EQ(a.snapshots[s][i], b.snapshots[s][i]);
  const auto c = simulate_triple(t, 124, 2000, one);
  EXPECT_NE(a.arrival_times, c.arrival_times);
}

TEST(Simulation, PathsAreValidAndEnsembleMatchesTheLaw) {
  const auto spec = random_spec(4, 31);
  const auto t = triple(spec);
  const Vec lambdas = spectrum_oracle(spec).lambdas;
  SimulationOptions options;
  options.keep_paths = true;
  options.snapshot_times = {0.5 * lambdas.cwiseInverse().sum()};
  const auto e = simulate_triple(t, 2024, 20000, options);
  EXPECT_EQ(e.violations.total(), 0);
  for (const auto& p : e.paths) {
    ASSERT_EQ(check_path(p, 4).total(), 0);
    EXPECT_EQ(p.events.back().time, p.arrival);
  }
  const auto r = ensemble_report(e, t, lambdas);
  EXPECT_TRUE(r.mean_ok());
  EXPECT_TRUE(r.variance_ok());
  EXPECT_TRUE(r.ks_ok());
  EXPECT_FALSE(r.conditional.empty());
  EXPECT_TRUE(r.conditional_ok());
  EXPECT_TRUE(r.marginal_ok());
}

TEST(Simulation, RejectsBadArguments) {
  const auto t = triple(two_state());
  EXPECT_THROW(simulate_triple(t, 1, 0), SpecError);
  SimulationOptions o;
  o.snapshot_times = {2.0, 1.0};
  EXPECT_THROW(simulate_triple(t, 1, 10, o), SpecError);
}
