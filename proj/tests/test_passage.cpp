#include "bdtwine/intertwine.hpp"
#include "bdtwine/io.hpp"
#include "bdtwine/passage.hpp"
#include "bdtwine/stats.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace bdtwine;

namespace {

Vec vec(std::initializer_list<double> v) {
  Vec out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

std::vector<double> grid(double stop, int n = 100) {
  std::vector<double> g(n);
  for (int i = 0; i < n; ++i) g[i] = stop * i / (n - 1);
  return g;
}

}  // namespace

TEST(HypoCdf, FrozenValues) {
  EXPECT_NEAR(hypo_cdf(HypoexponentialLaw<double>(vec({1})), 1.0), 0.6321206, 1e-7);
  EXPECT_NEAR(hypo_cdf(HypoexponentialLaw<double>(vec({1, 2})), 1.0), 0.3995764, 1e-7);
  EXPECT_NEAR(hypo_cdf(HypoexponentialLaw<double>(vec({2, 1})), 1.0),
              1 - 2 * std::exp(-1.0) + std::exp(-2.0), 1e-15);
}

TEST(HypoCdf, Boundaries) {
  const HypoexponentialLaw<double> law(vec({0.5, 1, 3}));
  EXPECT_EQ(hypo_cdf(law, 0.0), 0.0);
  EXPECT_EQ(hypo_cdf(law, std::numeric_limits<double>::infinity()), 1.0);
  EXPECT_NEAR(hypo_cdf(law, 1e4), 1.0, 1e-15);
  EXPECT_EQ(hypo_cdf(HypoexponentialLaw<double>(), 0.0), 1.0);
  EXPECT_THROW(hypo_cdf(law, -1.0), SpecError);
}

TEST(HypoCdf, MonotoneInUnitInterval) {
  const HypoexponentialLaw<double> law(spectrum_oracle(random_spec(9, 4)).lambdas);
  double previous = 0;
  for (double t : grid(5 * law.mean(), 400)) {
    const double f = hypo_cdf(law, t);
    EXPECT_GE(f, previous);
    EXPECT_LE(f, 1.0);
    previous = f;
  }
}

TEST(HypoCdf, ClusteredRatesUseTheFallback) {
  const HypoexponentialLaw<double> clustered(vec({1.0, 1.0 + 1e-8, 2.0}));
  const HypoexponentialLaw<double> spread(vec({1.0, 1.001, 2.0}));
  // Continuity in the rates: the clustered law sits near the spread one.
  for (double t : {0.5, 1.0, 3.0}) {
    const double a = hypo_cdf(clustered, t);
    const double b = hypo_cdf(spread, t);
    EXPECT_NEAR(a, b, 1e-3);
    EXPECT_LE(a, b);
  }
}

TEST(HypoexponentialLaw, RejectsDuplicatesAndNonPositive) {
  EXPECT_THROW(HypoexponentialLaw<double>(vec({1, 1})), SpecError);
  EXPECT_THROW(HypoexponentialLaw<double>(vec({1, 1 + 1e-12})), SpecError);
  EXPECT_THROW(HypoexponentialLaw<double>(vec({0, 1})), SpecError);
  EXPECT_NO_THROW(HypoexponentialLaw<double>(vec({1, 1 + 1e-9})));
}

TEST(HypoSample, Means) {
  auto engine = path_stream(1, 0);
  const int n = 200000;
  for (const Vec& rates : {vec({2.0}), vec({1, 2})}) {
    const HypoexponentialLaw<double> law(rates);
    std::vector<double> s(n);
    for (auto& v : s) v = hypo_sample(law, engine);
    const auto m = stats::moments(s);
    EXPECT_LE(std::abs(m.mean - law.mean()), 4 * m.mean_standard_error());
  }
}

TEST(HypoSample, KolmogorovSmirnov) {
  const HypoexponentialLaw<double> law(spectrum_oracle(random_spec(5, 12)).lambdas);
  auto engine = path_stream(2, 0);
  std::vector<double> s(100000);
  for (auto& v : s) v = hypo_sample(law, engine);
  const double d = stats::ks_statistic(s, [&](double t) { return hypo_cdf(law, t); });
  EXPECT_LT(d, stats::kKsCritical01 / std::sqrt(1e5));
}

TEST(TransitionProbability, Trivial) {
  const auto spec = random_spec(4, 6);
  const Vec p0 = transition_probability(spec, 2, 0.0);
  EXPECT_EQ(p0, Vec::Unit(5, 2));
  Vec b(1), d(1);
  b << 1;
  d << 0;
  const BirthDeathSpec<double> one(b, d);
  for (double t : {0.1, 1.0, 7.0}) {
    const Vec p = transition_probability(one, 0, t);
    EXPECT_NEAR(p[0], std::exp(-t), 1e-13);
    EXPECT_NEAR(p[1], 1 - std::exp(-t), 1e-13);
  }
}

TEST(TransitionProbability, StochasticAndTailBounded) {
  const auto spec = random_spec(7, 13);
  const Mat g = build_generator(spec).dense();
  for (double t : {0.01, 1.0, 30.0, 500.0, 5000.0}) {
    const auto u = uniformize(g, 1, t);
    EXPECT_NEAR(u.distribution.sum(), 1.0, 1e-10);
    EXPECT_GE(u.distribution.minCoeff(), 0.0);
    EXPECT_LT(u.tail_bound, 1e-13);
  }
  EXPECT_GT(uniformize(g, 1, 5000.0).squarings, 0);
}

TEST(FirstPassage, ClosedFormMatchesOracle) {
  for (int seed = 0; seed < 8; ++seed) {
    const auto spec = random_spec(5, 800 + seed);
    const HypoexponentialLaw<double> law(spectrum_oracle(spec).lambdas);
    for (double t : grid(5 * law.mean()))
      ASSERT_NEAR(hypo_cdf(law, t), transition_probability(spec, 0, t)[5], 1e-8) << "t = " << t;
  }
}

TEST(Mixture, Boundaries) {
  const auto spec = random_spec(4, 17);
  const auto minus = build_minus_chain(spec);
  const Vec lambdas = spectrum_oracle(spec).lambdas;
  const auto top = mixture_passage_law(minus.composed, lambdas, 4);
  EXPECT_NEAR(top.weights[4], 1.0, 1e-12);
  EXPECT_EQ(mixture_cdf(top, 0.0), 1.0);
  const auto bottom = mixture_passage_law(minus.composed, lambdas, 0);
  EXPECT_NEAR(bottom.weights[0], 1.0, 1e-12);
  const HypoexponentialLaw<double> full(lambdas);
  for (double t : {0.3, 2.0, 9.0}) EXPECT_NEAR(mixture_cdf(bottom, t), hypo_cdf(full, t), 1e-15);
  EXPECT_THROW(mixture_passage_law(minus.composed, lambdas, 5), SpecError);
  EXPECT_THROW(mixture_passage_law(minus.composed, lambdas, -1), SpecError);
}

TEST(Mixture, SuffixConvention) {
  const Vec l = vec({0.5, 1, 4});
  EXPECT_EQ(passage_suffix(l, 0).size(), 3);
  EXPECT_EQ(passage_suffix(l, 1).rates()[0], 1.0);
  EXPECT_EQ(passage_suffix(l, 3).size(), 0);
}

TEST(Mixture, MatchesOracleFromMiddleStart) {
  const auto spec = random_spec(4, 21);
  const auto minus = build_minus_chain(spec);
  const auto law = mixture_passage_law(spec, minus.composed, 2);
  EXPECT_NEAR(law.weights.sum(), 1.0, 1e-12);
  EXPECT_EQ(law.weights[3], 0.0);
  EXPECT_EQ(law.weights[4], 0.0);
  const double stop = 5 * spectrum_oracle(spec).lambdas.cwiseInverse().sum();
  for (double t : grid(stop))
    ASSERT_NEAR(mixture_cdf(law, t), transition_probability(spec, 2, t)[4], 1e-8);
}
