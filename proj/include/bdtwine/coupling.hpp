#pragma once

#include "bdtwine/core.hpp"
#include "bdtwine/intertwine.hpp"
#include "bdtwine/stats.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace bdtwine {

using Mat = Matrix<double>;
using Vec = Vector<double>;

/// Joint chain realizing an intertwining G_auto K = K G_avg in uniformized
/// discrete time.
///
/// Both coordinates share the clock rate theta: P = I + G_auto/theta and
/// P' = I + G_avg/theta, so P K = K P'. From a joint state (x, y) the
/// averaged coordinate moves first, y -> y~ with P'(y, y~); the autonomous
/// coordinate then moves x -> x~ with probability
/// P(x, x~) K(x~, y~) / (P K)(x, y~). Started with y ~ K(x0, .), the
/// autonomous coordinate is a P-chain and, given its history up to step k,
/// the averaged coordinate has law K(x_k, .).
///
/// Only pairs with K(x, y) > 0 are states; the update never leaves them.
struct PairCoupling {
  Mat autonomous;  ///< P, n x n
  Mat averaged;    ///< P', m x m
  Mat link;        ///< K, n x m
  double theta = 0;
  /// Joint states in order of (x, y).
  std::vector<std::pair<int, int>> states;
  /// index[x * m + y] is the joint index of (x, y), or -1 off the support.
  std::vector<int> index;
  /// Transition matrix over joint states.
  Mat joint;

  int autonomous_size() const { return static_cast<int>(autonomous.rows()); }
  int averaged_size() const { return static_cast<int>(averaged.rows()); }
  int joint_index(int x, int y) const { return index[x * averaged_size() + y]; }
  /// theta (P_joint - I): generator of the joint chain in continuous time.
  Mat joint_generator() const;
};

/// 1.1 times the largest exit rate over the given generators.
double shared_theta(std::initializer_list<const Mat*> generators);

/// Throws InvariantError if the intertwining residual exceeds `tolerance`,
/// if theta is below an exit rate, or if an update row fails to normalize.
PairCoupling build_pair_coupling(const Mat& autonomous_generator, const Mat& link,
                                 const Mat& averaged_generator, double theta,
                                 double tolerance = 1e-10);

/// Replaces the joint update rows (used to inject faulty constructions).
PairCoupling with_joint(PairCoupling pc, Mat joint);

struct PairCouplingReport {
  /// max |P[x_k = x] - (P^k)(x0, x)|
  double marginal_deviation = 0;
  /// max |P[y_k = y | x_k = x] - K(x, y)| over reachable x
  double conditional_deviation = 0;
  /// max over x, x~, y~ of |sum_y K(x,y) P_joint((x,y),(x~,y~)) - P(x,x~) K(x~,y~)|;
  /// zero means the conditional law given the entire autonomous history is K.
  double transition_deviation = 0;
  int horizon = 0;

  double worst() const;
};

/// Exact dense enumeration from every autonomous start x0 with y0 ~ K(x0, .)
/// over steps 1..horizon_steps.
PairCouplingReport verify_pair_coupling(const PairCoupling& pc, int horizon_steps);

/// (x-, x, x+) as one state.
struct TripleState {
  int minus = 0;
  int middle = 0;
  int plus = 0;

  friend bool operator==(const TripleState&, const TripleState&) = default;
};

struct PathEvent {
  double time = 0;
  TripleState state;
};

/// Changes of the triple from (0,0,0) at time 0 to the common arrival at N.
struct CoupledPath {
  std::vector<PathEvent> events;
  double arrival = 0;
};

/// Nested coupling: (X+, X) through K+, then X- attached to the pair
/// through L((x+, x), z) = K-(x, z).
struct TripleCoupling {
  int N = 0;
  double theta = 0;
  MarkovKernel<double> k_plus;
  MarkovKernel<double> k_minus;
  BirthDeathSpec<double> spec;
  BirthDeathSpec<double> plus_birth;
  BirthDeathSpec<double> minus_birth;
  PairCoupling upper;  ///< autonomous X+, averaged X
  PairCoupling lower;  ///< autonomous (X+, X) joint states of `upper`, averaged X-
  /// max |G^ L - L G-| on the pair space, checked before use.
  double second_level_residual = 0;

  TripleState decode(int lower_state) const;
  int encode(const TripleState& s) const;
};

TripleCoupling build_triple_coupling(const BirthDeathSpec<double>& spec,
                                     const IntertwiningChain<double>& plus_chain,
                                     const IntertwiningChain<double>& minus_chain,
                                     double tolerance = 1e-10);

struct PathViolations {
  std::int64_t sandwich = 0;      ///< events with not x- <= x <= x+
  std::int64_t arrival = 0;       ///< first visit to N not shared by all three
  std::int64_t monotonicity = 0;  ///< x+ or x- decreased
  std::int64_t unfinished = 0;    ///< path does not end at (N, N, N)

  std::int64_t total() const { return sandwich + arrival + monotonicity + unfinished; }
  PathViolations& operator+=(const PathViolations& o);
};

PathViolations check_path(const CoupledPath& path, int N);

struct SimulationOptions {
  /// Record the full event list of every path.
  bool keep_paths = false;
  /// Times at which the triple is recorded for every path.
  std::vector<double> snapshot_times;
  unsigned threads = 1;
  /// Violations throw (with the offending path serialized) instead of
  /// only being counted.
  bool strict = true;
};

struct Ensemble {
  int N = 0;
  double theta = 0;
  std::uint64_t seed = 0;
  std::vector<double> arrival_times;  ///< by path index
  std::vector<CoupledPath> paths;     ///< by path index, if kept
  std::vector<double> snapshot_times;
  /// snapshots[s][i]: state of path i at snapshot_times[s].
  std::vector<std::vector<TripleState>> snapshots;
  std::int64_t total_steps = 0;
  PathViolations violations;
};

/// Runs n_paths independent triples until X+ reaches N. Path i uses
/// path_stream(seed, i); every uniformized step consumes one Exp(theta)
/// holding time and one uniform for the joint update.
Ensemble simulate_triple(const TripleCoupling& coupling, std::uint64_t seed, int n_paths,
                         const SimulationOptions& options = {});

struct ConditionalTest {
  std::string level;  ///< "plus" (X given X+) or "minus" (X- given X)
  int given = 0;      ///< conditioning state
  std::int64_t observations = 0;
  stats::ChiSquareResult chi_square;
};

struct EnsembleReport {
  std::size_t paths = 0;
  double mean = 0;
  double mean_expected = 0;
  double mean_standard_error = 0;
  double variance = 0;
  double variance_expected = 0;
  double variance_standard_error = 0;
  double ks_statistic = 0;
  double ks_threshold = 0;
  double ks_p_value = 1;
  PathViolations violations;
  double snapshot_time = 0;
  std::vector<ConditionalTest> conditional;
  /// Alpha per conditional test after Bonferroni over `conditional`.
  double conditional_alpha = 0;
  stats::ChiSquareResult marginal;

  bool mean_ok() const;
  bool variance_ok() const;
  bool ks_ok() const { return ks_statistic < ks_threshold; }
  bool conditional_ok() const;
  bool marginal_ok(double alpha = 0.01) const { return marginal.p_value >= alpha; }
};

/// `lambdas` is the increasing spectrum. Conditional and marginal tests use
/// the first snapshot time, if any; states with fewer than
/// `min_conditional_count` observations are skipped.
EnsembleReport ensemble_report(const Ensemble& ensemble, const TripleCoupling& coupling,
                               const Vec& lambdas, double alpha = 0.01,
                               std::int64_t min_conditional_count = 100);

}  // namespace bdtwine
