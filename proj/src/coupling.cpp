#include "bdtwine/coupling.hpp"

#include "bdtwine/io.hpp"
#include "bdtwine/passage.hpp"
#include "bdtwine/rng.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <sstream>
#include <thread>

namespace bdtwine {

namespace {

Mat stochastic_from_generator(const Mat& g, double theta) {
  return Mat::Identity(g.rows(), g.cols()) + g / theta;
}

double max_exit(const Mat& g) {
  return g.rows() == 0 ? 0.0 : (-g.diagonal()).maxCoeff();
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(3);
  os << v;
  return os.str();
}

}  // namespace

Mat PairCoupling::joint_generator() const {
  return theta * (joint - Mat::Identity(joint.rows(), joint.cols()));
}

double shared_theta(std::initializer_list<const Mat*> generators) {
  double m = 0;
  for (const Mat* g : generators) m = std::max(m, max_exit(*g));
  return m > 0 ? 1.1 * m : 1.0;
}

PairCoupling build_pair_coupling(const Mat& autonomous_generator, const Mat& link,
                                 const Mat& averaged_generator, double theta,
                                 double tolerance) {
  const Eigen::Index n = autonomous_generator.rows();
  const Eigen::Index m = averaged_generator.rows();
  if (autonomous_generator.cols() != n || averaged_generator.cols() != m || link.rows() != n ||
      link.cols() != m)
    throw SpecError("pair coupling: dimensions do not conform");
  if (!(theta >= max_exit(autonomous_generator)) || !(theta >= max_exit(averaged_generator)))
    throw InvariantError("pair coupling: theta " + fmt(theta) + " is below an exit rate");
  const double residual = (autonomous_generator * link - link * averaged_generator).cwiseAbs().maxCoeff();
  if (residual > tolerance)
    throw InvariantError("pair coupling: intertwining residual " + fmt(residual) +
                         " exceeds tolerance");
  if (((link.rowwise().sum().array() - 1).abs() > 1e-12).any() || (link.array() < 0).any())
    throw SpecError("pair coupling: link is not a stochastic kernel");

  PairCoupling pc;
  pc.theta = theta;
  pc.link = link;
  pc.autonomous = stochastic_from_generator(autonomous_generator, theta);
  pc.averaged = stochastic_from_generator(averaged_generator, theta);
  pc.index.assign(static_cast<std::size_t>(n * m), -1);
  for (int x = 0; x < n; ++x)
    for (int y = 0; y < m; ++y)
      if (link(x, y) > 0) {
        pc.index[x * m + y] = static_cast<int>(pc.states.size());
        pc.states.emplace_back(x, y);
      }

  const Mat flow = pc.autonomous * link;  // (PK)(x, y~)
  const auto s = static_cast<Eigen::Index>(pc.states.size());
  pc.joint = Mat::Zero(s, s);
  for (Eigen::Index i = 0; i < s; ++i) {
    const auto [x, y] = pc.states[i];
    for (int yt = 0; yt < m; ++yt) {
      const double move = pc.averaged(y, yt);
      if (move <= 0) continue;
      if (!(flow(x, yt) > 0))
        throw InvariantError("pair coupling: update row (" + std::to_string(x) + ", " +
                             std::to_string(y) + ") fails to normalize");
      for (int xt = 0; xt < n; ++xt) {
        const double w = pc.autonomous(x, xt) * link(xt, yt);
        if (w > 0) pc.joint(i, pc.joint_index(xt, yt)) += move * w / flow(x, yt);
      }
    }
    const double total = pc.joint.row(i).sum();
    if (std::abs(total - 1) > 1e-10)
      throw InvariantError("pair coupling: update row (" + std::to_string(x) + ", " +
                           std::to_string(y) + ") sums to " + fmt(total));
  }
  return pc;
}

PairCoupling with_joint(PairCoupling pc, Mat joint) {
  if (joint.rows() != pc.joint.rows() || joint.cols() != pc.joint.cols())
    throw SpecError("replacement joint matrix has the wrong shape");
  pc.joint = std::move(joint);
  return pc;
}

double PairCouplingReport::worst() const {
  return std::max({marginal_deviation, conditional_deviation, transition_deviation});
}

PairCouplingReport verify_pair_coupling(const PairCoupling& pc, int horizon_steps) {
  const int n = pc.autonomous_size();
  const int m = pc.averaged_size();
  const auto s = static_cast<Eigen::Index>(pc.states.size());
  PairCouplingReport r;
  r.horizon = horizon_steps;

  // One step from y ~ K(x, .): sum_y K(x,y) joint((x,y),(x~,y~)) = P(x,x~) K(x~,y~).
  for (int x = 0; x < n; ++x) {
    Mat flow = Mat::Zero(n, m);
    for (int y = 0; y < m; ++y) {
      const int i = pc.joint_index(x, y);
      if (i < 0) continue;
      for (Eigen::Index j = 0; j < s; ++j)
        flow(pc.states[j].first, pc.states[j].second) += pc.link(x, y) * pc.joint(i, j);
    }
    for (int xt = 0; xt < n; ++xt)
      for (int yt = 0; yt < m; ++yt)
        r.transition_deviation =
            std::max(r.transition_deviation,
                     std::abs(flow(xt, yt) - pc.autonomous(x, xt) * pc.link(xt, yt)));
  }

  for (int x0 = 0; x0 < n; ++x0) {
    Eigen::RowVectorXd law = Eigen::RowVectorXd::Zero(s);
    for (int y = 0; y < m; ++y)
      if (pc.joint_index(x0, y) >= 0) law[pc.joint_index(x0, y)] = pc.link(x0, y);
    Eigen::RowVectorXd reference = Eigen::RowVectorXd::Zero(n);
    reference[x0] = 1;
    for (int k = 1; k <= horizon_steps; ++k) {
      law = (law * pc.joint).eval();
      reference = (reference * pc.autonomous).eval();
      Mat pair = Mat::Zero(n, m);
      for (Eigen::Index j = 0; j < s; ++j) pair(pc.states[j].first, pc.states[j].second) = law[j];
      const Eigen::VectorXd marginal = pair.rowwise().sum();
      for (int x = 0; x < n; ++x) {
        r.marginal_deviation =
            std::max(r.marginal_deviation, std::abs(marginal[x] - reference[x]));
        if (marginal[x] <= 1e-200) continue;
        for (int y = 0; y < m; ++y)
          r.conditional_deviation = std::max(
              r.conditional_deviation, std::abs(pair(x, y) / marginal[x] - pc.link(x, y)));
      }
    }
  }
  return r;
}

TripleState TripleCoupling::decode(int lower_state) const {
  const auto [pair, z] = lower.states[lower_state];
  const auto [xp, x] = upper.states[pair];
  return {z, x, xp};
}

int TripleCoupling::encode(const TripleState& s) const {
  const int pair = upper.joint_index(s.plus, s.middle);
  if (pair < 0) return -1;
  return lower.joint_index(pair, s.minus);
}

TripleCoupling build_triple_coupling(const BirthDeathSpec<double>& spec,
                                     const IntertwiningChain<double>& plus_chain,
                                     const IntertwiningChain<double>& minus_chain,
                                     double tolerance) {
  if (plus_chain.side != Side::plus || minus_chain.side != Side::minus)
    throw SpecError("triple coupling needs a plus chain and a minus chain");
  const int N = spec.top();
  if (plus_chain.composed.size() != N + 1 || minus_chain.composed.size() != N + 1)
    throw SpecError("chain sizes do not match the spec");

  TripleCoupling t;
  t.N = N;
  t.spec = spec;
  t.k_plus = plus_chain.composed;
  t.k_minus = minus_chain.composed;
  t.plus_birth = plus_chain.pure_birth;
  t.minus_birth = minus_chain.pure_birth;

  const Mat g = build_generator(spec).dense();
  const Mat g_plus = build_generator(t.plus_birth).dense();
  const Mat g_minus = build_generator(t.minus_birth).dense();
  t.theta = shared_theta({&g, &g_plus, &g_minus});
  const double tol = scaled_tolerance(tolerance, N, std::max({spec.max_rate(),
                                                              t.plus_birth.max_rate(),
                                                              t.minus_birth.max_rate()}));

  // X+ drives, X is averaged through K+: G+ K+ = K+ G.
  t.upper = build_pair_coupling(g_plus, t.k_plus.matrix(), g, t.theta, tol);

  // The pair chain drives, X- is averaged through L((x+, x), z) = K-(x, z).
  const auto pairs = static_cast<Eigen::Index>(t.upper.states.size());
  Mat l(pairs, N + 1);
  for (Eigen::Index i = 0; i < pairs; ++i) l.row(i) = t.k_minus.matrix().row(t.upper.states[i].second);
  const Mat g_pair = t.upper.joint_generator();
  t.second_level_residual = (g_pair * l - l * g_minus).cwiseAbs().maxCoeff();
  if (t.second_level_residual > tol)
    throw InvariantError("triple coupling: second-level residual " +
                         fmt(t.second_level_residual) + " exceeds tolerance");
  t.lower = build_pair_coupling(g_pair, l, g_minus, t.theta, tol);
  return t;
}

PathViolations& PathViolations::operator+=(const PathViolations& o) {
  sandwich += o.sandwich;
  arrival += o.arrival;
  monotonicity += o.monotonicity;
  unfinished += o.unfinished;
  return *this;
}

PathViolations check_path(const CoupledPath& path, int N) {
  PathViolations v;
  if (path.events.empty()) {
    v.unfinished = 1;
    return v;
  }
  bool arrived = false;
  for (std::size_t i = 0; i < path.events.size(); ++i) {
    const TripleState& s = path.events[i].state;
    if (!(s.minus <= s.middle && s.middle <= s.plus)) ++v.sandwich;
    if (i > 0) {
      const TripleState& p = path.events[i - 1].state;
      if (s.plus < p.plus || s.minus < p.minus) ++v.monotonicity;
    }
    const int at_top = (s.minus == N) + (s.middle == N) + (s.plus == N);
    if (!arrived && at_top > 0) {
      arrived = true;
      if (at_top != 3 || path.events[i].time != path.arrival) ++v.arrival;
    }
  }
  const TripleState& last = path.events.back().state;
  if (!(last.minus == N && last.middle == N && last.plus == N)) ++v.unfinished;
  return v;
}

namespace {

/// Cumulative rows of the lower joint matrix, restricted to their support.
struct SamplingTable {
  std::vector<std::size_t> offsets;
  std::vector<int> targets;
  std::vector<double> cumulative;

  explicit SamplingTable(const Mat& p) {
    offsets.push_back(0);
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
      double acc = 0;
      for (Eigen::Index j = 0; j < p.cols(); ++j) {
        if (p(i, j) <= 0) continue;
        acc += p(i, j);
        targets.push_back(static_cast<int>(j));
        cumulative.push_back(acc);
      }
      // Force the last bucket to absorb rounding in the row sum.
      cumulative.back() = 2.0;
      offsets.push_back(targets.size());
    }
  }

  int sample(int row, double u) const {
    const auto begin = cumulative.begin() + static_cast<std::ptrdiff_t>(offsets[row]);
    const auto end = cumulative.begin() + static_cast<std::ptrdiff_t>(offsets[row + 1]);
    const auto it = std::upper_bound(begin, end, u);
    return targets[static_cast<std::size_t>(it - cumulative.begin())];
  }
};

struct PathResult {
  CoupledPath path;
  std::vector<TripleState> snapshots;
  std::int64_t steps = 0;
};

PathResult run_path(const TripleCoupling& c, const SamplingTable& table, std::uint64_t seed,
                    std::uint64_t index, const std::vector<double>& snapshot_times) {
  PathResult out;
  auto engine = path_stream(seed, index);
  int state = c.encode({0, 0, 0});
  TripleState current{0, 0, 0};
  double time = 0;
  out.path.events.push_back({0.0, current});
  std::size_t next_snapshot = 0;
  while (current.plus != c.N) {
    const double hold = standard_exponential(engine) / c.theta;
    while (next_snapshot < snapshot_times.size() && snapshot_times[next_snapshot] < time + hold)
      out.snapshots.push_back(current), ++next_snapshot;
    time += hold;
    state = table.sample(state, uniform01(engine));
    ++out.steps;
    const TripleState s = c.decode(state);
    if (!(s == current)) {
      current = s;
      out.path.events.push_back({time, current});
    }
  }
  out.path.arrival = time;
  while (next_snapshot < snapshot_times.size()) out.snapshots.push_back(current), ++next_snapshot;
  return out;
}

}  // namespace

Ensemble simulate_triple(const TripleCoupling& coupling, std::uint64_t seed, int n_paths,
                         const SimulationOptions& options) {
  if (n_paths < 1) throw SpecError("number of paths must be at least 1");
  if (!std::is_sorted(options.snapshot_times.begin(), options.snapshot_times.end()))
    throw SpecError("snapshot times must be sorted");
  const SamplingTable table(coupling.lower.joint);

  Ensemble e;
  e.N = coupling.N;
  e.theta = coupling.theta;
  e.seed = seed;
  e.snapshot_times = options.snapshot_times;
  e.arrival_times.assign(n_paths, 0.0);
  e.snapshots.assign(options.snapshot_times.size(), std::vector<TripleState>(n_paths));
  if (options.keep_paths) e.paths.resize(n_paths);

  const unsigned threads = std::clamp(options.threads, 1u, static_cast<unsigned>(n_paths));
  std::vector<std::int64_t> steps(threads, 0);
  std::vector<PathViolations> violations(threads);
  std::vector<std::exception_ptr> errors(threads);
  std::vector<int> error_index(threads, n_paths);

  auto worker = [&](unsigned w) {
    const int begin = static_cast<int>(static_cast<std::int64_t>(n_paths) * w / threads);
    const int end = static_cast<int>(static_cast<std::int64_t>(n_paths) * (w + 1) / threads);
    try {
      for (int i = begin; i < end; ++i) {
        PathResult r = run_path(coupling, table, seed, static_cast<std::uint64_t>(i),
                                options.snapshot_times);
        const PathViolations v = check_path(r.path, coupling.N);
        if (v.total() > 0 && options.strict) {
          error_index[w] = i;
          throw InvariantError("path " + std::to_string(i) + " violates the coupling invariants: " +
                               path_to_json(r.path).dump());
        }
        violations[w] += v;
        steps[w] += r.steps;
        e.arrival_times[i] = r.path.arrival;
        for (std::size_t s = 0; s < r.snapshots.size(); ++s) e.snapshots[s][i] = r.snapshots[s];
        if (options.keep_paths) e.paths[i] = std::move(r.path);
      }
    } catch (...) {
      errors[w] = std::current_exception();
    }
  };

  if (threads == 1) {
    worker(0);
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < threads; ++w) pool.emplace_back(worker, w);
    for (auto& t : pool) t.join();
  }
  for (unsigned w = 0; w < threads; ++w)
    if (errors[w]) std::rethrow_exception(errors[w]);
  for (unsigned w = 0; w < threads; ++w) {
    e.total_steps += steps[w];
    e.violations += violations[w];
  }
  return e;
}

bool EnsembleReport::mean_ok() const {
  return std::abs(mean - mean_expected) <= 4 * mean_standard_error;
}

bool EnsembleReport::variance_ok() const {
  return std::abs(variance - variance_expected) <= 4 * variance_standard_error;
}

bool EnsembleReport::conditional_ok() const {
  return std::all_of(conditional.begin(), conditional.end(), [&](const ConditionalTest& c) {
    return c.chi_square.p_value >= conditional_alpha;
  });
}

EnsembleReport ensemble_report(const Ensemble& ensemble, const TripleCoupling& coupling,
                               const Vec& lambdas, double alpha,
                               std::int64_t min_conditional_count) {
  if (ensemble.arrival_times.empty()) throw SpecError("ensemble is empty");
  const int N = coupling.N;
  if (lambdas.size() != N) throw SpecError("spectrum size does not match the coupling");
  EnsembleReport r;
  r.paths = ensemble.arrival_times.size();
  r.violations = ensemble.violations;

  const HypoexponentialLaw<double> law(lambdas);
  r.mean_expected = law.mean();
  r.variance_expected = law.variance();
  if (r.paths >= 2) {
    const auto m = stats::moments(ensemble.arrival_times);
    r.mean = m.mean;
    r.variance = m.variance;
    r.mean_standard_error = m.mean_standard_error();
    r.variance_standard_error = m.variance_standard_error();
  } else {
    r.mean = ensemble.arrival_times.front();
  }
  r.ks_statistic = stats::ks_statistic(ensemble.arrival_times,
                                       [&](double t) { return hypo_cdf(law, t); });
  const double root_n = std::sqrt(static_cast<double>(r.paths));
  r.ks_threshold = stats::kKsCritical01 / root_n;
  r.ks_p_value = stats::kolmogorov_survival(root_n * r.ks_statistic);

  if (ensemble.snapshot_times.empty()) return r;
  r.snapshot_time = ensemble.snapshot_times.front();
  const auto& snap = ensemble.snapshots.front();

  const auto conditional = [&](const char* level, auto given_of, auto value_of,
                               const Mat& kernel) {
    std::vector<std::vector<std::int64_t>> counts(N + 1, std::vector<std::int64_t>(N + 1, 0));
    for (const auto& s : snap) ++counts[given_of(s)][value_of(s)];
    for (int g = 0; g <= N; ++g) {
      std::int64_t total = 0;
      for (auto c : counts[g]) total += c;
      if (total < min_conditional_count) continue;
      std::vector<double> probs(N + 1);
      for (int y = 0; y <= N; ++y) probs[y] = kernel(g, y);
      ConditionalTest test;
      test.level = level;
      test.given = g;
      test.observations = total;
      test.chi_square = stats::chi_square_test(counts[g], probs);
      // A point-mass row only tests for impossible outcomes.
      if (test.chi_square.dof == 0 && test.chi_square.impossible == 0) continue;
      r.conditional.push_back(std::move(test));
    }
  };
  conditional("plus", [](const TripleState& s) { return s.plus; },
              [](const TripleState& s) { return s.middle; }, coupling.k_plus.matrix());
  conditional("minus", [](const TripleState& s) { return s.middle; },
              [](const TripleState& s) { return s.minus; }, coupling.k_minus.matrix());
  r.conditional_alpha =
      r.conditional.empty() ? alpha : alpha / static_cast<double>(r.conditional.size());

  std::vector<std::int64_t> marginal(N + 1, 0);
  for (const auto& s : snap) ++marginal[s.middle];
  const Vec p = transition_probability(coupling.spec, 0, r.snapshot_time);
  r.marginal = stats::chi_square_test(marginal, std::vector<double>(p.data(), p.data() + p.size()));
  return r;
}

}  // namespace bdtwine
