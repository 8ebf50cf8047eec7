#pragma once

#include "bdtwine/core.hpp"
#include "bdtwine/spectral.hpp"

#include <optional>
#include <string>
#include <vector>

namespace bdtwine {

enum class Side { plus, minus };

inline const char* to_string(Side side) {
  return side == Side::plus ? "plus" : "minus";
}

/// One plus-side step: K G = G' K, where G' has one fewer death rate.
template <typename Scalar = double>
struct StageResultPlus {
  int M = 0;
  MarkovKernel<Scalar> kernel;
  BirthDeathSpec<Scalar> next_spec;
  Scalar lambda = 0;  ///< b'_{M+1}
  QuasiStationaryLaw<Scalar> law;
  Scalar residual = 0;  ///< max |K G - G' K|
};

/// One minus-step: G K = K G-dot, where G-dot has one more zero death rate.
template <typename Scalar = double>
struct StageResultMinus {
  int M = 0;
  MarkovKernel<Scalar> kernel;
  BirthDeathSpec<Scalar> next_spec;
  /// C[y] for M <= y <= N-1; zero elsewhere.
  Vector<Scalar> C;
  Scalar lambda = 0;  ///< b-dot_{M+1}
  MinimalEigenfunction<Scalar> eigenfunction;
  Scalar residual = 0;  ///< max |G K - K G-dot|
};

/// A stage of either side, with both of its generators recorded.
template <typename Scalar = double>
struct ChainStage {
  int M = 0;
  MarkovKernel<Scalar> kernel;
  BirthDeathSpec<Scalar> source;  ///< generator the step was applied to
  BirthDeathSpec<Scalar> target;  ///< generator the step produced
  Scalar lambda = 0;
  Scalar residual = 0;
};

template <typename Scalar = double>
struct IntertwiningChain {
  Side side = Side::plus;
  /// In construction order: M = N-1, ..., 1 (plus) or M = 0, ..., N-2 (minus).
  std::vector<ChainStage<Scalar>> stages;
  /// G followed by every stage target; the last one is pure_birth.
  std::vector<BirthDeathSpec<Scalar>> stage_specs;
  MarkovKernel<Scalar> composed;
  BirthDeathSpec<Scalar> pure_birth;
  Scalar residual = 0;  ///< max entry of K+ G - G+ K+ or G K- - K- G-
};

enum class Orientation {
  left,   ///< K A - B K (plus side)
  right,  ///< A K - K B (minus side)
};

template <typename Scalar = double>
struct IntertwiningReport {
  Scalar max_residual = 0;
  EntryLocation at;
};

template <typename Scalar, typename DA, typename DK, typename DB>
IntertwiningReport<Scalar> verify_intertwining(const Eigen::MatrixBase<DA>& a,
                                               const Eigen::MatrixBase<DK>& k,
                                               const Eigen::MatrixBase<DB>& b,
                                               Orientation orientation) {
  Matrix<Scalar> diff;
  if (orientation == Orientation::left) {
    if (k.cols() != a.rows() || b.cols() != k.rows())
      throw SpecError("verify_intertwining: dimensions do not conform");
    diff = k * a - b * k;
  } else {
    if (a.cols() != k.rows() || k.cols() != b.rows())
      throw SpecError("verify_intertwining: dimensions do not conform");
    diff = a * k - k * b;
  }
  IntertwiningReport<Scalar> r;
  if (diff.size() == 0) return r;
  r.max_residual = diff.cwiseAbs().maxCoeff(&r.at.row, &r.at.col);
  return r;
}

template <typename Scalar>
IntertwiningReport<Scalar> verify_intertwining(const BirthDeathSpec<Scalar>& a,
                                               const MarkovKernel<Scalar>& k,
                                               const BirthDeathSpec<Scalar>& b,
                                               Orientation orientation) {
  return verify_intertwining<Scalar>(build_generator(a).dense(), k.matrix(),
                                     build_generator(b).dense(), orientation);
}

namespace detail {

/// Entries used as divisors must clear this floor. The constructions only
/// ever divide by products of strictly positive, relatively accurate
/// quantities, so the floor is the smallest normal number rather than an
/// absolute cutoff that would reject strongly asymmetric rates.
template <typename Scalar>
void require_positive(Scalar v, const char* what, int index, Side side, int M) {
  using std::isfinite;
  if (!(v > std::numeric_limits<Scalar>::min()) || !isfinite(v))
    throw InvariantError(std::string(to_string(side)) + " stage M = " +
                         std::to_string(M) + ": " + what + "(" +
                         std::to_string(index) + ") is not positive");
}

template <typename Scalar>
Scalar stage_tolerance(const BirthDeathSpec<Scalar>& a, const BirthDeathSpec<Scalar>& b) {
  return scaled_tolerance(Scalar(1e-10), a.top(), std::max(a.max_rate(), b.max_rate()));
}

}  // namespace detail

template <typename Scalar>
StageResultPlus<Scalar> inductive_step_plus(const BirthDeathSpec<Scalar>& spec, int M) {
  const int N = spec.top();
  if (M < 1 || M > N - 1)
    throw SpecError("plus stage M = " + std::to_string(M) + " outside 1.." +
                    std::to_string(N - 1));
  StageResultPlus<Scalar> out;
  out.M = M;
  out.law = quasi_stationary(spec, M);
  const auto& rho = out.law.rho;
  const auto& H = out.law.H;
  for (int x = 0; x <= M; ++x) {
    detail::require_positive(rho[x], "rho", x, Side::plus, M);
    detail::require_positive(H[x], "H", x, Side::plus, M);
  }

  Matrix<Scalar> k = Matrix<Scalar>::Zero(N + 1, N + 1);
  for (int x = 0; x <= N; ++x) {
    if (x <= M)
      for (int y = 0; y <= x; ++y) k(x, y) = rho[y] / H[x];
    else
      k(x, x) = 1;
  }
  out.kernel = MarkovKernel<Scalar>(std::move(k));

  Vector<Scalar> births(N);
  Vector<Scalar> deaths = Vector<Scalar>::Zero(N);
  for (int x = 0; x < N; ++x) {
    if (x < M)
      births[x] = spec.birth(x + 1) * rho[x] * H[x + 1] / (H[x] * rho[x + 1]);
    else if (x == M)
      births[x] = out.law.lambda;
    else
      births[x] = spec.birth(x + 1);
  }
  for (int x = 1; x < M; ++x)
    deaths[x - 1] = spec.death(x + 1) * rho[x + 1] * H[x - 1] / (H[x] * rho[x]);
  out.next_spec = BirthDeathSpec<Scalar>(std::move(births), std::move(deaths));
  out.lambda = out.law.lambda;

  out.residual = verify_intertwining(spec, out.kernel, out.next_spec, Orientation::left)
                     .max_residual;
  if (out.residual > detail::stage_tolerance(spec, out.next_spec))
    throw InvariantError("plus stage M = " + std::to_string(M) +
                         ": K G - G' K residual " + std::to_string(double(out.residual)));
  return out;
}

template <typename Scalar>
StageResultMinus<Scalar> inductive_step_minus(const BirthDeathSpec<Scalar>& spec, int M) {
  const int N = spec.top();
  StageResultMinus<Scalar> out;
  out.M = M;
  out.eigenfunction = minimal_eigenfunction(spec, M);
  const auto& f = out.eigenfunction.f;
  const auto& decrement = out.eigenfunction.decrements;
  for (int x = M; x < N; ++x) {
    detail::require_positive(f[x], "f", x, Side::minus, M);
    detail::require_positive(decrement[x], "f decrement", x, Side::minus, M);
  }

  // Row-sum condition sum_{y'=M}^{y} C_{y'} f(y) = 1 telescopes to
  // sum_{y'=M}^{y} C_{y'} = 1 / f(y), hence
  // C_y = (f(y-1) - f(y)) / (f(y-1) f(y)).
  out.C = Vector<Scalar>::Zero(N + 1);
  out.C[M] = 1;
  for (int y = M + 1; y < N; ++y) {
    out.C[y] = decrement[y - 1] / (f[y - 1] * f[y]);
    if (!(out.C[y] > Scalar(0)))
      throw InvariantError("minus stage M = " + std::to_string(M) + ": C_" +
                           std::to_string(y) + " is not positive");
  }

  Matrix<Scalar> k = Matrix<Scalar>::Zero(N + 1, N + 1);
  for (int x = 0; x <= N; ++x) {
    if (x < M || x == N) {
      k(x, x) = 1;
      continue;
    }
    for (int y = M; y <= x; ++y) k(x, y) = out.C[y] * f[x];
  }
  out.kernel = MarkovKernel<Scalar>(std::move(k));

  // Off-diagonal entries of G-dot, read off from expressing the columns of
  // G K in the basis of columns of K.
  Vector<Scalar> births(N);
  Vector<Scalar> deaths = Vector<Scalar>::Zero(N);
  for (int y = 1; y <= N; ++y) {
    if (y <= M)
      births[y - 1] = spec.birth(y);
    else if (y == M + 1)
      births[y - 1] = out.eigenfunction.lambda;
    else if (y < N)
      births[y - 1] = spec.birth(y) * out.C[y] * f[y] / (out.C[y - 1] * f[y - 1]);
    else
      births[y - 1] = spec.birth(N) / (out.C[N - 1] * f[N - 1]);
  }
  for (int y = M + 1; y <= N - 2; ++y)
    deaths[y] = spec.death(y) * out.C[y] * f[y - 1] / (out.C[y + 1] * f[y]);
  out.next_spec = BirthDeathSpec<Scalar>(std::move(births), std::move(deaths));
  out.lambda = out.eigenfunction.lambda;

  out.residual = verify_intertwining(spec, out.kernel, out.next_spec, Orientation::right)
                     .max_residual;
  if (out.residual > detail::stage_tolerance(spec, out.next_spec))
    throw InvariantError("minus stage M = " + std::to_string(M) +
                         ": G K - K G-dot residual " + std::to_string(double(out.residual)));
  return out;
}

namespace detail {

template <typename Scalar>
void finish_chain(IntertwiningChain<Scalar>& chain, const BirthDeathSpec<Scalar>& spec) {
  const int N = spec.top();
  chain.pure_birth = chain.stage_specs.back();
  if (chain.stages.empty()) {
    chain.composed = MarkovKernel<Scalar>::identity(N + 1);
  } else {
    std::vector<MarkovKernel<Scalar>> ordered;
    ordered.reserve(chain.stages.size());
    // K+ = K(1) ... K(N-1) and K- = K(1) ... K(N-1), index by target stage.
    if (chain.side == Side::plus)
      for (auto it = chain.stages.rbegin(); it != chain.stages.rend(); ++it)
        ordered.push_back(it->kernel);
    else
      for (const auto& stage : chain.stages) ordered.push_back(stage.kernel);
    chain.composed = compose_kernels(ordered);
  }

  if (!chain.pure_birth.is_pure_birth())
    throw InvariantError(std::string(to_string(chain.side)) +
                         " chain did not end in a pure-birth generator");
  for (int x = 1; x < N; ++x) {
    const Scalar a = chain.pure_birth.birth(x);
    const Scalar b = chain.pure_birth.birth(x + 1);
    const bool ordered = chain.side == Side::plus ? a > b : a < b;
    if (!ordered)
      throw InvariantError(std::string(to_string(chain.side)) +
                           " pure-birth rates are not strictly monotone at x = " +
                           std::to_string(x));
  }
  const auto orientation = chain.side == Side::plus ? Orientation::left : Orientation::right;
  chain.residual =
      verify_intertwining(spec, chain.composed, chain.pure_birth, orientation).max_residual;
  if (chain.residual > stage_tolerance(spec, chain.pure_birth))
    throw InvariantError(std::string(to_string(chain.side)) +
                         " chain: composed intertwining residual " +
                         std::to_string(double(chain.residual)));
}

}  // namespace detail

template <typename Scalar>
IntertwiningChain<Scalar> build_plus_chain(const BirthDeathSpec<Scalar>& spec) {
  require_stopped(spec);
  IntertwiningChain<Scalar> chain;
  chain.side = Side::plus;
  chain.stage_specs.push_back(spec);
  for (int M = spec.top() - 1; M >= 1; --M) {
    const auto& source = chain.stage_specs.back();
    auto step = inductive_step_plus(source, M);
    chain.stages.push_back(
        {M, step.kernel, source, step.next_spec, step.lambda, step.residual});
    chain.stage_specs.push_back(std::move(step.next_spec));
  }
  detail::finish_chain(chain, spec);
  return chain;
}

template <typename Scalar>
IntertwiningChain<Scalar> build_minus_chain(const BirthDeathSpec<Scalar>& spec) {
  require_stopped(spec);
  IntertwiningChain<Scalar> chain;
  chain.side = Side::minus;
  chain.stage_specs.push_back(spec);
  for (int M = 0; M <= spec.top() - 2; ++M) {
    const auto& source = chain.stage_specs.back();
    auto step = inductive_step_minus(source, M);
    chain.stages.push_back(
        {M, step.kernel, source, step.next_spec, step.lambda, step.residual});
    chain.stage_specs.push_back(std::move(step.next_spec));
  }
  detail::finish_chain(chain, spec);
  return chain;
}

/// Stage relations re-checked from the recorded source/target generators.
template <typename Scalar>
Scalar max_stage_residual(const IntertwiningChain<Scalar>& chain) {
  const auto orientation = chain.side == Side::plus ? Orientation::left : Orientation::right;
  Scalar worst(0);
  for (const auto& stage : chain.stages)
    worst = std::max(worst, verify_intertwining(stage.source, stage.kernel, stage.target,
                                                orientation)
                                .max_residual);
  return worst;
}

}  // namespace bdtwine
