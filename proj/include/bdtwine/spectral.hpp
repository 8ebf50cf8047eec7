#pragma once

#include "bdtwine/core.hpp"

#include <boost/multiprecision/cpp_bin_float.hpp>

#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace bdtwine {

/// Leading (Perron) eigenpair of a stopped chain. f is the right
/// eigenvector with f(0) = 1, f(N) = 0; pi the left one with
/// sum_{x<N} pi(x) = 1 = -pi(N). G f = -lambda f and G^T pi = -lambda pi.
template <typename Scalar = double>
struct LeadingEigenpair {
  Scalar lambda = 0;
  Vector<Scalar> f;
  Vector<Scalar> pi;
};

/// Quasi-stationary law of the chain killed on reaching M+1.
template <typename Scalar = double>
struct QuasiStationaryLaw {
  int M = 0;
  Vector<Scalar> rho;  ///< positive on {0..M}, zero above, sums to 1
  Vector<Scalar> H;    ///< H(x) = sum_{y<=x} rho(y); H(x) = 1 for x >= M
  Scalar lambda = 0;   ///< b_{M+1} rho(M)
};

/// Right Perron eigenvector of the chain restricted to {M,...,N}.
template <typename Scalar = double>
struct MinimalEigenfunction {
  int M = 0;
  Vector<Scalar> f;  ///< zero below M, f(M) = 1, f(N) = 0, strictly decreasing on {M..N}
  /// decrements[x] = f(x) - f(x+1) for M <= x <= N-1, zero elsewhere,
  /// computed without cancellation from the eigen-equation.
  Vector<Scalar> decrements;
  Scalar lambda = 0;
};

/// lambda_1 < ... < lambda_N: negated nonzero eigenvalues of a stopped
/// generator.
template <typename Scalar = double>
struct Spectrum {
  Vector<Scalar> lambdas;
};

namespace detail {

/// Generator block of a birth-and-death chain killed when it leaves the
/// top row. Row i moves up at rate up[i] (for the last row this is the
/// killing rate) and down at rate down[i]; down[0] is always 0.
/// The negated block B has B(i,i) = up[i] + down[i], B(i,i+1) = -up[i],
/// B(i,i-1) = -down[i].
template <typename Scalar>
struct KilledBlock {
  Vector<Scalar> up;
  Vector<Scalar> down;

  Eigen::Index size() const { return up.size(); }
};

/// Pivots of the LU factorization of B - sigma I, in the stationary qd form
/// u_i = up[i] + r_i, r_i = down[i] r_{i-1} / u_{i-1} - sigma. At sigma = 0
/// every pivot is exactly up[i], and for 0 < sigma < lambda_1 all terms in
/// r have one sign, so the factorization carries no cancellation.
template <typename Scalar>
Vector<Scalar> shifted_pivots(const KilledBlock<Scalar>& block, Scalar sigma) {
  using std::abs;
  const Eigen::Index n = block.size();
  Vector<Scalar> u(n);
  Scalar r = -sigma;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (i > 0) r = block.down[i] * r / u[i - 1] - sigma;
    u[i] = block.up[i] + r;
    if (u[i] == Scalar(0))
      u[i] = -std::numeric_limits<Scalar>::epsilon() *
             (block.up[i] + block.down[i] + abs(sigma));
  }
  return u;
}

/// Number of eigenvalues of B strictly below sigma.
template <typename Scalar>
int count_below(const KilledBlock<Scalar>& block, Scalar sigma) {
  const Vector<Scalar> u = shifted_pivots(block, sigma);
  return static_cast<int>((u.array() < Scalar(0)).count());
}

/// k-th smallest eigenvalue of B (0-based) by bisection on pivot signs.
template <typename Scalar>
Scalar bisect_eigenvalue(const KilledBlock<Scalar>& block, int k) {
  using std::sqrt;
  Scalar hi(0);
  for (Eigen::Index i = 0; i < block.size(); ++i)
    hi = std::max(hi, Scalar(2) * (block.up[i] + block.down[i]));
  Scalar lo = std::numeric_limits<Scalar>::min();
  const Scalar eps = std::numeric_limits<Scalar>::epsilon();
  for (int iter = 0; iter < 4000 && hi - lo > Scalar(2) * eps * hi; ++iter) {
    // Geometric midpoints while the bracket spans orders of magnitude.
    const Scalar mid = hi > Scalar(4) * lo ? sqrt(lo) * sqrt(hi)
                                           : lo + (hi - lo) / Scalar(2);
    if (count_below(block, mid) > k)
      hi = mid;
    else
      lo = mid;
  }
  return lo + (hi - lo) / Scalar(2);
}

/// Solves (B - sigma I) x = y given the pivots of B - sigma I.
template <typename Scalar>
Vector<Scalar> solve_shifted(const KilledBlock<Scalar>& block,
                             const Vector<Scalar>& u, const Vector<Scalar>& y) {
  const Eigen::Index n = block.size();
  Vector<Scalar> z(n);
  z[0] = y[0];
  for (Eigen::Index i = 1; i < n; ++i)
    z[i] = y[i] + block.down[i] * z[i - 1] / u[i - 1];
  Vector<Scalar> x(n);
  x[n - 1] = z[n - 1] / u[n - 1];
  for (Eigen::Index i = n - 2; i >= 0; --i)
    x[i] = (z[i] + block.up[i] * x[i + 1]) / u[i];
  return x;
}

/// Solves (B - sigma I)^T x = y given the pivots of B - sigma I.
template <typename Scalar>
Vector<Scalar> solve_shifted_transpose(const KilledBlock<Scalar>& block,
                                       const Vector<Scalar>& u,
                                       const Vector<Scalar>& y) {
  const Eigen::Index n = block.size();
  Vector<Scalar> w(n);
  w[0] = y[0] / u[0];
  for (Eigen::Index i = 1; i < n; ++i)
    w[i] = (y[i] + block.up[i - 1] * w[i - 1]) / u[i];
  Vector<Scalar> x(n);
  x[n - 1] = w[n - 1];
  for (Eigen::Index i = n - 2; i >= 0; --i)
    x[i] = w[i] + block.down[i + 1] * x[i + 1] / u[i];
  return x;
}

template <typename Scalar>
struct BlockPerron {
  Scalar lambda = 0;
  Vector<Scalar> right;  ///< max-normalized, strictly positive
  Vector<Scalar> left;   ///< sum-normalized, strictly positive
  int iterations = 0;
};

inline constexpr int kPerronIterationCap = 10000;

/// Inverse iteration until lambda estimates agree to 1e-13 relative and
/// the iterate is stable componentwise in the relative sense; tiny
/// components of a Perron vector converge no faster than the large ones
/// and downstream ratios depend on their relative accuracy.
template <typename Scalar>
Vector<Scalar> inverse_iterate(const KilledBlock<Scalar>& block,
                               const Vector<Scalar>& pivots, Scalar sigma,
                               bool transpose, Scalar& lambda, int& iterations) {
  using std::abs;
  const Eigen::Index n = block.size();
  const Scalar componentwise_tol = Scalar(64) * std::numeric_limits<Scalar>::epsilon();
  Vector<Scalar> v = Vector<Scalar>::Ones(n);
  Scalar previous = -1;
  for (int it = 1; it <= kPerronIterationCap; ++it) {
    Vector<Scalar> next = transpose ? solve_shifted_transpose(block, pivots, v)
                                    : solve_shifted(block, pivots, v);
    next = next.cwiseAbs();
    Eigen::Index k = 0;
    const Scalar peak = next.maxCoeff(&k);
    const Scalar estimate = sigma + v[k] / next[k];
    next /= peak;
    const Scalar change = ((next - v).cwiseAbs().array() / next.array()).maxCoeff();
    v = std::move(next);
    iterations = it;
    if (previous > Scalar(0) && abs(estimate - previous) <= Scalar(1e-13) * abs(estimate) &&
        change <= componentwise_tol) {
      lambda = estimate;
      return v;
    }
    previous = estimate;
  }
  throw InvariantError("Perron inverse iteration did not converge within " +
                       std::to_string(kPerronIterationCap) + " iterations");
}

/// Perron eigenpair of B: shifted inverse iteration with the shift just
/// below the bisected lambda_1, so B - sigma I stays an M-matrix and every
/// solve is subtraction-free.
template <typename Scalar>
BlockPerron<Scalar> block_perron(const KilledBlock<Scalar>& block) {
  using std::min;
  BlockPerron<Scalar> out;
  const Eigen::Index n = block.size();
  if (n == 1) {
    out.lambda = block.up[0];
    out.right = Vector<Scalar>::Ones(1);
    out.left = Vector<Scalar>::Ones(1);
    return out;
  }
  const Scalar lambda1 = bisect_eigenvalue(block, 0);
  const Scalar lambda2 = bisect_eigenvalue(block, 1);
  const Scalar gap = min(lambda1, lambda2 - lambda1);
  if (!(gap > Scalar(0)))
    throw InvariantError("Perron eigenvalue is not simple");
  const Scalar sigma = lambda1 - Scalar(1e-3) * gap;
  const Vector<Scalar> u = shifted_pivots(block, sigma);
  if ((u.array() <= Scalar(0)).any())
    throw InvariantError("shift is not below the Perron eigenvalue");

  int right_iterations = 0;
  int left_iterations = 0;
  Scalar left_lambda = 0;
  out.right = inverse_iterate(block, u, sigma, false, out.lambda, right_iterations);
  out.left = inverse_iterate(block, u, sigma, true, left_lambda, left_iterations);
  out.left /= out.left.sum();
  out.iterations = std::max(right_iterations, left_iterations);
  return out;
}

/// Block of the chain killed on reaching top + 1, on rows {0..top}.
template <typename Scalar>
KilledBlock<Scalar> stopped_block(const BirthDeathSpec<Scalar>& spec, int top) {
  KilledBlock<Scalar> b{Vector<Scalar>(top + 1), Vector<Scalar>(top + 1)};
  for (int x = 0; x <= top; ++x) {
    b.up[x] = spec.birth(x + 1);
    b.down[x] = spec.death(x);
  }
  return b;
}

/// Block of the chain restricted to {M..N} (death out of M dropped) and
/// killed at N, on rows {M..N-1}.
template <typename Scalar>
KilledBlock<Scalar> restricted_block(const BirthDeathSpec<Scalar>& spec, int M) {
  const int n = spec.top() - M;
  KilledBlock<Scalar> b{Vector<Scalar>(n), Vector<Scalar>(n)};
  for (int i = 0; i < n; ++i) {
    b.up[i] = spec.birth(M + i + 1);
    b.down[i] = i == 0 ? Scalar(0) : spec.death(M + i);
  }
  return b;
}

template <typename Scalar>
Scalar identity_tolerance(const BirthDeathSpec<Scalar>& spec) {
  return scaled_tolerance(Scalar(1e-10), spec.top(), spec.max_rate());
}

}  // namespace detail

template <typename Scalar>
LeadingEigenpair<Scalar> leading_eigenpair(const BirthDeathSpec<Scalar>& spec) {
  using std::abs;
  require_stopped(spec);
  const int N = spec.top();
  const auto perron = detail::block_perron(detail::stopped_block(spec, N - 1));

  LeadingEigenpair<Scalar> out;
  out.lambda = perron.lambda;
  out.f = Vector<Scalar>::Zero(N + 1);
  out.f.head(N) = perron.right / perron.right[0];
  out.pi = Vector<Scalar>::Zero(N + 1);
  out.pi.head(N) = perron.left;
  out.pi[N] = -1;

  if (abs(out.f.head(N).maxCoeff() - Scalar(1)) > Scalar(0))
    throw InvariantError("leading eigenfunction: max f differs from f(0) = 1");
  for (int x = 0; x < N; ++x) {
    if (!(out.f[x] - out.f[x + 1] > Scalar(0)))
      throw InvariantError("leading eigenfunction is not strictly decreasing at x = " +
                           std::to_string(x));
    if (!(out.pi[x] > Scalar(0)))
      throw InvariantError("left Perron vector is not positive at x = " +
                           std::to_string(x));
  }
  const auto g = build_generator(spec);
  const Scalar tol = detail::identity_tolerance(spec);
  const Scalar right_residual = (apply(g, out.f) + out.lambda * out.f).cwiseAbs().maxCoeff();
  const Scalar left_residual =
      (adjoint_apply(g, out.pi) + out.lambda * out.pi).cwiseAbs().maxCoeff();
  if (right_residual > tol || left_residual > tol)
    throw InvariantError("leading eigenpair residual exceeds tolerance");
  return out;
}

template <typename Scalar>
QuasiStationaryLaw<Scalar> quasi_stationary(const BirthDeathSpec<Scalar>& spec,
                                            int M) {
  const int N = spec.top();
  if (M < 0 || M > N - 1)
    throw SpecError("quasi-stationary stage M = " + std::to_string(M) +
                    " outside 0.." + std::to_string(N - 1));
  for (int x = 1; x <= N; ++x) {
    const bool positive = spec.death(x) > Scalar(0);
    if (x <= M && !positive)
      throw SpecError("plus-stage pattern needs d_" + std::to_string(x) + " > 0");
    if (x > M && positive)
      throw SpecError("plus-stage pattern needs d_" + std::to_string(x) + " = 0");
  }
  const auto perron = detail::block_perron(detail::stopped_block(spec, M));

  QuasiStationaryLaw<Scalar> out;
  out.M = M;
  out.rho = Vector<Scalar>::Zero(N + 1);
  out.rho.head(M + 1) = perron.left;
  out.H = Vector<Scalar>::Ones(N + 1);
  Scalar running(0);
  for (int x = 0; x <= M; ++x) {
    running += out.rho[x];
    out.H[x] = running;
  }
  out.H.tail(N - M).setOnes();
  out.lambda = spec.birth(M + 1) * out.rho[M];

  Vector<Scalar> residual = adjoint_apply(build_generator(spec), out.rho) + out.lambda * out.rho;
  residual[M + 1] -= out.lambda;
  if (residual.cwiseAbs().maxCoeff() > detail::identity_tolerance(spec))
    throw InvariantError("quasi-stationary residual exceeds tolerance at M = " +
                         std::to_string(M));
  return out;
}

template <typename Scalar>
MinimalEigenfunction<Scalar> minimal_eigenfunction(
    const BirthDeathSpec<Scalar>& spec, int M) {
  const int N = spec.top();
  if (M < 0 || M > N - 2)
    throw SpecError("minus stage M = " + std::to_string(M) + " outside 0.." +
                    std::to_string(N - 2));
  for (int x = 1; x <= N; ++x) {
    const bool positive = spec.death(x) > Scalar(0);
    if ((x <= M || x == N) && positive)
      throw SpecError("minus-stage pattern needs d_" + std::to_string(x) + " = 0");
    if (x > M && x < N && !positive)
      throw SpecError("minus-stage pattern needs d_" + std::to_string(x) + " > 0");
  }
  const auto perron = detail::block_perron(detail::restricted_block(spec, M));

  MinimalEigenfunction<Scalar> out;
  out.M = M;
  out.lambda = perron.lambda;
  out.f = Vector<Scalar>::Zero(N + 1);
  out.f.segment(M, N - M) = perron.right / perron.right[0];
  out.decrements = Vector<Scalar>::Zero(N + 1);
  // b_{x+1} (f(x) - f(x+1)) = lambda f(x) + d_x (f(x-1) - f(x)) on {M..N-1},
  // with the death term absent at x = M.
  Scalar below(0);
  for (int x = M; x < N; ++x) {
    const Scalar inflow = x == M ? Scalar(0) : spec.death(x) * below;
    out.decrements[x] = (out.lambda * out.f[x] + inflow) / spec.birth(x + 1);
    below = out.decrements[x];
  }
  for (int x = M; x < N; ++x)
    if (!(out.f[x] - out.f[x + 1] > Scalar(0)))
      throw InvariantError("minimal eigenfunction is not strictly decreasing at x = " +
                           std::to_string(x));

  Vector<Scalar> residual = apply(build_generator(spec), out.f) + out.lambda * out.f;
  if (M > 0) residual[M - 1] -= spec.birth(M);
  if (residual.cwiseAbs().maxCoeff() > detail::identity_tolerance(spec))
    throw InvariantError("minimal eigenfunction residual exceeds tolerance at M = " +
                         std::to_string(M));
  return out;
}

/// Symmetric tridiagonal eigenvalues by Sturm-sequence bisection, in the
/// textbook form q_i = a_i - sigma - e_{i-1}^2 / q_{i-1}. Ascending.
template <typename Real>
std::vector<Real> symmetric_tridiagonal_eigenvalues(const std::vector<Real>& diag,
                                                    const std::vector<Real>& off,
                                                    const Real& rel_tol) {
  using std::abs;
  const std::size_t n = diag.size();
  Real lo_bound = diag[0];
  Real hi_bound = diag[0];
  for (std::size_t i = 0; i < n; ++i) {
    Real radius(0);
    if (i > 0) radius += abs(off[i - 1]);
    if (i + 1 < n) radius += abs(off[i]);
    lo_bound = std::min<Real>(lo_bound, diag[i] - radius);
    hi_bound = std::max<Real>(hi_bound, diag[i] + radius);
  }
  auto count = [&](const Real& sigma) {
    int negatives = 0;
    Real q = diag[0] - sigma;
    for (std::size_t i = 0;; ++i) {
      if (q == Real(0)) q = -rel_tol * rel_tol * (abs(sigma) + Real(1));
      if (q < Real(0)) ++negatives;
      if (i + 1 == n) break;
      q = diag[i + 1] - sigma - off[i] * off[i] / q;
    }
    return negatives;
  };
  std::vector<Real> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    Real lo = lo_bound;
    Real hi = hi_bound;
    for (int iter = 0; iter < 5000; ++iter) {
      const Real width = hi - lo;
      if (width <= rel_tol * std::max<Real>(abs(lo), abs(hi))) break;
      const Real mid = lo + width / 2;
      if (mid == lo || mid == hi) break;
      if (count(mid) > static_cast<int>(k))
        hi = mid;
      else
        lo = mid;
    }
    out[k] = lo + (hi - lo) / 2;
  }
  return out;
}

/// Independent spectrum: symmetrize the block on {0..N-1} with reversibility
/// weights w_0 = 1, w_x = w_{x-1} b_x / d_x and bisect the symmetric
/// tridiagonal matrix in 50-digit arithmetic.
template <typename Scalar>
Spectrum<Scalar> spectrum_oracle(const BirthDeathSpec<Scalar>& spec) {
  using Real = boost::multiprecision::cpp_bin_float_50;
  require_stopped(spec);
  const int N = spec.top();
  auto rate = [](Scalar v) { return Real(static_cast<long double>(v)); };

  std::vector<Real> weights(N);
  weights[0] = 1;
  for (int x = 1; x < N; ++x) {
    weights[x] = weights[x - 1] * rate(spec.birth(x)) / rate(spec.death(x));
    if (!(weights[x] > 0))
      throw InvariantError("reversibility weight lost positivity at x = " +
                           std::to_string(x));
  }
  // -A has diagonal b_{x+1} + d_x; the symmetrized off-diagonal is
  // sqrt(w_x / w_{x+1}) * b_{x+1}.
  std::vector<Real> diag(N);
  std::vector<Real> off(N > 1 ? N - 1 : 0);
  for (int x = 0; x < N; ++x) {
    diag[x] = rate(spec.birth(x + 1)) + rate(spec.death(x));
    if (x + 1 < N) off[x] = sqrt(weights[x] / weights[x + 1]) * rate(spec.birth(x + 1));
  }
  const auto values = symmetric_tridiagonal_eigenvalues(diag, off, Real("1e-40"));
  Spectrum<Scalar> out;
  out.lambdas.resize(N);
  for (int i = 0; i < N; ++i) {
    if (!(values[i] > 0))
      throw InvariantError("oracle produced a nonpositive eigenvalue");
    out.lambdas[i] = static_cast<Scalar>(static_cast<long double>(values[i]));
  }
  return out;
}

/// Relative residuals of sum(lambda) = sum b + sum_{x<N} d and
/// prod(lambda) = prod b.
template <typename Scalar = double>
struct SpectrumIdentities {
  Scalar trace_relative = 0;
  Scalar determinant_relative = 0;
};

template <typename Scalar, typename Derived>
SpectrumIdentities<Scalar> spectrum_identities(const BirthDeathSpec<Scalar>& spec,
                                               const Eigen::MatrixBase<Derived>& lambdas) {
  using std::abs;
  using std::expm1;
  using std::log;
  const int N = spec.top();
  Scalar trace_expected(0);
  Scalar log_det_expected(0);
  for (int x = 1; x <= N; ++x) {
    trace_expected += spec.birth(x);
    if (x < N) trace_expected += spec.death(x);
    log_det_expected += log(spec.birth(x));
  }
  Scalar log_det(0);
  for (Eigen::Index i = 0; i < lambdas.size(); ++i) log_det += log(lambdas[i]);
  SpectrumIdentities<Scalar> out;
  out.trace_relative = abs(lambdas.sum() - trace_expected) / trace_expected;
  out.determinant_relative = abs(expm1(log_det - log_det_expected));
  return out;
}

}  // namespace bdtwine
