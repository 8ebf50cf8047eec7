#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace bdtwine {

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

/// Malformed input: bad rates, wrong dimensions, stage-pattern violations.
class SpecError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A computed object failed one of its defining identities.
class InvariantError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Rates of a birth-and-death chain on {0,...,N}.
///
/// Rates are addressed 1-indexed: birth(x) is the rate of x-1 -> x and
/// death(x) the rate of x -> x-1, for 1 <= x <= N. The boundary conventions
/// d_0 = 0 and b_{N+1} = 0 are built into the accessors, so birth(N+1) and
/// death(0) return zero.
template <typename Scalar = double>
class BirthDeathSpec {
 public:
  BirthDeathSpec() = default;

  BirthDeathSpec(Vector<Scalar> births, Vector<Scalar> deaths)
      : births_(std::move(births)), deaths_(std::move(deaths)) {
    if (births_.size() < 1) throw SpecError("N must be at least 1");
    if (deaths_.size() != births_.size())
      throw SpecError("b and d must both have length N");
    for (Eigen::Index i = 0; i < births_.size(); ++i) {
      using std::isfinite;
      if (!isfinite(births_[i]) || !(births_[i] > Scalar(0)))
        throw SpecError("birth rate b_" + std::to_string(i + 1) +
                        " must be positive (b_1,...,b_N > 0)");
      if (!isfinite(deaths_[i]) || deaths_[i] < Scalar(0))
        throw SpecError("death rate d_" + std::to_string(i + 1) +
                        " must be nonnegative");
    }
  }

  int top() const { return static_cast<int>(births_.size()); }
  int states() const { return top() + 1; }

  Scalar birth(int x) const {
    if (x == top() + 1) return Scalar(0);
    check_index(x);
    return births_[x - 1];
  }
  Scalar death(int x) const {
    if (x == 0) return Scalar(0);
    check_index(x);
    return deaths_[x - 1];
  }

  /// Storage order: births()[i] == birth(i + 1).
  const Vector<Scalar>& births() const { return births_; }
  const Vector<Scalar>& deaths() const { return deaths_; }

  /// N is a trap and the chain is irreducible on {0,...,N-1}.
  bool is_stopped() const {
    if (death(top()) != Scalar(0)) return false;
    for (int x = 1; x < top(); ++x)
      if (!(death(x) > Scalar(0))) return false;
    return true;
  }

  bool is_pure_birth() const { return (deaths_.array() == Scalar(0)).all(); }

  Scalar max_rate() const {
    return std::max(births_.maxCoeff(), deaths_.maxCoeff());
  }

  template <typename Other>
  BirthDeathSpec<Other> cast() const {
    return BirthDeathSpec<Other>(births_.template cast<Other>(),
                                 deaths_.template cast<Other>());
  }

 private:
  void check_index(int x) const {
    if (x < 1 || x > top())
      throw std::out_of_range("rate index " + std::to_string(x) +
                              " outside 1.." + std::to_string(top()));
  }

  Vector<Scalar> births_;
  Vector<Scalar> deaths_;
};

/// Throws unless the spec is a stopped chain: d_1..d_{N-1} > 0, d_N = 0.
template <typename Scalar>
void require_stopped(const BirthDeathSpec<Scalar>& spec) {
  if (spec.death(spec.top()) != Scalar(0))
    throw SpecError("d_N must be 0 for the stopped chain");
  for (int x = 1; x < spec.top(); ++x)
    if (!(spec.death(x) > Scalar(0)))
      throw SpecError("death rate d_" + std::to_string(x) +
                      " must be positive for the stopped chain");
}

/// Generator of a birth-and-death chain, stored as three diagonals.
///
/// lower()[x] = G(x, x-1) (lower()[0] = 0), upper()[x] = G(x, x+1)
/// (upper()[N] = 0), and diagonal()[x] = -(lower()[x] + upper()[x]).
template <typename Scalar = double>
class TridiagonalGenerator {
 public:
  TridiagonalGenerator() = default;

  explicit TridiagonalGenerator(const BirthDeathSpec<Scalar>& spec)
      : lower_(Vector<Scalar>::Zero(spec.states())),
        diagonal_(Vector<Scalar>::Zero(spec.states())),
        upper_(Vector<Scalar>::Zero(spec.states())) {
    for (int x = 0; x <= spec.top(); ++x) {
      lower_[x] = spec.death(x);
      upper_[x] = spec.birth(x + 1);
      diagonal_[x] = -(lower_[x] + upper_[x]);
    }
  }

  Eigen::Index size() const { return diagonal_.size(); }
  const Vector<Scalar>& lower() const { return lower_; }
  const Vector<Scalar>& diagonal() const { return diagonal_; }
  const Vector<Scalar>& upper() const { return upper_; }

  Scalar max_exit_rate() const { return (-diagonal_).maxCoeff(); }

  Matrix<Scalar> dense() const {
    const Eigen::Index n = size();
    Matrix<Scalar> g = Matrix<Scalar>::Zero(n, n);
    for (Eigen::Index x = 0; x < n; ++x) {
      g(x, x) = diagonal_[x];
      if (x > 0) g(x, x - 1) = lower_[x];
      if (x + 1 < n) g(x, x + 1) = upper_[x];
    }
    return g;
  }

 private:
  Vector<Scalar> lower_;
  Vector<Scalar> diagonal_;
  Vector<Scalar> upper_;
};

template <typename Scalar>
TridiagonalGenerator<Scalar> build_generator(
    const BirthDeathSpec<Scalar>& spec) {
  return TridiagonalGenerator<Scalar>(spec);
}

namespace detail {
template <typename Scalar, typename Derived>
void require_length(const TridiagonalGenerator<Scalar>& g,
                    const Eigen::MatrixBase<Derived>& v) {
  if (v.size() != g.size())
    throw SpecError("vector length " + std::to_string(v.size()) +
                    " does not match generator dimension " +
                    std::to_string(g.size()));
}
}  // namespace detail

/// (Gf)(x) = b_{x+1}(f(x+1) - f(x)) + d_x(f(x-1) - f(x)).
template <typename Scalar, typename Derived>
Vector<Scalar> apply(const TridiagonalGenerator<Scalar>& g,
                     const Eigen::MatrixBase<Derived>& f) {
  detail::require_length(g, f);
  const Eigen::Index n = g.size();
  Vector<Scalar> out(n);
  for (Eigen::Index x = 0; x < n; ++x) {
    Scalar v(0);
    if (x + 1 < n) v += g.upper()[x] * (f[x + 1] - f[x]);
    if (x > 0) v += g.lower()[x] * (f[x - 1] - f[x]);
    out[x] = v;
  }
  return out;
}

/// (G^T pi)(x) = b_x pi(x-1) - b_{x+1} pi(x) + d_{x+1} pi(x+1) - d_x pi(x).
template <typename Scalar, typename Derived>
Vector<Scalar> adjoint_apply(const TridiagonalGenerator<Scalar>& g,
                             const Eigen::MatrixBase<Derived>& pi) {
  detail::require_length(g, pi);
  const Eigen::Index n = g.size();
  Vector<Scalar> out(n);
  for (Eigen::Index x = 0; x < n; ++x) {
    Scalar v = g.diagonal()[x] * pi[x];
    if (x > 0) v += g.upper()[x - 1] * pi[x - 1];
    if (x + 1 < n) v += g.lower()[x + 1] * pi[x + 1];
    out[x] = v;
  }
  return out;
}

/// Row-stochastic square matrix. Construction does not validate; use
/// validate_kernel for a report.
template <typename Scalar = double>
class MarkovKernel {
 public:
  MarkovKernel() = default;
  explicit MarkovKernel(Matrix<Scalar> m) : m_(std::move(m)) {
    if (m_.rows() != m_.cols()) throw SpecError("kernel must be square");
  }

  static MarkovKernel identity(Eigen::Index n) {
    return MarkovKernel(Matrix<Scalar>::Identity(n, n));
  }

  Eigen::Index size() const { return m_.rows(); }
  Scalar operator()(Eigen::Index x, Eigen::Index y) const { return m_(x, y); }
  const Matrix<Scalar>& matrix() const { return m_; }

 private:
  Matrix<Scalar> m_;
};

/// Product ks[0] * ks[1] * ... in the given order.
template <typename Scalar>
MarkovKernel<Scalar> compose_kernels(std::span<const MarkovKernel<Scalar>> ks) {
  if (ks.empty()) throw SpecError("compose_kernels needs at least one kernel");
  Matrix<Scalar> out = ks.front().matrix();
  for (std::size_t i = 1; i < ks.size(); ++i) {
    if (ks[i].size() != out.rows())
      throw SpecError("kernel dimension mismatch in composition");
    out = (out * ks[i].matrix()).eval();
  }
  return MarkovKernel<Scalar>(std::move(out));
}

template <typename Scalar>
MarkovKernel<Scalar> compose_kernels(
    const std::vector<MarkovKernel<Scalar>>& ks) {
  return compose_kernels(std::span<const MarkovKernel<Scalar>>(ks));
}

struct EntryLocation {
  Eigen::Index row = -1;
  Eigen::Index col = -1;
};

template <typename Scalar = double>
struct KernelReport {
  Scalar max_row_sum_deviation = 0;
  /// min(0, smallest entry).
  Scalar most_negative_entry = 0;
  EntryLocation most_negative_at;
  /// Largest |K(x,y)| with y > x; only filled when lower-triangularity is
  /// requested.
  Scalar max_upper_entry = 0;
  EntryLocation max_upper_at;
  /// |K(N,N) - 1|; only filled when requested.
  Scalar top_fix_deviation = 0;

  bool passes(Scalar tol) const {
    return max_row_sum_deviation <= tol && -most_negative_entry <= tol &&
           max_upper_entry <= tol && top_fix_deviation <= tol;
  }
  Scalar worst() const {
    return std::max({max_row_sum_deviation, -most_negative_entry,
                     max_upper_entry, top_fix_deviation});
  }
};

template <typename Scalar>
KernelReport<Scalar> validate_kernel(const MarkovKernel<Scalar>& k,
                                     bool require_lower,
                                     bool require_fix_top) {
  using std::abs;
  KernelReport<Scalar> r;
  const Eigen::Index n = k.size();
  for (Eigen::Index x = 0; x < n; ++x) {
    r.max_row_sum_deviation =
        std::max(r.max_row_sum_deviation, Scalar(abs(k.matrix().row(x).sum() - Scalar(1))));
    for (Eigen::Index y = 0; y < n; ++y) {
      if (k(x, y) < r.most_negative_entry) {
        r.most_negative_entry = k(x, y);
        r.most_negative_at = {x, y};
      }
      if (require_lower && y > x && abs(k(x, y)) > r.max_upper_entry) {
        r.max_upper_entry = abs(k(x, y));
        r.max_upper_at = {x, y};
      }
    }
  }
  if (require_fix_top && n > 0)
    r.top_fix_deviation = abs(k(n - 1, n - 1) - Scalar(1));
  return r;
}

/// Absolute tolerance for algebraic identities: `base` for N <= 16 with
/// O(1) rates, growing linearly with the largest rate and with N.
template <typename Scalar>
Scalar scaled_tolerance(Scalar base, int n, Scalar max_rate) {
  using std::max;
  return base * max(Scalar(1), max_rate) * max(Scalar(1), Scalar(n) / Scalar(16));
}

}  // namespace bdtwine
