#pragma once

#include "bdtwine/core.hpp"
#include "bdtwine/rng.hpp"
#include "bdtwine/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace bdtwine {

/// Law of a sum of independent exponentials with distinct rates, stored
/// strictly increasing. An empty rate vector is the point mass at 0.
template <typename Scalar = double>
class HypoexponentialLaw {
 public:
  static constexpr double kMinRelativeGap = 1e-10;

  HypoexponentialLaw() = default;

  explicit HypoexponentialLaw(Vector<Scalar> rates) : rates_(std::move(rates)) {
    std::sort(rates_.data(), rates_.data() + rates_.size());
    for (Eigen::Index i = 0; i < rates_.size(); ++i) {
      using std::isfinite;
      if (!(rates_[i] > Scalar(0)) || !isfinite(rates_[i]))
        throw SpecError("hypoexponential rates must be positive and finite");
      if (i > 0 && rates_[i] - rates_[i - 1] < Scalar(kMinRelativeGap) * rates_[i])
        throw SpecError("hypoexponential rates must be distinct (relative gap >= 1e-10)");
    }
  }

  const Vector<Scalar>& rates() const { return rates_; }
  Eigen::Index size() const { return rates_.size(); }

  Scalar mean() const { return rates_.cwiseInverse().sum(); }
  Scalar variance() const { return rates_.cwiseInverse().cwiseAbs2().sum(); }

  Scalar min_relative_gap() const {
    Scalar gap = std::numeric_limits<Scalar>::infinity();
    for (Eigen::Index i = 1; i < rates_.size(); ++i)
      gap = std::min(gap, (rates_[i] - rates_[i - 1]) / rates_[i]);
    return gap;
  }

 private:
  Vector<Scalar> rates_;
};

/// Row of exp(tG) by uniformization together with the Poisson mass dropped.
template <typename Scalar = double>
struct Uniformized {
  Vector<Scalar> distribution;
  Scalar tail_bound = 0;
  int terms = 0;
  int squarings = 0;
};

namespace detail {

inline constexpr double kUniformizationTail = 1e-13;
inline constexpr double kUniformizationMultiplier = 1.1;
inline constexpr double kDirectSeriesLimit = 500.0;

/// Poisson(mean)-weighted sum of powers of p applied to `start` (a row
/// vector or a matrix), stopping once the remaining weight is below `tail`.
///
/// The remaining weight after term k is bounded by
/// w_{k+1} / (1 - mean/(k+2)) once k + 2 > mean; 1 - (sum of weights) is
/// not used because its rounding floor sits near the target.
template <typename Scalar, typename Start>
Matrix<Scalar> poisson_series(const Matrix<Scalar>& p, const Start& start, Scalar mean,
                              Scalar tail, Scalar& dropped, int& terms) {
  using std::exp;
  Matrix<Scalar> power = start;
  Scalar weight = exp(-mean);
  Matrix<Scalar> sum = weight * power;
  int k = 0;
  for (;; ++k) {
    if (Scalar(k + 2) > mean) {
      const Scalar next = weight * mean / Scalar(k + 1);
      const Scalar bound = next / (Scalar(1) - mean / Scalar(k + 2));
      if (bound < tail) {
        dropped = bound;
        break;
      }
    }
    if (k > 100000) throw InvariantError("uniformization series did not terminate");
    power = (power * p).eval();
    weight *= mean / Scalar(k + 1);
    sum += weight * power;
  }
  terms = k + 1;
  return sum;
}

/// Arithmetic used for scaling and squaring. Rounding grows like
/// 2^squarings * eps, so double inputs are squared in long double.
template <typename Scalar>
struct SquaringScalar {
  using type = Scalar;
};
template <>
struct SquaringScalar<double> {
  using type = long double;
};

}  // namespace detail

/// Row x of exp(tG) for a dense generator. theta = 1.1 max|G(x,x)| and
/// P = I + G/theta. Up to theta t = 500 the Poisson series is applied to
/// the row directly; beyond that exp(hG) with theta h <= 1 is built as a
/// matrix and squared, so the mass dropped in total stays below 1e-13.
template <typename Scalar>
Uniformized<Scalar> uniformize(const Matrix<Scalar>& generator, int x, Scalar t) {
  using std::ceil;
  using std::log2;
  const Eigen::Index n = generator.rows();
  if (x < 0 || x >= n) throw SpecError("start state out of range");
  if (!(t >= Scalar(0))) throw SpecError("time must be nonnegative");
  Uniformized<Scalar> out;
  Matrix<Scalar> row = Matrix<Scalar>::Zero(1, n);
  row(0, x) = 1;
  const Scalar max_exit = (-generator.diagonal()).maxCoeff();
  if (t == Scalar(0) || max_exit == Scalar(0)) {
    out.distribution = row.transpose();
    out.terms = 1;
    return out;
  }
  const Scalar theta = Scalar(detail::kUniformizationMultiplier) * max_exit;
  const Scalar mean = theta * t;
  if (mean <= Scalar(detail::kDirectSeriesLimit)) {
    const Matrix<Scalar> p = Matrix<Scalar>::Identity(n, n) + generator / theta;
    out.distribution = detail::poisson_series(p, row, mean, Scalar(detail::kUniformizationTail),
                                              out.tail_bound, out.terms)
                           .transpose();
  } else {
    using Wide = typename detail::SquaringScalar<Scalar>::type;
    const int squarings = static_cast<int>(ceil(log2(mean)));
    const Matrix<Wide> p = Matrix<Wide>::Identity(n, n) +
                           generator.template cast<Wide>() / static_cast<Wide>(theta);
    const Wide scale = std::pow(Wide(2), squarings);
    const Wide h_mean = static_cast<Wide>(mean) / scale;
    const Wide step_tail = Wide(detail::kUniformizationTail) / scale;
    Wide dropped = 0;
    Matrix<Wide> e = detail::poisson_series(p, Matrix<Wide>::Identity(n, n).eval(), h_mean,
                                            step_tail, dropped, out.terms);
    for (int i = 0; i < squarings; ++i) e = (e * e).eval();
    out.squarings = squarings;
    out.tail_bound = static_cast<Scalar>(dropped * scale);
    out.distribution = e.row(x).transpose().template cast<Scalar>();
  }
  out.distribution = out.distribution.cwiseMax(Scalar(0));
  return out;
}

template <typename Scalar>
Vector<Scalar> transition_probability(const BirthDeathSpec<Scalar>& spec, int x, Scalar t) {
  if (x < 0 || x > spec.top())
    throw SpecError("start state " + std::to_string(x) + " outside 0.." +
                    std::to_string(spec.top()));
  return uniformize(build_generator(spec).dense(), x, t).distribution;
}

namespace detail {

/// Generator of the pure-birth chain 0 -> 1 -> ... -> n with the given rates.
template <typename Scalar>
Matrix<Scalar> pure_birth_generator(const Vector<Scalar>& rates) {
  const Eigen::Index n = rates.size();
  Matrix<Scalar> g = Matrix<Scalar>::Zero(n + 1, n + 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    g(i, i) = -rates[i];
    g(i, i + 1) = rates[i];
  }
  return g;
}

inline constexpr double kClusteredGap = 1e-6;
inline constexpr double kMaxCoefficientMass = 1e6;

}  // namespace detail

/// P[sum of the exponentials <= t].
///
/// Partial fractions: 1 - sum_i c_i exp(-lambda_i t) with
/// c_i = prod_{j != i} lambda_j / (lambda_j - lambda_i). Rates closer than
/// 1e-6 relative, or coefficients whose total mass would swamp the 1e-8
/// accuracy target, fall back to uniformizing the pure-birth chain.
template <typename Scalar>
Scalar hypo_cdf(const HypoexponentialLaw<Scalar>& law, Scalar t) {
  using std::abs;
  using std::exp;
  if (!(t >= Scalar(0))) throw SpecError("time must be nonnegative");
  const Eigen::Index n = law.size();
  if (n == 0) return Scalar(1);
  if (t == Scalar(0)) return Scalar(0);
  using std::isinf;
  if (isinf(t)) return Scalar(1);

  const auto& rates = law.rates();
  Vector<Scalar> coefficients(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    Scalar c(1);
    for (Eigen::Index j = 0; j < n; ++j)
      if (j != i) c *= rates[j] / (rates[j] - rates[i]);
    coefficients[i] = c;
  }
  const bool clustered = law.min_relative_gap() < Scalar(detail::kClusteredGap);
  if (clustered || coefficients.cwiseAbs().sum() > Scalar(detail::kMaxCoefficientMass)) {
    const auto u = uniformize(detail::pure_birth_generator(rates), 0, t);
    return std::clamp(u.distribution[n], Scalar(0), Scalar(1));
  }
  Scalar survival(0);
  for (Eigen::Index i = 0; i < n; ++i) survival += coefficients[i] * exp(-rates[i] * t);
  return std::clamp(Scalar(1) - survival, Scalar(0), Scalar(1));
}

/// Sum of independent Exp(lambda_i) draws.
template <typename Scalar, typename Engine>
Scalar hypo_sample(const HypoexponentialLaw<Scalar>& law, Engine& engine) {
  Scalar total(0);
  for (Eigen::Index i = 0; i < law.size(); ++i)
    total += Scalar(standard_exponential(engine)) / law.rates()[i];
  return total;
}

/// Law of tau_N from an arbitrary start x: tau_N is distributed as
/// sigma_{Z+1} + ... + sigma_N with Z ~ K-(x, .) independent of the
/// sigma_y ~ Exp(lambda_y). Z = N gives the point mass at 0.
template <typename Scalar = double>
struct MixturePassageLaw {
  int start = 0;
  Vector<Scalar> weights;  ///< K-(x, .)
  /// components[z]: rates lambda_{z+1}, ..., lambda_N.
  std::vector<HypoexponentialLaw<Scalar>> components;
};

/// Component law for Z = z given the increasing spectrum lambda_1..lambda_N.
template <typename Scalar>
HypoexponentialLaw<Scalar> passage_suffix(const Vector<Scalar>& lambdas, int z) {
  const int N = static_cast<int>(lambdas.size());
  return HypoexponentialLaw<Scalar>(lambdas.tail(N - z).eval());
}

template <typename Scalar>
MixturePassageLaw<Scalar> mixture_passage_law(const MarkovKernel<Scalar>& k_minus,
                                              const Vector<Scalar>& lambdas, int x) {
  const int N = static_cast<int>(lambdas.size());
  if (k_minus.size() != N + 1) throw SpecError("kernel and spectrum sizes differ");
  if (x < 0 || x > N)
    throw SpecError("start state " + std::to_string(x) + " outside 0.." + std::to_string(N));
  MixturePassageLaw<Scalar> out;
  out.start = x;
  out.weights = k_minus.matrix().row(x).transpose();
  out.components.reserve(N + 1);
  for (int z = 0; z <= N; ++z) out.components.push_back(passage_suffix(lambdas, z));
  return out;
}

template <typename Scalar>
MixturePassageLaw<Scalar> mixture_passage_law(const BirthDeathSpec<Scalar>& spec,
                                              const MarkovKernel<Scalar>& k_minus, int x) {
  return mixture_passage_law(k_minus, spectrum_oracle(spec).lambdas, x);
}

template <typename Scalar>
Scalar mixture_cdf(const MixturePassageLaw<Scalar>& law, Scalar t) {
  Scalar total(0);
  for (std::size_t z = 0; z < law.components.size(); ++z)
    if (law.weights[z] != Scalar(0)) total += law.weights[z] * hypo_cdf(law.components[z], t);
  return std::clamp(total, Scalar(0), Scalar(1));
}

}  // namespace bdtwine
