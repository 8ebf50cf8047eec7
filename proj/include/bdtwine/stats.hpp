#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace bdtwine::stats {

/// sup_t |F_n(t) - F(t)| for the empirical CDF of `samples`.
double ks_statistic(std::vector<double> samples, const std::function<double(double)>& cdf);

/// Asymptotic critical value of sqrt(n) D_n at alpha = 0.01.
inline constexpr double kKsCritical01 = 1.63;

/// P[sqrt(n) D_n > x] under the Kolmogorov limit law.
double kolmogorov_survival(double x);

struct ChiSquareResult {
  double statistic = 0;
  int dof = 0;
  double p_value = 1;
  int bins = 0;
  /// Observations in categories of probability zero; forces p_value = 0.
  std::int64_t impossible = 0;
};

/// Pearson goodness of fit. Adjacent categories are pooled until every
/// pooled expected count is at least `min_expected`.
ChiSquareResult chi_square_test(std::span<const std::int64_t> counts,
                                std::span<const double> probabilities,
                                double min_expected = 5.0);

struct Moments {
  std::size_t n = 0;
  double mean = 0;
  double variance = 0;  ///< unbiased
  double fourth_central = 0;

  double mean_standard_error() const;
  /// Standard error of the sample variance, sqrt((m4 - s^4) / n).
  double variance_standard_error() const;
};

/// Order-insensitive: accumulates in sorted order.
Moments moments(std::vector<double> samples);

}  // namespace bdtwine::stats
