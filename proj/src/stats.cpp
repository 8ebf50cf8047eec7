#include "bdtwine/stats.hpp"

#include <boost/math/distributions/chi_squared.hpp>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace bdtwine::stats {

double ks_statistic(std::vector<double> samples, const std::function<double(double)>& cdf) {
  if (samples.empty()) throw std::invalid_argument("ks_statistic: no samples");
  std::sort(samples.begin(), samples.end());
  const double n = static_cast<double>(samples.size());
  double d = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double f = cdf(samples[i]);
    d = std::max({d, (static_cast<double>(i) + 1) / n - f, f - static_cast<double>(i) / n});
  }
  return d;
}

double kolmogorov_survival(double x) {
  if (x <= 0) return 1;
  if (x < 0.3) return 1;  // series converges slowly; the true value is > 0.99999
  double sum = 0;
  for (int k = 1; k <= 100; ++k) {
    const double term = std::exp(-2.0 * k * k * x * x);
    sum += (k % 2 == 1 ? term : -term);
    if (term < 1e-17) break;
  }
  return std::clamp(2.0 * sum, 0.0, 1.0);
}

ChiSquareResult chi_square_test(std::span<const std::int64_t> counts,
                                std::span<const double> probabilities, double min_expected) {
  if (counts.size() != probabilities.size())
    throw std::invalid_argument("chi_square_test: size mismatch");
  ChiSquareResult r;
  std::int64_t total = 0;
  for (auto c : counts) total += c;
  if (total == 0) return r;

  std::vector<double> observed;
  std::vector<double> expected;
  double pending_obs = 0;
  double pending_exp = 0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (probabilities[i] <= 0) {
      r.impossible += counts[i];
      continue;
    }
    pending_obs += static_cast<double>(counts[i]);
    pending_exp += probabilities[i] * static_cast<double>(total);
    if (pending_exp >= min_expected) {
      observed.push_back(pending_obs);
      expected.push_back(pending_exp);
      pending_obs = pending_exp = 0;
    }
  }
  if (pending_exp > 0) {
    if (expected.empty()) {
      observed.push_back(pending_obs);
      expected.push_back(pending_exp);
    } else {
      observed.back() += pending_obs;
      expected.back() += pending_exp;
    }
  }
  r.bins = static_cast<int>(expected.size());
  r.dof = r.bins - 1;
  for (std::size_t i = 0; i < expected.size(); ++i) {
    const double diff = observed[i] - expected[i];
    r.statistic += diff * diff / expected[i];
  }
  if (r.impossible > 0) {
    r.p_value = 0;
  } else if (r.dof <= 0) {
    r.p_value = 1;
  } else {
    r.p_value = boost::math::cdf(
        boost::math::complement(boost::math::chi_squared(r.dof), r.statistic));
  }
  return r;
}

double Moments::mean_standard_error() const {
  return std::sqrt(variance / static_cast<double>(n));
}

double Moments::variance_standard_error() const {
  return std::sqrt(std::max(0.0, fourth_central - variance * variance) / static_cast<double>(n));
}

Moments moments(std::vector<double> samples) {
  Moments m;
  m.n = samples.size();
  if (m.n < 2) throw std::invalid_argument("moments: need at least two samples");
  std::sort(samples.begin(), samples.end());
  double sum = 0;
  for (double s : samples) sum += s;
  m.mean = sum / static_cast<double>(m.n);
  double m2 = 0;
  double m4 = 0;
  for (double s : samples) {
    const double d = s - m.mean;
    m2 += d * d;
    m4 += d * d * d * d;
  }
  m.variance = m2 / static_cast<double>(m.n - 1);
  m.fourth_central = m4 / static_cast<double>(m.n);
  return m;
}

}  // namespace bdtwine::stats
