#pragma once

// Small estimation toolkit: least-squares lines, binomial intervals, KS distance.

#include <boost/math/distributions/binomial.hpp>
#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <vector>

#include "qgloc/errors.hpp"

namespace qgloc {

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
  double slope_stderr = 0.0;
  /// Two-sided 95% confidence interval of the slope (t distribution, n-2 dof).
  double slope_lo = 0.0;
  double slope_hi = 0.0;
  std::size_t n = 0;
};

/// Ordinary least squares y = a + b x.
inline LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw PreconditionError("fit_line: size mismatch");
  const std::size_t n = x.size();
  if (n < 2) throw PreconditionError("fit_line: need at least two points");
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx <= 0.0) throw PreconditionError("fit_line: abscissae are all equal");
  LineFit fit;
  fit.n = n;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  double sse = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = y[i] - fit.intercept - fit.slope * x[i];
    sse += r * r;
  }
  fit.r2 = syy > 0.0 ? 1.0 - sse / syy : 1.0;
  if (n > 2) {
    fit.slope_stderr = std::sqrt(sse / static_cast<double>(n - 2) / sxx);
    const boost::math::students_t dist(static_cast<double>(n - 2));
    const double q = boost::math::quantile(dist, 0.975);
    fit.slope_lo = fit.slope - q * fit.slope_stderr;
    fit.slope_hi = fit.slope + q * fit.slope_stderr;
  } else {
    fit.slope_lo = fit.slope_hi = fit.slope;
  }
  return fit;
}

struct Proportion {
  std::size_t successes = 0;
  std::size_t trials = 0;
  double estimate = 0.0;
  double lo = 0.0;
  double hi = 1.0;
};

/// Clopper-Pearson interval at the given two-sided level.
inline Proportion binomial_interval(std::size_t successes, std::size_t trials, double level = 0.95) {
  if (successes > trials) throw PreconditionError("binomial_interval: successes exceed trials");
  Proportion p{successes, trials, 0.0, 0.0, 1.0};
  if (trials == 0) return p;
  using boost::math::binomial_distribution;
  const double alpha = 1.0 - level;
  const auto n = static_cast<double>(trials);
  const auto k = static_cast<double>(successes);
  p.estimate = k / n;
  p.lo = successes == 0 ? 0.0
                        : binomial_distribution<>::find_lower_bound_on_p(
                              n, k, alpha / 2, binomial_distribution<>::clopper_pearson_exact_interval);
  p.hi = successes == trials
             ? 1.0
             : binomial_distribution<>::find_upper_bound_on_p(
                   n, k, alpha / 2, binomial_distribution<>::clopper_pearson_exact_interval);
  return p;
}

/// sup_x |F_n(x) - F(x)| for the empirical CDF of `samples`.
inline double ks_distance(std::vector<double> samples, const std::function<double(double)>& cdf) {
  if (samples.empty()) throw PreconditionError("ks_distance: no samples");
  std::sort(samples.begin(), samples.end());
  const auto n = static_cast<double>(samples.size());
  double d = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double f = cdf(samples[i]);
    d = std::max({d, static_cast<double>(i + 1) / n - f, f - static_cast<double>(i) / n});
  }
  return d;
}

inline double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const double upper = v[mid];
  if (v.size() % 2 == 1) return upper;
  const double lower = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

inline double mean(const std::vector<double>& v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace qgloc
