#include "gustpost/distributions.hpp"

#include <algorithm>

namespace gustpost {

double tlogis_cdf(const TruncatedLogistic& d, double x) {
  if (x <= d.lower_bound) return 0.0;
  const double zx = (x - d.location) / d.scale;
  if (std::isinf(d.lower_bound) && d.lower_bound < 0.0)
    return detail::logistic_cdf(zx);
  const double a = (d.lower_bound - d.location) / d.scale;
  const double fm = detail::logistic_cdf(-a);
  // (F(zx) - F(a)) / fm rewritten as (fm - F(-zx)) / fm: the direct form
  // cancels catastrophically under deep truncation (a >> 0).
  if (fm == 0.0) return std::clamp(1.0 - std::exp(a - zx), 0.0, 1.0);
  return std::clamp((fm - detail::logistic_cdf(-zx)) / fm, 0.0, 1.0);
}

double tlogis_quantile(const TruncatedLogistic& d, double p) {
  if (!(p >= 0.0 && p <= 1.0))
    throw std::invalid_argument("quantile level outside [0,1]");
  if (p == 0.0 && !std::isinf(d.lower_bound)) return d.lower_bound;
  double c = 0.0, fm = 1.0, log_fm = 0.0;
  if (!(std::isinf(d.lower_bound) && d.lower_bound < 0.0)) {
    const double a = (d.lower_bound - d.location) / d.scale;
    c = detail::logistic_cdf(a);
    fm = detail::logistic_cdf(-a);
    log_fm = -detail::softplus(a);
  }
  // Plain-logistic level q = c + p*fm; 1-q = fm*(1-p) exactly, so take the
  // logs in a form that survives c -> 1 (deep truncation).
  const double q = c + p * fm;
  const double log_q = (q < 0.5) ? std::log(q) : std::log1p(-fm * (1.0 - p));
  const double log_1mq = log_fm + std::log1p(-p);
  return d.location + d.scale * (log_q - log_1mq);
}

double crps_tlogis(const TruncatedLogistic& d, double y, bool* censored) {
  bool cens = false;
  if (!std::isinf(d.lower_bound) && y < d.lower_bound) {
    y = d.lower_bound;
    cens = true;
  }
  if (censored) *censored = cens;
  return detail::crps_tlogis_impl<double>(d.location, d.scale, d.lower_bound, y);
}

void crps_tlogis_grad(const TruncatedLogistic& d, double y, double* d_loc,
                      double* d_scale) {
  if (!std::isinf(d.lower_bound) && y < d.lower_bound) y = d.lower_bound;
  const Dual wrt_loc = detail::crps_tlogis_impl<Dual>(
      Dual(d.location, 1.0), Dual(d.scale, 0.0), d.lower_bound, y);
  const Dual wrt_scale = detail::crps_tlogis_impl<Dual>(
      Dual(d.location, 0.0), Dual(d.scale, 1.0), d.lower_bound, y);
  if (d_loc) *d_loc = wrt_loc.d;
  if (d_scale) *d_scale = wrt_scale.d;
}

BernsteinQuantile::BernsteinQuantile(std::vector<double> alpha)
    : coefficients(std::move(alpha)) {
  if (coefficients.size() < 2)
    throw std::invalid_argument("Bernstein degree must be >= 1");
  for (std::size_t j = 1; j < coefficients.size(); ++j)
    if (coefficients[j] < coefficients[j - 1] - 1e-12)
      throw std::invalid_argument("Bernstein coefficients must be nondecreasing");
}

double bernstein_quantile_eval(const BernsteinQuantile& d, double tau) {
  if (!(tau >= 0.0 && tau <= 1.0))
    throw std::invalid_argument("tau outside [0,1]");
  // De Casteljau; stable and avoids binomial coefficients.
  std::vector<double> b = d.coefficients;
  for (std::size_t level = b.size() - 1; level > 0; --level)
    for (std::size_t j = 0; j < level; ++j)
      b[j] = (1.0 - tau) * b[j] + tau * b[j + 1];
  return b[0];
}

double pinball_loss_mean(const BernsteinQuantile& d, double y,
                         const std::vector<double>& tau_grid) {
  if (tau_grid.empty()) throw std::invalid_argument("empty tau grid");
  double sum = 0.0;
  for (double tau : tau_grid) {
    if (!(tau > 0.0 && tau < 1.0))
      throw std::invalid_argument("tau grid values must lie in (0,1)");
    const double u = y - bernstein_quantile_eval(d, tau);
    sum += u * (tau - (u < 0.0 ? 1.0 : 0.0));
  }
  return sum / static_cast<double>(tau_grid.size());
}

namespace {

// p = 1 - inf{tau : Q(tau) >= t}, by bisection on the monotone Q.
double bernstein_exceedance(const BernsteinQuantile& d, double t) {
  constexpr double kTol = 1e-8;
  if (bernstein_quantile_eval(d, 0.0) >= t) return 1.0;
  if (bernstein_quantile_eval(d, 1.0) < t) return 0.0;
  double lo = 0.0, hi = 1.0;
  while (hi - lo > kTol) {
    const double mid = 0.5 * (lo + hi);
    if (bernstein_quantile_eval(d, mid) >= t)
      hi = mid;
    else
      lo = mid;
  }
  return 1.0 - hi;
}

struct ExceedanceVisitor {
  double t;

  double operator()(const TruncatedLogistic& d) const {
    return 1.0 - tlogis_cdf(d, t);
  }
  double operator()(const BernsteinQuantile& d) const {
    return bernstein_exceedance(d, t);
  }
  double operator()(const EnsembleEmpirical& d) const {
    if (d.members.empty()) return 0.0;
    std::size_t n = 0;
    for (double m : d.members) n += (m > t) ? 1 : 0;
    return static_cast<double>(n) / static_cast<double>(d.members.size());
  }
  double operator()(const BiasShiftedLogistic& d) const {
    if (t < 0.0) return 1.0;  // forecast is truncated at zero
    const double z = (t - d.ensemble_mean - d.location) / d.scale;
    return detail::logistic_cdf(-z);
  }
};

}  // namespace

ProbabilityForecast exceedance_prob(const PredictiveDistribution& dist,
                                    const ThresholdSet& thresholds) {
  ProbabilityForecast out;
  out.probabilities.reserve(thresholds.size());
  for (double t : thresholds.thresholds)
    out.probabilities.push_back(std::visit(ExceedanceVisitor{t}, dist));
  return out;
}

std::vector<double> default_tau_grid(int n) {
  std::vector<double> grid(n);
  for (int i = 0; i < n; ++i)
    grid[i] = static_cast<double>(i + 1) / static_cast<double>(n + 1);
  return grid;
}

}  // namespace gustpost
