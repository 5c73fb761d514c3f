#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <variant>
#include <vector>

#include "gustpost/domain.hpp"
#include "gustpost/dual.hpp"

namespace gustpost {

namespace detail {

// Stable standard-logistic CDF and softplus, templated so Dual flows through.
template <typename T>
T logistic_cdf(T x) {
  using std::exp;  // Dual overloads via ADL, std:: for plain doubles
  if (value_of(x) >= 0.0) {
    return T(1.0) / (T(1.0) + exp(-x));
  }
  const T e = exp(x);
  return e / (T(1.0) + e);
}

template <typename T>
T softplus(T x) {
  using std::exp;
  using std::log1p;
  if (value_of(x) > 0.0) return x + log1p(exp(-x));
  return log1p(exp(x));
}

// CRPS of a logistic distribution truncated below at `lb`, evaluated at
// y >= lb. Derivation from integrating the squared-CDF (Brier integral)
// form with antiderivatives of F and F^2; reduces to the classic
// sigma*(2*softplus(z) - z - 1) when lb = -inf.
template <typename T>
T crps_tlogis_impl(T loc, T scale, double lb, double y) {
  const T z = (T(y) - loc) / scale;
  if (std::isinf(lb) && lb < 0.0) {
    return scale * (T(2.0) * softplus(z) - z - T(1.0));
  }
  const T a = (T(lb) - loc) / scale;
  const T c = logistic_cdf(a);        // F(a)
  const T fm = logistic_cdf(-a);      // 1 - F(a), computed stably
  if (value_of(a) > 5.0) {
    // Deep truncation: bracket/fm^2 cancels catastrophically (and fm^2 can
    // underflow), so use the algebraically equivalent cancellation-free form
    //   2*softplus(-z)/fm + (z - a) + g(fm),
    // where g(fm) = (softplus(-a) - fm - 2*fm*softplus(-a))/fm^2 expanded as
    // a series in fm (truncation error O(fm^4) < 1e-11 for a > 5).
    using std::exp;
    const T ratio = (value_of(z) < 700.0) ? softplus(-z) / fm : exp(a - z);
    const T g = T(-1.5) - fm * (T(2.0 / 3.0) +
                                fm * (T(5.0 / 12.0) + fm * T(0.3)));
    return scale * (T(2.0) * ratio + (z - a) + g);
  }
  const T bracket = T(2.0) * fm * softplus(z) - (T(1.0) - T(2.0) * c) * softplus(a) +
                    c + c * c * (z - a) - z - T(1.0);
  return scale * bracket / (fm * fm);
}

}  // namespace detail

// Logistic distribution truncated below at lower_bound (mass renormalized).
struct TruncatedLogistic {
  double location = 0.0;
  double scale = 1.0;
  double lower_bound = 0.0;  // -inf gives the plain logistic

  TruncatedLogistic() = default;
  TruncatedLogistic(double loc, double sc, double lb = 0.0)
      : location(loc), scale(sc), lower_bound(lb) {
    if (!(scale > 0.0)) throw std::invalid_argument("tlogis scale must be > 0");
  }
};

double tlogis_cdf(const TruncatedLogistic& d, double x);
double tlogis_quantile(const TruncatedLogistic& d, double p);

// Closed-form CRPS. For y < lower_bound the censored value at the bound is
// scored and *censored (when given) set.
double crps_tlogis(const TruncatedLogistic& d, double y, bool* censored = nullptr);

// Partials of crps_tlogis wrt location and scale (exact, via forward duals).
void crps_tlogis_grad(const TruncatedLogistic& d, double y, double* d_loc,
                      double* d_scale);

// Quantile function Q(tau) = sum_j alpha_j * B_{j,d}(tau). Coefficients must
// be nondecreasing, which makes Q nondecreasing on [0,1].
struct BernsteinQuantile {
  std::vector<double> coefficients;  // alpha_0..alpha_d, d = size-1 >= 1

  BernsteinQuantile() = default;
  explicit BernsteinQuantile(std::vector<double> alpha);
  int degree() const { return static_cast<int>(coefficients.size()) - 1; }
};

double bernstein_quantile_eval(const BernsteinQuantile& d, double tau);
double pinball_loss_mean(const BernsteinQuantile& d, double y,
                         const std::vector<double>& tau_grid);

// Raw ensemble treated as an empirical forecast (strict > for exceedance).
struct EnsembleEmpirical {
  std::vector<double> members;
};

// Non-truncated logistic modelling the ensemble-mean bias; the forecast is
// max(0, ensemble_mean + bias).
struct BiasShiftedLogistic {
  double ensemble_mean = 0.0;
  double location = 0.0;  // of the bias distribution
  double scale = 1.0;
};

using PredictiveDistribution =
    std::variant<TruncatedLogistic, BernsteinQuantile, EnsembleEmpirical,
                 BiasShiftedLogistic>;

ProbabilityForecast exceedance_prob(const PredictiveDistribution& dist,
                                    const ThresholdSet& thresholds);

// Default BQN training grid: 99 equidistant levels 0.01..0.99.
std::vector<double> default_tau_grid(int n = 99);

}  // namespace gustpost
