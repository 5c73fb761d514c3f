#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "gustpost/domain.hpp"
#include "gustpost/emos.hpp"  // EmosKey, shared (station, lead, run) keying
#include "gustpost/features.hpp"

namespace gustpost {

struct MosConfig {
  double ridge_lambda = 1e-6;        // scaled by trace(X'X)/p
  int clusters = 3;
  double cluster_cutoff = 33.0;      // thresholds >= cutoff fit per cluster
  std::size_t min_key_cases = 50;
  std::size_t min_positive_events = 30;
  double newest_era_weight = 1.0;    // > 1 up-weights the newest era
  bool use_persistence = true;
  bool use_era_flags = false;
  std::vector<std::string> extra_predictors;
  std::uint64_t seed = 1;
  int irls_max_iter = 100;
  double irls_tol = 1e-8;
  double logit_clip = 15.0;
};

// One logistic fit: coefficients over (1, corrected_speed, lead, run12).
struct LogisticFit {
  std::vector<double> coef;
  bool degenerate = false;   // no (or all) positive events: Laplace constant
  double const_prob = 0.0;   // used when degenerate
  bool separation_flagged = false;
};

struct MosProbStage {
  double threshold = 0.0;
  bool clustered = false;
  std::vector<LogisticFit> fits;  // one (global) or one per cluster
};

class MosModel {
 public:
  FeatureRecipe recipe;
  std::map<EmosKey, std::vector<double>> speed_coef;  // [intercept, features]
  std::map<std::string, int> cluster_of;
  std::vector<MosProbStage> prob_stages;  // aligned with thresholds
  std::vector<double> thresholds;
  double logit_clip = 15.0;
  std::vector<std::string> warnings;

  double predict_speed(const ForecastCase& c, const Dataset& ds) const;
  // Per-threshold probabilities; NOT forced monotone (violations are a
  // property of the method and get reported, not hidden).
  ProbabilityForecast predict_probs(const ForecastCase& c, const Dataset& ds) const;

  void save(const std::string& path) const;
  static MosModel load(const std::string& path);
};

// Step 1: per-(station, lead, run) ridge regression of observed gust speed.
MosModel fit_mos_speed(const Dataset& ds, const std::vector<std::size_t>& indices,
                       const MosConfig& config = {});

// Step 2: global (or per-cluster) logistic regressions per threshold, using
// the step-1 corrected speeds as input. Extends the model in place.
void fit_mos_prob(const Dataset& ds, const std::vector<std::size_t>& indices,
                  MosModel& model, const MosConfig& config = {});

// K-means on per-station exceedance climatology over the thresholds.
std::map<std::string, int> cluster_stations(const Dataset& ds,
                                            const std::vector<std::size_t>& indices,
                                            int k,
                                            const std::vector<double>& thresholds,
                                            std::uint64_t seed = 1);

MosModel fit_mosref(const Dataset& ds, const std::vector<std::size_t>& indices,
                    const MosConfig& config = {});

// (count, max magnitude) of threshold-monotonicity violations.
std::pair<std::size_t, double> monotonicity_violations(
    const std::vector<ProbabilityForecast>& forecasts);

}  // namespace gustpost
