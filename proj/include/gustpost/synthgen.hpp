#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "gustpost/distributions.hpp"
#include "gustpost/domain.hpp"

namespace gustpost {

struct EraScenario {
  std::string name;
  std::int64_t start = 0;     // epoch seconds
  double bias = 0.0;          // additive member bias, kt
  double dispersion = 1.0;    // member-noise multiplier
};

// Generative model per station: gusts are truncated-logistic around
//   base + diurnal(hour) + synoptic(day) + hourly AR(1) + effect * extra,
// with the ensemble knowing base + diurnal + synoptic (plus era bias and
// dispersion-scaled member noise) but neither the AR(1) component nor the
// extra-predictor effect.
struct ScenarioConfig {
  int n_stations = 20;
  std::int64_t start_time = 1577836800;  // 2020-01-01T00Z
  int n_days = 250;
  std::vector<EraScenario> eras;  // defaults to one zero-bias era

  double diurnal_amplitude = 4.0;
  double ar1 = 0.0;           // lag-1 coefficient of the hourly component
  double hourly_sd = 1.0;     // stationary sd of the hourly component
  double synoptic_sd = 6.0;   // day-scale signal, kt
  double obs_scale = 5.0;     // logistic scale of the gusts, kt
  double member_noise_sd = 3.0;
  double base_mean_lo = 14.0;
  double base_mean_hi = 22.0;
  double extra_effect = 0.0;  // coefficient on the "syn1" predictor column

  int ensemble_size = 20;
  std::vector<int> lead_times;   // defaults to 3..21
  std::vector<int> runs = {0, 12};
  std::vector<double> thresholds = ThresholdSet::defaults().thresholds;
  std::uint64_t seed = 1;
};

struct GeneratedArchive {
  Dataset dataset;
  // Aligned with dataset.cases(): exact exceedance probabilities per
  // threshold, and the generative location (scale is config.obs_scale).
  std::vector<std::vector<double>> truth_probs;
  std::vector<double> true_location;
  double true_scale = 0.0;
  std::vector<double> thresholds;
};

GeneratedArchive generate_archive(const ScenarioConfig& config);

// Writes archive.csv, manifest.json, truth.csv under outdir.
void write_generated(const GeneratedArchive& ga, const std::string& outdir);
GeneratedArchive load_generated(const std::string& archive_csv,
                                const std::string& manifest_path,
                                const std::string& truth_csv);

struct BayesScores {
  // lead -> BS of the truth probabilities per threshold
  std::map<int, std::vector<double>> bs_by_lead;
  // lead -> mean CRPS of the true predictive distribution
  std::map<int, double> crps_by_lead;
};

BayesScores bayes_scores(const GeneratedArchive& ga);

}  // namespace gustpost
