#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace gustpost {

struct BinnedReliability {
  std::vector<double> edges;          // nbins+1 edges on [0,1]
  std::vector<std::size_t> count;     // n_b
  std::vector<double> mean_forecast;  // f̄_b (NaN for empty bins)
  std::vector<double> obs_freq;       // ō_b (NaN for empty bins)
  std::vector<bool> skillful;         // closer to diagonal than the no-skill line
};

struct BrierReport {
  double bs = 0.0;   // raw Brier score
  double rel = 0.0;
  double res = 0.0;
  double unc = 0.0;
  // bs minus the bin-mean identity rel - res + unc (within-bin variance part).
  double within_bin_residual = 0.0;
  std::size_t n = 0;
  bool low_information = false;  // all outcomes identical
  BinnedReliability bins;

  double bin_mean_bs() const { return rel - res + unc; }
};

// Left-closed bins, last bin closed on both ends.
std::size_t bin_index(double forecast, std::size_t nbins);

double brier_score(const std::vector<double>& forecasts,
                   const std::vector<int>& outcomes);

BrierReport brier_decomposition(const std::vector<double>& forecasts,
                                const std::vector<int>& outcomes,
                                std::size_t nbins = 10);

// Relative skill scores; nullopt when the reference sits at its degenerate
// bound (bs_ref = 0, or res_ref = unc).
std::optional<double> brier_skill(double bs, double bs_ref);
std::optional<double> resolution_skill(double res, double res_ref, double unc);

std::vector<std::size_t> sharpness_histogram(const std::vector<double>& forecasts,
                                             std::size_t nbins = 10);

enum class CardMetric { bs, res };

struct ScoreCardCell {
  std::string method;
  int lead = 0;
  CardMetric metric = CardMetric::bs;
  double difference = 0.0;            // reference score minus method score
  std::optional<double> skill;
  bool improvement = false;           // skill > 0
};

// One BS and one resolution cell per (method, lead); reference must cover
// every lead that any method reports.
std::vector<ScoreCardCell> score_card(
    const std::map<std::string, std::map<int, BrierReport>>& reports,
    const std::string& reference_method);

void write_score_card_csv(const std::vector<ScoreCardCell>& cells,
                          const std::string& path);
void write_score_card_svg(const std::vector<ScoreCardCell>& cells,
                          const std::string& path);

void write_report_csv(const std::map<std::string, std::map<int, BrierReport>>& reports,
                      const std::string& path);
void write_report_json(const std::map<std::string, std::map<int, BrierReport>>& reports,
                       const std::string& path);
void write_reliability_csv(const BinnedReliability& bins, const std::string& path);

// Block bootstrap over blocks (e.g. days) of the mean of per-case values.
// Returns the central interval at the given level.
struct BootstrapCI {
  double lo = 0.0;
  double hi = 0.0;
  double mean = 0.0;
};
BootstrapCI block_bootstrap_mean(const std::vector<double>& values,
                                 const std::vector<std::int64_t>& block_ids,
                                 int resamples = 500, double level = 0.95,
                                 std::uint64_t seed = 0);

}  // namespace gustpost
