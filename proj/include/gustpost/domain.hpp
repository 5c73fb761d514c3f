#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace gustpost {

// Wind speeds are in knots throughout; timestamps are UTC epoch seconds.

struct Station {
  std::string id;
  double latitude = 0.0;
  double longitude = 0.0;
  double height = 0.0;
  int embedding_index = 0;  // dense 0..S-1, position in the manifest list
};

struct ModelEra {
  std::string name;
  std::int64_t start = 0;      // epoch seconds, inclusive
  std::string flag_name;       // empty for the base era (no flag emitted)
};

struct ThresholdSet {
  std::vector<double> thresholds;  // strictly increasing, kt

  static ThresholdSet defaults() {
    return ThresholdSet{{25, 27, 33, 40, 47, 55, 63, 75}};
  }
  std::size_t size() const { return thresholds.size(); }
};

struct ProbabilityForecast {
  std::vector<double> probabilities;  // aligned with a ThresholdSet
};

struct ForecastCase {
  std::string station_id;
  std::int64_t init_time = 0;          // run hour = (init_time/3600) % 24
  int lead_h = 0;
  std::vector<double> ensemble;        // kt, >= 0
  std::vector<double> extra;           // aligned with manifest predictor names
  std::optional<std::array<double, 3>> persistence;  // obs at init +0h/+1h/+2h
  std::optional<double> observation;   // missing for prediction-only cases

  int run_hour() const { return static_cast<int>((init_time / 3600) % 24); }
  std::int64_t valid_time() const { return init_time + 3600LL * lead_h; }
  int valid_hour() const { return static_cast<int>((valid_time() / 3600) % 24); }

  double ensemble_mean() const;
  double ensemble_sd() const;  // population sd (divisor n)
};

struct ArchiveManifest {
  std::vector<Station> stations;
  std::vector<ModelEra> eras;          // ordered by start; eras[0] is the base
  std::vector<double> thresholds;
  std::vector<int> lead_times;         // e.g. 3..21
  std::vector<int> runs;               // e.g. {0, 12}
  int ensemble_size = 20;
  std::string units = "kt";
  std::vector<std::string> predictor_names;

  int station_index(const std::string& id) const;  // -1 if unknown
  // One flag per era after the base: 1 iff init_time >= era start.
  std::vector<int> era_flags(std::int64_t init_time) const;
  std::vector<std::string> era_flag_names() const;

  void save(const std::string& path) const;
  static ArchiveManifest load(const std::string& path);
};

struct LoadDiagnostics {
  std::size_t accepted = 0;
  std::size_t rejected = 0;
  std::vector<std::string> messages;   // one per rejected/suspect row
};

// Immutable after load; safe for concurrent read.
class Dataset {
 public:
  Dataset() = default;
  Dataset(ArchiveManifest manifest, std::vector<ForecastCase> cases);

  const ArchiveManifest& manifest() const { return manifest_; }
  const std::vector<ForecastCase>& cases() const { return cases_; }
  std::size_t size() const { return cases_.size(); }
  const ForecastCase& operator[](std::size_t i) const { return cases_[i]; }

  std::vector<int> era_flags(const ForecastCase& c) const {
    return manifest_.era_flags(c.init_time);
  }

  // Indices of cases matching (all arguments optional; -1 = any).
  std::vector<std::size_t> select(int lead, int run,
                                  const std::string& station_id = "") const;
  std::vector<std::size_t> all_indices() const;

 private:
  ArchiveManifest manifest_;
  std::vector<ForecastCase> cases_;
};

Dataset load_archive(const std::string& csv_path, const ArchiveManifest& manifest,
                     LoadDiagnostics* diag = nullptr);
void write_archive(const std::string& csv_path, const Dataset& ds);

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
};

// Random, unstratified; deterministic per (dataset order, fraction, seed).
Split split_train_validation(std::size_t n_cases, double fraction,
                             std::uint64_t seed);
Split split_train_validation(const Dataset& ds, double fraction,
                             std::uint64_t seed);
// Restricted to an index subset (same contract, partitions `subset`).
Split split_indices(const std::vector<std::size_t>& subset, double fraction,
                    std::uint64_t seed);

}  // namespace gustpost
