#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <tuple>
#include <vector>

#include "gustpost/distributions.hpp"
#include "gustpost/domain.hpp"
#include "gustpost/features.hpp"

namespace gustpost {

struct EmosKey {
  std::string station;
  int lead = 0;
  int run = 0;

  auto operator<=>(const EmosKey&) const = default;
};

enum class TrainingWindow { post_last_change, full_with_flags };

struct EmosConfig {
  TrainingWindow window = TrainingWindow::post_last_change;
  double rel_tol = 1e-6;
  int max_iter = 4000;
  std::size_t min_cases = 100;
};

// location = a + b * ensemble_mean, scale = softplus(c + d * ensemble_sd).
struct EmosCoefficients {
  double a = 0.0, b = 1.0, c = 0.0, d = 0.0;
  bool climatological = false;  // degenerate-slice fallback
};

class EmosModel {
 public:
  std::map<EmosKey, EmosCoefficients> coefficients;
  std::vector<std::string> warnings;

  TruncatedLogistic predict(const ForecastCase& c) const;
  void save(const std::string& path) const;
  static EmosModel load(const std::string& path);
};

EmosModel fit_emos(const Dataset& ds, const std::vector<std::size_t>& indices,
                   const EmosConfig& config = {});

struct EmosGbConfig {
  TrainingWindow window = TrainingWindow::full_with_flags;
  double step = 0.1;
  int max_iter = 1000;
  int patience = 20;
  double val_fraction = 0.2;
  std::uint64_t seed = 1;
  std::size_t min_cases = 500;
  bool use_era_flags = true;
  bool use_persistence = false;
  std::vector<std::string> extra_predictors;
};

struct EmosGbEntry {
  FeatureRecipe recipe;
  std::vector<double> loc_coef;    // [intercept, per feature]
  std::vector<double> scale_coef;  // same layout, softplus link
  int iterations = 0;
};

class EmosGbModel {
 public:
  std::map<EmosKey, EmosGbEntry> entries;
  std::vector<std::string> warnings;

  TruncatedLogistic predict(const ForecastCase& c, const Dataset& ds) const;
  void save(const std::string& path) const;
  static EmosGbModel load(const std::string& path);
};

EmosGbModel fit_emos_gb(const Dataset& ds, const std::vector<std::size_t>& indices,
                        const EmosGbConfig& config = {});

}  // namespace gustpost
