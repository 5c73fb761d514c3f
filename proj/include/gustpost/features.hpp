#pragma once

#include <string>
#include <vector>

#include "gustpost/domain.hpp"

namespace gustpost {

enum class TargetMode { raw_gust, ensemble_mean_bias };

// Predictor assembly. A recipe is configured, fitted on training rows only
// (standardizer moments), then applied; fit and apply are separate so the
// standardizer can never see validation or test rows.
struct FeatureRecipe {
  bool use_persistence = false;
  bool use_era_flags = false;
  bool joint_mode = false;  // adds sin/cos valid hour and lead time
  std::vector<std::string> extra_predictor_names;
  TargetMode target_mode = TargetMode::raw_gust;

  // Filled by fit_recipe:
  bool fitted = false;
  std::vector<std::string> feature_names;  // retained features, fixed order
  std::vector<double> mean, sd;            // per retained feature
  std::vector<std::string> dropped_features;  // zero variance on training
  double target_mean = 0.0, target_sd = 1.0;

  std::size_t dim() const { return feature_names.size(); }

  void save(const std::string& path) const;
  static FeatureRecipe load(const std::string& path);
};

// Unstandardized feature vector in canonical order: ens mean, ens sd,
// extras, (sin hour, cos hour, lead in joint mode), era flags, persistence.
std::vector<double> raw_features(const ForecastCase& c, const Dataset& ds,
                                 const FeatureRecipe& recipe);
std::vector<std::string> raw_feature_names(const Dataset& ds,
                                           const FeatureRecipe& recipe);

void fit_recipe(FeatureRecipe& recipe, const Dataset& ds,
                const std::vector<std::size_t>& train_indices);

// Standardized, zero-variance columns dropped; requires a fitted recipe.
std::vector<double> build_features(const ForecastCase& c, const Dataset& ds,
                                   const FeatureRecipe& recipe);

int embedding_index(const ForecastCase& c, const Dataset& ds);

// Training target on the model scale (standardized in bias mode).
double build_target(const ForecastCase& c, const FeatureRecipe& recipe);
// Maps a model-scale location back to observation scale.
double invert_target(double model_output, const ForecastCase& c,
                     const FeatureRecipe& recipe);

}  // namespace gustpost
