#include "gustpost/features.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace gustpost {

using nlohmann::json;

namespace {
constexpr double kTwoPi = 6.283185307179586476925286766559;
}

std::vector<std::string> raw_feature_names(const Dataset& ds,
                                           const FeatureRecipe& recipe) {
  std::vector<std::string> names = {"ens_mean", "ens_sd"};
  for (const auto& e : recipe.extra_predictor_names) names.push_back(e);
  if (recipe.joint_mode) {
    names.emplace_back("sin_hour");
    names.emplace_back("cos_hour");
    names.emplace_back("lead_h");
  }
  if (recipe.use_era_flags)
    for (const auto& f : ds.manifest().era_flag_names())
      names.push_back("era_" + f);
  if (recipe.use_persistence)
    names.insert(names.end(), {"pers0", "pers1", "pers2"});
  return names;
}

std::vector<double> raw_features(const ForecastCase& c, const Dataset& ds,
                                 const FeatureRecipe& recipe) {
  std::vector<double> x = {c.ensemble_mean(), c.ensemble_sd()};
  const auto& names = ds.manifest().predictor_names;
  for (const auto& e : recipe.extra_predictor_names) {
    auto it = std::find(names.begin(), names.end(), e);
    if (it == names.end())
      throw std::runtime_error("unknown extra predictor: " + e);
    x.push_back(c.extra[static_cast<std::size_t>(it - names.begin())]);
  }
  if (recipe.joint_mode) {
    const double h = static_cast<double>(c.valid_hour());
    x.push_back(std::sin(kTwoPi * h / 24.0));
    x.push_back(std::cos(kTwoPi * h / 24.0));
    x.push_back(static_cast<double>(c.lead_h));
  }
  if (recipe.use_era_flags)
    for (int f : ds.era_flags(c)) x.push_back(static_cast<double>(f));
  if (recipe.use_persistence) {
    if (!c.persistence)
      throw std::runtime_error("persistence predictors required but missing for " +
                               c.station_id + " @ " + std::to_string(c.init_time));
    for (double p : *c.persistence) x.push_back(p);
  }
  return x;
}

void fit_recipe(FeatureRecipe& recipe, const Dataset& ds,
                const std::vector<std::size_t>& train_indices) {
  if (train_indices.empty())
    throw std::invalid_argument("cannot fit a recipe on an empty training set");
  const auto names = raw_feature_names(ds, recipe);
  const std::size_t p = names.size();
  std::vector<double> mean(p, 0.0), m2(p, 0.0);
  std::size_t n = 0;
  for (auto i : train_indices) {
    const auto x = raw_features(ds[i], ds, recipe);
    ++n;
    for (std::size_t j = 0; j < p; ++j) {
      const double delta = x[j] - mean[j];
      mean[j] += delta / static_cast<double>(n);
      m2[j] += delta * (x[j] - mean[j]);
    }
  }
  recipe.feature_names.clear();
  recipe.mean.clear();
  recipe.sd.clear();
  recipe.dropped_features.clear();
  for (std::size_t j = 0; j < p; ++j) {
    const double sd = std::sqrt(m2[j] / static_cast<double>(n));
    if (sd < 1e-12) {
      recipe.dropped_features.push_back(names[j]);
      continue;
    }
    recipe.feature_names.push_back(names[j]);
    recipe.mean.push_back(mean[j]);
    recipe.sd.push_back(sd);
  }

  recipe.target_mean = 0.0;
  recipe.target_sd = 1.0;
  if (recipe.target_mode == TargetMode::ensemble_mean_bias) {
    double tm = 0.0, tm2 = 0.0;
    std::size_t tn = 0;
    for (auto i : train_indices) {
      const auto& c = ds[i];
      if (!c.observation) continue;
      const double t = *c.observation - c.ensemble_mean();
      ++tn;
      const double delta = t - tm;
      tm += delta / static_cast<double>(tn);
      tm2 += delta * (t - tm);
    }
    if (tn < 2) throw std::runtime_error("too few observed targets to fit recipe");
    recipe.target_mean = tm;
    const double tsd = std::sqrt(tm2 / static_cast<double>(tn));
    recipe.target_sd = (tsd > 1e-12) ? tsd : 1.0;
  }
  recipe.fitted = true;
}

std::vector<double> build_features(const ForecastCase& c, const Dataset& ds,
                                   const FeatureRecipe& recipe) {
  if (!recipe.fitted) throw std::logic_error("recipe not fitted");
  const auto raw = raw_features(c, ds, recipe);
  const auto names = raw_feature_names(ds, recipe);
  std::vector<double> x;
  x.reserve(recipe.feature_names.size());
  std::size_t k = 0;
  for (std::size_t j = 0; j < names.size(); ++j) {
    if (k < recipe.feature_names.size() && names[j] == recipe.feature_names[k]) {
      x.push_back((raw[j] - recipe.mean[k]) / recipe.sd[k]);
      ++k;
    }
  }
  if (k != recipe.feature_names.size())
    throw std::logic_error("feature layout mismatch against fitted recipe");
  return x;
}

int embedding_index(const ForecastCase& c, const Dataset& ds) {
  const int idx = ds.manifest().station_index(c.station_id);
  if (idx < 0) throw std::runtime_error("unknown station: " + c.station_id);
  return idx;
}

double build_target(const ForecastCase& c, const FeatureRecipe& recipe) {
  if (!c.observation) throw std::runtime_error("case has no observation");
  if (recipe.target_mode == TargetMode::raw_gust) return *c.observation;
  return (*c.observation - c.ensemble_mean() - recipe.target_mean) /
         recipe.target_sd;
}

double invert_target(double model_output, const ForecastCase& c,
                     const FeatureRecipe& recipe) {
  if (recipe.target_mode == TargetMode::raw_gust) return model_output;
  return model_output * recipe.target_sd + recipe.target_mean + c.ensemble_mean();
}

void FeatureRecipe::save(const std::string& path) const {
  json j;
  j["version"] = 1;
  j["use_persistence"] = use_persistence;
  j["use_era_flags"] = use_era_flags;
  j["joint_mode"] = joint_mode;
  j["extra_predictors"] = extra_predictor_names;
  j["target_mode"] = (target_mode == TargetMode::raw_gust) ? "raw_gust"
                                                           : "ensemble_mean_bias";
  j["fitted"] = fitted;
  j["feature_names"] = feature_names;
  j["mean"] = mean;
  j["sd"] = sd;
  j["dropped"] = dropped_features;
  j["target_mean"] = target_mean;
  j["target_sd"] = target_sd;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write recipe: " + path);
  out << j.dump(2) << "\n";
}

FeatureRecipe FeatureRecipe::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read recipe: " + path);
  json j;
  in >> j;
  FeatureRecipe r;
  r.use_persistence = j.at("use_persistence").get<bool>();
  r.use_era_flags = j.at("use_era_flags").get<bool>();
  r.joint_mode = j.at("joint_mode").get<bool>();
  r.extra_predictor_names = j.at("extra_predictors").get<std::vector<std::string>>();
  r.target_mode = (j.at("target_mode").get<std::string>() == "raw_gust")
                      ? TargetMode::raw_gust
                      : TargetMode::ensemble_mean_bias;
  r.fitted = j.at("fitted").get<bool>();
  r.feature_names = j.at("feature_names").get<std::vector<std::string>>();
  r.mean = j.at("mean").get<std::vector<double>>();
  r.sd = j.at("sd").get<std::vector<double>>();
  r.dropped_features = j.at("dropped").get<std::vector<std::string>>();
  r.target_mean = j.at("target_mean").get<double>();
  r.target_sd = j.at("target_sd").get<double>();
  return r;
}

}  // namespace gustpost
