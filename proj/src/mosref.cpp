#include "gustpost/mosref.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <stdexcept>

#include <json.hpp>

namespace gustpost {

namespace {

double sigmoid(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

double row_weight(const Dataset& ds, const ForecastCase& c, double newest_w) {
  if (newest_w == 1.0) return 1.0;
  const auto& eras = ds.manifest().eras;
  if (eras.size() < 2) return 1.0;
  return c.init_time >= eras.back().start ? newest_w : 1.0;
}

// Weighted ridge OLS; escalates the ridge if the solve comes back unusable.
Eigen::VectorXd ridge_solve(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                            const Eigen::VectorXd& w, double lambda_rel,
                            bool* escalated) {
  const auto p = X.cols();
  const Eigen::MatrixXd Xw = w.asDiagonal() * X;
  const Eigen::MatrixXd xtx = X.transpose() * Xw;
  const Eigen::VectorXd xty = X.transpose() * (w.asDiagonal() * y);
  double lambda = lambda_rel * xtx.trace() / static_cast<double>(p);
  if (!(lambda > 0.0)) lambda = 1e-10;
  *escalated = false;
  for (int attempt = 0; attempt < 6; ++attempt) {
    Eigen::MatrixXd A = xtx;
    A.diagonal().array() += lambda;
    const Eigen::VectorXd beta = A.ldlt().solve(xty);
    if (beta.allFinite() && beta.cwiseAbs().maxCoeff() < 1e8) return beta;
    lambda *= 100.0;
    *escalated = true;
  }
  throw std::runtime_error("ridge regression failed to stabilize");
}

}  // namespace

double MosModel::predict_speed(const ForecastCase& c, const Dataset& ds) const {
  auto it = speed_coef.find({c.station_id, c.lead_h, c.run_hour()});
  if (it == speed_coef.end())
    throw std::runtime_error("no MOS speed model for (" + c.station_id +
                             ", lead " + std::to_string(c.lead_h) + ", run " +
                             std::to_string(c.run_hour()) + ")");
  const auto x = build_features(c, ds, recipe);
  double v = it->second[0];
  for (std::size_t j = 0; j < x.size(); ++j) v += it->second[j + 1] * x[j];
  return v;
}

ProbabilityForecast MosModel::predict_probs(const ForecastCase& c,
                                            const Dataset& ds) const {
  const double speed = predict_speed(c, ds);
  ProbabilityForecast out;
  for (const auto& stage : prob_stages) {
    const LogisticFit* fit = &stage.fits[0];
    if (stage.clustered) {
      auto it = cluster_of.find(c.station_id);
      if (it == cluster_of.end())
        throw std::runtime_error("station not in cluster map: " + c.station_id);
      fit = &stage.fits[static_cast<std::size_t>(it->second)];
    }
    if (fit->degenerate) {
      out.probabilities.push_back(fit->const_prob);
      continue;
    }
    const double logit =
        fit->coef[0] + fit->coef[1] * speed +
        fit->coef[2] * static_cast<double>(c.lead_h) +
        fit->coef[3] * (c.run_hour() == 12 ? 1.0 : 0.0);
    out.probabilities.push_back(
        sigmoid(std::clamp(logit, -logit_clip, logit_clip)));
  }
  return out;
}

MosModel fit_mos_speed(const Dataset& ds, const std::vector<std::size_t>& indices,
                       const MosConfig& config) {
  MosModel model;
  model.logit_clip = config.logit_clip;
  model.thresholds = ds.manifest().thresholds;
  model.recipe.use_persistence = config.use_persistence;
  model.recipe.use_era_flags = config.use_era_flags;
  model.recipe.extra_predictor_names = config.extra_predictors;

  std::vector<std::size_t> observed;
  for (auto i : indices)
    if (ds[i].observation) observed.push_back(i);
  if (observed.empty()) throw std::invalid_argument("no observed training cases");
  fit_recipe(model.recipe, ds, observed);

  std::map<EmosKey, std::vector<std::size_t>> groups;
  for (auto i : observed) {
    const auto& c = ds[i];
    groups[{c.station_id, c.lead_h, c.run_hour()}].push_back(i);
  }
  const std::size_t p = model.recipe.dim();
  for (const auto& [key, slice] : groups) {
    if (slice.size() < config.min_key_cases) {
      model.warnings.push_back("skipped speed fit (" + key.station + ", " +
                               std::to_string(key.lead) + ", " +
                               std::to_string(key.run) + "): only " +
                               std::to_string(slice.size()) + " cases");
      continue;
    }
    Eigen::MatrixXd X(slice.size(), p + 1);
    Eigen::VectorXd y(slice.size()), w(slice.size());
    for (std::size_t r = 0; r < slice.size(); ++r) {
      const auto& c = ds[slice[r]];
      X(r, 0) = 1.0;
      const auto x = build_features(c, ds, model.recipe);
      for (std::size_t j = 0; j < p; ++j) X(r, j + 1) = x[j];
      y(r) = *c.observation;
      w(r) = row_weight(ds, c, config.newest_era_weight);
    }
    bool escalated = false;
    const Eigen::VectorXd beta =
        ridge_solve(X, y, w, config.ridge_lambda, &escalated);
    if (escalated)
      model.warnings.push_back("ridge escalated for (" + key.station + ", " +
                               std::to_string(key.lead) + ", " +
                               std::to_string(key.run) + ")");
    model.speed_coef[key] =
        std::vector<double>(beta.data(), beta.data() + beta.size());
  }
  return model;
}

std::map<std::string, int> cluster_stations(const Dataset& ds,
                                            const std::vector<std::size_t>& indices,
                                            int k,
                                            const std::vector<double>& thresholds,
                                            std::uint64_t seed) {
  if (k < 1) throw std::invalid_argument("cluster count must be >= 1");
  std::map<std::string, std::pair<std::vector<double>, std::size_t>> clim;
  for (auto i : indices) {
    const auto& c = ds[i];
    if (!c.observation) continue;
    auto& e = clim[c.station_id];
    if (e.first.empty()) e.first.assign(thresholds.size(), 0.0);
    for (std::size_t t = 0; t < thresholds.size(); ++t)
      e.first[t] += (*c.observation > thresholds[t]) ? 1.0 : 0.0;
    e.second += 1;
  }
  if (clim.empty()) throw std::invalid_argument("no observed cases to cluster");
  if (static_cast<std::size_t>(k) > clim.size())
    throw std::invalid_argument("more clusters than stations");

  std::vector<std::string> ids;
  std::vector<std::vector<double>> points;
  for (auto& [id, e] : clim) {
    ids.push_back(id);
    for (auto& v : e.first) v /= static_cast<double>(e.second);
    points.push_back(e.first);
  }
  const std::size_t n = points.size(), dim = thresholds.size();

  auto dist2 = [&](const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t j = 0; j < dim; ++j) s += (a[j] - b[j]) * (a[j] - b[j]);
    return s;
  };

  // k-means++ seeding, then Lloyd iterations.
  std::mt19937_64 rng(seed);
  std::vector<std::vector<double>> centers;
  centers.push_back(points[rng() % n]);
  while (centers.size() < static_cast<std::size_t>(k)) {
    std::vector<double> d2(n);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double best = dist2(points[i], centers[0]);
      for (std::size_t c = 1; c < centers.size(); ++c)
        best = std::min(best, dist2(points[i], centers[c]));
      d2[i] = best;
      total += best;
    }
    if (total <= 0.0) {
      centers.push_back(points[rng() % n]);
      continue;
    }
    std::uniform_real_distribution<double> u(0.0, total);
    double pick = u(rng), acc = 0.0;
    std::size_t chosen = n - 1;
    for (std::size_t i = 0; i < n; ++i) {
      acc += d2[i];
      if (acc >= pick) {
        chosen = i;
        break;
      }
    }
    centers.push_back(points[chosen]);
  }

  std::vector<int> assign(n, 0);
  for (int iter = 0; iter < 100; ++iter) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      int best = 0;
      double bestd = dist2(points[i], centers[0]);
      for (int c = 1; c < k; ++c) {
        const double d = dist2(points[i], centers[c]);
        if (d < bestd) {
          bestd = d;
          best = c;
        }
      }
      if (assign[i] != best) {
        assign[i] = best;
        changed = true;
      }
    }
    for (int c = 0; c < k; ++c) {
      std::vector<double> mean(dim, 0.0);
      std::size_t count = 0;
      for (std::size_t i = 0; i < n; ++i)
        if (assign[i] == c) {
          for (std::size_t j = 0; j < dim; ++j) mean[j] += points[i][j];
          ++count;
        }
      if (count > 0) {
        for (auto& v : mean) v /= static_cast<double>(count);
        centers[c] = mean;
      }
    }
    if (!changed) break;
  }
  std::map<std::string, int> out;
  for (std::size_t i = 0; i < n; ++i) out[ids[i]] = assign[i];
  return out;
}

namespace {

LogisticFit fit_logistic_irls(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                              const Eigen::VectorXd& w, const MosConfig& config) {
  LogisticFit fit;
  const auto n = X.rows();
  const double positives = (y.array() * w.array()).sum();
  const double total = w.sum();
  if (positives < 0.5 || positives > total - 0.5) {
    fit.degenerate = true;
    // Laplace 1/(n+2) for the empty class, (n+1)/(n+2) for the full one.
    fit.const_prob = (positives < 0.5)
                         ? 1.0 / (static_cast<double>(n) + 2.0)
                         : (static_cast<double>(n) + 1.0) / (static_cast<double>(n) + 2.0);
    fit.coef.assign(static_cast<std::size_t>(X.cols()), 0.0);
    return fit;
  }

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(X.cols());
  for (int iter = 0; iter < config.irls_max_iter; ++iter) {
    Eigen::VectorXd eta = X * beta;
    Eigen::VectorXd mu(n), wt(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double e = std::clamp(eta(i), -config.logit_clip, config.logit_clip);
      mu(i) = sigmoid(e);
      wt(i) = w(i) * std::max(mu(i) * (1.0 - mu(i)), 1e-10);
    }
    Eigen::MatrixXd xtwx = X.transpose() * wt.asDiagonal() * X;
    xtwx.diagonal().array() += 1e-10;
    const Eigen::VectorXd grad =
        X.transpose() * (w.asDiagonal() * (y - mu).matrix());
    const Eigen::VectorXd delta = xtwx.ldlt().solve(grad);
    beta += delta;
    if (delta.cwiseAbs().maxCoeff() < config.irls_tol) break;
  }
  // Complete or quasi-complete separation pushes the logits out of range;
  // predictions are clipped, so just record the flag.
  const Eigen::VectorXd eta = X * beta;
  if (eta.cwiseAbs().maxCoeff() > config.logit_clip || !beta.allFinite()) {
    fit.separation_flagged = true;
    for (Eigen::Index j = 0; j < beta.size(); ++j)
      if (!std::isfinite(beta(j))) beta(j) = 0.0;
  }
  fit.coef.assign(beta.data(), beta.data() + beta.size());
  return fit;
}

}  // namespace

void fit_mos_prob(const Dataset& ds, const std::vector<std::size_t>& indices,
                  MosModel& model, const MosConfig& config) {
  std::vector<std::size_t> usable;
  for (auto i : indices) {
    const auto& c = ds[i];
    if (!c.observation) continue;
    if (!model.speed_coef.count({c.station_id, c.lead_h, c.run_hour()})) continue;
    usable.push_back(i);
  }
  if (usable.empty()) throw std::invalid_argument("no usable cases for stage 2");

  model.cluster_of =
      cluster_stations(ds, indices, config.clusters, model.thresholds, config.seed);

  std::vector<double> speeds(usable.size());
  for (std::size_t r = 0; r < usable.size(); ++r)
    speeds[r] = model.predict_speed(ds[usable[r]], ds);

  model.prob_stages.clear();
  for (double thr : model.thresholds) {
    MosProbStage stage;
    stage.threshold = thr;
    stage.clustered = thr >= config.cluster_cutoff && config.clusters > 1;

    auto build = [&](const std::vector<std::size_t>& rows) {
      Eigen::MatrixXd X(rows.size(), 4);
      Eigen::VectorXd y(rows.size()), w(rows.size());
      for (std::size_t r = 0; r < rows.size(); ++r) {
        const auto& c = ds[usable[rows[r]]];
        X(r, 0) = 1.0;
        X(r, 1) = speeds[rows[r]];
        X(r, 2) = static_cast<double>(c.lead_h);
        X(r, 3) = (c.run_hour() == 12) ? 1.0 : 0.0;
        y(r) = (*c.observation > thr) ? 1.0 : 0.0;
        w(r) = row_weight(ds, c, config.newest_era_weight);
      }
      return std::make_tuple(X, y, w);
    };

    std::vector<std::size_t> all_rows(usable.size());
    for (std::size_t r = 0; r < usable.size(); ++r) all_rows[r] = r;
    const auto [Xg, yg, wg] = build(all_rows);
    const LogisticFit global = fit_logistic_irls(Xg, yg, wg, config);

    if (!stage.clustered) {
      stage.fits.push_back(global);
    } else {
      for (int cl = 0; cl < config.clusters; ++cl) {
        std::vector<std::size_t> rows;
        for (std::size_t r = 0; r < usable.size(); ++r)
          if (model.cluster_of.at(ds[usable[r]].station_id) == cl)
            rows.push_back(r);
        std::size_t positive = 0;
        for (auto r : rows)
          positive += (*ds[usable[r]].observation > thr) ? 1 : 0;
        if (positive < config.min_positive_events) {
          // Too few events in the cluster; escalate to the global parent fit.
          stage.fits.push_back(global);
          model.warnings.push_back(
              "threshold " + std::to_string(thr) + " cluster " +
              std::to_string(cl) + ": " + std::to_string(positive) +
              " events, escalated to global fit");
          continue;
        }
        const auto [Xc, yc, wc] = build(rows);
        stage.fits.push_back(fit_logistic_irls(Xc, yc, wc, config));
      }
    }
    model.prob_stages.push_back(std::move(stage));
  }
}

MosModel fit_mosref(const Dataset& ds, const std::vector<std::size_t>& indices,
                    const MosConfig& config) {
  MosModel model = fit_mos_speed(ds, indices, config);
  fit_mos_prob(ds, indices, model, config);
  return model;
}

std::pair<std::size_t, double> monotonicity_violations(
    const std::vector<ProbabilityForecast>& forecasts) {
  std::size_t count = 0;
  double worst = 0.0;
  for (const auto& f : forecasts)
    for (std::size_t k = 1; k < f.probabilities.size(); ++k) {
      const double excess = f.probabilities[k] - f.probabilities[k - 1];
      if (excess > 1e-12) {
        ++count;
        worst = std::max(worst, excess);
      }
    }
  return {count, worst};
}

void MosModel::save(const std::string& path) const {
  nlohmann::json j;
  j["format"] = "mosref";
  j["version"] = 1;
  j["logit_clip"] = logit_clip;
  j["thresholds"] = thresholds;
  j["recipe"] = {{"use_persistence", recipe.use_persistence},
                 {"use_era_flags", recipe.use_era_flags},
                 {"joint_mode", recipe.joint_mode},
                 {"extra_predictors", recipe.extra_predictor_names},
                 {"feature_names", recipe.feature_names},
                 {"mean", recipe.mean},
                 {"sd", recipe.sd},
                 {"dropped", recipe.dropped_features}};
  j["speed"] = nlohmann::json::array();
  for (const auto& [key, coef] : speed_coef)
    j["speed"].push_back({{"station", key.station},
                          {"lead", key.lead},
                          {"run", key.run},
                          {"coef", coef}});
  j["clusters"] = cluster_of;
  j["prob"] = nlohmann::json::array();
  for (const auto& s : prob_stages) {
    nlohmann::json e;
    e["threshold"] = s.threshold;
    e["clustered"] = s.clustered;
    e["fits"] = nlohmann::json::array();
    for (const auto& f : s.fits)
      e["fits"].push_back({{"coef", f.coef},
                           {"degenerate", f.degenerate},
                           {"const_prob", f.const_prob},
                           {"separation", f.separation_flagged}});
    j["prob"].push_back(e);
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write model file: " + path);
  out << j.dump(2) << "\n";
}

MosModel MosModel::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read model file: " + path);
  nlohmann::json j;
  in >> j;
  if (j.value("format", std::string()) != "mosref")
    throw std::runtime_error("not a mosref model file: " + path);
  MosModel m;
  m.logit_clip = j.at("logit_clip").get<double>();
  m.thresholds = j.at("thresholds").get<std::vector<double>>();
  const auto& rc = j.at("recipe");
  m.recipe.use_persistence = rc.at("use_persistence").get<bool>();
  m.recipe.use_era_flags = rc.at("use_era_flags").get<bool>();
  m.recipe.joint_mode = rc.at("joint_mode").get<bool>();
  m.recipe.extra_predictor_names =
      rc.at("extra_predictors").get<std::vector<std::string>>();
  m.recipe.feature_names = rc.at("feature_names").get<std::vector<std::string>>();
  m.recipe.mean = rc.at("mean").get<std::vector<double>>();
  m.recipe.sd = rc.at("sd").get<std::vector<double>>();
  m.recipe.dropped_features = rc.at("dropped").get<std::vector<std::string>>();
  m.recipe.fitted = true;
  for (const auto& e : j.at("speed")) {
    EmosKey key{e.at("station").get<std::string>(), e.at("lead").get<int>(),
                e.at("run").get<int>()};
    m.speed_coef[key] = e.at("coef").get<std::vector<double>>();
  }
  m.cluster_of = j.at("clusters").get<std::map<std::string, int>>();
  for (const auto& e : j.at("prob")) {
    MosProbStage s;
    s.threshold = e.at("threshold").get<double>();
    s.clustered = e.at("clustered").get<bool>();
    for (const auto& f : e.at("fits")) {
      LogisticFit lf;
      lf.coef = f.at("coef").get<std::vector<double>>();
      lf.degenerate = f.at("degenerate").get<bool>();
      lf.const_prob = f.at("const_prob").get<double>();
      lf.separation_flagged = f.at("separation").get<bool>();
      s.fits.push_back(std::move(lf));
    }
    m.prob_stages.push_back(std::move(s));
  }
  return m;
}

}  // namespace gustpost
