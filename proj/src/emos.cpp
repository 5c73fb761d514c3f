#include "gustpost/emos.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

namespace gustpost {

namespace {

double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double softplus_inv(double y) {
  // inverse of softplus for y > 0
  return y > 30.0 ? y : std::log(std::expm1(std::max(y, 1e-8)));
}

double sigmoid(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

// Nelder-Mead on a small parameter vector; converges on the relative spread
// of the simplex values.
std::vector<double> nelder_mead(
    const std::function<double(const std::vector<double>&)>& f,
    std::vector<double> x0, double rel_tol, int max_iter) {
  const std::size_t n = x0.size();
  std::vector<std::vector<double>> simplex(n + 1, x0);
  for (std::size_t i = 0; i < n; ++i)
    simplex[i + 1][i] += (std::fabs(x0[i]) > 0.1 ? 0.1 * std::fabs(x0[i]) : 0.1);
  std::vector<double> fv(n + 1);
  for (std::size_t i = 0; i <= n; ++i) fv[i] = f(simplex[i]);

  for (int iter = 0; iter < max_iter; ++iter) {
    std::vector<std::size_t> order(n + 1);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return fv[a] < fv[b]; });
    {
      std::vector<std::vector<double>> s2(n + 1);
      std::vector<double> f2(n + 1);
      for (std::size_t i = 0; i <= n; ++i) {
        s2[i] = simplex[order[i]];
        f2[i] = fv[order[i]];
      }
      simplex = std::move(s2);
      fv = std::move(f2);
    }
    const double spread = std::fabs(fv[n] - fv[0]);
    if (spread <= rel_tol * (std::fabs(fv[0]) + 1e-12)) break;

    std::vector<double> centroid(n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) centroid[j] += simplex[i][j] / n;

    auto blend = [&](double t) {
      std::vector<double> x(n);
      for (std::size_t j = 0; j < n; ++j)
        x[j] = centroid[j] + t * (simplex[n][j] - centroid[j]);
      return x;
    };

    auto xr = blend(-1.0);
    const double fr = f(xr);
    if (fr < fv[0]) {
      auto xe = blend(-2.0);
      const double fe = f(xe);
      if (fe < fr) {
        simplex[n] = xe;
        fv[n] = fe;
      } else {
        simplex[n] = xr;
        fv[n] = fr;
      }
    } else if (fr < fv[n - 1]) {
      simplex[n] = xr;
      fv[n] = fr;
    } else {
      auto xc = blend(fr < fv[n] ? -0.5 : 0.5);
      const double fc = f(xc);
      if (fc < std::min(fr, fv[n])) {
        simplex[n] = xc;
        fv[n] = fc;
      } else {
        for (std::size_t i = 1; i <= n; ++i) {
          for (std::size_t j = 0; j < n; ++j)
            simplex[i][j] = simplex[0][j] + 0.5 * (simplex[i][j] - simplex[0][j]);
          fv[i] = f(simplex[i]);
        }
      }
    }
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i <= n; ++i)
    if (fv[i] < fv[best]) best = i;
  return simplex[best];
}

std::vector<std::size_t> apply_window(const Dataset& ds,
                                      const std::vector<std::size_t>& indices,
                                      TrainingWindow window) {
  if (window == TrainingWindow::full_with_flags) return indices;
  const auto& eras = ds.manifest().eras;
  if (eras.size() < 2) return indices;
  const std::int64_t cutoff = eras.back().start;
  std::vector<std::size_t> out;
  for (auto i : indices)
    if (ds[i].init_time >= cutoff) out.push_back(i);
  return out;
}

std::map<EmosKey, std::vector<std::size_t>> group_by_key(
    const Dataset& ds, const std::vector<std::size_t>& indices) {
  std::map<EmosKey, std::vector<std::size_t>> groups;
  for (auto i : indices) {
    const auto& c = ds[i];
    if (!c.observation) continue;
    groups[{c.station_id, c.lead_h, c.run_hour()}].push_back(i);
  }
  return groups;
}

}  // namespace

TruncatedLogistic EmosModel::predict(const ForecastCase& c) const {
  auto it = coefficients.find({c.station_id, c.lead_h, c.run_hour()});
  if (it == coefficients.end())
    throw std::runtime_error("no EMOS model for (" + c.station_id + ", lead " +
                             std::to_string(c.lead_h) + ", run " +
                             std::to_string(c.run_hour()) + ")");
  const auto& k = it->second;
  const double loc = k.a + k.b * c.ensemble_mean();
  const double scale = softplus(k.c + k.d * c.ensemble_sd());
  return TruncatedLogistic(loc, std::max(scale, 1e-8), 0.0);
}

EmosModel fit_emos(const Dataset& ds, const std::vector<std::size_t>& indices,
                   const EmosConfig& config) {
  EmosModel model;
  const auto windowed = apply_window(ds, indices, config.window);
  for (const auto& [key, slice] : group_by_key(ds, windowed)) {
    if (slice.size() < config.min_cases) {
      model.warnings.push_back("skipped (" + key.station + ", " +
                               std::to_string(key.lead) + ", " +
                               std::to_string(key.run) + "): only " +
                               std::to_string(slice.size()) + " cases");
      continue;
    }
    std::vector<double> mean(slice.size()), sd(slice.size()), obs(slice.size());
    for (std::size_t j = 0; j < slice.size(); ++j) {
      mean[j] = ds[slice[j]].ensemble_mean();
      sd[j] = ds[slice[j]].ensemble_sd();
      obs[j] = *ds[slice[j]].observation;
    }

    const bool degenerate =
        std::all_of(obs.begin(), obs.end(),
                    [&](double y) { return std::fabs(y - obs[0]) < 1e-12; });
    if (degenerate) {
      EmosCoefficients k;
      k.a = obs[0];
      k.b = 0.0;
      k.c = softplus_inv(0.1);
      k.d = 0.0;
      k.climatological = true;
      model.coefficients[key] = k;
      model.warnings.push_back("degenerate slice, climatological fallback for (" +
                               key.station + ", " + std::to_string(key.lead) +
                               ", " + std::to_string(key.run) + ")");
      continue;
    }

    double resid_m2 = 0.0, resid_mean = 0.0;
    for (std::size_t j = 0; j < slice.size(); ++j) {
      const double r = obs[j] - mean[j];
      const double delta = r - resid_mean;
      resid_mean += delta / static_cast<double>(j + 1);
      resid_m2 += delta * (r - resid_mean);
    }
    const double resid_sd =
        std::sqrt(resid_m2 / static_cast<double>(slice.size()));

    auto objective = [&](const std::vector<double>& p) {
      double total = 0.0;
      for (std::size_t j = 0; j < slice.size(); ++j) {
        const double loc = p[0] + p[1] * mean[j];
        const double scale = std::max(softplus(p[2] + p[3] * sd[j]), 1e-8);
        total += crps_tlogis(TruncatedLogistic(loc, scale, 0.0), obs[j]);
      }
      return total / static_cast<double>(slice.size());
    };

    const auto p = nelder_mead(
        objective, {0.0, 1.0, softplus_inv(std::max(resid_sd, 0.05)), 0.0},
        config.rel_tol, config.max_iter);
    model.coefficients[key] = {p[0], p[1], p[2], p[3], false};
  }
  return model;
}

void EmosModel::save(const std::string& path) const {
  nlohmann::json j;
  j["format"] = "emos";
  j["version"] = 1;
  j["models"] = nlohmann::json::array();
  for (const auto& [key, k] : coefficients)
    j["models"].push_back({{"station", key.station},
                           {"lead", key.lead},
                           {"run", key.run},
                           {"a", k.a},
                           {"b", k.b},
                           {"c", k.c},
                           {"d", k.d},
                           {"climatological", k.climatological}});
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write model file: " + path);
  out << j.dump(2) << "\n";
}

EmosModel EmosModel::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read model file: " + path);
  nlohmann::json j;
  in >> j;
  if (j.value("format", std::string()) != "emos")
    throw std::runtime_error("not an EMOS model file: " + path);
  EmosModel m;
  for (const auto& e : j.at("models")) {
    EmosKey key{e.at("station").get<std::string>(), e.at("lead").get<int>(),
                e.at("run").get<int>()};
    m.coefficients[key] = {e.at("a").get<double>(), e.at("b").get<double>(),
                           e.at("c").get<double>(), e.at("d").get<double>(),
                           e.at("climatological").get<bool>()};
  }
  return m;
}

TruncatedLogistic EmosGbModel::predict(const ForecastCase& c,
                                       const Dataset& ds) const {
  auto it = entries.find({c.station_id, c.lead_h, c.run_hour()});
  if (it == entries.end())
    throw std::runtime_error("no EMOS-GB model for (" + c.station_id + ", lead " +
                             std::to_string(c.lead_h) + ", run " +
                             std::to_string(c.run_hour()) + ")");
  const auto& e = it->second;
  const auto x = build_features(c, ds, e.recipe);
  double loc = e.loc_coef[0], raw = e.scale_coef[0];
  for (std::size_t j = 0; j < x.size(); ++j) {
    loc += e.loc_coef[j + 1] * x[j];
    raw += e.scale_coef[j + 1] * x[j];
  }
  return TruncatedLogistic(loc, std::max(softplus(raw), 1e-8), 0.0);
}

EmosGbModel fit_emos_gb(const Dataset& ds, const std::vector<std::size_t>& indices,
                        const EmosGbConfig& config) {
  EmosGbModel model;
  const auto windowed = apply_window(ds, indices, config.window);
  for (const auto& [key, slice] : group_by_key(ds, windowed)) {
    if (slice.size() < config.min_cases) {
      model.warnings.push_back("skipped (" + key.station + ", " +
                               std::to_string(key.lead) + ", " +
                               std::to_string(key.run) + "): only " +
                               std::to_string(slice.size()) + " cases");
      continue;
    }
    EmosGbEntry entry;
    entry.recipe.use_era_flags = config.use_era_flags;
    entry.recipe.use_persistence = config.use_persistence;
    entry.recipe.extra_predictor_names = config.extra_predictors;

    const auto split = split_indices(slice, config.val_fraction, config.seed);
    fit_recipe(entry.recipe, ds, split.train);
    const std::size_t p = entry.recipe.dim();

    auto featurize = [&](const std::vector<std::size_t>& rows) {
      std::vector<std::vector<double>> xs;
      std::vector<double> ys;
      for (auto i : rows) {
        xs.push_back(build_features(ds[i], ds, entry.recipe));
        ys.push_back(*ds[i].observation);
      }
      return std::make_pair(xs, ys);
    };
    const auto [xt, yt] = featurize(split.train);
    const auto [xv, yv] = featurize(split.validation);

    auto mean_crps = [&](const std::vector<double>& lc,
                         const std::vector<double>& sc,
                         const std::vector<std::vector<double>>& xs,
                         const std::vector<double>& ys) {
      double total = 0.0;
      for (std::size_t i = 0; i < xs.size(); ++i) {
        double loc = lc[0], raw = sc[0];
        for (std::size_t j = 0; j < p; ++j) {
          loc += lc[j + 1] * xs[i][j];
          raw += sc[j + 1] * xs[i][j];
        }
        total += crps_tlogis(
            TruncatedLogistic(loc, std::max(softplus(raw), 1e-8), 0.0), ys[i]);
      }
      return total / static_cast<double>(xs.size());
    };

    // Intercept-only start = climatological fit on the training part.
    const auto p0 = nelder_mead(
        [&](const std::vector<double>& q) {
          double total = 0.0;
          for (double y : yt)
            total += crps_tlogis(
                TruncatedLogistic(q[0], std::max(softplus(q[1]), 1e-8), 0.0), y);
          return total / static_cast<double>(yt.size());
        },
        {std::accumulate(yt.begin(), yt.end(), 0.0) / yt.size(),
         softplus_inv(1.0)},
        1e-7, 2000);

    std::vector<double> lc(p + 1, 0.0), sc(p + 1, 0.0);
    lc[0] = p0[0];
    sc[0] = p0[1];

    double train_crps = mean_crps(lc, sc, xt, yt);
    double best_val = mean_crps(lc, sc, xv, yv);
    std::vector<double> best_lc = lc, best_sc = sc;
    int best_iter = 0, stall = 0;
    double step = config.step;

    for (int iter = 1; iter <= config.max_iter; ++iter) {
      // Mean CRPS gradient wrt every coefficient of both linear predictors.
      std::vector<double> g_loc(p + 1, 0.0), g_sc(p + 1, 0.0);
      for (std::size_t i = 0; i < xt.size(); ++i) {
        double loc = lc[0], raw = sc[0];
        for (std::size_t j = 0; j < p; ++j) {
          loc += lc[j + 1] * xt[i][j];
          raw += sc[j + 1] * xt[i][j];
        }
        const double scale = std::max(softplus(raw), 1e-8);
        double dloc, dscale;
        crps_tlogis_grad(TruncatedLogistic(loc, scale, 0.0), yt[i], &dloc,
                         &dscale);
        const double draw = dscale * sigmoid(raw);
        g_loc[0] += dloc;
        g_sc[0] += draw;
        for (std::size_t j = 0; j < p; ++j) {
          g_loc[j + 1] += dloc * xt[i][j];
          g_sc[j + 1] += draw * xt[i][j];
        }
      }
      const double inv_n = 1.0 / static_cast<double>(xt.size());
      for (auto& g : g_loc) g *= inv_n;
      for (auto& g : g_sc) g *= inv_n;

      std::size_t best_j = 0;
      bool best_is_loc = true;
      double best_mag = 0.0;
      for (std::size_t j = 0; j <= p; ++j) {
        if (std::fabs(g_loc[j]) > best_mag) {
          best_mag = std::fabs(g_loc[j]);
          best_j = j;
          best_is_loc = true;
        }
        if (std::fabs(g_sc[j]) > best_mag) {
          best_mag = std::fabs(g_sc[j]);
          best_j = j;
          best_is_loc = false;
        }
      }
      if (best_mag < 1e-12) break;

      // One coordinate per iteration; backtrack so training CRPS never rises.
      double* coef = best_is_loc ? &lc[best_j] : &sc[best_j];
      const double grad = best_is_loc ? g_loc[best_j] : g_sc[best_j];
      const double saved = *coef;
      bool improved = false;
      double local_step = step;
      for (int bt = 0; bt < 12; ++bt) {
        *coef = saved - local_step * (grad > 0.0 ? 1.0 : -1.0);
        const double cand = mean_crps(lc, sc, xt, yt);
        if (cand <= train_crps) {
          train_crps = cand;
          improved = true;
          break;
        }
        local_step *= 0.5;
      }
      if (!improved) {
        *coef = saved;
        step *= 0.5;
        if (step < 1e-7) break;
        continue;
      }

      entry.iterations = iter;
      const double val = mean_crps(lc, sc, xv, yv);
      if (val < best_val - 1e-10) {
        best_val = val;
        best_lc = lc;
        best_sc = sc;
        best_iter = iter;
        stall = 0;
      } else if (++stall >= config.patience) {
        break;
      }
    }
    entry.loc_coef = best_lc;
    entry.scale_coef = best_sc;
    entry.iterations = best_iter;
    model.entries[key] = std::move(entry);
  }
  return model;
}

void EmosGbModel::save(const std::string& path) const {
  nlohmann::json j;
  j["format"] = "emos_gb";
  j["version"] = 1;
  j["models"] = nlohmann::json::array();
  for (const auto& [key, e] : entries) {
    nlohmann::json r;
    r["station"] = key.station;
    r["lead"] = key.lead;
    r["run"] = key.run;
    r["loc_coef"] = e.loc_coef;
    r["scale_coef"] = e.scale_coef;
    r["iterations"] = e.iterations;
    r["recipe"] = {{"use_persistence", e.recipe.use_persistence},
                   {"use_era_flags", e.recipe.use_era_flags},
                   {"joint_mode", e.recipe.joint_mode},
                   {"extra_predictors", e.recipe.extra_predictor_names},
                   {"feature_names", e.recipe.feature_names},
                   {"mean", e.recipe.mean},
                   {"sd", e.recipe.sd},
                   {"dropped", e.recipe.dropped_features}};
    j["models"].push_back(r);
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write model file: " + path);
  out << j.dump(2) << "\n";
}

EmosGbModel EmosGbModel::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read model file: " + path);
  nlohmann::json j;
  in >> j;
  if (j.value("format", std::string()) != "emos_gb")
    throw std::runtime_error("not an EMOS-GB model file: " + path);
  EmosGbModel m;
  for (const auto& r : j.at("models")) {
    EmosKey key{r.at("station").get<std::string>(), r.at("lead").get<int>(),
                r.at("run").get<int>()};
    EmosGbEntry e;
    e.loc_coef = r.at("loc_coef").get<std::vector<double>>();
    e.scale_coef = r.at("scale_coef").get<std::vector<double>>();
    e.iterations = r.at("iterations").get<int>();
    const auto& rc = r.at("recipe");
    e.recipe.use_persistence = rc.at("use_persistence").get<bool>();
    e.recipe.use_era_flags = rc.at("use_era_flags").get<bool>();
    e.recipe.joint_mode = rc.at("joint_mode").get<bool>();
    e.recipe.extra_predictor_names =
        rc.at("extra_predictors").get<std::vector<std::string>>();
    e.recipe.feature_names = rc.at("feature_names").get<std::vector<std::string>>();
    e.recipe.mean = rc.at("mean").get<std::vector<double>>();
    e.recipe.sd = rc.at("sd").get<std::vector<double>>();
    e.recipe.dropped_features = rc.at("dropped").get<std::vector<std::string>>();
    e.recipe.fitted = true;
    m.entries[key] = std::move(e);
  }
  return m;
}

}  // namespace gustpost
