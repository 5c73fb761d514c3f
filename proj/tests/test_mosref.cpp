#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "gustpost/mosref.hpp"
#include "gustpost/verification.hpp"

using namespace gustpost;

namespace {

ArchiveManifest mos_manifest(std::vector<std::string> stations,
                             std::vector<double> thresholds,
                             std::vector<std::string> predictors = {}) {
  ArchiveManifest m;
  int e = 0;
  for (const auto& s : stations) m.stations.push_back({s, 50.0, 8.0, 100.0, e++});
  m.eras = {{"base", 0, ""}};
  m.thresholds = std::move(thresholds);
  m.lead_times = {6};
  m.runs = {0};
  m.ensemble_size = 5;
  m.predictor_names = std::move(predictors);
  return m;
}

ForecastCase base_case(const std::string& station, int i, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  ForecastCase c;
  c.station_id = station;
  c.init_time = 86400LL * i;
  c.lead_h = 6;
  const double center = 16.0 + 5.0 * g(rng);
  c.ensemble.resize(5);
  for (auto& m : c.ensemble) m = std::max(0.0, center + g(rng));
  c.persistence = {{std::max(0.0, 12.0 + g(rng)), std::max(0.0, 12.0 + g(rng)),
                    std::max(0.0, 12.0 + g(rng))}};
  return c;
}

}  // namespace

TEST_CASE("speed regression recovers an exact linear truth") {
  std::mt19937_64 rng(1);
  std::vector<ForecastCase> cases;
  for (int i = 0; i < 400; ++i) {
    auto c = base_case("A", i, rng);
    c.observation = 2.0 * c.ensemble_mean() + 1.0;
    cases.push_back(std::move(c));
  }
  Dataset ds(mos_manifest({"A"}, {25}), std::move(cases));
  const MosModel m = fit_mos_speed(ds, ds.all_indices());
  for (std::size_t i = 0; i < ds.size(); i += 13)
    CHECK(std::fabs(m.predict_speed(ds[i], ds) - *ds[i].observation) < 1e-3);
}

TEST_CASE("a duplicated predictor column stays finite and harmless") {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<ForecastCase> cases1, cases2;
  for (int i = 0; i < 300; ++i) {
    auto c = base_case("A", i, rng);
    const double x = g(rng);
    c.observation = 2.0 * c.ensemble_mean() + 3.0 * x;
    c.extra = {x, x};  // exact duplicate
    cases1.push_back(c);
    c.extra = {x};
    cases2.push_back(std::move(c));
  }
  Dataset dup(mos_manifest({"A"}, {25}, {"x1", "x1copy"}), std::move(cases1));
  Dataset single(mos_manifest({"A"}, {25}, {"x1"}), std::move(cases2));
  MosConfig cfg;
  cfg.extra_predictors = {"x1", "x1copy"};
  const MosModel md = fit_mos_speed(dup, dup.all_indices(), cfg);
  cfg.extra_predictors = {"x1"};
  const MosModel ms = fit_mos_speed(single, single.all_indices(), cfg);
  for (std::size_t i = 0; i < dup.size(); i += 17) {
    const double pd = md.predict_speed(dup[i], dup);
    CHECK(std::isfinite(pd));
    CHECK(pd == doctest::Approx(ms.predict_speed(single[i], single)).epsilon(1e-4));
  }
}

TEST_CASE("persistence dominates when it carries the only signal") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<ForecastCase> cases;
  for (int i = 0; i < 500; ++i) {
    auto c = base_case("A", i, rng);
    // wipe the ensemble signal, keep persistence informative
    for (auto& m : c.ensemble) m = std::max(0.0, 16.0 + g(rng));
    const auto& p = *c.persistence;
    c.observation = (p[0] + p[1] + p[2]) / 3.0 + 0.05 * g(rng);
    cases.push_back(std::move(c));
  }
  Dataset ds(mos_manifest({"A"}, {25}), std::move(cases));
  const MosModel m = fit_mos_speed(ds, ds.all_indices());
  REQUIRE(m.speed_coef.size() == 1);
  const auto& coef = m.speed_coef.begin()->second;
  const auto& names = m.recipe.feature_names;
  REQUIRE(coef.size() == names.size() + 1);
  double total = 0.0, pers = 0.0;
  for (std::size_t j = 0; j < names.size(); ++j) {
    total += std::fabs(coef[j + 1]);
    if (names[j].rfind("pers", 0) == 0) pers += std::fabs(coef[j + 1]);
  }
  REQUIRE(total > 0.0);
  CHECK(pers / total >= 0.9);
}

namespace {

// Observations drawn so exceedance is a clean logistic in the gust speed.
Dataset prob_stage_dataset(std::size_t n_per_station, std::uint64_t seed,
                           bool separable = false) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<ForecastCase> cases;
  for (const std::string s : {"A", "B"}) {
    for (std::size_t i = 0; i < n_per_station; ++i) {
      auto c = base_case(s, static_cast<int>(i), rng);
      const double speed = c.ensemble_mean();
      if (separable) {
        c.observation = speed > 16.0 ? 30.0 : 10.0;
      } else {
        const double noise = 2.0 * g(rng);
        c.observation = std::max(0.0, speed + noise);
        (void)u;
      }
      cases.push_back(std::move(c));
    }
  }
  return Dataset(mos_manifest({"A", "B"}, {15, 75}), std::move(cases));
}

MosConfig two_station_config() {
  MosConfig cfg;
  cfg.clusters = 2;  // only two stations in these fixtures
  return cfg;
}

}  // namespace

TEST_CASE("probability stage scores well on held-out data") {
  Dataset ds = prob_stage_dataset(400, 11);
  auto idx = ds.all_indices();
  std::vector<std::size_t> train, held;
  for (auto i : idx) (i % 5 == 4 ? held : train).push_back(i);
  const MosModel m = fit_mosref(ds, train, two_station_config());
  double bs = 0.0;
  for (auto i : held) {
    const auto p = m.predict_probs(ds[i], ds);
    const double o = (*ds[i].observation > 15.0) ? 1.0 : 0.0;
    bs += (p.probabilities[0] - o) * (p.probabilities[0] - o);
  }
  bs /= static_cast<double>(held.size());
  // obs = speed + N(0,2) around a 15 kt threshold: the Bayes BS is small
  CHECK(bs < 0.12);
}

TEST_CASE("separable data trips the separation flag but stays bounded") {
  Dataset ds = prob_stage_dataset(300, 13, /*separable=*/true);
  const MosModel m = fit_mosref(ds, ds.all_indices(), two_station_config());
  REQUIRE(!m.prob_stages.empty());
  bool flagged = false;
  for (const auto& st : m.prob_stages)
    for (const auto& f : st.fits) flagged = flagged || f.separation_flagged;
  CHECK(flagged);
  for (std::size_t i = 0; i < ds.size(); i += 29) {
    const auto p = m.predict_probs(ds[i], ds);
    for (double v : p.probabilities) {
      CHECK(v > 0.0);
      CHECK(v < 1.0);
    }
  }
}

TEST_CASE("a threshold with zero events falls back to a Laplace constant") {
  Dataset ds = prob_stage_dataset(300, 17);  // nothing ever exceeds 75 kt
  const MosModel m = fit_mosref(ds, ds.all_indices(), two_station_config());
  REQUIRE(m.prob_stages.size() == 2);
  const auto& hi = m.prob_stages[1];
  for (const auto& f : hi.fits) {
    CHECK(f.degenerate);
    CHECK(f.const_prob > 0.0);
    CHECK(f.const_prob < 0.05);
  }
}

TEST_CASE("exceedance probability rises with the corrected speed") {
  Dataset ds = prob_stage_dataset(400, 19);
  const MosModel m = fit_mosref(ds, ds.all_indices(), two_station_config());
  // order cases by corrected speed and check the low threshold's probability
  std::vector<std::pair<double, double>> sp;
  for (std::size_t i = 0; i < ds.size(); ++i)
    sp.emplace_back(m.predict_speed(ds[i], ds),
                    m.predict_probs(ds[i], ds).probabilities[0]);
  std::sort(sp.begin(), sp.end());
  for (std::size_t i = 1; i < sp.size(); ++i) CHECK(sp[i].second >= sp[i - 1].second);
}

TEST_CASE("station clustering recovers a planted partition") {
  std::mt19937_64 rng(23);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<std::string> stations = {"L1", "L2", "L3", "H1", "H2", "H3"};
  std::vector<ForecastCase> cases;
  for (const auto& s : stations) {
    const double base = (s[0] == 'H') ? 30.0 : 8.0;
    for (int i = 0; i < 120; ++i) {
      auto c = base_case(s, i, rng);
      c.observation = std::max(0.0, base + 3.0 * g(rng));
      cases.push_back(std::move(c));
    }
  }
  Dataset ds(mos_manifest(stations, {15, 25}), std::move(cases));
  const auto cl = cluster_stations(ds, ds.all_indices(), 2, {15, 25}, 1);
  REQUIRE(cl.size() == stations.size());
  CHECK(cl.at("L1") == cl.at("L2"));
  CHECK(cl.at("L1") == cl.at("L3"));
  CHECK(cl.at("H1") == cl.at("H2"));
  CHECK(cl.at("H1") == cl.at("H3"));
  CHECK(cl.at("L1") != cl.at("H1"));

  // k = number of stations still yields a valid assignment (stations with
  // identical climatologies may legitimately share a cluster)
  const auto singletons =
      cluster_stations(ds, ds.all_indices(), 6, {15, 25}, 1);
  REQUIRE(singletons.size() == stations.size());
  std::set<int> ids;
  for (const auto& [s, k] : singletons) {
    CHECK(k >= 0);
    CHECK(k < 6);
    ids.insert(k);
  }
  CHECK(ids.size() >= 2);

  CHECK_THROWS(cluster_stations(ds, ds.all_indices(), 0, {15, 25}, 1));
  CHECK_THROWS(cluster_stations(ds, ds.all_indices(), 7, {15, 25}, 1));
}

TEST_CASE("monotonicity violations are counted with their magnitude") {
  std::vector<ProbabilityForecast> fcs = {
      {{0.5, 0.6, 0.4}},  // one violation of 0.1 at index 1
      {{0.9, 0.5, 0.1}},  // clean
      {{0.2, 0.2, 0.5}},  // one violation of 0.3
  };
  const auto [count, maxmag] = monotonicity_violations(fcs);
  CHECK(count == 2);
  CHECK(maxmag == doctest::Approx(0.3));
}

TEST_CASE("mos model save/load round trip") {
  Dataset ds = prob_stage_dataset(250, 29);
  const MosModel m = fit_mosref(ds, ds.all_indices(), two_station_config());
  m.save("/tmp/gustpost_mos.json");
  const MosModel back = MosModel::load("/tmp/gustpost_mos.json");
  for (std::size_t i = 0; i < ds.size(); i += 31) {
    CHECK(m.predict_speed(ds[i], ds) ==
          doctest::Approx(back.predict_speed(ds[i], ds)).epsilon(1e-12));
    const auto p1 = m.predict_probs(ds[i], ds).probabilities;
    const auto p2 = back.predict_probs(ds[i], ds).probabilities;
    REQUIRE(p1.size() == p2.size());
    for (std::size_t k = 0; k < p1.size(); ++k)
      CHECK(p1[k] == doctest::Approx(p2[k]).epsilon(1e-12));
  }
}
