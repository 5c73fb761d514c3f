#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "gustpost/neural.hpp"

using namespace gustpost;

namespace {

ArchiveManifest net_manifest(int n_stations = 3) {
  ArchiveManifest m;
  for (int s = 0; s < n_stations; ++s)
    m.stations.push_back({"S" + std::to_string(s), 50.0, 8.0, 100.0, s});
  m.eras = {{"base", 0, ""}};
  m.thresholds = {25, 33};
  m.lead_times = {6};
  m.runs = {0};
  m.ensemble_size = 5;
  return m;
}

Dataset net_dataset(std::size_t n_per_station, std::uint64_t seed = 1,
                    double obs_noise = 1.5, int n_stations = 3) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> u(1e-9, 1.0 - 1e-9);
  ArchiveManifest m = net_manifest(n_stations);
  std::vector<ForecastCase> cases;
  for (const auto& st : m.stations) {
    for (std::size_t i = 0; i < n_per_station; ++i) {
      ForecastCase c;
      c.station_id = st.id;
      c.init_time = 86400LL * static_cast<std::int64_t>(i);
      c.lead_h = 6;
      const double center = 15.0 + 4.0 * g(rng);
      c.ensemble.resize(5);
      for (auto& mem : c.ensemble) mem = std::max(0.0, center + g(rng));
      const TruncatedLogistic truth(c.ensemble_mean() + st.embedding_index,
                                    obs_noise, 0.0);
      c.observation = tlogis_quantile(truth, u(rng));
      cases.push_back(std::move(c));
    }
  }
  return Dataset(std::move(m), std::move(cases));
}

NetworkConfig tiny_config(Head head) {
  NetworkConfig cfg;
  cfg.hidden = {8, 6};
  cfg.embedding_dim = 3;
  cfg.head = head;
  cfg.max_epochs = 25;
  cfg.batch_size = 32;
  cfg.learning_rate = 5e-3;
  cfg.bernstein_degree = 6;
  return cfg;
}

}  // namespace

TEST_CASE("analytic gradients match central finite differences") {
  for (const Head head : {Head::drn, Head::bqn}) {
    Dataset ds = net_dataset(40, 3);
    NetworkConfig cfg = tiny_config(head);
    TrainedNetwork net = init_network(ds, cfg, ds.all_indices());

    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < 24; ++i) rows.push_back(i * 5);
    Eigen::MatrixXd X;
    std::vector<int> emb;
    std::vector<double> targets;
    prepare_batch(ds, rows, net, &X, &emb, &targets);

    std::vector<double> flat = flatten_parameters(net);
    std::vector<double> grad;
    network_batch_loss(net, X, emb, targets, &grad);
    REQUIRE(grad.size() == flat.size());

    std::mt19937_64 rng(99);
    const double h = 1e-5;  // balances FD truncation against roundoff
    for (int probe = 0; probe < 100; ++probe) {
      const std::size_t j = rng() % flat.size();
      auto bumped = flat;
      bumped[j] = flat[j] + h;
      set_parameters(net, bumped);
      const double up = network_batch_loss(net, X, emb, targets);
      bumped[j] = flat[j] - h;
      set_parameters(net, bumped);
      const double dn = network_batch_loss(net, X, emb, targets);
      const double fd = (up - dn) / (2.0 * h);
      const double scale = std::max({std::fabs(fd), std::fabs(grad[j]), 1e-5});
      CHECK(std::fabs(fd - grad[j]) / scale < 1e-4);
    }
    set_parameters(net, flat);
  }
}

TEST_CASE("training is reproducible per seed") {
  Dataset ds = net_dataset(60, 5);
  NetworkConfig cfg = tiny_config(Head::drn);
  cfg.max_epochs = 8;
  const TrainedNetwork a = train_network(ds, ds.all_indices(), cfg);
  const TrainedNetwork b = train_network(ds, ds.all_indices(), cfg);
  REQUIRE(a.log.size() == b.log.size());
  for (std::size_t e = 0; e < a.log.size(); ++e) {
    CHECK(a.log[e].train_loss == b.log[e].train_loss);
    CHECK(a.log[e].val_loss == b.log[e].val_loss);
  }
  const auto fa = flatten_parameters(a);
  const auto fb = flatten_parameters(b);
  CHECK(fa == fb);
}

TEST_CASE("best validation loss matches the log minimum") {
  Dataset ds = net_dataset(60, 7);
  NetworkConfig cfg = tiny_config(Head::drn);
  cfg.max_epochs = 15;
  const TrainedNetwork net = train_network(ds, ds.all_indices(), cfg);
  REQUIRE(!net.log.empty());
  double lo = std::numeric_limits<double>::infinity();
  for (const auto& e : net.log) lo = std::min(lo, e.val_loss);
  CHECK(net.best_val_loss == doctest::Approx(lo).epsilon(1e-12));
  CHECK(net.best_epoch >= 0);
  CHECK(net.log[static_cast<std::size_t>(net.best_epoch)].val_loss ==
        doctest::Approx(lo).epsilon(1e-12));
}

TEST_CASE("bqn quantile coefficients are nondecreasing for any input") {
  Dataset ds = net_dataset(80, 9);
  NetworkConfig cfg = tiny_config(Head::bqn);
  cfg.max_epochs = 10;
  const TrainedNetwork net = train_network(ds, ds.all_indices(), cfg);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto dist = net.predict(ds[i], ds);
    const auto* bq = std::get_if<BernsteinQuantile>(&dist);
    REQUIRE(bq != nullptr);
    for (std::size_t j = 1; j < bq->coefficients.size(); ++j)
      CHECK(bq->coefficients[j] >= bq->coefficients[j - 1]);
  }
}

TEST_CASE("drn predictive scale is strictly positive") {
  Dataset ds = net_dataset(80, 11);
  NetworkConfig cfg = tiny_config(Head::drn);
  cfg.max_epochs = 10;
  const TrainedNetwork net = train_network(ds, ds.all_indices(), cfg);
  for (std::size_t i = 0; i < ds.size(); i += 3) {
    const auto dist = net.predict(ds[i], ds);
    const auto* tl = std::get_if<TruncatedLogistic>(&dist);
    REQUIRE(tl != nullptr);
    CHECK(tl->scale > 0.0);
    CHECK(tl->lower_bound == 0.0);
  }
}

TEST_CASE("unknown stations are rejected at prediction time") {
  Dataset ds = net_dataset(50, 13);
  NetworkConfig cfg = tiny_config(Head::drn);
  cfg.max_epochs = 3;
  const TrainedNetwork net = train_network(ds, ds.all_indices(), cfg);
  ForecastCase c = ds[0];
  c.station_id = "nowhere";
  CHECK_THROWS(net.predict(c, ds));
}

TEST_CASE("a NaN target aborts the loss with a clear error") {
  Dataset ds = net_dataset(40, 15);
  NetworkConfig cfg = tiny_config(Head::drn);
  TrainedNetwork net = init_network(ds, cfg, ds.all_indices());
  Eigen::MatrixXd X;
  std::vector<int> emb;
  std::vector<double> targets;
  std::vector<std::size_t> rows = {0, 1, 2, 3};
  prepare_batch(ds, rows, net, &X, &emb, &targets);
  targets[2] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(network_batch_loss(net, X, emb, targets), std::runtime_error);
}

TEST_CASE("a constant target collapses the drn spread") {
  // every observation equals the ensemble mean: the network can become sharp
  std::mt19937_64 rng(21);
  std::normal_distribution<double> g(0.0, 1.0);
  ArchiveManifest m = net_manifest(1);
  std::vector<ForecastCase> cases;
  for (int i = 0; i < 256; ++i) {
    ForecastCase c;
    c.station_id = "S0";
    c.init_time = 86400LL * i;
    c.lead_h = 6;
    c.ensemble.assign(5, 12.0);
    c.observation = 12.0;
    (void)g;
    cases.push_back(std::move(c));
  }
  Dataset ds(std::move(m), std::move(cases));
  NetworkConfig cfg = tiny_config(Head::drn);
  cfg.max_epochs = 300;
  cfg.patience = 300;
  cfg.learning_rate = 2e-2;
  const TrainedNetwork net = train_network(ds, ds.all_indices(), cfg);
  const auto dist = net.predict(ds[0], ds);
  const auto& tl = std::get<TruncatedLogistic>(dist);
  const double width =
      tlogis_quantile(tl, 0.95) - tlogis_quantile(tl, 0.05);
  CHECK(width < 0.5);
}

TEST_CASE("joint training covers every lead and run") {
  ArchiveManifest m = net_manifest(2);
  m.lead_times = {3, 9, 15};
  m.runs = {0, 12};
  std::mt19937_64 rng(23);
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> u(1e-9, 1.0 - 1e-9);
  std::vector<ForecastCase> cases;
  for (const auto& st : m.stations)
    for (int d = 0; d < 60; ++d)
      for (int run : m.runs)
        for (int lead : m.lead_times) {
          ForecastCase c;
          c.station_id = st.id;
          c.init_time = 86400LL * d + 3600LL * run;
          c.lead_h = lead;
          const double center = 15.0 + 3.0 * g(rng);
          c.ensemble.resize(5);
          for (auto& mem : c.ensemble) mem = std::max(0.0, center + g(rng));
          const TruncatedLogistic truth(c.ensemble_mean() + 2.0, 1.5, 0.0);
          c.observation = tlogis_quantile(truth, u(rng));
          cases.push_back(std::move(c));
        }
  Dataset ds(std::move(m), std::move(cases));
  NetworkConfig cfg = tiny_config(Head::drn);
  cfg.mode = TrainMode::joint;
  cfg.max_epochs = 10;
  const TrainedNetwork net = train_joint(ds, ds.all_indices(), cfg);
  // the one model predicts for every (lead, run) combination
  for (std::size_t i = 0; i < ds.size(); i += 37) {
    const auto dist = net.predict(ds[i], ds);
    const auto* bl = std::get_if<BiasShiftedLogistic>(&dist);
    REQUIRE(bl != nullptr);
    CHECK(std::isfinite(bl->location));
    CHECK(bl->scale > 0.0);
  }
}

TEST_CASE("network save/load reproduces predictions exactly") {
  for (const Head head : {Head::drn, Head::bqn}) {
    Dataset ds = net_dataset(50, 31);
    NetworkConfig cfg = tiny_config(head);
    cfg.max_epochs = 5;
    const TrainedNetwork net = train_network(ds, ds.all_indices(), cfg);
    net.save("/tmp/gustpost_net.json");
    const TrainedNetwork back = TrainedNetwork::load("/tmp/gustpost_net.json");
    for (std::size_t i = 0; i < ds.size(); i += 11) {
      const Eigen::VectorXd a = net.raw_outputs(ds[i], ds);
      const Eigen::VectorXd b = back.raw_outputs(ds[i], ds);
      REQUIRE(a.size() == b.size());
      for (Eigen::Index j = 0; j < a.size(); ++j) CHECK(a(j) == b(j));
    }
  }
}

TEST_CASE("seed ensembles aggregate into one distribution") {
  Dataset ds = net_dataset(40, 37);
  NetworkConfig cfg = tiny_config(Head::drn);
  cfg.max_epochs = 3;
  const auto nets = train_network_ensemble(ds, ds.all_indices(), cfg, 3);
  REQUIRE(nets.size() == 3);
  const auto dist = predict_aggregate(nets, ds[0], ds);
  const auto& tl = std::get<TruncatedLogistic>(dist);
  double loc_sum = 0.0;
  for (const auto& n : nets)
    loc_sum += std::get<TruncatedLogistic>(n.predict(ds[0], ds)).location;
  CHECK(tl.location == doctest::Approx(loc_sum / 3.0).epsilon(1e-12));
}
