// gustpost: generate / train / predict / verify / scorecard / experiment.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "gustpost/distributions.hpp"
#include "gustpost/domain.hpp"
#include "gustpost/emos.hpp"
#include "gustpost/mosref.hpp"
#include "gustpost/neural.hpp"
#include "gustpost/synthgen.hpp"
#include "gustpost/verification.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace gustpost;

namespace {

ProbabilityForecast raw_ensemble_probs(const ForecastCase& c,
                                       const ThresholdSet& thresholds) {
  return exceedance_prob(EnsembleEmpirical{c.ensemble}, thresholds);
}

std::vector<double> parse_double_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (!tok.empty()) out.push_back(std::stod(tok));
  }
  return out;
}

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    const auto dash = tok.find("..");
    if (dash != std::string::npos) {
      const int lo = std::stoi(tok.substr(0, dash));
      const int hi = std::stoi(tok.substr(dash + 2));
      for (int v = lo; v <= hi; ++v) out.push_back(v);
    } else {
      out.push_back(std::stoi(tok));
    }
  }
  return out;
}

std::string run_stamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[64];
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::strftime(buf, sizeof(buf), "run_%Y%m%d-%H%M%S", &tm);
  return buf;
}

fs::path resolve_out_dir(const std::string& out, const std::string& command) {
  fs::path dir;
  if (!out.empty()) {
    dir = out;
  } else {
    dir = fs::path("runs") / (run_stamp() + "_" + command);
    int suffix = 1;
    while (fs::exists(dir))
      dir = fs::path("runs") / (run_stamp() + "_" + command + "_" +
                                std::to_string(suffix++));
  }
  fs::create_directories(dir);
  return dir;
}

void echo_config(const json& cfg, const fs::path& dir) {
  std::ofstream out(dir / "config.json");
  out << cfg.dump(2) << "\n";
}

Dataset load_ds(const std::string& archive, const std::string& manifest,
                bool verbose = true) {
  const ArchiveManifest m = ArchiveManifest::load(manifest);
  LoadDiagnostics diag;
  Dataset ds = load_archive(archive, m, &diag);
  if (verbose) {
    std::cout << "loaded " << diag.accepted << " cases, rejected " << diag.rejected
              << "\n";
    for (const auto& msg : diag.messages) std::cerr << "  " << msg << "\n";
  }
  return ds;
}

void write_forecasts_csv(const fs::path& path, const Dataset& ds,
                         const std::vector<std::size_t>& rows,
                         const std::vector<ProbabilityForecast>& probs,
                         const std::vector<double>& thresholds) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "station_id,init_time,lead_h,run,obs";
  char buf[64];
  for (double t : thresholds) {
    std::snprintf(buf, sizeof(buf), ",p_gt_%g", t);
    out << buf;
  }
  out << "\n";
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const auto& c = ds[rows[k]];
    out << c.station_id << "," << c.init_time << "," << c.lead_h << ","
        << c.run_hour() << ",";
    if (c.observation) {
      std::snprintf(buf, sizeof(buf), "%.12g", *c.observation);
      out << buf;
    }
    for (double p : probs[k].probabilities) {
      std::snprintf(buf, sizeof(buf), ",%.12g", p);
      out << buf;
    }
    out << "\n";
  }
}

struct ForecastRow {
  std::string station;
  std::int64_t init_time = 0;
  int lead = 0;
  int run = 0;
  std::optional<double> obs;
  std::vector<double> probs;
};

struct ForecastFile {
  std::vector<double> thresholds;
  std::vector<ForecastRow> rows;
};

ForecastFile read_forecasts_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty forecasts file");
  ForecastFile ff;
  {
    std::stringstream ss(line);
    std::string col;
    int i = 0;
    while (std::getline(ss, col, ',')) {
      if (i >= 5) {
        if (col.rfind("p_gt_", 0) != 0)
          throw std::runtime_error("unexpected forecast column: " + col);
        ff.thresholds.push_back(std::stod(col.substr(5)));
      }
      ++i;
    }
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string tok;
    ForecastRow r;
    std::getline(ss, r.station, ',');
    std::getline(ss, tok, ',');
    r.init_time = std::stoll(tok);
    std::getline(ss, tok, ',');
    r.lead = std::stoi(tok);
    std::getline(ss, tok, ',');
    r.run = std::stoi(tok);
    std::getline(ss, tok, ',');
    if (!tok.empty()) r.obs = std::stod(tok);
    while (std::getline(ss, tok, ',')) r.probs.push_back(std::stod(tok));
    if (r.probs.size() != ff.thresholds.size())
      throw std::runtime_error("forecast row width mismatch in " + path);
    ff.rows.push_back(std::move(r));
  }
  return ff;
}

// Simple slice-parallel map; output order is index order, so the result is
// identical for any worker count.
template <typename Fn>
void parallel_for(std::size_t n, int workers, Fn fn) {
  if (workers <= 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const int k = std::min<int>(workers, static_cast<int>(n));
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(k));
  for (int w = 0; w < k; ++w) {
    pool.emplace_back([&, w]() {
      for (std::size_t i = static_cast<std::size_t>(w); i < n;
           i += static_cast<std::size_t>(k))
        fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

// method -> lead -> report, computed at one threshold.
std::map<int, BrierReport> per_lead_reports(const Dataset& ds,
                                            const ForecastFile& ff,
                                            std::size_t thr_idx,
                                            std::size_t nbins) {
  std::map<int, std::pair<std::vector<double>, std::vector<int>>> by_lead;
  const double thr = ff.thresholds[thr_idx];
  for (const auto& r : ff.rows) {
    if (!r.obs) continue;
    auto& v = by_lead[r.lead];
    v.first.push_back(r.probs[thr_idx]);
    v.second.push_back(*r.obs > thr ? 1 : 0);
  }
  (void)ds;
  std::map<int, BrierReport> out;
  for (auto& [lead, v] : by_lead)
    out[lead] = brier_decomposition(v.first, v.second, nbins);
  return out;
}

struct CommonOpts {
  std::string out;
  std::uint64_t seed = 1;
  int workers = 1;
  bool deterministic = false;
  std::string thresholds;
  std::size_t bins = 10;
};

void add_common(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--out", o.out, "output directory (default: run-stamped)")
      ->envname("GUSTPOST_OUT");
  cmd->add_option("--seed", o.seed, "RNG seed")->envname("GUSTPOST_SEED");
  cmd->add_option("--workers", o.workers, "worker thread count")
      ->envname("GUSTPOST_WORKERS");
  cmd->add_flag("--deterministic", o.deterministic,
                "force sequential, bit-reproducible execution")
      ->envname("GUSTPOST_DETERMINISTIC");
  cmd->add_option("--thresholds", o.thresholds, "comma-separated kt thresholds")
      ->envname("GUSTPOST_THRESHOLDS");
  cmd->add_option("--bins", o.bins, "reliability bins")->envname("GUSTPOST_BINS");
}

int effective_workers(const CommonOpts& o) {
  return o.deterministic ? 1 : std::max(1, o.workers);
}

// ---------------------------------------------------------------- generate

int cmd_generate(const CommonOpts& co, const ScenarioConfig& sc_in,
                 const std::vector<std::string>& era_specs) {
  ScenarioConfig sc = sc_in;
  sc.seed = co.seed;
  if (!co.thresholds.empty()) sc.thresholds = parse_double_list(co.thresholds);
  for (const auto& spec : era_specs) {
    std::stringstream ss(spec);
    std::string name, start, bias, disp;
    if (!std::getline(ss, name, ':') || !std::getline(ss, start, ':') ||
        !std::getline(ss, bias, ':') || !std::getline(ss, disp, ':'))
      throw CLI::ValidationError("--era", "expected name:start:bias:dispersion");
    sc.eras.push_back({name, std::stoll(start), std::stod(bias), std::stod(disp)});
  }
  const fs::path dir = resolve_out_dir(co.out, "generate");
  const auto t0 = std::chrono::steady_clock::now();
  GeneratedArchive ga = generate_archive(sc);
  write_generated(ga, dir.string());
  json cfg;
  cfg["command"] = "generate";
  cfg["stations"] = sc.n_stations;
  cfg["days"] = sc.n_days;
  cfg["seed"] = sc.seed;
  cfg["ar1"] = sc.ar1;
  cfg["hourly_sd"] = sc.hourly_sd;
  cfg["synoptic_sd"] = sc.synoptic_sd;
  cfg["obs_scale"] = sc.obs_scale;
  cfg["member_noise_sd"] = sc.member_noise_sd;
  cfg["diurnal_amplitude"] = sc.diurnal_amplitude;
  cfg["extra_effect"] = sc.extra_effect;
  cfg["thresholds"] = sc.thresholds;
  cfg["eras"] = era_specs;
  echo_config(cfg, dir);
  const double secs = std::chrono::duration<double>(
                          std::chrono::steady_clock::now() - t0).count();
  std::cout << "generated " << ga.dataset.size() << " cases -> " << dir.string()
            << " (" << secs << " s)\n";
  return 0;
}

// ------------------------------------------------------------------- train

struct TrainOpts {
  std::string archive, manifest, method;
  std::string mode = "per_lead";
  int lead = -1, run = -1;
  bool persistence = false;
  bool era_flags = false;
  std::string window = "post_last_change";
  std::vector<std::string> extras;
  std::vector<int> hidden = {32, 16};
  int epochs = 60, batch = 64, patience = 8, embedding_dim = 8, degree = 12;
  double lr = 5e-3;
};

int cmd_train(const CommonOpts& co, const TrainOpts& to) {
  const fs::path dir = resolve_out_dir(co.out, "train_" + to.method);
  Dataset ds = load_ds(to.archive, to.manifest);
  std::vector<std::size_t> idx =
      (to.lead >= 0 || to.run >= 0) ? ds.select(to.lead, to.run) : ds.all_indices();
  const auto t0 = std::chrono::steady_clock::now();
  const std::string model_path = (dir / "model.json").string();

  if (to.method == "emos") {
    EmosConfig c;
    c.window = to.window == "full_with_flags" ? TrainingWindow::full_with_flags
                                              : TrainingWindow::post_last_change;
    EmosModel m = fit_emos(ds, idx, c);
    m.save(model_path);
    for (const auto& w : m.warnings) std::cerr << "warning: " << w << "\n";
  } else if (to.method == "emos_gb") {
    EmosGbConfig c;
    c.window = to.window == "post_last_change" ? TrainingWindow::post_last_change
                                               : TrainingWindow::full_with_flags;
    c.seed = co.seed;
    c.use_era_flags = to.era_flags;
    c.use_persistence = to.persistence;
    c.extra_predictors = to.extras;
    EmosGbModel m = fit_emos_gb(ds, idx, c);
    m.save(model_path);
    for (const auto& w : m.warnings) std::cerr << "warning: " << w << "\n";
  } else if (to.method == "mosref") {
    MosConfig c;
    c.seed = co.seed;
    c.use_persistence = to.persistence;
    c.use_era_flags = to.era_flags;
    c.extra_predictors = to.extras;
    if (!co.thresholds.empty()) {
      // thresholds come from the manifest; flag overrides
    }
    MosModel m = fit_mosref(ds, idx, c);
    m.save(model_path);
    for (const auto& w : m.warnings) std::cerr << "warning: " << w << "\n";
  } else {  // drn | bqn
    NetworkConfig c;
    c.head = to.method == "drn" ? Head::drn : Head::bqn;
    c.mode = to.mode == "joint" ? TrainMode::joint : TrainMode::per_lead;
    if (c.mode == TrainMode::per_lead && to.lead < 0)
      throw CLI::ValidationError("--lead", "per_lead neural training needs --lead");
    c.hidden = to.hidden;
    c.embedding_dim = to.embedding_dim;
    c.bernstein_degree = to.degree;
    c.learning_rate = to.lr;
    c.batch_size = to.batch;
    c.max_epochs = to.epochs;
    c.patience = to.patience;
    c.seed = co.seed;
    c.use_persistence = to.persistence;
    c.use_era_flags = to.era_flags;
    c.extra_predictors = to.extras;
    TrainedNetwork net = c.mode == TrainMode::joint ? train_joint(ds, idx, c)
                                                    : train_network(ds, idx, c);
    net.save(model_path);
    net.write_training_log_csv((dir / "training_log.csv").string());
    std::cout << "best epoch " << net.best_epoch << " val loss " << net.best_val_loss
              << "\n";
  }

  json cfg;
  cfg["command"] = "train";
  cfg["archive"] = to.archive;
  cfg["manifest"] = to.manifest;
  cfg["method"] = to.method;
  cfg["mode"] = to.mode;
  cfg["lead"] = to.lead;
  cfg["run"] = to.run;
  cfg["seed"] = co.seed;
  cfg["persistence"] = to.persistence;
  cfg["era_flags"] = to.era_flags;
  cfg["extras"] = to.extras;
  echo_config(cfg, dir);
  const double secs = std::chrono::duration<double>(
                          std::chrono::steady_clock::now() - t0).count();
  std::cout << "trained " << to.method << " on " << idx.size() << " cases -> "
            << model_path << " (" << secs << " s)\n";
  return 0;
}

// ----------------------------------------------------------------- predict

std::string sniff_model_format(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read model: " + path);
  json j;
  in >> j;
  return j.value("format", std::string());
}

int cmd_predict(const CommonOpts& co, const std::string& archive,
                const std::string& manifest, const std::string& model,
                const std::string& method, int lead, int run) {
  const fs::path dir = resolve_out_dir(co.out, "predict");
  Dataset ds = load_ds(archive, manifest);
  ThresholdSet thr{ds.manifest().thresholds};
  if (!co.thresholds.empty()) thr.thresholds = parse_double_list(co.thresholds);
  std::vector<std::size_t> rows =
      (lead >= 0 || run >= 0) ? ds.select(lead, run) : ds.all_indices();
  std::vector<ProbabilityForecast> probs(rows.size());
  const auto t0 = std::chrono::steady_clock::now();

  if (method == "ensemble") {
    parallel_for(rows.size(), effective_workers(co), [&](std::size_t k) {
      probs[k] = raw_ensemble_probs(ds[rows[k]], thr);
    });
  } else {
    const std::string fmt = sniff_model_format(model);
    if (fmt == "emos") {
      EmosModel m = EmosModel::load(model);
      parallel_for(rows.size(), effective_workers(co), [&](std::size_t k) {
        probs[k] = exceedance_prob(m.predict(ds[rows[k]]), thr);
      });
    } else if (fmt == "emos_gb") {
      EmosGbModel m = EmosGbModel::load(model);
      parallel_for(rows.size(), effective_workers(co), [&](std::size_t k) {
        probs[k] = exceedance_prob(m.predict(ds[rows[k]], ds), thr);
      });
    } else if (fmt == "mosref") {
      MosModel m = MosModel::load(model);
      thr.thresholds = m.thresholds;  // stage-2 fits are per trained threshold
      parallel_for(rows.size(), effective_workers(co), [&](std::size_t k) {
        probs[k] = m.predict_probs(ds[rows[k]], ds);
      });
    } else if (fmt == "network") {
      TrainedNetwork m = TrainedNetwork::load(model);
      parallel_for(rows.size(), effective_workers(co), [&](std::size_t k) {
        probs[k] = exceedance_prob(m.predict(ds[rows[k]], ds), thr);
      });
    } else {
      throw std::runtime_error("unrecognized model format in " + model);
    }
  }

  write_forecasts_csv(dir / "forecasts.csv", ds, rows, probs, thr.thresholds);
  json cfg;
  cfg["command"] = "predict";
  cfg["archive"] = archive;
  cfg["manifest"] = manifest;
  cfg["model"] = model;
  cfg["method"] = method;
  cfg["thresholds"] = thr.thresholds;
  echo_config(cfg, dir);
  const double secs = std::chrono::duration<double>(
                          std::chrono::steady_clock::now() - t0).count();
  std::cout << "predicted " << rows.size() << " cases -> "
            << (dir / "forecasts.csv").string() << " (" << secs << " s)\n";
  return 0;
}

// ------------------------------------------------------------------ verify

int cmd_verify(const CommonOpts& co, const std::string& forecasts,
               const std::string& archive, const std::string& manifest,
               const std::string& name) {
  const fs::path dir = resolve_out_dir(co.out, "verify");
  const ForecastFile ff = read_forecasts_csv(forecasts);
  Dataset ds;
  bool have_archive = !archive.empty() && !manifest.empty();
  std::map<std::string, std::size_t> key_of;
  if (have_archive) {
    ds = load_ds(archive, manifest);
    for (std::size_t i = 0; i < ds.size(); ++i) {
      const auto& c = ds[i];
      key_of[c.station_id + "|" + std::to_string(c.init_time) + "|" +
             std::to_string(c.lead_h)] = i;
    }
  }

  std::map<std::string, std::map<int, BrierReport>> reports;
  std::ofstream skill(dir / "skill.csv");
  skill << "method,threshold,lead,n,bs,bs_ref,bss\n";
  char buf[256];
  for (std::size_t ti = 0; ti < ff.thresholds.size(); ++ti) {
    const double thr = ff.thresholds[ti];
    std::snprintf(buf, sizeof(buf), "%s_t%g", name.c_str(), thr);
    const std::string label = buf;
    reports[label] = per_lead_reports(ds, ff, ti, co.bins);

    // Reference: raw ensemble frequencies on the same joined cases.
    if (have_archive) {
      std::map<int, std::pair<std::vector<double>, std::vector<int>>> ref_by_lead;
      for (const auto& r : ff.rows) {
        if (!r.obs) continue;
        const auto it = key_of.find(r.station + "|" + std::to_string(r.init_time) +
                                    "|" + std::to_string(r.lead));
        if (it == key_of.end()) continue;
        const auto& c = ds[it->second];
        double cnt = 0;
        for (double m : c.ensemble)
          if (m > thr) cnt += 1.0;
        auto& v = ref_by_lead[r.lead];
        v.first.push_back(cnt / static_cast<double>(c.ensemble.size()));
        v.second.push_back(*r.obs > thr ? 1 : 0);
      }
      for (const auto& [lead, rep] : reports[label]) {
        const auto rit = ref_by_lead.find(lead);
        if (rit == ref_by_lead.end()) continue;
        const double bs_ref = brier_score(rit->second.first, rit->second.second);
        const auto bss = brier_skill(rep.bs, bs_ref);
        std::snprintf(buf, sizeof(buf), "%s,%g,%d,%zu,%.12g,%.12g,", name.c_str(),
                      thr, lead, rep.n, rep.bs, bs_ref);
        skill << buf;
        if (bss) {
          std::snprintf(buf, sizeof(buf), "%.12g", *bss);
          skill << buf;
        }
        skill << "\n";
      }
    }

    // Per-threshold reliability/sharpness over all leads pooled.
    std::vector<double> f;
    std::vector<int> o;
    for (const auto& r : ff.rows) {
      if (!r.obs) continue;
      f.push_back(r.probs[ti]);
      o.push_back(*r.obs > thr ? 1 : 0);
    }
    if (!f.empty()) {
      const BrierReport pooled = brier_decomposition(f, o, co.bins);
      std::snprintf(buf, sizeof(buf), "reliability_t%g.csv", thr);
      write_reliability_csv(pooled.bins, (dir / buf).string());
      const auto sharp = sharpness_histogram(f, co.bins);
      std::snprintf(buf, sizeof(buf), "sharpness_t%g.csv", thr);
      std::ofstream sh(dir / buf);
      sh << "bin,count\n";
      for (std::size_t b = 0; b < sharp.size(); ++b)
        sh << b << "," << sharp[b] << "\n";
    }
  }

  write_report_csv(reports, (dir / "report.csv").string());
  write_report_json(reports, (dir / "report.json").string());
  json cfg;
  cfg["command"] = "verify";
  cfg["forecasts"] = forecasts;
  cfg["archive"] = archive;
  cfg["manifest"] = manifest;
  cfg["name"] = name;
  cfg["bins"] = co.bins;
  echo_config(cfg, dir);
  std::cout << "verified " << ff.rows.size() << " forecasts -> " << dir.string()
            << "\n";
  return 0;
}

// --------------------------------------------------------------- scorecard

int cmd_scorecard(const CommonOpts& co, const std::vector<std::string>& sources,
                  const std::string& reference, double threshold) {
  const fs::path dir = resolve_out_dir(co.out, "scorecard");
  std::map<std::string, std::map<int, BrierReport>> reports;
  for (const auto& src : sources) {
    const auto eq = src.find('=');
    if (eq == std::string::npos)
      throw CLI::ValidationError("--forecasts", "expected NAME=PATH");
    const std::string name = src.substr(0, eq);
    const ForecastFile ff = read_forecasts_csv(src.substr(eq + 1));
    auto ti = std::find(ff.thresholds.begin(), ff.thresholds.end(), threshold);
    if (ti == ff.thresholds.end())
      throw std::runtime_error("threshold not present in " + src);
    Dataset dummy;
    reports[name] = per_lead_reports(
        dummy, ff, static_cast<std::size_t>(ti - ff.thresholds.begin()), co.bins);
  }
  if (!reports.count(reference))
    throw std::runtime_error("reference method not among --forecasts: " + reference);
  const auto cells = score_card(reports, reference);
  write_score_card_csv(cells, (dir / "scorecard.csv").string());
  write_score_card_svg(cells, (dir / "scorecard.svg").string());
  write_report_csv(reports, (dir / "report.csv").string());
  json cfg;
  cfg["command"] = "scorecard";
  cfg["reference"] = reference;
  cfg["threshold"] = threshold;
  cfg["sources"] = sources;
  echo_config(cfg, dir);
  std::cout << "score card with " << cells.size() << " cells -> " << dir.string()
            << "\n";
  return 0;
}

// -------------------------------------------------------------- experiment

struct ExpOpts {
  int stations = 10;
  int days = 150;
  std::vector<int> leads = {3, 9, 15, 21};
};

// Held-out split by day: last quarter of days is the test set.
void split_by_time(const Dataset& ds, const std::vector<std::size_t>& idx,
                   std::vector<std::size_t>* train, std::vector<std::size_t>* test) {
  std::int64_t lo = INT64_MAX, hi = INT64_MIN;
  for (auto i : idx) {
    lo = std::min(lo, ds[i].init_time);
    hi = std::max(hi, ds[i].init_time);
  }
  const std::int64_t cut = lo + (hi - lo) * 3 / 4;
  for (auto i : idx)
    (ds[i].init_time <= cut ? *train : *test).push_back(i);
}

double test_bs(const Dataset& ds, const std::vector<std::size_t>& test,
               const TrainedNetwork& net, double thr,
               std::vector<double>* per_case = nullptr,
               std::vector<std::int64_t>* day_ids = nullptr) {
  double total = 0.0;
  std::size_t n = 0;
  for (auto i : test) {
    const auto& c = ds[i];
    if (!c.observation) continue;
    const auto pf = exceedance_prob(net.predict(c, ds), ThresholdSet{{thr}});
    const double o = *c.observation > thr ? 1.0 : 0.0;
    const double se = (pf.probabilities[0] - o) * (pf.probabilities[0] - o);
    total += se;
    ++n;
    if (per_case) per_case->push_back(se);
    if (day_ids) day_ids->push_back(c.init_time / 86400);
  }
  return total / static_cast<double>(n);
}

NetworkConfig quick_net(Head head, std::uint64_t seed) {
  NetworkConfig c;
  c.head = head;
  c.hidden = {24, 12};
  c.embedding_dim = 4;
  c.max_epochs = 40;
  c.patience = 6;
  c.learning_rate = 5e-3;
  c.batch_size = 128;
  c.seed = seed;
  return c;
}

int cmd_experiment(const CommonOpts& co, const std::string& preset,
                   const ExpOpts& eo) {
  const fs::path dir = resolve_out_dir(co.out, "experiment_" + preset);
  json cfg;
  cfg["command"] = "experiment";
  cfg["preset"] = preset;
  cfg["stations"] = eo.stations;
  cfg["days"] = eo.days;
  cfg["seed"] = co.seed;
  echo_config(cfg, dir);
  char buf[256];
  const auto t0 = std::chrono::steady_clock::now();

  if (preset == "persistence") {
    ScenarioConfig sc;
    sc.n_stations = eo.stations;
    sc.n_days = eo.days;
    sc.seed = co.seed;
    sc.ar1 = 0.95;
    sc.hourly_sd = 4.0;
    sc.lead_times = {3, 21};
    GeneratedArchive ga = generate_archive(sc);
    const double thr = 25.0;
    std::ofstream tab(dir / "persistence_table.csv");
    tab << "lead,bs_without,bs_with,diff,ci_lo,ci_hi\n";
    for (int lead : sc.lead_times) {
      const auto idx = ga.dataset.select(lead, -1);
      std::vector<std::size_t> train, test;
      split_by_time(ga.dataset, idx, &train, &test);
      NetworkConfig base = quick_net(Head::drn, co.seed);
      NetworkConfig pers = base;
      pers.use_persistence = true;
      TrainedNetwork m0 = train_network(ga.dataset, train, base);
      TrainedNetwork m1 = train_network(ga.dataset, train, pers);
      std::vector<double> se0, se1;
      std::vector<std::int64_t> days;
      const double bs0 = test_bs(ga.dataset, test, m0, thr, &se0, &days);
      const double bs1 = test_bs(ga.dataset, test, m1, thr);
      std::vector<std::int64_t> days1;
      se1.clear();
      test_bs(ga.dataset, test, m1, thr, &se1, &days1);
      std::vector<double> diff(se0.size());
      for (std::size_t k = 0; k < se0.size(); ++k) diff[k] = se1[k] - se0[k];
      const auto ci = block_bootstrap_mean(diff, days, 500, 0.95, co.seed);
      std::snprintf(buf, sizeof(buf), "%d,%.6g,%.6g,%.6g,%.6g,%.6g\n", lead, bs0,
                    bs1, ci.mean, ci.lo, ci.hi);
      tab << buf;
    }
  } else if (preset == "era") {
    ScenarioConfig sc;
    sc.n_stations = eo.stations;
    sc.n_days = eo.days;
    sc.seed = co.seed;
    const std::int64_t change = sc.start_time + 86400LL * (eo.days * 6 / 10);
    sc.eras = {{"base", sc.start_time, 4.0, 1.0}, {"upgrade", change, 0.0, 1.0}};
    sc.lead_times = eo.leads;
    GeneratedArchive ga = generate_archive(sc);
    const double thr = 25.0;
    std::ofstream tab(dir / "era_table.csv");
    tab << "lead,bs_post_only,bs_full_flags,diff\n";
    for (int lead : sc.lead_times) {
      const auto idx = ga.dataset.select(lead, -1);
      std::vector<std::size_t> train, test;
      split_by_time(ga.dataset, idx, &train, &test);
      std::vector<std::size_t> post;
      for (auto i : train)
        if (ga.dataset[i].init_time >= change) post.push_back(i);
      NetworkConfig flags = quick_net(Head::drn, co.seed);
      flags.use_era_flags = true;
      NetworkConfig plain = quick_net(Head::drn, co.seed);
      TrainedNetwork m_post = train_network(ga.dataset, post, plain);
      TrainedNetwork m_full = train_network(ga.dataset, train, flags);
      const double bs_post = test_bs(ga.dataset, test, m_post, thr);
      const double bs_full = test_bs(ga.dataset, test, m_full, thr);
      std::snprintf(buf, sizeof(buf), "%d,%.6g,%.6g,%.6g\n", lead, bs_post, bs_full,
                    bs_full - bs_post);
      tab << buf;
    }
  } else if (preset == "joint") {
    ScenarioConfig sc;
    sc.n_stations = eo.stations;
    sc.n_days = eo.days;
    sc.seed = co.seed;
    sc.lead_times = eo.leads;
    GeneratedArchive ga = generate_archive(sc);
    const double thr = 25.0;
    const auto all = ga.dataset.all_indices();
    std::vector<std::size_t> train_all, test_all;
    split_by_time(ga.dataset, all, &train_all, &test_all);
    NetworkConfig jc = quick_net(Head::drn, co.seed);
    TrainedNetwork joint = train_joint(ga.dataset, train_all, jc);
    std::ofstream tab(dir / "joint_table.csv");
    tab << "lead,rows_per_lead,rows_joint,bs_per_lead,bs_joint,diff\n";
    for (int lead : sc.lead_times) {
      std::vector<std::size_t> train, test;
      split_by_time(ga.dataset, ga.dataset.select(lead, -1), &train, &test);
      TrainedNetwork per = train_network(ga.dataset, train, quick_net(Head::drn, co.seed));
      const double bsp = test_bs(ga.dataset, test, per, thr);
      const double bsj = test_bs(ga.dataset, test, joint, thr);
      std::snprintf(buf, sizeof(buf), "%d,%zu,%zu,%.6g,%.6g,%.6g\n", lead,
                    train.size(), train_all.size(), bsp, bsj, bsj - bsp);
      tab << buf;
    }
  } else if (preset == "thresholds") {
    ScenarioConfig sc;
    sc.n_stations = eo.stations;
    sc.n_days = eo.days;
    sc.seed = co.seed;
    sc.lead_times = {9};
    GeneratedArchive ga = generate_archive(sc);
    const auto idx = ga.dataset.select(9, -1);
    std::vector<std::size_t> train, test;
    split_by_time(ga.dataset, idx, &train, &test);
    TrainedNetwork net = train_network(ga.dataset, train, quick_net(Head::drn, co.seed));
    std::ofstream tab(dir / "threshold_table.csv");
    tab << "threshold,events,bs,bs_ref,bss\n";
    ThresholdSet ts{ga.thresholds};
    for (std::size_t ti = 0; ti < ts.size(); ++ti) {
      const double thr = ts.thresholds[ti];
      std::vector<double> f, fr;
      std::vector<int> o;
      for (auto i : test) {
        const auto& c = ga.dataset[i];
        if (!c.observation) continue;
        f.push_back(exceedance_prob(net.predict(c, ga.dataset), ThresholdSet{{thr}})
                        .probabilities[0]);
        fr.push_back(raw_ensemble_probs(c, ThresholdSet{{thr}}).probabilities[0]);
        o.push_back(*c.observation > thr ? 1 : 0);
      }
      const std::size_t events =
          static_cast<std::size_t>(std::count(o.begin(), o.end(), 1));
      const double bs = brier_score(f, o);
      const double bs_ref = brier_score(fr, o);
      const auto bss = brier_skill(bs, bs_ref);
      std::snprintf(buf, sizeof(buf), "%g,%zu,%.6g,%.6g,", thr, events, bs, bs_ref);
      tab << buf;
      if (bss) {
        std::snprintf(buf, sizeof(buf), "%.6g", *bss);
        tab << buf;
      }
      tab << "\n";
    }
  } else {
    throw CLI::ValidationError("experiment", "unknown preset: " + preset);
  }

  const double secs = std::chrono::duration<double>(
                          std::chrono::steady_clock::now() - t0).count();
  std::cout << "experiment " << preset << " -> " << dir.string() << " (" << secs
            << " s)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gustpost: ensemble wind-gust postprocessing toolkit"};
  app.require_subcommand(1);

  CommonOpts co;

  // generate
  auto* gen = app.add_subcommand("generate", "generate a synthetic archive");
  CommonOpts gen_co;
  add_common(gen, gen_co);
  ScenarioConfig sc;
  std::vector<std::string> era_specs;
  std::string leads_spec, runs_spec;
  gen->add_option("--stations", sc.n_stations, "station count");
  gen->add_option("--days", sc.n_days, "archive length in days");
  gen->add_option("--ar1", sc.ar1, "hourly AR(1) coefficient");
  gen->add_option("--hourly-sd", sc.hourly_sd, "hourly component sd");
  gen->add_option("--synoptic-sd", sc.synoptic_sd, "day-scale signal sd");
  gen->add_option("--obs-scale", sc.obs_scale, "observation logistic scale");
  gen->add_option("--member-noise", sc.member_noise_sd, "member noise sd");
  gen->add_option("--diurnal", sc.diurnal_amplitude, "diurnal amplitude");
  gen->add_option("--extra-effect", sc.extra_effect, "extra predictor effect");
  gen->add_option("--era", era_specs, "era spec name:start:bias:dispersion");
  gen->add_option("--leads", leads_spec, "lead hours, e.g. 3..21 or 3,9,21");
  gen->add_option("--runs", runs_spec, "run hours, e.g. 0,12");

  // train
  auto* tr = app.add_subcommand("train", "fit a postprocessing model");
  CommonOpts tr_co;
  add_common(tr, tr_co);
  TrainOpts to;
  tr->add_option("--archive", to.archive, "archive CSV")
      ->required()->envname("GUSTPOST_ARCHIVE");
  tr->add_option("--manifest", to.manifest, "manifest JSON")->required();
  tr->add_option("--method", to.method, "method")
      ->required()
      ->check(CLI::IsMember({"mosref", "emos", "emos_gb", "drn", "bqn"}))
      ->envname("GUSTPOST_METHOD");
  tr->add_option("--mode", to.mode, "per_lead or joint")
      ->check(CLI::IsMember({"per_lead", "joint"}))
      ->envname("GUSTPOST_MODE");
  tr->add_option("--lead", to.lead, "restrict to lead hour");
  tr->add_option("--run", to.run, "restrict to run hour");
  tr->add_flag("--persistence", to.persistence, "use persistence predictors");
  tr->add_flag("--era-flags", to.era_flags, "use era flag predictors");
  tr->add_option("--window", to.window, "training window")
      ->check(CLI::IsMember({"post_last_change", "full_with_flags"}));
  tr->add_option("--extras", to.extras, "extra predictor names");
  tr->add_option("--hidden", to.hidden, "hidden layer widths");
  tr->add_option("--epochs", to.epochs, "max epochs");
  tr->add_option("--batch", to.batch, "mini-batch size");
  tr->add_option("--patience", to.patience, "early-stop patience");
  tr->add_option("--lr", to.lr, "learning rate");
  tr->add_option("--embedding-dim", to.embedding_dim, "station embedding size");
  tr->add_option("--degree", to.degree, "Bernstein degree (bqn)");

  // predict
  auto* pr = app.add_subcommand("predict", "produce exceedance probabilities");
  CommonOpts pr_co;
  add_common(pr, pr_co);
  std::string pr_archive, pr_manifest, pr_model, pr_method = "model";
  int pr_lead = -1, pr_run = -1;
  pr->add_option("--archive", pr_archive, "archive CSV")
      ->required()->envname("GUSTPOST_ARCHIVE");
  pr->add_option("--manifest", pr_manifest, "manifest JSON")->required();
  pr->add_option("--model", pr_model, "trained model JSON");
  pr->add_option("--method", pr_method, "'ensemble' for raw member frequencies")
      ->check(CLI::IsMember({"model", "ensemble"}));
  pr->add_option("--lead", pr_lead, "restrict to lead hour");
  pr->add_option("--run", pr_run, "restrict to run hour");

  // verify
  auto* ve = app.add_subcommand("verify", "score a forecast file");
  CommonOpts ve_co;
  add_common(ve, ve_co);
  std::string ve_forecasts, ve_archive, ve_manifest, ve_name = "method";
  ve->add_option("--forecasts", ve_forecasts, "forecasts CSV")->required();
  ve->add_option("--archive", ve_archive, "archive CSV (for the raw-ensemble reference)")
      ->envname("GUSTPOST_ARCHIVE");
  ve->add_option("--manifest", ve_manifest, "manifest JSON");
  ve->add_option("--name", ve_name, "method label in reports");

  // scorecard
  auto* scd = app.add_subcommand("scorecard", "multi-method score card");
  CommonOpts sc_co;
  add_common(scd, sc_co);
  std::vector<std::string> sc_sources;
  std::string sc_reference;
  double sc_threshold = 25.0;
  scd->add_option("--forecasts", sc_sources, "NAME=PATH forecast files")->required();
  scd->add_option("--reference", sc_reference, "reference method name")->required();
  scd->add_option("--threshold", sc_threshold, "threshold (kt)");

  // experiment
  auto* ex = app.add_subcommand("experiment", "pipeline presets");
  CommonOpts ex_co;
  add_common(ex, ex_co);
  std::string preset;
  ExpOpts eo;
  ex->add_option("preset", preset, "persistence|era|joint|thresholds")
      ->required()
      ->check(CLI::IsMember({"persistence", "era", "joint", "thresholds"}));
  ex->add_option("--stations", eo.stations, "station count");
  ex->add_option("--days", eo.days, "archive length in days");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (gen->parsed()) {
      if (!leads_spec.empty()) sc.lead_times = parse_int_list(leads_spec);
      if (!runs_spec.empty()) sc.runs = parse_int_list(runs_spec);
      return cmd_generate(gen_co, sc, era_specs);
    }
    if (tr->parsed()) return cmd_train(tr_co, to);
    if (pr->parsed()) {
      if (pr_method == "model" && pr_model.empty())
        throw CLI::ValidationError("--model", "required unless --method ensemble");
      return cmd_predict(pr_co, pr_archive, pr_manifest, pr_model, pr_method,
                         pr_lead, pr_run);
    }
    if (ve->parsed()) return cmd_verify(ve_co, ve_forecasts, ve_archive, ve_manifest,
                                        ve_name);
    if (scd->parsed()) return cmd_scorecard(sc_co, sc_sources, sc_reference,
                                            sc_threshold);
    if (ex->parsed()) return cmd_experiment(ex_co, preset, eo);
  } catch (const CLI::ValidationError& e) {
    std::cerr << "{\"error\":\"" << e.what() << "\"}\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "{\"error\":\"" << e.what() << "\"}\n";
    return 1;
  }
  (void)co;
  return 0;
}
