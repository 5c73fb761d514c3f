#include "gustpost/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <stdexcept>

namespace gustpost {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

double sample_tlogis(std::mt19937_64& rng, double loc, double scale, double lb) {
  // Inverse-CDF on the renormalized tail above lb; tlogis_quantile stays
  // finite even when nearly all mass sits below the bound.
  std::uniform_real_distribution<double> u(1e-12, 1.0 - 1e-12);
  return tlogis_quantile(TruncatedLogistic(loc, scale, lb), u(rng));
}

std::vector<int> default_leads() {
  std::vector<int> leads;
  for (int h = 3; h <= 21; ++h) leads.push_back(h);
  return leads;
}

}  // namespace

GeneratedArchive generate_archive(const ScenarioConfig& config_in) {
  ScenarioConfig config = config_in;
  if (config.n_days < 1 || config.n_stations < 1)
    throw std::invalid_argument("scenario span and station count must be positive");
  if (!(config.ar1 >= 0.0 && config.ar1 < 1.0))
    throw std::invalid_argument("ar1 coefficient must lie in [0,1)");
  if (config.lead_times.empty()) config.lead_times = default_leads();
  if (config.eras.empty())
    config.eras.push_back({"base", config.start_time, 0.0, 1.0});
  for (const auto& e : config.eras)
    if (!(e.dispersion > 0.0))
      throw std::invalid_argument("era dispersion must be > 0");

  ArchiveManifest manifest;
  manifest.ensemble_size = config.ensemble_size;
  manifest.lead_times = config.lead_times;
  manifest.runs = config.runs;
  manifest.thresholds = config.thresholds;
  manifest.predictor_names = {"syn1"};
  for (const auto& e : config.eras)
    manifest.eras.push_back({e.name, e.start, e.name});
  manifest.eras[0].flag_name.clear();

  std::mt19937_64 seeder(config.seed);
  std::vector<std::uint64_t> sub_seeds(config.n_stations);
  for (auto& s : sub_seeds) s = seeder();

  const int max_lead =
      *std::max_element(config.lead_times.begin(), config.lead_times.end());
  const int max_run = *std::max_element(config.runs.begin(), config.runs.end());
  const int n_hours = config.n_days * 24 + max_run + max_lead + 1;
  const int n_syn_days = (config.n_days * 24 + max_run + max_lead) / 24 + 2;

  GeneratedArchive ga;
  ga.true_scale = config.obs_scale;
  ga.thresholds = config.thresholds;
  std::vector<ForecastCase> cases;

  auto era_of = [&](std::int64_t init) {
    std::size_t e = 0;
    for (std::size_t i = 0; i < config.eras.size(); ++i)
      if (init >= config.eras[i].start) e = i;
    return config.eras[e];
  };

  for (int s = 0; s < config.n_stations; ++s) {
    char sid[16];
    std::snprintf(sid, sizeof(sid), "S%03d", s + 1);
    std::mt19937_64 rng(sub_seeds[s]);
    std::uniform_real_distribution<double> ub(config.base_mean_lo,
                                              config.base_mean_hi);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const double base = ub(rng);

    Station st;
    st.id = sid;
    st.latitude = 47.0 + 8.0 * (s % 17) / 17.0;
    st.longitude = 6.0 + 9.0 * (s % 13) / 13.0;
    st.height = 20.0 + 60.0 * (s % 11);
    st.embedding_index = s;
    manifest.stations.push_back(st);

    std::vector<double> synoptic(n_syn_days);
    for (auto& d : synoptic) d = config.synoptic_sd * gauss(rng);

    std::vector<double> hourly(n_hours), extra(n_hours), loc(n_hours),
        obs(n_hours);
    double u_prev = config.hourly_sd * gauss(rng);
    const double innov_sd =
        config.hourly_sd * std::sqrt(1.0 - config.ar1 * config.ar1);
    for (int t = 0; t < n_hours; ++t) {
      const double u = (t == 0) ? u_prev
                                : config.ar1 * hourly[t - 1] + innov_sd * gauss(rng);
      hourly[t] = u;
      extra[t] = gauss(rng);
      const int hour_of_day = t % 24;
      loc[t] = base +
               config.diurnal_amplitude *
                   std::sin(kTwoPi * (hour_of_day - 9) / 24.0) +
               synoptic[t / 24] + hourly[t] + config.extra_effect * extra[t];
      obs[t] = sample_tlogis(rng, loc[t], config.obs_scale, 0.0);
    }

    for (int day = 0; day < config.n_days; ++day) {
      for (int run : config.runs) {
        const int t_init = day * 24 + run;
        const std::int64_t init_time = config.start_time + 3600LL * t_init;
        const EraScenario era = era_of(init_time);
        for (int lead : config.lead_times) {
          const int t = t_init + lead;
          ForecastCase c;
          c.station_id = sid;
          c.init_time = init_time;
          c.lead_h = lead;
          const double known = loc[t] - hourly[t] -
                               config.extra_effect * extra[t];
          c.ensemble.resize(config.ensemble_size);
          for (auto& m : c.ensemble)
            m = std::max(0.0, known + era.bias +
                                  era.dispersion * config.member_noise_sd *
                                      gauss(rng));
          c.extra = {extra[t]};
          c.persistence = {{obs[t_init], obs[t_init + 1], obs[t_init + 2]}};
          c.observation = obs[t];

          std::vector<double> probs(config.thresholds.size());
          const TruncatedLogistic truth(loc[t], config.obs_scale, 0.0);
          for (std::size_t k = 0; k < probs.size(); ++k)
            probs[k] = 1.0 - tlogis_cdf(truth, config.thresholds[k]);
          ga.truth_probs.push_back(std::move(probs));
          ga.true_location.push_back(loc[t]);
          cases.push_back(std::move(c));
        }
      }
    }
  }

  ga.dataset = Dataset(std::move(manifest), std::move(cases));
  return ga;
}

void write_generated(const GeneratedArchive& ga, const std::string& outdir) {
  std::filesystem::create_directories(outdir);
  const auto dir = std::filesystem::path(outdir);
  write_archive((dir / "archive.csv").string(), ga.dataset);
  ga.dataset.manifest().save((dir / "manifest.json").string());

  std::ofstream out(dir / "truth.csv");
  if (!out) throw std::runtime_error("cannot write truth table");
  out << "station_id,init_time,lead_h,true_location,true_scale";
  for (double t : ga.thresholds) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), ",p_gt_%g", t);
    out << buf;
  }
  out << "\n";
  for (std::size_t i = 0; i < ga.dataset.size(); ++i) {
    const auto& c = ga.dataset[i];
    char buf[64];
    out << c.station_id << "," << c.init_time << "," << c.lead_h;
    std::snprintf(buf, sizeof(buf), ",%.12g,%.12g", ga.true_location[i],
                  ga.true_scale);
    out << buf;
    for (double p : ga.truth_probs[i]) {
      std::snprintf(buf, sizeof(buf), ",%.12g", p);
      out << buf;
    }
    out << "\n";
  }
}

GeneratedArchive load_generated(const std::string& archive_csv,
                                const std::string& manifest_path,
                                const std::string& truth_csv) {
  GeneratedArchive ga;
  const auto manifest = ArchiveManifest::load(manifest_path);
  ga.dataset = load_archive(archive_csv, manifest);
  ga.thresholds = manifest.thresholds;

  std::ifstream in(truth_csv);
  if (!in) throw std::runtime_error("cannot read truth table: " + truth_csv);
  std::string line;
  std::getline(in, line);  // header
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::string cur;
    for (char ch : line) {
      if (ch == ',') {
        f.push_back(cur);
        cur.clear();
      } else if (ch != '\r') {
        cur.push_back(ch);
      }
    }
    f.push_back(cur);
    if (row >= ga.dataset.size())
      throw std::runtime_error("truth table longer than archive");
    const auto& c = ga.dataset[row];
    if (f[0] != c.station_id || std::stoll(f[1]) != c.init_time ||
        std::stoi(f[2]) != c.lead_h)
      throw std::runtime_error("truth table key mismatch at row " +
                               std::to_string(row + 2));
    ga.true_location.push_back(std::stod(f[3]));
    ga.true_scale = std::stod(f[4]);
    std::vector<double> probs;
    for (std::size_t k = 5; k < f.size(); ++k) probs.push_back(std::stod(f[k]));
    if (probs.size() != ga.thresholds.size())
      throw std::runtime_error("truth table threshold count mismatch");
    ga.truth_probs.push_back(std::move(probs));
    ++row;
  }
  if (row != ga.dataset.size())
    throw std::runtime_error("truth table shorter than archive");
  return ga;
}

BayesScores bayes_scores(const GeneratedArchive& ga) {
  BayesScores out;
  std::map<int, std::vector<std::size_t>> by_lead;
  for (std::size_t i = 0; i < ga.dataset.size(); ++i)
    by_lead[ga.dataset[i].lead_h].push_back(i);

  for (const auto& [lead, idx] : by_lead) {
    std::vector<double> bs(ga.thresholds.size(), 0.0);
    double crps = 0.0;
    std::size_t n_obs = 0;
    for (auto i : idx) {
      const auto& c = ga.dataset[i];
      if (!c.observation) continue;
      ++n_obs;
      for (std::size_t k = 0; k < ga.thresholds.size(); ++k) {
        const double o = (*c.observation > ga.thresholds[k]) ? 1.0 : 0.0;
        const double d = ga.truth_probs[i][k] - o;
        bs[k] += d * d;
      }
      crps += crps_tlogis(TruncatedLogistic(ga.true_location[i], ga.true_scale, 0.0),
                          *c.observation);
    }
    if (n_obs == 0) continue;
    for (auto& v : bs) v /= static_cast<double>(n_obs);
    out.bs_by_lead[lead] = std::move(bs);
    out.crps_by_lead[lead] = crps / static_cast<double>(n_obs);
  }
  return out;
}

}  // namespace gustpost
