#include "gustpost/domain.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace gustpost {

using nlohmann::json;

double ForecastCase::ensemble_mean() const {
  if (ensemble.empty()) return 0.0;
  return std::accumulate(ensemble.begin(), ensemble.end(), 0.0) /
         static_cast<double>(ensemble.size());
}

double ForecastCase::ensemble_sd() const {
  if (ensemble.size() < 2) return 0.0;
  const double m = ensemble_mean();
  double ss = 0.0;
  for (double v : ensemble) ss += (v - m) * (v - m);
  return std::sqrt(ss / static_cast<double>(ensemble.size()));
}

int ArchiveManifest::station_index(const std::string& id) const {
  for (std::size_t i = 0; i < stations.size(); ++i)
    if (stations[i].id == id) return static_cast<int>(i);
  return -1;
}

std::vector<int> ArchiveManifest::era_flags(std::int64_t init_time) const {
  std::vector<int> flags;
  for (std::size_t e = 1; e < eras.size(); ++e)
    flags.push_back(init_time >= eras[e].start ? 1 : 0);
  return flags;
}

std::vector<std::string> ArchiveManifest::era_flag_names() const {
  std::vector<std::string> names;
  for (std::size_t e = 1; e < eras.size(); ++e)
    names.push_back(eras[e].flag_name.empty() ? eras[e].name : eras[e].flag_name);
  return names;
}

void ArchiveManifest::save(const std::string& path) const {
  json j;
  j["version"] = 1;
  j["units"] = units;
  j["ensemble_size"] = ensemble_size;
  j["lead_times"] = lead_times;
  j["runs"] = runs;
  j["thresholds"] = thresholds;
  j["predictors"] = predictor_names;
  j["stations"] = json::array();
  for (const auto& s : stations)
    j["stations"].push_back({{"id", s.id},
                             {"lat", s.latitude},
                             {"lon", s.longitude},
                             {"height", s.height}});
  j["eras"] = json::array();
  for (const auto& e : eras)
    j["eras"].push_back({{"name", e.name}, {"start", e.start}, {"flag", e.flag_name}});
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write manifest: " + path);
  out << j.dump(2) << "\n";
}

ArchiveManifest ArchiveManifest::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read manifest: " + path);
  json j;
  in >> j;
  ArchiveManifest m;
  m.units = j.value("units", std::string("kt"));
  m.ensemble_size = j.value("ensemble_size", 20);
  m.lead_times = j.value("lead_times", std::vector<int>{});
  m.runs = j.value("runs", std::vector<int>{});
  m.thresholds = j.value("thresholds", std::vector<double>{});
  m.predictor_names = j.value("predictors", std::vector<std::string>{});
  int idx = 0;
  for (const auto& s : j.at("stations")) {
    Station st;
    st.id = s.at("id").get<std::string>();
    st.latitude = s.value("lat", 0.0);
    st.longitude = s.value("lon", 0.0);
    st.height = s.value("height", 0.0);
    st.embedding_index = idx++;
    m.stations.push_back(std::move(st));
  }
  for (const auto& e : j.at("eras")) {
    ModelEra era;
    era.name = e.at("name").get<std::string>();
    era.start = e.at("start").get<std::int64_t>();
    era.flag_name = e.value("flag", std::string());
    m.eras.push_back(std::move(era));
  }
  std::set<std::string> ids;
  for (const auto& s : m.stations)
    if (!ids.insert(s.id).second)
      throw std::runtime_error("duplicate station id in manifest: " + s.id);
  for (std::size_t e = 1; e < m.eras.size(); ++e)
    if (m.eras[e].start <= m.eras[e - 1].start)
      throw std::runtime_error("manifest eras not strictly ordered");
  return m;
}

Dataset::Dataset(ArchiveManifest manifest, std::vector<ForecastCase> cases)
    : manifest_(std::move(manifest)), cases_(std::move(cases)) {}

std::vector<std::size_t> Dataset::select(int lead, int run,
                                         const std::string& station_id) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < cases_.size(); ++i) {
    const auto& c = cases_[i];
    if (lead >= 0 && c.lead_h != lead) continue;
    if (run >= 0 && c.run_hour() != run) continue;
    if (!station_id.empty() && c.station_id != station_id) continue;
    out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> Dataset::all_indices() const {
  std::vector<std::size_t> out(cases_.size());
  std::iota(out.begin(), out.end(), std::size_t{0});
  return out;
}

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  fields.push_back(cur);
  return fields;
}

bool parse_double(const std::string& s, double* out) {
  if (s.empty()) return false;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0') return false;
  *out = v;
  return true;
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

}  // namespace

Dataset load_archive(const std::string& csv_path, const ArchiveManifest& manifest,
                     LoadDiagnostics* diag) {
  std::ifstream in(csv_path);
  if (!in) throw std::runtime_error("cannot read archive: " + csv_path);

  LoadDiagnostics local;
  LoadDiagnostics& d = diag ? *diag : local;

  std::string header;
  if (!std::getline(in, header)) throw std::runtime_error("empty archive file");
  const auto cols = split_line(header);

  std::vector<std::string> expected = {"station_id", "init_time", "lead_h", "run"};
  for (int m = 1; m <= manifest.ensemble_size; ++m) {
    char buf[8];
    std::snprintf(buf, sizeof(buf), "m%02d", m);
    expected.emplace_back(buf);
  }
  expected.insert(expected.end(), {"obs", "pers0", "pers1", "pers2"});
  for (const auto& p : manifest.predictor_names) expected.push_back(p);

  if (cols.size() != expected.size())
    throw std::runtime_error("archive has " + std::to_string(cols.size()) +
                             " columns, manifest expects " +
                             std::to_string(expected.size()));
  for (std::size_t i = 0; i < cols.size(); ++i)
    if (cols[i] != expected[i])
      throw std::runtime_error("missing or misnamed column: expected '" +
                               expected[i] + "', found '" + cols[i] + "'");

  const std::size_t n_ens = static_cast<std::size_t>(manifest.ensemble_size);
  const std::size_t i_obs = 4 + n_ens;
  const std::size_t i_pers = i_obs + 1;
  const std::size_t i_extra = i_pers + 3;

  std::vector<ForecastCase> cases;
  std::set<std::tuple<std::string, std::int64_t, int>> keys;
  std::string line;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = split_line(line);
    auto reject = [&](const std::string& why) {
      ++d.rejected;
      d.messages.push_back("row " + std::to_string(lineno) + ": " + why);
    };
    if (f.size() != expected.size()) {
      reject("field count mismatch");
      continue;
    }
    ForecastCase c;
    c.station_id = f[0];
    if (manifest.station_index(c.station_id) < 0) {
      reject("unknown station '" + c.station_id + "'");
      continue;
    }
    try {
      c.init_time = std::stoll(f[1]);
      c.lead_h = std::stoi(f[2]);
    } catch (...) {
      reject("malformed init_time/lead_h");
      continue;
    }
    int run = 0;
    try {
      run = std::stoi(f[3]);
    } catch (...) {
      reject("malformed run");
      continue;
    }
    if (run != c.run_hour()) {
      reject("run column inconsistent with init_time");
      continue;
    }
    if (!manifest.lead_times.empty() &&
        std::find(manifest.lead_times.begin(), manifest.lead_times.end(),
                  c.lead_h) == manifest.lead_times.end()) {
      reject("lead_h outside manifest grid");
      continue;
    }
    bool bad = false;
    c.ensemble.resize(n_ens);
    for (std::size_t m = 0; m < n_ens; ++m) {
      if (!parse_double(f[4 + m], &c.ensemble[m]) || c.ensemble[m] < 0.0) {
        reject("malformed or negative ensemble member m" + std::to_string(m + 1));
        bad = true;
        break;
      }
    }
    if (bad) continue;
    if (!f[i_obs].empty()) {
      double obs;
      if (!parse_double(f[i_obs], &obs) || obs < 0.0) {
        reject("malformed or negative obs");
        continue;
      }
      c.observation = obs;
    }
    const bool any_pers = !f[i_pers].empty() || !f[i_pers + 1].empty() ||
                          !f[i_pers + 2].empty();
    if (any_pers) {
      std::array<double, 3> p{};
      for (int k = 0; k < 3 && !bad; ++k) {
        if (!parse_double(f[i_pers + k], &p[k]) || p[k] < 0.0) {
          reject("malformed or negative persistence value");
          bad = true;
        }
      }
      if (bad) continue;
      c.persistence = p;
    }
    c.extra.resize(manifest.predictor_names.size());
    for (std::size_t k = 0; k < c.extra.size() && !bad; ++k) {
      if (!parse_double(f[i_extra + k], &c.extra[k])) {
        reject("malformed predictor '" + manifest.predictor_names[k] + "'");
        bad = true;
      }
    }
    if (bad) continue;
    if (!keys.insert({c.station_id, c.init_time, c.lead_h}).second) {
      reject("duplicate (station, init, lead) key");
      continue;
    }
    ++d.accepted;
    cases.push_back(std::move(c));
  }
  return Dataset(manifest, std::move(cases));
}

void write_archive(const std::string& csv_path, const Dataset& ds) {
  std::ofstream out(csv_path);
  if (!out) throw std::runtime_error("cannot write archive: " + csv_path);
  const auto& m = ds.manifest();
  out << "station_id,init_time,lead_h,run";
  for (int k = 1; k <= m.ensemble_size; ++k) {
    char buf[8];
    std::snprintf(buf, sizeof(buf), ",m%02d", k);
    out << buf;
  }
  out << ",obs,pers0,pers1,pers2";
  for (const auto& p : m.predictor_names) out << "," << p;
  out << "\n";
  for (const auto& c : ds.cases()) {
    out << c.station_id << "," << c.init_time << "," << c.lead_h << ","
        << c.run_hour();
    for (double v : c.ensemble) out << "," << fmt_double(v);
    out << ",";
    if (c.observation) out << fmt_double(*c.observation);
    for (int k = 0; k < 3; ++k) {
      out << ",";
      if (c.persistence) out << fmt_double((*c.persistence)[k]);
    }
    for (double v : c.extra) out << "," << fmt_double(v);
    out << "\n";
  }
}

Split split_train_validation(std::size_t n_cases, double fraction,
                             std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0))
    throw std::invalid_argument("split fraction must be in (0,1)");
  if (n_cases == 0) throw std::invalid_argument("cannot split an empty dataset");
  std::vector<std::size_t> idx(n_cases);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  auto n_val = static_cast<std::size_t>(
      std::llround(fraction * static_cast<double>(n_cases)));
  n_val = std::clamp<std::size_t>(n_val, 1, n_cases - 1);
  Split s;
  s.validation.assign(idx.begin(), idx.begin() + static_cast<long>(n_val));
  s.train.assign(idx.begin() + static_cast<long>(n_val), idx.end());
  std::sort(s.validation.begin(), s.validation.end());
  std::sort(s.train.begin(), s.train.end());
  return s;
}

Split split_train_validation(const Dataset& ds, double fraction,
                             std::uint64_t seed) {
  return split_train_validation(ds.size(), fraction, seed);
}

Split split_indices(const std::vector<std::size_t>& subset, double fraction,
                    std::uint64_t seed) {
  Split local = split_train_validation(subset.size(), fraction, seed);
  Split out;
  for (auto i : local.train) out.train.push_back(subset[i]);
  for (auto i : local.validation) out.validation.push_back(subset[i]);
  return out;
}

}  // namespace gustpost
