#include "gustpost/verification.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <random>
#include <stdexcept>

#include <json.hpp>

namespace gustpost {

namespace {

void check_inputs(const std::vector<double>& forecasts,
                  const std::vector<int>& outcomes) {
  if (forecasts.size() != outcomes.size())
    throw std::invalid_argument("forecast/outcome length mismatch");
  if (forecasts.empty()) throw std::invalid_argument("empty verification set");
  for (double f : forecasts)
    if (!(f >= 0.0 && f <= 1.0))
      throw std::invalid_argument("forecast probability outside [0,1]");
  for (int o : outcomes)
    if (o != 0 && o != 1)
      throw std::invalid_argument("outcome must be binary");
}

}  // namespace

std::size_t bin_index(double forecast, std::size_t nbins) {
  const auto b = static_cast<std::size_t>(forecast * static_cast<double>(nbins));
  return std::min(b, nbins - 1);
}

double brier_score(const std::vector<double>& forecasts,
                   const std::vector<int>& outcomes) {
  check_inputs(forecasts, outcomes);
  double s = 0.0;
  for (std::size_t i = 0; i < forecasts.size(); ++i) {
    const double d = forecasts[i] - outcomes[i];
    s += d * d;
  }
  return s / static_cast<double>(forecasts.size());
}

BrierReport brier_decomposition(const std::vector<double>& forecasts,
                                const std::vector<int>& outcomes,
                                std::size_t nbins) {
  check_inputs(forecasts, outcomes);
  if (nbins < 1) throw std::invalid_argument("need at least one bin");
  const std::size_t n = forecasts.size();

  BinnedReliability bins;
  bins.edges.resize(nbins + 1);
  for (std::size_t b = 0; b <= nbins; ++b)
    bins.edges[b] = static_cast<double>(b) / static_cast<double>(nbins);
  bins.count.assign(nbins, 0);
  std::vector<double> fsum(nbins, 0.0), osum(nbins, 0.0);
  double obar = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t b = bin_index(forecasts[i], nbins);
    ++bins.count[b];
    fsum[b] += forecasts[i];
    osum[b] += outcomes[i];
    obar += outcomes[i];
  }
  obar /= static_cast<double>(n);

  BrierReport rep;
  rep.n = n;
  rep.bs = brier_score(forecasts, outcomes);
  rep.unc = obar * (1.0 - obar);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (std::size_t b = 0; b < nbins; ++b) {
    if (bins.count[b] == 0) {
      bins.mean_forecast.push_back(nan);
      bins.obs_freq.push_back(nan);
      bins.skillful.push_back(false);
      continue;
    }
    const double nb = static_cast<double>(bins.count[b]);
    const double fb = fsum[b] / nb;
    const double ob = osum[b] / nb;
    bins.mean_forecast.push_back(fb);
    bins.obs_freq.push_back(ob);
    rep.rel += nb * (fb - ob) * (fb - ob);
    rep.res += nb * (ob - obar) * (ob - obar);
    // Positive-skill region: the bin point lies on the diagonal side of the
    // line halfway between the diagonal and the climatology horizontal.
    bins.skillful.push_back((fb - ob) * (fb - ob) < (ob - obar) * (ob - obar));
  }
  rep.rel /= static_cast<double>(n);
  rep.res /= static_cast<double>(n);
  rep.within_bin_residual = rep.bs - (rep.rel - rep.res + rep.unc);
  rep.low_information = (obar == 0.0 || obar == 1.0);
  rep.bins = std::move(bins);
  return rep;
}

std::optional<double> brier_skill(double bs, double bs_ref) {
  if (bs_ref == 0.0) {
    if (bs == 0.0) return 0.0;  // self-reference of a perfect forecast
    return std::nullopt;
  }
  return (bs_ref - bs) / bs_ref;
}

std::optional<double> resolution_skill(double res, double res_ref, double unc) {
  if (res_ref == unc) return std::nullopt;
  return (res_ref - res) / (res_ref - unc);
}

std::vector<std::size_t> sharpness_histogram(const std::vector<double>& forecasts,
                                             std::size_t nbins) {
  if (nbins < 1) throw std::invalid_argument("need at least one bin");
  std::vector<std::size_t> counts(nbins, 0);
  for (double f : forecasts) {
    if (!(f >= 0.0 && f <= 1.0))
      throw std::invalid_argument("forecast probability outside [0,1]");
    ++counts[bin_index(f, nbins)];
  }
  return counts;
}

std::vector<ScoreCardCell> score_card(
    const std::map<std::string, std::map<int, BrierReport>>& reports,
    const std::string& reference_method) {
  auto ref_it = reports.find(reference_method);
  if (ref_it == reports.end())
    throw std::invalid_argument("reference method missing from reports: " +
                                reference_method);
  std::vector<ScoreCardCell> cells;
  for (const auto& [method, by_lead] : reports) {
    for (const auto& [lead, rep] : by_lead) {
      auto lr = ref_it->second.find(lead);
      if (lr == ref_it->second.end())
        throw std::invalid_argument("reference has no report for lead " +
                                    std::to_string(lead));
      const BrierReport& ref = lr->second;

      ScoreCardCell bs_cell;
      bs_cell.method = method;
      bs_cell.lead = lead;
      bs_cell.metric = CardMetric::bs;
      bs_cell.difference = ref.bs - rep.bs;
      bs_cell.skill = brier_skill(rep.bs, ref.bs);
      bs_cell.improvement = bs_cell.skill && *bs_cell.skill > 0.0;
      cells.push_back(bs_cell);

      ScoreCardCell res_cell;
      res_cell.method = method;
      res_cell.lead = lead;
      res_cell.metric = CardMetric::res;
      res_cell.difference = rep.res - ref.res;  // resolution is positively oriented
      res_cell.skill = resolution_skill(rep.res, ref.res, ref.unc);
      res_cell.improvement = res_cell.skill && *res_cell.skill > 0.0;
      cells.push_back(res_cell);
    }
  }
  return cells;
}

void write_score_card_csv(const std::vector<ScoreCardCell>& cells,
                          const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write score card csv: " + path);
  out << "method,lead,metric,difference,skill,improvement\n";
  for (const auto& c : cells) {
    out << c.method << "," << c.lead << ","
        << (c.metric == CardMetric::bs ? "bs" : "res") << ",";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.10g", c.difference);
    out << buf << ",";
    if (c.skill) {
      std::snprintf(buf, sizeof(buf), "%.10g", *c.skill);
      out << buf;
    } else {
      out << "undefined";
    }
    out << "," << (c.improvement ? 1 : 0) << "\n";
  }
}

namespace {

std::string skill_color(const std::optional<double>& skill) {
  if (!skill) return "#999999";
  const double s = std::clamp(*skill, -1.0, 1.0);
  // green for improvement, red for degradation, intensity by |skill|
  const int strength = static_cast<int>(std::lround(155.0 * std::fabs(s))) + 100;
  char buf[16];
  if (s > 0.0)
    std::snprintf(buf, sizeof(buf), "#00%02x00", strength);
  else if (s < 0.0)
    std::snprintf(buf, sizeof(buf), "#%02x0000", strength);
  else
    return "#888888";
  return buf;
}

}  // namespace

void write_score_card_svg(const std::vector<ScoreCardCell>& cells,
                          const std::string& path) {
  std::vector<std::string> methods;
  std::vector<int> leads;
  double max_diff = 0.0;
  for (const auto& c : cells) {
    if (std::find(methods.begin(), methods.end(), c.method) == methods.end())
      methods.push_back(c.method);
    if (std::find(leads.begin(), leads.end(), c.lead) == leads.end())
      leads.push_back(c.lead);
    max_diff = std::max(max_diff, std::fabs(c.difference));
  }
  std::sort(leads.begin(), leads.end());
  std::sort(methods.begin(), methods.end());
  const double cell_w = 34.0, cell_h = 30.0, left = 140.0, top = 40.0;
  const double rows = static_cast<double>(methods.size()) * 2.0;
  const double width = left + cell_w * static_cast<double>(leads.size()) + 20.0;
  const double height = top + cell_h * rows + 20.0;

  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write score card svg: " + path);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
      << "\" height=\"" << height << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (std::size_t l = 0; l < leads.size(); ++l)
    out << "<text x=\"" << left + cell_w * (l + 0.5) << "\" y=\"" << top - 12.0
        << "\" font-size=\"11\" text-anchor=\"middle\">" << leads[l]
        << "h</text>\n";
  for (const auto& c : cells) {
    const auto mi = static_cast<double>(
        std::find(methods.begin(), methods.end(), c.method) - methods.begin());
    const auto li = static_cast<double>(
        std::find(leads.begin(), leads.end(), c.lead) - leads.begin());
    const double row = mi * 2.0 + (c.metric == CardMetric::bs ? 0.0 : 1.0);
    const double cx = left + cell_w * (li + 0.5);
    const double cy = top + cell_h * (row + 0.5);
    const double r =
        max_diff > 0.0
            ? std::max(1.5, 12.0 * std::sqrt(std::fabs(c.difference) / max_diff))
            : 1.5;
    if (li == 0.0)
      out << "<text x=\"8\" y=\"" << cy + 4.0 << "\" font-size=\"11\">"
          << c.method << " (" << (c.metric == CardMetric::bs ? "BS" : "Res")
          << ")</text>\n";
    out << "<circle cx=\"" << cx << "\" cy=\"" << cy << "\" r=\"" << r
        << "\" fill=\"" << skill_color(c.skill) << "\"/>\n";
  }
  out << "</svg>\n";
}

void write_report_csv(const std::map<std::string, std::map<int, BrierReport>>& reports,
                      const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write report csv: " + path);
  out << "method,lead,n,bs,rel,res,unc,within_bin_residual,low_information\n";
  char buf[256];
  for (const auto& [method, by_lead] : reports)
    for (const auto& [lead, r] : by_lead) {
      std::snprintf(buf, sizeof(buf), "%s,%d,%zu,%.10g,%.10g,%.10g,%.10g,%.10g,%d\n",
                    method.c_str(), lead, r.n, r.bs, r.rel, r.res, r.unc,
                    r.within_bin_residual, r.low_information ? 1 : 0);
      out << buf;
    }
}

void write_report_json(const std::map<std::string, std::map<int, BrierReport>>& reports,
                       const std::string& path) {
  nlohmann::json j;
  for (const auto& [method, by_lead] : reports) {
    for (const auto& [lead, r] : by_lead) {
      nlohmann::json e;
      e["n"] = r.n;
      e["bs"] = r.bs;
      e["rel"] = r.rel;
      e["res"] = r.res;
      e["unc"] = r.unc;
      e["within_bin_residual"] = r.within_bin_residual;
      e["low_information"] = r.low_information;
      j[method][std::to_string(lead)] = e;
    }
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write report json: " + path);
  out << j.dump(2) << "\n";
}

void write_reliability_csv(const BinnedReliability& bins, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write reliability csv: " + path);
  out << "bin_lo,bin_hi,count,mean_forecast,obs_freq,skillful\n";
  char buf[160];
  for (std::size_t b = 0; b + 1 < bins.edges.size(); ++b) {
    std::snprintf(buf, sizeof(buf), "%.3f,%.3f,%zu,%.10g,%.10g,%d\n",
                  bins.edges[b], bins.edges[b + 1], bins.count[b],
                  bins.mean_forecast[b], bins.obs_freq[b],
                  bins.skillful[b] ? 1 : 0);
    out << buf;
  }
}

BootstrapCI block_bootstrap_mean(const std::vector<double>& values,
                                 const std::vector<std::int64_t>& block_ids,
                                 int resamples, double level,
                                 std::uint64_t seed) {
  if (values.size() != block_ids.size() || values.empty())
    throw std::invalid_argument("bootstrap input size mismatch or empty");
  std::map<std::int64_t, std::pair<double, std::size_t>> blocks;
  for (std::size_t i = 0; i < values.size(); ++i) {
    auto& b = blocks[block_ids[i]];
    b.first += values[i];
    b.second += 1;
  }
  std::vector<std::pair<double, std::size_t>> blk(blocks.size());
  std::size_t k = 0;
  for (const auto& [id, sums] : blocks) blk[k++] = sums;

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, blk.size() - 1);
  std::vector<double> means;
  means.reserve(resamples);
  for (int r = 0; r < resamples; ++r) {
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t j = 0; j < blk.size(); ++j) {
      const auto& b = blk[pick(rng)];
      sum += b.first;
      count += b.second;
    }
    means.push_back(sum / static_cast<double>(count));
  }
  std::sort(means.begin(), means.end());
  const double alpha = (1.0 - level) / 2.0;
  const auto lo_i = static_cast<std::size_t>(alpha * (resamples - 1));
  const auto hi_i = static_cast<std::size_t>((1.0 - alpha) * (resamples - 1));
  BootstrapCI ci;
  ci.lo = means[lo_i];
  ci.hi = means[hi_i];
  double total = 0.0;
  std::size_t tn = 0;
  for (const auto& b : blk) {
    total += b.first;
    tn += b.second;
  }
  ci.mean = total / static_cast<double>(tn);
  return ci;
}

}  // namespace gustpost
