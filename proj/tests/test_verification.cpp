#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include "gustpost/verification.hpp"

using namespace gustpost;

namespace {

struct Oracle {
  double rel = 0.0, res = 0.0, unc = 0.0;
};

// Independent two-pass recomputation of the three decomposition sums.
Oracle oracle_decomposition(const std::vector<double>& f, const std::vector<int>& o,
                            std::size_t nbins) {
  const std::size_t n = f.size();
  double obar = 0.0;
  for (int v : o) obar += v;
  obar /= static_cast<double>(n);
  Oracle out;
  out.unc = obar * (1.0 - obar);
  for (std::size_t b = 0; b < nbins; ++b) {
    double fs = 0.0, os = 0.0;
    std::size_t nb = 0;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t bi = static_cast<std::size_t>(f[i] * nbins);
      if (bi >= nbins) bi = nbins - 1;
      if (bi != b) continue;
      fs += f[i];
      os += o[i];
      ++nb;
    }
    if (nb == 0) continue;
    const double fb = fs / nb, ob = os / nb;
    out.rel += nb * (fb - ob) * (fb - ob);
    out.res += nb * (ob - obar) * (ob - obar);
  }
  out.rel /= static_cast<double>(n);
  out.res /= static_cast<double>(n);
  return out;
}

void random_set(std::mt19937_64& rng, std::size_t n, std::vector<double>* f,
                std::vector<int>* o) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  f->resize(n);
  o->resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    (*f)[i] = u(rng);
    // outcomes correlated with forecasts so res is nontrivial
    (*o)[i] = (u(rng) < 0.3 + 0.4 * (*f)[i]) ? 1 : 0;
  }
}

}  // namespace

TEST_CASE("brier score hand examples") {
  CHECK(brier_score({0.0, 1.0, 1.0}, {0, 1, 1}) == 0.0);
  CHECK(brier_score({0.5, 0.5, 0.5, 0.5}, {0, 1, 1, 0}) == doctest::Approx(0.25));
  CHECK(brier_score({0.1, 0.8, 0.3}, {0, 1, 1}) == doctest::Approx(0.18));
}

TEST_CASE("brier score input validation") {
  CHECK_THROWS(brier_score({0.5}, {0, 1}));
  CHECK_THROWS(brier_score({}, {}));
  CHECK_THROWS(brier_score({1.5}, {1}));
  CHECK_THROWS(brier_score({0.5}, {2}));
}

TEST_CASE("bin assignment is left-closed with a closed last bin") {
  CHECK(bin_index(0.0, 10) == 0);
  CHECK(bin_index(0.05, 10) == 0);
  CHECK(bin_index(0.1, 10) == 1);
  CHECK(bin_index(0.9999, 10) == 9);
  CHECK(bin_index(1.0, 10) == 9);
}

TEST_CASE("constant climatological forecast: rel 0, res 0, bs = unc") {
  std::vector<int> o;
  for (int i = 0; i < 100; ++i) o.push_back(i < 30 ? 1 : 0);
  std::vector<double> f(o.size(), 0.3);
  const auto r = brier_decomposition(f, o);
  CHECK(r.rel == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(r.res == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(r.bs == doctest::Approx(r.unc));
  CHECK(r.unc == doctest::Approx(0.21));
}

TEST_CASE("perfect sharp forecast: rel 0, res = unc, bs 0") {
  std::vector<int> o = {1, 0, 1, 1, 0, 0, 1, 0};
  std::vector<double> f;
  for (int v : o) f.push_back(static_cast<double>(v));
  const auto r = brier_decomposition(f, o);
  CHECK(r.bs == doctest::Approx(0.0));
  CHECK(r.rel == doctest::Approx(0.0));
  CHECK(r.res == doctest::Approx(r.unc));
}

TEST_CASE("decomposition matches an independent two-pass oracle") {
  std::mt19937_64 rng(11);
  std::vector<double> f;
  std::vector<int> o;
  random_set(rng, 500, &f, &o);
  const auto r = brier_decomposition(f, o);
  const auto want = oracle_decomposition(f, o, 10);
  CHECK(r.rel == doctest::Approx(want.rel).epsilon(1e-12));
  CHECK(r.res == doctest::Approx(want.res).epsilon(1e-12));
  CHECK(r.unc == doctest::Approx(want.unc).epsilon(1e-12));
}

TEST_CASE("identity and bounds hold on 1000 random sets") {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<std::size_t> size(5, 400);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> f;
    std::vector<int> o;
    random_set(rng, size(rng), &f, &o);
    const auto r = brier_decomposition(f, o);

    // bin-mean identity: rel - res + unc equals the BS of bin-mean forecasts
    std::vector<double> fbin(f.size());
    for (std::size_t i = 0; i < f.size(); ++i) {
      const auto b = bin_index(f[i], 10);
      fbin[i] = r.bins.mean_forecast[b];
    }
    CHECK(std::fabs(r.bin_mean_bs() - brier_score(fbin, o)) <= 1e-12);
    CHECK(std::fabs(r.bs - (r.rel - r.res + r.unc) - r.within_bin_residual) <=
          1e-12);
    CHECK(r.rel >= 0.0);
    CHECK(r.res >= 0.0);
    CHECK(r.res <= r.unc + 1e-12);
    CHECK(r.unc <= 0.25 + 1e-12);
  }
}

TEST_CASE("all-identical outcomes flag the report as low information") {
  const auto r = brier_decomposition({0.2, 0.4, 0.9}, {0, 0, 0});
  CHECK(r.low_information);
  CHECK(r.unc == 0.0);
  CHECK(r.res == 0.0);
}

TEST_CASE("brier skill score arithmetic") {
  CHECK(*brier_skill(0.1, 0.2) == doctest::Approx(0.5));
  CHECK(*brier_skill(0.2, 0.2) == doctest::Approx(0.0));
  CHECK(*brier_skill(0.0, 0.2) == doctest::Approx(1.0));
  CHECK(*brier_skill(0.0, 0.0) == doctest::Approx(0.0));  // perfect self-reference
  CHECK(!brier_skill(0.1, 0.0).has_value());
}

TEST_CASE("resolution skill arithmetic") {
  CHECK(*resolution_skill(0.03, 0.03, 0.09) == doctest::Approx(0.0));
  CHECK(*resolution_skill(0.09, 0.03, 0.09) == doctest::Approx(1.0));
  CHECK(*resolution_skill(0.06, 0.03, 0.09) == doctest::Approx(0.5));
  CHECK(!resolution_skill(0.05, 0.09, 0.09).has_value());
}

TEST_CASE("skill scores are invariant to case order") {
  std::mt19937_64 rng(5);
  std::vector<double> f;
  std::vector<int> o;
  random_set(rng, 300, &f, &o);
  const double bs1 = brier_score(f, o);
  std::vector<std::size_t> perm(f.size());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<double> f2;
  std::vector<int> o2;
  for (auto i : perm) {
    f2.push_back(f[i]);
    o2.push_back(o[i]);
  }
  CHECK(brier_score(f2, o2) == doctest::Approx(bs1).epsilon(1e-14));
  const auto r1 = brier_decomposition(f, o);
  const auto r2 = brier_decomposition(f2, o2);
  CHECK(r1.rel == doctest::Approx(r2.rel).epsilon(1e-12));
  CHECK(r1.res == doctest::Approx(r2.res).epsilon(1e-12));
}

TEST_CASE("sharpness histogram") {
  CHECK(sharpness_histogram({0.0, 0.0, 0.0}, 10) ==
        std::vector<std::size_t>{3, 0, 0, 0, 0, 0, 0, 0, 0, 0});
  // one forecast per bin
  std::vector<double> grid;
  for (int b = 0; b < 10; ++b) grid.push_back(b / 10.0 + 0.05);
  const auto counts = sharpness_histogram(grid, 10);
  for (auto c : counts) CHECK(c == 1);
  // random sample vs sort-and-count oracle
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> f(1000);
  for (auto& v : f) v = u(rng);
  const auto got = sharpness_histogram(f, 10);
  std::vector<double> sorted = f;
  std::sort(sorted.begin(), sorted.end());
  std::vector<std::size_t> want(10, 0);
  std::size_t i = 0;
  for (std::size_t b = 0; b < 10; ++b) {
    const double hi = (b + 1) / 10.0;
    while (i < sorted.size() && (b == 9 || sorted[i] < hi)) {
      ++want[b];
      ++i;
    }
  }
  CHECK(got == want);
}

TEST_CASE("reliability points live in the unit square; skill region rule") {
  std::mt19937_64 rng(23);
  std::vector<double> f;
  std::vector<int> o;
  random_set(rng, 2000, &f, &o);
  const auto r = brier_decomposition(f, o);
  double obar = 0.0;
  for (int v : o) obar += v;
  obar /= static_cast<double>(o.size());
  for (std::size_t b = 0; b < r.bins.count.size(); ++b) {
    if (r.bins.count[b] == 0) continue;
    const double fb = r.bins.mean_forecast[b];
    const double ob = r.bins.obs_freq[b];
    CHECK(fb >= r.bins.edges[b]);
    CHECK(fb <= r.bins.edges[b + 1]);
    CHECK(ob >= 0.0);
    CHECK(ob <= 1.0);
    CHECK(r.bins.skillful[b] == ((fb - ob) * (fb - ob) < (ob - obar) * (ob - obar)));
  }
}

TEST_CASE("score card: reference vs itself is neutral, 50% improvement is green") {
  BrierReport ref;
  ref.bs = 0.2;
  ref.rel = 0.02;
  ref.res = 0.03;
  ref.unc = 0.09;
  BrierReport better = ref;
  better.bs = 0.1;   // 50% BS improvement
  better.res = 0.06;  // resolution halfway to unc
  std::map<std::string, std::map<int, BrierReport>> reports;
  reports["ref"][3] = ref;
  reports["m"][3] = better;
  const auto cells = score_card(reports, "ref");
  REQUIRE(cells.size() == 4);
  for (const auto& c : cells) {
    if (c.method == "ref") {
      CHECK(c.difference == doctest::Approx(0.0));
      CHECK(*c.skill == doctest::Approx(0.0));
      CHECK(!c.improvement);
    } else if (c.metric == CardMetric::bs) {
      CHECK(*c.skill == doctest::Approx(0.5));
      CHECK(c.improvement);
      CHECK(c.difference == doctest::Approx(0.1));
    } else {
      CHECK(*c.skill == doctest::Approx(0.5));
      CHECK(c.improvement);
    }
  }
  CHECK_THROWS(score_card(reports, "missing"));
}

TEST_CASE("score card CSV and SVG are emitted and consistent") {
  BrierReport ref;
  ref.bs = 0.2;
  ref.res = 0.03;
  ref.unc = 0.09;
  BrierReport m = ref;
  m.bs = 0.1;
  std::map<std::string, std::map<int, BrierReport>> reports;
  for (int lead : {3, 9, 15}) {
    reports["ref"][lead] = ref;
    reports["m"][lead] = m;
  }
  const auto cells = score_card(reports, "ref");
  write_score_card_csv(cells, "/tmp/gustpost_card.csv");
  write_score_card_svg(cells, "/tmp/gustpost_card.svg");

  std::ifstream csv("/tmp/gustpost_card.csv");
  std::string line;
  std::size_t rows = 0;
  std::getline(csv, line);
  CHECK(line == "method,lead,metric,difference,skill,improvement");
  while (std::getline(csv, line))
    if (!line.empty()) ++rows;
  CHECK(rows == cells.size());

  std::ifstream svg("/tmp/gustpost_card.svg");
  std::stringstream ss;
  ss << svg.rdbuf();
  const std::string body = ss.str();
  std::size_t circles = 0, pos = 0;
  while ((pos = body.find("<circle", pos)) != std::string::npos) {
    ++circles;
    ++pos;
  }
  CHECK(circles == cells.size());
}

TEST_CASE("report CSV/JSON and reliability CSV writers") {
  std::mt19937_64 rng(31);
  std::vector<double> f;
  std::vector<int> o;
  random_set(rng, 400, &f, &o);
  std::map<std::string, std::map<int, BrierReport>> reports;
  reports["m"][3] = brier_decomposition(f, o);
  write_report_csv(reports, "/tmp/gustpost_rep.csv");
  write_report_json(reports, "/tmp/gustpost_rep.json");
  write_reliability_csv(reports["m"][3].bins, "/tmp/gustpost_rel.csv");
  std::ifstream a("/tmp/gustpost_rep.csv"), b("/tmp/gustpost_rep.json"),
      c("/tmp/gustpost_rel.csv");
  CHECK(a.good());
  CHECK(b.good());
  CHECK(c.good());
  std::string line;
  std::getline(c, line);
  std::size_t bins = 0;
  while (std::getline(c, line))
    if (!line.empty()) ++bins;
  CHECK(bins == 10);
}

TEST_CASE("block bootstrap: constant values collapse, deterministic per seed") {
  std::vector<double> v(200, 0.4);
  std::vector<std::int64_t> days;
  for (int i = 0; i < 200; ++i) days.push_back(i / 10);
  const auto ci = block_bootstrap_mean(v, days, 300, 0.95, 9);
  CHECK(ci.mean == doctest::Approx(0.4));
  CHECK(ci.lo == doctest::Approx(0.4));
  CHECK(ci.hi == doctest::Approx(0.4));

  std::mt19937_64 rng(13);
  std::normal_distribution<double> g(1.0, 2.0);
  for (auto& x : v) x = g(rng);
  const auto c1 = block_bootstrap_mean(v, days, 500, 0.95, 21);
  const auto c2 = block_bootstrap_mean(v, days, 500, 0.95, 21);
  CHECK(c1.lo == c2.lo);
  CHECK(c1.hi == c2.hi);
  CHECK(c1.lo <= c1.mean);
  CHECK(c1.mean <= c1.hi);
  CHECK_THROWS(block_bootstrap_mean({}, {}, 10, 0.95, 1));
}
