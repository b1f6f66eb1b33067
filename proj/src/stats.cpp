#include "mpco/stats.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <set>

namespace mpco {

using nlohmann::json;

double percent_improvement(double t_orig, double t_opt) {
  if (!(t_orig > 0) || !std::isfinite(t_orig)) {
    throw DomainError("original runtime must be positive");
  }
  return (t_orig - t_opt) / t_orig * 100.0;
}

namespace {

double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double sample_variance(const std::vector<double>& v, double mean) {
  if (v.size() < 2) return 0;
  double ss = 0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return ss / static_cast<double>(v.size() - 1);
}

// ways[s] = number of na-element subsets of {1..n} whose rank sum is s.
std::vector<std::uint64_t> rank_sum_counts(int n, int na) {
  const int max_sum = n * (n + 1) / 2;
  std::vector<std::vector<std::uint64_t>> ways(na + 1, std::vector<std::uint64_t>(max_sum + 1, 0));
  ways[0][0] = 1;
  for (int r = 1; r <= n; ++r) {
    for (int k = std::min(r, na); k >= 1; --k) {
      for (int s = max_sum; s >= r; --s) ways[k][s] += ways[k - 1][s - r];
    }
  }
  return ways[na];
}

}  // namespace

MannWhitney mann_whitney_u(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.empty() || b.empty()) throw DomainError("Mann-Whitney U needs two non-empty samples");
  const std::size_t na = a.size();
  const std::size_t nb = b.size();
  const std::size_t n = na + nb;

  std::vector<std::pair<double, bool>> pooled;  // value, from a
  for (double x : a) pooled.emplace_back(x, true);
  for (double x : b) pooled.emplace_back(x, false);
  std::sort(pooled.begin(), pooled.end(),
            [](const auto& l, const auto& r) { return l.first < r.first; });

  double rank_sum_a = 0;
  double tie_term = 0;  // sum of t^3 - t over tie groups
  bool ties = false;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && pooled[j].first == pooled[i].first) ++j;
    const double t = static_cast<double>(j - i);
    const double midrank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k) {
      if (pooled[k].second) rank_sum_a += midrank;
    }
    if (t > 1) {
      ties = true;
      tie_term += t * t * t - t;
    }
    i = j;
  }

  MannWhitney r;
  const double dna = static_cast<double>(na);
  const double dnb = static_cast<double>(nb);
  r.u = rank_sum_a - dna * (dna + 1) / 2.0;

  if (!ties && n <= 16) {
    r.exact = true;
    std::vector<std::uint64_t> counts = rank_sum_counts(static_cast<int>(n), static_cast<int>(na));
    const int offset = static_cast<int>(na * (na + 1) / 2);
    const int u = static_cast<int>(std::lround(r.u));
    std::uint64_t total = 0;
    std::uint64_t le = 0;
    std::uint64_t ge = 0;
    for (std::size_t s = 0; s < counts.size(); ++s) {
      if (counts[s] == 0) continue;
      const int us = static_cast<int>(s) - offset;
      total += counts[s];
      if (us <= u) le += counts[s];
      if (us >= u) ge += counts[s];
    }
    const double tail = static_cast<double>(std::min(le, ge));
    r.p = std::min(1.0, 2.0 * tail / static_cast<double>(total));
    return r;
  }

  const double mu = dna * dnb / 2.0;
  const double dn = static_cast<double>(n);
  const double var = dna * dnb / 12.0 * ((dn + 1) - tie_term / (dn * (dn - 1)));
  if (!(var > 0)) {
    r.p = 1.0;
    return r;
  }
  const double z = std::max(0.0, std::abs(r.u - mu) - 0.5) / std::sqrt(var);
  r.p = std::min(1.0, std::erfc(z / std::sqrt(2.0)));
  return r;
}

double cohens_d(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() < 2 || b.size() < 2) throw DomainError("Cohen's d needs at least 2 values per side");
  const double ma = mean_of(a);
  const double mb = mean_of(b);
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  const double pooled =
      std::sqrt(((na - 1) * sample_variance(a, ma) + (nb - 1) * sample_variance(b, mb)) /
                (na + nb - 2));
  if (pooled == 0) {
    if (ma == mb) return 0;
    return ma > mb ? std::numeric_limits<double>::infinity()
                   : -std::numeric_limits<double>::infinity();
  }
  return (ma - mb) / pooled;
}

Summary summarize(const std::vector<double>& samples) {
  if (samples.empty()) throw DomainError("cannot summarize an empty sample");
  Summary s;
  s.mean = mean_of(samples);
  s.sd = std::sqrt(sample_variance(samples, s.mean));
  return s;
}

ComparisonResult compare(const std::vector<double>& a, const std::vector<double>& b,
                         const RankOptions& options) {
  ComparisonResult c;
  MannWhitney mw = mann_whitney_u(a, b);
  c.u_statistic = mw.u;
  c.p_value = mw.p;
  if (a.size() >= 2 && b.size() >= 2) c.cohens_d = cohens_d(a, b);
  c.significant = c.p_value <= options.alpha ||
                  (c.cohens_d && std::abs(*c.cohens_d) >= options.d_threshold);
  return c;
}

std::vector<RankedApproach> rank_approaches(const std::vector<ApproachSamples>& groups,
                                            const RankOptions& options) {
  if (groups.empty()) throw DomainError("nothing to rank");
  std::set<std::string> names;
  for (const ApproachSamples& g : groups) {
    if (g.samples.empty()) throw DomainError("group '" + g.approach_name + "' is empty");
    if (!names.insert(g.approach_name).second) {
      throw DomainError("duplicate group name '" + g.approach_name + "'");
    }
  }

  std::vector<std::pair<Summary, const ApproachSamples*>> order;
  for (const ApproachSamples& g : groups) order.emplace_back(summarize(g.samples), &g);
  std::sort(order.begin(), order.end(), [](const auto& l, const auto& r) {
    if (l.first.mean != r.first.mean) return l.first.mean > r.first.mean;
    return l.second->approach_name < r.second->approach_name;
  });

  std::vector<RankedApproach> out;
  for (std::size_t i = 0; i < order.size(); ++i) {
    RankedApproach r;
    r.approach_name = order[i].second->approach_name;
    r.n = order[i].second->samples.size();
    r.mean_pi = order[i].first.mean;
    r.sd_pi = order[i].first.sd;
    if (i == 0) {
      r.rank = 1;
    } else {
      r.vs_previous = compare(order[i - 1].second->samples, order[i].second->samples, options);
      r.rank = out.back().rank + (r.vs_previous->significant ? 1 : 0);
    }
    out.push_back(std::move(r));
  }
  return out;
}

json number_to_json(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

double number_from_json(const json& j) {
  if (j.is_string()) {
    const std::string s = j.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    throw ParseError("not a number: '" + s + "'");
  }
  return j.get<double>();
}

void to_json(json& j, const ApproachSamples& g) {
  j = json{{"approach_name", g.approach_name}, {"samples", g.samples}};
}

void from_json(const json& j, ApproachSamples& g) {
  g.approach_name = j.at("approach_name").get<std::string>();
  g.samples.clear();
  for (const json& v : j.at("samples")) g.samples.push_back(number_from_json(v));
}

void to_json(json& j, const ComparisonResult& c) {
  j = json{{"u_statistic", c.u_statistic},
           {"p_value", c.p_value},
           {"cohens_d", c.cohens_d ? number_to_json(*c.cohens_d) : json(nullptr)},
           {"significant", c.significant}};
}

void from_json(const json& j, ComparisonResult& c) {
  c.u_statistic = j.at("u_statistic").get<double>();
  c.p_value = j.at("p_value").get<double>();
  c.cohens_d.reset();
  if (!j.at("cohens_d").is_null()) c.cohens_d = number_from_json(j["cohens_d"]);
  c.significant = j.at("significant").get<bool>();
}

void to_json(json& j, const RankedApproach& r) {
  j = json{{"approach_name", r.approach_name},
           {"n", r.n},
           {"mean_pi", r.mean_pi},
           {"sd_pi", r.sd_pi},
           {"rank", r.rank},
           {"vs_previous", r.vs_previous ? json(*r.vs_previous) : json(nullptr)}};
}

void from_json(const json& j, RankedApproach& r) {
  r.approach_name = j.at("approach_name").get<std::string>();
  r.n = j.at("n").get<std::size_t>();
  r.mean_pi = j.at("mean_pi").get<double>();
  r.sd_pi = j.at("sd_pi").get<double>();
  r.rank = j.at("rank").get<int>();
  r.vs_previous.reset();
  if (!j.at("vs_previous").is_null()) r.vs_previous = j["vs_previous"].get<ComparisonResult>();
}

}  // namespace mpco
