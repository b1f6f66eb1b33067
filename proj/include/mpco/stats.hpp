#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mpco/common.hpp"

namespace mpco {

// (t_orig - t_opt) / t_orig * 100. Throws DomainError unless t_orig > 0.
double percent_improvement(double t_orig, double t_opt);

struct MannWhitney {
  double u = 0;  // U of the first sample, midranks for ties
  double p = 1;  // two-sided
  bool exact = false;
};

// Exact null distribution when n_a + n_b <= 16 and there are no ties,
// otherwise the normal approximation with tie and continuity correction.
// Throws DomainError on an empty sample.
MannWhitney mann_whitney_u(const std::vector<double>& a, const std::vector<double>& b);

// Pooled-SD effect size of a against b. Zero pooled SD gives 0 for equal
// means and +-infinity otherwise. Throws DomainError if either side has
// fewer than 2 values.
double cohens_d(const std::vector<double>& a, const std::vector<double>& b);

struct Summary {
  double mean = 0;
  double sd = 0;  // sample SD, 0 for a singleton
};

Summary summarize(const std::vector<double>& samples);

struct ApproachSamples {
  std::string approach_name;
  std::vector<double> samples;
};

struct ComparisonResult {
  double u_statistic = 0;
  double p_value = 1;
  std::optional<double> cohens_d;  // absent when a side has < 2 samples
  bool significant = false;
};

struct RankedApproach {
  std::string approach_name;
  std::size_t n = 0;
  double mean_pi = 0;
  double sd_pi = 0;
  int rank = 1;
  std::optional<ComparisonResult> vs_previous;
};

struct RankOptions {
  double alpha = 0.05;
  double d_threshold = 0.2;
};

ComparisonResult compare(const std::vector<double>& a, const std::vector<double>& b,
                         const RankOptions& options = {});

// Sorts by mean %PI descending (name ascending on equal means) and walks the
// chain: a group takes the previous rank + 1 when it differs significantly
// from the group just above it, and the previous rank otherwise.
std::vector<RankedApproach> rank_approaches(const std::vector<ApproachSamples>& groups,
                                            const RankOptions& options = {});

// Non-finite numbers are written as the strings "inf", "-inf" and "nan".
nlohmann::json number_to_json(double v);
double number_from_json(const nlohmann::json& j);

void to_json(nlohmann::json& j, const ApproachSamples& g);
void from_json(const nlohmann::json& j, ApproachSamples& g);
void to_json(nlohmann::json& j, const ComparisonResult& c);
void from_json(const nlohmann::json& j, ComparisonResult& c);
void to_json(nlohmann::json& j, const RankedApproach& r);
void from_json(const nlohmann::json& j, RankedApproach& r);

}  // namespace mpco
