#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "persona/respondent.hpp"

namespace persona {

struct DimensionScore {
  Dimension dimension = Dimension::EI;
  double first_pole_percent = 0.0;  // percent of valid answers toward E/S/T/J
  int valid_count = 0;
  int missing_count = 0;
  bool unscorable = false;  // zero valid answers
  Pole letter = Pole::E;    // > 50 first pole, < 50 second, tie second
  bool tie = false;
};

struct RunScore {
  std::array<DimensionScore, 4> dimensions{};
  std::string type_code;  // 4 letters, '?' for an unscorable dimension
  bool any_tie = false;
  bool any_unscorable = false;
};

RunScore score_run(const AssessmentRun& run, const Scale& scale);

struct KappaResult {
  double kappa = 0.0;
  double p_observed = 0.0;
  double p_expected = 0.0;
  int item_count = 0;  // pairs remaining after pairwise missing exclusion
  bool degenerate = false;
};

// Generic over integer categories; nullopt entries are excluded pairwise.
KappaResult cohen_kappa(const std::vector<std::optional<int>>& rater_a,
                        const std::vector<std::optional<int>>& rater_b);

// Aligns two runs by item_id (categories: first pole = 0, second = 1).
KappaResult cohen_kappa(const AssessmentRun& a, const AssessmentRun& b);

struct AggregateStats {
  double mean = 0.0;
  double stddev = 0.0;  // population
  double min = 0.0;
  double q1 = 0.0;
  double median = 0.0;
  double q3 = 0.0;
  double max = 0.0;
  int n = 0;
};

// Linear interpolation between order statistics, p in [0,1].
double quantile(std::vector<double> values, double p);

AggregateStats aggregate_values(std::vector<double> values);

struct DimensionAggregate {
  Dimension dimension = Dimension::EI;
  AggregateStats percent;  // over runs where this dimension was scorable
  int n_unscorable = 0;
};

struct AggregateProfile {
  std::array<DimensionAggregate, 4> dimensions{};
  std::string majority_type;  // letters from mean percentages
  int n_runs = 0;
};

AggregateProfile aggregate(const std::vector<RunScore>& runs);
AggregateProfile aggregate(const std::vector<AssessmentRun>& runs,
                           const Scale& scale);

// Per-item majority answer across a batch: 0 first pole, 1 second,
// nullopt when every run missed the item. Ties go to the first pole.
std::vector<std::optional<int>> modal_vector(
    const std::vector<const AssessmentRun*>& batch, const Scale& scale);

struct SweepPoint {
  int n = 0;
  KappaResult result;
};

struct SweepResult {
  std::vector<SweepPoint> curve;
  std::vector<AssessmentRun> runs;  // raw, for audit
};

// For each n: two disjoint seeded batches of n runs, kappa between their
// modal answer vectors.
SweepResult reliability_sweep(Respondent& backend,
                              const RespondentConfig& cfg, const Scale& scale,
                              const FactorConfig& factors,
                              const std::vector<int>& n_grid,
                              std::uint64_t seed);

}  // namespace persona
