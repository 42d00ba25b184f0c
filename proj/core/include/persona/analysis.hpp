#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "persona/safety_eval.hpp"
#include "persona/scoring.hpp"

namespace persona {

enum class ModelRole { base, aligned, intervened, original };

std::string_view to_string(ModelRole r);
std::optional<ModelRole> parse_model_role(std::string_view s);

struct ModelRecord {
  std::string model_id;
  ModelRole role = ModelRole::base;
  AggregateProfile profile;
  SafetyReport safety;
  std::map<std::string, std::string> provenance;  // configs, seeds, digests
};

std::string model_record_to_json(const ModelRecord& r);
ModelRecord model_record_from_json(const std::string& text);
ModelRecord load_model_record(const std::filesystem::path& path);
void save_model_record(const ModelRecord& r, const std::filesystem::path& path);

struct PoleGroups {
  Dimension dimension = Dimension::EI;
  double margin = 5.0;
  std::vector<const ModelRecord*> first;   // percent >= 50 + margin
  std::vector<const ModelRecord*> second;  // percent <= 50 - margin
  std::vector<const ModelRecord*> excluded;
};

// Splits records on the mean first-pole percent of `dim`. Mid-band
// records are excluded. Throws if a record is unscorable on `dim`.
PoleGroups group_by_pole(const std::vector<ModelRecord>& records, Dimension dim,
                         double margin = 5.0);

struct DimensionGroupStat {
  Dimension dimension = Dimension::EI;
  std::string metric;
  double first_mean = 0.0;
  double second_mean = 0.0;
  double difference = 0.0;  // first - second
  double p_value = 1.0;
  int first_n = 0;
  int second_n = 0;
  bool suppressed = false;  // a group had no usable records
};

// Two-sided seeded permutation test on group means.
// metric is one of "toxicity", "privacy", "fairness".
DimensionGroupStat group_stat(const PoleGroups& groups,
                              const std::string& metric, std::uint64_t seed,
                              int n_permutations = 10000);

std::optional<double> safety_metric(const SafetyReport& r,
                                    const std::string& metric);

struct AlignmentDelta {
  std::string base_id;
  std::string aligned_id;
  std::array<double, 4> base_percent{};
  std::array<double, 4> aligned_percent{};
  std::array<double, 4> delta{};  // aligned - base, first-pole percent
};

AlignmentDelta alignment_delta(const ModelRecord& base,
                               const ModelRecord& aligned);

// Per dimension, how many pairs moved toward the first pole.
std::array<int, 4> increase_counts(const std::vector<AlignmentDelta>& deltas);

enum class DiffTag { improvement, decline, unchanged, absent };

std::string_view to_string(DiffTag t);

struct MetricDiff {
  std::string metric;
  std::optional<double> before;
  std::optional<double> after;
  std::optional<double> diff;  // after - before
  DiffTag tag = DiffTag::absent;
};

struct InterventionDiff {
  std::string model_id;
  std::vector<MetricDiff> metrics;  // toxicity, privacy, fairness
};

// Signed safety diffs with direction-aware tags (toxicity: lower is
// better). Requires matching model ids and roles original/intervened.
InterventionDiff intervention_diff(const ModelRecord& original,
                                   const ModelRecord& intervened);

enum class Factor { label_form, instruction_style, language };

std::string_view to_string(Factor f);
std::array<std::string, 2> factor_variants(Factor f);

struct KappaCell {
  std::string model;
  Factor factor = Factor::label_form;
  std::string variant;
  std::optional<double> kappa;  // absent when a run or the kappa failed
  bool winner = false;          // strictly larger kappa within (model, factor)
};

// For each model and factor variant: two shuffled assessments, kappa
// between them. Backend failures leave the cell absent.
std::vector<KappaCell> factor_kappa_cells(
    const std::vector<std::pair<std::string, RespondentConfig>>& models,
    const Scale& scale, Factor factor, const FactorConfig& base,
    std::uint64_t seed);

std::vector<KappaCell> factor_kappa_table(
    const std::vector<std::pair<std::string, RespondentConfig>>& models,
    const Scale& scale, const FactorConfig& base, std::uint64_t seed);

struct ReportInputs {
  std::vector<ModelRecord> records;
  std::vector<DimensionGroupStat> groups;
  std::vector<AlignmentDelta> alignment;
  std::vector<InterventionDiff> diffs;
  std::vector<KappaCell> kappa_cells;
};

// Writes profiles.csv, safety.csv, groups.csv, deltas.csv,
// kappa_table.csv, provenance.json. Pure function of the inputs: every
// file opens with the same provenance digest line and bytes never vary
// across re-runs.
void emit_report(const ReportInputs& in, const std::filesystem::path& outdir);

// Fixed-precision formatting used by every report writer ("%.10g").
std::string format_double(double v);

}  // namespace persona
