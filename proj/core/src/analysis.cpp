#include "persona/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "persona/digest.hpp"
#include "persona/error.hpp"

namespace persona {
namespace {

using nlohmann::json;

double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / v.size();
}

bool dimension_scorable(const DimensionAggregate& d, int n_runs) {
  return d.n_unscorable < n_runs;
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

std::string_view to_string(ModelRole r) {
  switch (r) {
    case ModelRole::base: return "base";
    case ModelRole::aligned: return "aligned";
    case ModelRole::intervened: return "intervened";
    case ModelRole::original: return "original";
  }
  return "base";
}

std::optional<ModelRole> parse_model_role(std::string_view s) {
  if (s == "base") return ModelRole::base;
  if (s == "aligned") return ModelRole::aligned;
  if (s == "intervened") return ModelRole::intervened;
  if (s == "original") return ModelRole::original;
  return std::nullopt;
}

std::string model_record_to_json(const ModelRecord& r) {
  json j;
  j["model_id"] = r.model_id;
  j["role"] = std::string(to_string(r.role));
  json dims = json::array();
  for (const auto& d : r.profile.dimensions) {
    json jd;
    jd["dimension"] = std::string(dimension_name(d.dimension));
    jd["mean"] = d.percent.mean;
    jd["stddev"] = d.percent.stddev;
    jd["min"] = d.percent.min;
    jd["q1"] = d.percent.q1;
    jd["median"] = d.percent.median;
    jd["q3"] = d.percent.q3;
    jd["max"] = d.percent.max;
    jd["n"] = d.percent.n;
    jd["n_unscorable"] = d.n_unscorable;
    dims.push_back(jd);
  }
  j["profile"] = {{"dimensions", dims},
                  {"majority_type", r.profile.majority_type},
                  {"n_runs", r.profile.n_runs}};
  j["safety"] = json::parse(safety_report_to_json(r.safety));
  j["provenance"] = r.provenance;
  return j.dump(2);
}

ModelRecord model_record_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("model record: ") + e.what());
  }
  ModelRecord r;
  if (!j.contains("model_id") || !j["model_id"].is_string()) {
    throw ParseError("model record: missing model_id");
  }
  r.model_id = j["model_id"].get<std::string>();
  auto role = parse_model_role(j.value("role", std::string{}));
  if (!role) throw ParseError("model record: unknown role");
  r.role = *role;
  const json& p = j.at("profile");
  const json& dims = p.at("dimensions");
  if (!dims.is_array() || dims.size() != 4) {
    throw ParseError("model record: profile needs 4 dimensions");
  }
  for (size_t i = 0; i < 4; ++i) {
    const json& jd = dims[i];
    auto dim = parse_dimension(jd.value("dimension", std::string{}));
    if (!dim || *dim != kAllDimensions[i]) {
      throw ParseError("model record: dimensions must be EI, SN, TF, JP in order");
    }
    DimensionAggregate& d = r.profile.dimensions[i];
    d.dimension = *dim;
    d.percent.mean = jd.value("mean", 0.0);
    d.percent.stddev = jd.value("stddev", 0.0);
    d.percent.min = jd.value("min", 0.0);
    d.percent.q1 = jd.value("q1", 0.0);
    d.percent.median = jd.value("median", 0.0);
    d.percent.q3 = jd.value("q3", 0.0);
    d.percent.max = jd.value("max", 0.0);
    d.percent.n = jd.value("n", 0);
    d.n_unscorable = jd.value("n_unscorable", 0);
  }
  r.profile.majority_type = p.value("majority_type", std::string{});
  r.profile.n_runs = p.value("n_runs", 0);
  if (j.contains("safety")) {
    r.safety = safety_report_from_json(j["safety"].dump());
  }
  if (j.contains("provenance")) {
    r.provenance = j["provenance"].get<std::map<std::string, std::string>>();
  }
  return r;
}

ModelRecord load_model_record(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return model_record_from_json(ss.str());
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void save_model_record(const ModelRecord& r, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << model_record_to_json(r) << "\n";
}

PoleGroups group_by_pole(const std::vector<ModelRecord>& records, Dimension dim,
                         double margin) {
  if (margin < 0) throw ValidationError("margin must be non-negative");
  size_t di = static_cast<size_t>(dim);
  PoleGroups g;
  g.dimension = dim;
  g.margin = margin;
  for (const auto& r : records) {
    const DimensionAggregate& d = r.profile.dimensions[di];
    if (!dimension_scorable(d, r.profile.n_runs) || r.profile.n_runs == 0) {
      throw ValidationError("record " + r.model_id + " has no scored " +
                            std::string(dimension_name(dim)) + " profile");
    }
    double p = d.percent.mean;
    if (p >= 50.0 + margin) g.first.push_back(&r);
    else if (p <= 50.0 - margin) g.second.push_back(&r);
    else g.excluded.push_back(&r);
  }
  return g;
}

std::optional<double> safety_metric(const SafetyReport& r,
                                    const std::string& metric) {
  if (metric == "toxicity") return r.toxicity_ratio;
  if (metric == "privacy") return r.privacy_accuracy;
  if (metric == "fairness") return r.fairness;
  if (metric == "stereotype_preference") return r.stereotype_preference;
  throw ValidationError("unknown safety metric \"" + metric + "\"");
}

DimensionGroupStat group_stat(const PoleGroups& groups,
                              const std::string& metric, std::uint64_t seed,
                              int n_permutations) {
  if (n_permutations < 1) throw ValidationError("need at least one permutation");
  DimensionGroupStat s;
  s.dimension = groups.dimension;
  s.metric = metric;
  std::vector<double> a, b;
  for (const ModelRecord* r : groups.first) {
    if (auto v = safety_metric(r->safety, metric)) a.push_back(*v);
  }
  for (const ModelRecord* r : groups.second) {
    if (auto v = safety_metric(r->safety, metric)) b.push_back(*v);
  }
  s.first_n = static_cast<int>(a.size());
  s.second_n = static_cast<int>(b.size());
  if (a.empty() || b.empty()) {
    s.suppressed = true;
    return s;
  }
  s.first_mean = mean_of(a);
  s.second_mean = mean_of(b);
  s.difference = s.first_mean - s.second_mean;

  std::vector<double> pool = a;
  pool.insert(pool.end(), b.begin(), b.end());
  size_t n1 = a.size();
  double total = std::accumulate(pool.begin(), pool.end(), 0.0);
  double threshold = std::abs(s.difference);
  Rng rng(Rng::derive(seed, metric + "." +
                                std::string(dimension_name(groups.dimension))));
  int hits = 0;
  std::vector<double> perm = pool;
  for (int t = 0; t < n_permutations; ++t) {
    for (size_t i = perm.size() - 1; i > 0; --i) {
      size_t k = rng.next_below(i + 1);
      std::swap(perm[i], perm[k]);
    }
    double sum1 = std::accumulate(perm.begin(), perm.begin() + n1, 0.0);
    double d = sum1 / n1 - (total - sum1) / (pool.size() - n1);
    if (std::abs(d) >= threshold - 1e-12) ++hits;
  }
  s.p_value = (1.0 + hits) / (1.0 + n_permutations);
  return s;
}

AlignmentDelta alignment_delta(const ModelRecord& base,
                               const ModelRecord& aligned) {
  AlignmentDelta out;
  out.base_id = base.model_id;
  out.aligned_id = aligned.model_id;
  for (size_t i = 0; i < 4; ++i) {
    const auto& db = base.profile.dimensions[i];
    const auto& da = aligned.profile.dimensions[i];
    if (db.dimension != da.dimension) {
      throw ValidationError("mismatched dimensions between records");
    }
    if (!dimension_scorable(db, base.profile.n_runs) ||
        !dimension_scorable(da, aligned.profile.n_runs) ||
        base.profile.n_runs == 0 || aligned.profile.n_runs == 0) {
      throw ValidationError("unscorable " +
                            std::string(dimension_name(db.dimension)) +
                            " dimension in delta");
    }
    out.base_percent[i] = db.percent.mean;
    out.aligned_percent[i] = da.percent.mean;
    out.delta[i] = da.percent.mean - db.percent.mean;
  }
  return out;
}

std::array<int, 4> increase_counts(const std::vector<AlignmentDelta>& deltas) {
  std::array<int, 4> counts{};
  for (const auto& d : deltas) {
    for (size_t i = 0; i < 4; ++i) {
      if (d.delta[i] > 0) ++counts[i];
    }
  }
  return counts;
}

std::string_view to_string(DiffTag t) {
  switch (t) {
    case DiffTag::improvement: return "improvement";
    case DiffTag::decline: return "decline";
    case DiffTag::unchanged: return "unchanged";
    case DiffTag::absent: return "absent";
  }
  return "absent";
}

InterventionDiff intervention_diff(const ModelRecord& original,
                                   const ModelRecord& intervened) {
  if (original.model_id != intervened.model_id) {
    throw ValidationError("intervention diff needs matching model ids, got " +
                          original.model_id + " and " + intervened.model_id);
  }
  if (original.role != ModelRole::original ||
      intervened.role != ModelRole::intervened) {
    throw ValidationError("intervention diff needs roles original/intervened");
  }
  InterventionDiff out;
  out.model_id = original.model_id;
  struct Spec {
    const char* name;
    bool lower_is_better;
  };
  static const Spec kMetrics[] = {
      {"toxicity", true}, {"privacy", false}, {"fairness", false}};
  for (const Spec& m : kMetrics) {
    MetricDiff d;
    d.metric = m.name;
    d.before = safety_metric(original.safety, m.name);
    d.after = safety_metric(intervened.safety, m.name);
    if (d.before && d.after) {
      d.diff = *d.after - *d.before;
      if (*d.diff == 0.0) d.tag = DiffTag::unchanged;
      else if ((*d.diff < 0.0) == m.lower_is_better) d.tag = DiffTag::improvement;
      else d.tag = DiffTag::decline;
    } else {
      d.tag = DiffTag::absent;
    }
    out.metrics.push_back(std::move(d));
  }
  return out;
}

std::string_view to_string(Factor f) {
  switch (f) {
    case Factor::label_form: return "label_form";
    case Factor::instruction_style: return "instruction_style";
    case Factor::language: return "language";
  }
  return "label_form";
}

std::array<std::string, 2> factor_variants(Factor f) {
  switch (f) {
    case Factor::label_form: return {"number", "alphabet"};
    case Factor::instruction_style:
      return {"with_description", "without_description"};
    case Factor::language: return {"en", "zh"};
  }
  return {"number", "alphabet"};
}

namespace {

FactorConfig apply_variant(FactorConfig base, Factor f, const std::string& v) {
  switch (f) {
    case Factor::label_form:
      base.label_form = *parse_label_form(v);
      break;
    case Factor::instruction_style:
      base.instruction_style = *parse_instruction_style(v);
      break;
    case Factor::language:
      base.language = v;
      break;
  }
  return base;
}

}  // namespace

std::vector<KappaCell> factor_kappa_cells(
    const std::vector<std::pair<std::string, RespondentConfig>>& models,
    const Scale& scale, Factor factor, const FactorConfig& base,
    std::uint64_t seed) {
  std::vector<KappaCell> cells;
  for (const auto& [name, cfg] : models) {
    size_t row_start = cells.size();
    for (const std::string& variant : factor_variants(factor)) {
      KappaCell cell;
      cell.model = name;
      cell.factor = factor;
      cell.variant = variant;
      FactorConfig fc = apply_variant(base, factor, variant);
      fc.permutation_mode = PermutationMode::exchange_descriptions;
      std::uint64_t cell_seed =
          Rng::derive(seed, name + "|" + std::string(to_string(factor)) + "|" +
                                variant);
      try {
        auto backend = make_respondent(cfg);
        AssessmentRun r0 = administer_run(scale, fc, *backend, cfg,
                                          Rng::derive(cell_seed, 0));
        AssessmentRun r1 = administer_run(scale, fc, *backend, cfg,
                                          Rng::derive(cell_seed, 1));
        try {
          cell.kappa = cohen_kappa(r0, r1).kappa;
        } catch (const ValidationError&) {
          // no overlapping scored items
        }
      } catch (const BackendError&) {
        // cell stays absent
      }
      cells.push_back(std::move(cell));
    }
    KappaCell& c0 = cells[row_start];
    KappaCell& c1 = cells[row_start + 1];
    if (c0.kappa && c1.kappa && *c0.kappa != *c1.kappa) {
      (*c0.kappa > *c1.kappa ? c0 : c1).winner = true;
    }
  }
  return cells;
}

std::vector<KappaCell> factor_kappa_table(
    const std::vector<std::pair<std::string, RespondentConfig>>& models,
    const Scale& scale, const FactorConfig& base, std::uint64_t seed) {
  std::vector<KappaCell> all;
  for (Factor f : {Factor::label_form, Factor::instruction_style,
                   Factor::language}) {
    auto cells = factor_kappa_cells(models, scale, f, base, seed);
    all.insert(all.end(), cells.begin(), cells.end());
  }
  return all;
}

namespace {

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else out += c;
  }
  out += "\"";
  return out;
}

std::string opt_cell(const std::optional<double>& v) {
  return v ? format_double(*v) : std::string{};
}

std::string profiles_body(const ReportInputs& in) {
  std::string s = "model,role,dimension,first_pole,mean,stddev,min,q1,median,q3,max,n_runs,n_unscorable\n";
  for (const auto& r : in.records) {
    for (const auto& d : r.profile.dimensions) {
      s += csv_escape(r.model_id);
      s += ',';
      s += to_string(r.role);
      s += ',';
      s += dimension_name(d.dimension);
      s += ',';
      s += pole_letter(first_pole(d.dimension));
      s += ',';
      s += format_double(d.percent.mean) + ',' + format_double(d.percent.stddev) +
           ',' + format_double(d.percent.min) + ',' + format_double(d.percent.q1) +
           ',' + format_double(d.percent.median) + ',' +
           format_double(d.percent.q3) + ',' + format_double(d.percent.max);
      s += ',' + std::to_string(r.profile.n_runs) + ',' +
           std::to_string(d.n_unscorable) + '\n';
    }
  }
  return s;
}

std::string safety_body(const ReportInputs& in) {
  std::string s = "model,role,metric,value,n\n";
  for (const auto& r : in.records) {
    auto row = [&](const std::string& metric, const std::optional<double>& v,
                   int n) {
      s += csv_escape(r.model_id);
      s += ',';
      s += to_string(r.role);
      s += ',' + metric + ',' + opt_cell(v) + ',' + std::to_string(n) + '\n';
    };
    row("toxicity", r.safety.toxicity_ratio, r.safety.toxicity_n);
    row("privacy", r.safety.privacy_accuracy, r.safety.privacy_n);
    row("stereotype_preference", r.safety.stereotype_preference,
        r.safety.stereotype_n);
    row("fairness", r.safety.fairness, r.safety.stereotype_n);
    for (const auto& [method, rate] : r.safety.jailbreak_rates) {
      row("jailbreak:" + method, rate, 0);
    }
  }
  return s;
}

std::string groups_body(const ReportInputs& in) {
  std::string s = "dimension,metric,first_pole,first_mean,first_n,second_pole,second_mean,second_n,difference,p_value,suppressed\n";
  for (const auto& g : in.groups) {
    s += dimension_name(g.dimension);
    s += ',' + g.metric + ',';
    s += pole_letter(first_pole(g.dimension));
    s += ',';
    if (!g.suppressed) s += format_double(g.first_mean);
    s += ',' + std::to_string(g.first_n) + ',';
    s += pole_letter(second_pole(g.dimension));
    s += ',';
    if (!g.suppressed) s += format_double(g.second_mean);
    s += ',' + std::to_string(g.second_n) + ',';
    if (!g.suppressed) {
      s += format_double(g.difference);
      s += ',' + format_double(g.p_value);
    } else {
      s += ',';
    }
    s += ',';
    s += (g.suppressed ? "true" : "false");
    s += '\n';
  }
  return s;
}

std::string deltas_body(const ReportInputs& in) {
  std::string s = "kind,model,metric,before,after,diff,tag\n";
  for (const auto& d : in.diffs) {
    for (const auto& m : d.metrics) {
      s += "intervention," + csv_escape(d.model_id) + ',' + m.metric + ',' +
           opt_cell(m.before) + ',' + opt_cell(m.after) + ',' +
           opt_cell(m.diff) + ',';
      s += to_string(m.tag);
      s += '\n';
    }
  }
  for (const auto& a : in.alignment) {
    for (size_t i = 0; i < 4; ++i) {
      s += "alignment," + csv_escape(a.base_id + "->" + a.aligned_id) + ',';
      s += dimension_name(kAllDimensions[i]);
      s += ',' + format_double(a.base_percent[i]) + ',' +
           format_double(a.aligned_percent[i]) + ',' +
           format_double(a.delta[i]) + ',';
      s += a.delta[i] > 0 ? "increase" : (a.delta[i] < 0 ? "decrease" : "unchanged");
      s += '\n';
    }
  }
  return s;
}

std::string kappa_body(const ReportInputs& in) {
  std::string s = "model,factor,variant,kappa,winner\n";
  for (const auto& c : in.kappa_cells) {
    s += csv_escape(c.model);
    s += ',';
    s += to_string(c.factor);
    s += ',' + c.variant + ',' + opt_cell(c.kappa) + ',';
    s += c.winner ? "true" : "false";
    s += '\n';
  }
  return s;
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << bytes;
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace

void emit_report(const ReportInputs& in, const std::filesystem::path& outdir) {
  std::filesystem::create_directories(outdir);
  struct File {
    const char* name;
    std::string body;
  };
  std::vector<File> files = {
      {"profiles.csv", profiles_body(in)},
      {"safety.csv", safety_body(in)},
      {"groups.csv", groups_body(in)},
      {"deltas.csv", deltas_body(in)},
      {"kappa_table.csv", kappa_body(in)},
  };
  std::uint64_t h = fnv1a64("");
  for (const auto& f : files) {
    h = fnv1a64_append(h, f.name);
    h = fnv1a64_append(h, f.body);
  }
  std::string digest = digest_hex(h);
  for (const auto& f : files) {
    write_file(outdir / f.name,
               "# provenance_digest=" + digest + "\n" + f.body);
  }
  json prov;
  prov["digest"] = digest;
  json recs = json::object();
  for (const auto& r : in.records) {
    recs[r.model_id + ":" + std::string(to_string(r.role))] = r.provenance;
  }
  prov["records"] = recs;
  write_file(outdir / "provenance.json", prov.dump(2) + "\n");
}

}  // namespace persona
