#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "persona/analysis.hpp"
#include "persona/digest.hpp"
#include "persona/error.hpp"
#include "persona/model_adapters.hpp"
#include "persona/questionnaire.hpp"
#include "persona/respondent.hpp"
#include "persona/rng.hpp"
#include "persona/safety_eval.hpp"
#include "persona/scoring.hpp"
#include "persona/steering.hpp"
#include "persona/toy_lm.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace persona;

namespace {

constexpr const char* kVersion = "persona 0.1.0";
constexpr int kOk = 0;
constexpr int kConfigError = 2;
constexpr int kBackendError = 3;
constexpr int kNoFeasible = 4;

// ---------------------------------------------------------------- clock

struct Clock {
  bool fixed = false;
  std::int64_t epoch = 0;

  std::string stamp() const {
    std::time_t t = fixed ? static_cast<std::time_t>(epoch) : std::time(nullptr);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
  }
};

Clock parse_clock(const std::string& spec) {
  if (spec == "system") return {};
  if (spec.rfind("fixed:", 0) == 0) {
    try {
      std::size_t used = 0;
      std::int64_t e = std::stoll(spec.substr(6), &used);
      if (used == spec.size() - 6) return {true, e};
    } catch (...) {
    }
  }
  throw ValidationError("--clock must be \"system\" or \"fixed:<epoch-seconds>\", got \"" +
                        spec + "\"");
}

// -------------------------------------------------------------- run dir
//
// Every artifact command works inside one of these: the manifest goes to
// disk before the pipeline starts and is finalized on the way out, and
// every file written through here ends up listed in it.

class RunDir {
 public:
  RunDir(fs::path root, Clock clock) : root_(std::move(root)), clock_(clock) {}

  void open(const std::vector<std::string>& command, json config,
            std::uint64_t seed, bool seed_generated, json inputs) {
    if (fs::exists(root_) && !fs::is_empty(root_)) {
      throw ValidationError("output directory " + root_.string() +
                            " is not empty; pick a fresh --out");
    }
    fs::create_directories(root_);
    opened_ = true;
    manifest_["tool"] = kVersion;
    manifest_["command"] = command;
    manifest_["status"] = "running";
    manifest_["seed"] = seed;
    manifest_["seed_generated"] = seed_generated;
    manifest_["config"] = std::move(config);
    manifest_["inputs"] = std::move(inputs);
    manifest_["started_at"] = clock_.stamp();
    manifest_["finished_at"] = nullptr;
    outputs_ = {"manifest.json"};
    manifest_["outputs"] = outputs_;
    flush();
  }

  void note(const std::string& rel) {
    if (std::find(outputs_.begin(), outputs_.end(), rel) == outputs_.end()) {
      outputs_.push_back(rel);
    }
  }

  void write_text(const std::string& rel, const std::string& bytes) {
    fs::path p = root_ / rel;
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + p.string() + " for writing");
    out << bytes;
    if (!out) throw IoError("write failed for " + p.string());
    note(rel);
  }

  void finalize(const std::string& status) {
    if (!opened_) return;  // the refusal above must not disturb the directory
    std::sort(outputs_.begin(), outputs_.end());
    manifest_["outputs"] = outputs_;
    manifest_["status"] = status;
    manifest_["finished_at"] = clock_.stamp();
    flush();
  }

  const fs::path& root() const { return root_; }

 private:
  void flush() {
    std::ofstream out(root_ / "manifest.json", std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write manifest in " + root_.string());
    out << manifest_.dump(2) << "\n";
  }

  fs::path root_;
  Clock clock_;
  bool opened_ = false;
  json manifest_;
  std::vector<std::string> outputs_;
};

json input_entry(const fs::path& path) {
  return json{{"path", path.string()}, {"digest", digest_file(path)}};
}

// --------------------------------------------------- shared flag block

struct Common {
  std::string out;
  std::string config_file;
  std::uint64_t seed = 0;
  std::string clock_spec = "system";
  int jobs = 4;

  CLI::Option* seed_opt = nullptr;
  CLI::Option* jobs_opt = nullptr;

  Clock clock;
  bool seed_generated = false;
  json file = json::object();  // loaded --config contents
};

void attach_common(CLI::App* cmd, Common& c, const char* default_out) {
  c.out = default_out;
  cmd->add_option("--out", c.out, "run directory (contents overwritten)");
  cmd->add_option("--config", c.config_file,
                  "JSON config file; flags override its keys");
  c.seed_opt = cmd->add_option("--seed", c.seed,
                               "master seed; generated and recorded if omitted");
  c.jobs_opt =
      cmd->add_option("--jobs", c.jobs, "max concurrent backend requests");
  cmd->add_option("--clock", c.clock_spec,
                  "manifest timestamps: system or fixed:<epoch-seconds>");
}

// file-backed fallback for a flag the user did not pass
template <class T>
void from_file(const json& f, const CLI::Option* opt, const char* key, T& var,
               std::vector<std::string>& errs) {
  if ((opt != nullptr && opt->count() > 0) || !f.contains(key)) return;
  try {
    var = f.at(key).get<T>();
  } catch (...) {
    errs.push_back(std::string("config file key \"") + key +
                   "\" has the wrong type");
  }
}

void resolve_common(Common& c, std::vector<std::string>& errs) {
  if (!c.config_file.empty()) {
    try {
      std::ifstream in(c.config_file);
      if (!in) throw IoError("cannot open " + c.config_file);
      c.file = json::parse(in);
      if (!c.file.is_object()) throw ParseError("config file must hold an object");
    } catch (const json::parse_error& e) {
      errs.push_back("config file " + c.config_file + ": " + e.what());
    } catch (const Error& e) {
      errs.push_back(e.what());
    }
  }
  from_file(c.file, c.seed_opt, "seed", c.seed, errs);
  from_file(c.file, c.jobs_opt, "jobs", c.jobs, errs);
  if (c.seed_opt->count() == 0 && !c.file.contains("seed")) {
    std::random_device rd;
    c.seed = (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
    c.seed_generated = true;
  }
  if (c.jobs < 1) errs.push_back("--jobs must be >= 1");
  try {
    c.clock = parse_clock(c.clock_spec);
  } catch (const Error& e) {
    errs.push_back(e.what());
  }
}

int report_config_errors(const std::vector<std::string>& errs) {
  for (const auto& e : errs) std::fprintf(stderr, "config error: %s\n", e.c_str());
  return kConfigError;
}

// map library failures to exit codes; finalize the manifest if one exists
int guarded(std::optional<RunDir>& dir, const std::function<int()>& body) {
  try {
    return body();
  } catch (const BackendError& e) {
    std::fprintf(stderr, "backend error: %s\n", e.what());
    if (dir) dir->finalize("backend_error");
    return kBackendError;
  } catch (const Error& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    if (dir) dir->finalize("config_error");
    return kConfigError;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    if (dir) dir->finalize("error");
    return kConfigError;
  }
}

// ------------------------------------------------------------ backends

// "mock:<spec>", "toylm:<weights>", or a full http(s) endpoint URL
RespondentConfig backend_config(const std::string& spec, const Common& c) {
  RespondentConfig cfg;
  cfg.max_concurrent = c.jobs;
  if (spec.rfind("mock:", 0) == 0) {
    cfg.kind = BackendKind::mock;
    cfg.model = spec.substr(5);
  } else if (spec.rfind("toylm:", 0) == 0) {
    cfg.kind = BackendKind::toy_lm;
    cfg.weights = spec.substr(6);
    cfg.model = "toylm";
  } else if (spec.rfind("http://", 0) == 0 || spec.rfind("https://", 0) == 0) {
    cfg.kind = BackendKind::http;
    cfg.endpoint = spec;
  } else {
    throw ValidationError(
        "--backend must be mock:<spec>, toylm:<weights>, or an http(s) URL, got \"" +
        spec + "\"");
  }
  return cfg;
}

struct FactorFlags {
  std::string label_form = "number";
  std::string instruction_style = "with_description";
  std::string language = "en";
  std::string permutation = "exchange_descriptions";

  CLI::Option* label_opt = nullptr;
  CLI::Option* style_opt = nullptr;
  CLI::Option* lang_opt = nullptr;
  CLI::Option* perm_opt = nullptr;
};

void attach_factors(CLI::App* cmd, FactorFlags& f) {
  f.label_opt =
      cmd->add_option("--label-form", f.label_form, "number or alphabet");
  f.style_opt = cmd->add_option("--instruction-style", f.instruction_style,
                                "with_description or without_description");
  f.lang_opt = cmd->add_option("--language", f.language, "prompt language tag");
  f.perm_opt = cmd->add_option(
      "--permutation", f.permutation,
      "none, exchange_descriptions, or exchange_labels");
}

FactorConfig resolve_factors(const FactorFlags& f, const json& file,
                             std::vector<std::string>& errs) {
  FactorFlags v = f;
  from_file(file, f.label_opt, "label_form", v.label_form, errs);
  from_file(file, f.style_opt, "instruction_style", v.instruction_style, errs);
  from_file(file, f.lang_opt, "language", v.language, errs);
  from_file(file, f.perm_opt, "permutation", v.permutation, errs);

  FactorConfig out;
  if (auto lf = parse_label_form(v.label_form)) out.label_form = *lf;
  else errs.push_back("unknown label form \"" + v.label_form + "\"");
  if (auto is = parse_instruction_style(v.instruction_style))
    out.instruction_style = *is;
  else errs.push_back("unknown instruction style \"" + v.instruction_style + "\"");
  if (auto pm = parse_permutation_mode(v.permutation)) out.permutation_mode = *pm;
  else errs.push_back("unknown permutation mode \"" + v.permutation + "\"");
  if (v.language.empty()) errs.push_back("--language must not be empty");
  out.language = v.language;
  return out;
}

json factors_json(const FactorConfig& f) {
  return json{{"label_form", std::string(to_string(f.label_form))},
              {"instruction_style", std::string(to_string(f.instruction_style))},
              {"language", f.language},
              {"permutation", std::string(to_string(f.permutation_mode))}};
}

// ------------------------------------------------------- serialization

std::string run_jsonl(const AssessmentRun& run) {
  json head;
  head["run_seed"] = run.run_seed;
  head["respondent"] = run.respondent;
  head["factors"] = factors_json(run.factors);
  head["failed"] = run.failed;
  head["failure_reason"] = run.failure_reason;
  std::string s = head.dump() + "\n";
  for (const auto& it : run.items) {
    const auto& p = it.presented;
    json j;
    j["item_id"] = p.item_id;
    j["dimension"] = std::string(dimension_name(p.dimension));
    j["presentation_index"] = p.presentation_index;
    j["swapped"] = p.swapped;
    j["labels"] = {p.options[0].label, p.options[1].label};
    j["poles"] = {std::string(1, pole_letter(p.options[0].pole)),
                  std::string(1, pole_letter(p.options[1].pole))};
    j["prompt_digest"] = it.prompt_hash;
    j["raw_text"] = it.choice.raw_text;
    j["latency_ms"] = it.response.latency.count();
    j["attempt_index"] = it.response.attempt_index;
    j["resample_index"] = it.resample_index;
    j["parse_method"] = std::string(to_string(it.choice.method));
    if (it.choice.pole) j["answer"] = std::string(1, pole_letter(*it.choice.pole));
    else j["answer"] = nullptr;
    s += j.dump() + "\n";
  }
  return s;
}

json profile_json(const AggregateProfile& prof) {
  json dims = json::array();
  for (const auto& d : prof.dimensions) {
    dims.push_back(json{{"dimension", std::string(dimension_name(d.dimension))},
                        {"mean", d.percent.mean},
                        {"stddev", d.percent.stddev},
                        {"min", d.percent.min},
                        {"q1", d.percent.q1},
                        {"median", d.percent.median},
                        {"q3", d.percent.q3},
                        {"max", d.percent.max},
                        {"n", d.percent.n},
                        {"n_unscorable", d.n_unscorable}});
  }
  return json{{"majority_type", prof.majority_type},
              {"n_runs", prof.n_runs},
              {"dimensions", dims}};
}

std::vector<int> parse_tokens(const std::string& text) {
  std::vector<int> out;
  std::istringstream in(text);
  long v = 0;
  while (in >> v) out.push_back(static_cast<int>(v));
  if (!in.eof()) {
    throw ValidationError("expected whitespace-separated token ids, got \"" +
                          text + "\"");
  }
  return out;
}

std::string csv_with_digest(const std::string& name, const std::string& body) {
  std::uint64_t h = fnv1a64("");
  h = fnv1a64_append(h, name);
  h = fnv1a64_append(h, body);
  return "# provenance_digest=" + digest_hex(h) + "\n" + body;
}

void note_report_bundle(RunDir& dir) {
  for (const char* n : {"profiles.csv", "safety.csv", "groups.csv", "deltas.csv",
                        "kappa_table.csv", "provenance.json"}) {
    dir.note(std::string("reports/") + n);
  }
}

// ---------------------------------------------------------------- assess

struct AssessArgs {
  int runs = 30;
  std::string backend = "mock:estj";
  std::string scale = "data/scales/synthetic_93.json";
  std::string model;  // http wire name
  std::string model_id;
  std::string role = "base";
  int max_resample = 2;
  int max_retries = 3;
  int timeout_ms = 30000;
  int backoff_ms = 250;
  FactorFlags factors;
  Common common;
  CLI::Option* runs_opt = nullptr;
  CLI::Option* backend_opt = nullptr;
  CLI::Option* scale_opt = nullptr;
};

int run_assess(AssessArgs& a, const std::vector<std::string>& command) {
  std::vector<std::string> errs;
  resolve_common(a.common, errs);
  from_file(a.common.file, a.runs_opt, "runs", a.runs, errs);
  from_file(a.common.file, a.backend_opt, "backend", a.backend, errs);
  from_file(a.common.file, a.scale_opt, "scale", a.scale, errs);
  FactorConfig factors = resolve_factors(a.factors, a.common.file, errs);
  if (a.runs < 1) errs.push_back("--runs must be >= 1");
  if (a.max_resample < 0) errs.push_back("--max-resample must be >= 0");
  if (a.max_retries < 0) errs.push_back("--max-retries must be >= 0");
  if (!parse_model_role(a.role)) errs.push_back("unknown role \"" + a.role + "\"");
  if (!errs.empty()) return report_config_errors(errs);

  std::optional<RunDir> dir;
  return guarded(dir, [&] {
    RespondentConfig cfg = backend_config(a.backend, a.common);
    if (!a.model.empty()) cfg.model = a.model;
    cfg.max_resample = a.max_resample;
    cfg.max_retries = a.max_retries;
    cfg.timeout = std::chrono::milliseconds(a.timeout_ms);
    cfg.backoff = std::chrono::milliseconds(a.backoff_ms);

    Scale scale = load_scale(a.scale);
    json config{{"runs", a.runs},
                {"backend", a.backend},
                {"scale", a.scale},
                {"factors", factors_json(factors)},
                {"max_resample", a.max_resample},
                {"max_retries", a.max_retries},
                {"jobs", a.common.jobs},
                {"seed", a.common.seed}};
    std::printf("config: %s\n", config.dump().c_str());

    dir.emplace(a.common.out, a.common.clock);
    dir->open(command, config, a.common.seed, a.common.seed_generated,
              json{{"scale", input_entry(a.scale)}});

    auto backend = make_respondent(cfg);
    std::vector<AssessmentRun> runs;
    runs.reserve(a.runs);
    for (int i = 0; i < a.runs; ++i) {
      char name[40];
      std::snprintf(name, sizeof name, "runs/run_%03d.jsonl", i);
      const std::string rel = name;
      AssessmentRun run = administer_run(
          scale, factors, *backend, cfg, Rng::derive(a.common.seed, i),
          [&](const AssessmentRun& r) { dir->write_text(rel, run_jsonl(r)); });
      runs.push_back(std::move(run));
    }

    AggregateProfile prof = aggregate(runs, scale);
    dir->write_text("reports/profile.json", profile_json(prof).dump(2) + "\n");

    ModelRecord rec;
    rec.model_id = a.model_id.empty() ? a.backend : a.model_id;
    rec.role = *parse_model_role(a.role);
    rec.profile = prof;
    rec.provenance["backend"] = backend->describe();
    rec.provenance["scale_digest"] = digest_file(a.scale);
    rec.provenance["seed"] = std::to_string(a.common.seed);
    rec.provenance["runs"] = std::to_string(a.runs);
    dir->write_text("reports/record.json", model_record_to_json(rec) + "\n");

    std::printf("majority type: %s over %d runs\n", prof.majority_type.c_str(),
                prof.n_runs);
    for (const auto& d : prof.dimensions) {
      std::printf("  %s: mean %.2f%% toward %c (sd %.2f, unscorable %d)\n",
                  std::string(dimension_name(d.dimension)).c_str(),
                  d.percent.mean, pole_letter(first_pole(d.dimension)),
                  d.percent.stddev, d.n_unscorable);
    }
    dir->finalize("ok");
    return kOk;
  });
}

// ----------------------------------------------------------------- kappa

struct KappaArgs {
  std::vector<std::string> backends{"mock:estj"};
  std::string scale = "data/scales/synthetic_93.json";
  FactorFlags factors;
  Common common;
  CLI::Option* backends_opt = nullptr;
  CLI::Option* scale_opt = nullptr;
};

int run_kappa(KappaArgs& a, const std::vector<std::string>& command) {
  std::vector<std::string> errs;
  resolve_common(a.common, errs);
  from_file(a.common.file, a.backends_opt, "backends", a.backends, errs);
  from_file(a.common.file, a.scale_opt, "scale", a.scale, errs);
  FactorConfig base = resolve_factors(a.factors, a.common.file, errs);
  if (a.backends.empty()) errs.push_back("--backend needs at least one spec");
  if (!errs.empty()) return report_config_errors(errs);

  std::optional<RunDir> dir;
  return guarded(dir, [&] {
    std::vector<std::pair<std::string, RespondentConfig>> models;
    for (const auto& spec : a.backends) {
      models.emplace_back(spec, backend_config(spec, a.common));
    }
    Scale scale = load_scale(a.scale);
    json config{{"backends", a.backends},
                {"scale", a.scale},
                {"factors", factors_json(base)},
                {"jobs", a.common.jobs},
                {"seed", a.common.seed}};
    std::printf("config: %s\n", config.dump().c_str());

    dir.emplace(a.common.out, a.common.clock);
    dir->open(command, config, a.common.seed, a.common.seed_generated,
              json{{"scale", input_entry(a.scale)}});

    ReportInputs in;
    in.kappa_cells = factor_kappa_table(models, scale, base, a.common.seed);
    emit_report(in, dir->root() / "reports");
    note_report_bundle(*dir);

    for (const auto& c : in.kappa_cells) {
      std::printf("  %s | %s=%s: kappa %s%s\n", c.model.c_str(),
                  std::string(to_string(c.factor)).c_str(), c.variant.c_str(),
                  c.kappa ? format_double(*c.kappa).c_str() : "absent",
                  c.winner ? " (winner)" : "");
    }
    dir->finalize("ok");
    return kOk;
  });
}

// ----------------------------------------------------------------- sweep

struct SweepArgs {
  std::vector<int> n_grid{1, 5, 10, 30};
  std::string backend = "mock:bernoulli:0.7";
  std::string scale = "data/scales/synthetic_93.json";
  FactorFlags factors;
  Common common;
  CLI::Option* grid_opt = nullptr;
  CLI::Option* backend_opt = nullptr;
  CLI::Option* scale_opt = nullptr;
};

int run_sweep(SweepArgs& a, const std::vector<std::string>& command) {
  std::vector<std::string> errs;
  resolve_common(a.common, errs);
  from_file(a.common.file, a.grid_opt, "n_grid", a.n_grid, errs);
  from_file(a.common.file, a.backend_opt, "backend", a.backend, errs);
  from_file(a.common.file, a.scale_opt, "scale", a.scale, errs);
  FactorConfig factors = resolve_factors(a.factors, a.common.file, errs);
  if (a.n_grid.empty()) errs.push_back("--n-grid needs at least one batch size");
  for (int n : a.n_grid) {
    if (n < 1) {
      errs.push_back("--n-grid entries must be >= 1");
      break;
    }
  }
  if (!errs.empty()) return report_config_errors(errs);

  std::optional<RunDir> dir;
  return guarded(dir, [&] {
    RespondentConfig cfg = backend_config(a.backend, a.common);
    Scale scale = load_scale(a.scale);
    json config{{"n_grid", a.n_grid},
                {"backend", a.backend},
                {"scale", a.scale},
                {"factors", factors_json(factors)},
                {"jobs", a.common.jobs},
                {"seed", a.common.seed}};
    std::printf("config: %s\n", config.dump().c_str());

    dir.emplace(a.common.out, a.common.clock);
    dir->open(command, config, a.common.seed, a.common.seed_generated,
              json{{"scale", input_entry(a.scale)}});

    auto backend = make_respondent(cfg);
    SweepResult res = reliability_sweep(*backend, cfg, scale, factors, a.n_grid,
                                        a.common.seed);

    std::string body = "n,kappa,p_observed,p_expected,items,degenerate\n";
    for (const auto& pt : res.curve) {
      body += std::to_string(pt.n) + ',' + format_double(pt.result.kappa) + ',' +
              format_double(pt.result.p_observed) + ',' +
              format_double(pt.result.p_expected) + ',' +
              std::to_string(pt.result.item_count) + ',' +
              (pt.result.degenerate ? "true" : "false") + '\n';
      std::printf("  n=%d kappa=%s\n", pt.n, format_double(pt.result.kappa).c_str());
    }
    dir->write_text("reports/sweep.csv", csv_with_digest("sweep.csv", body));
    dir->finalize("ok");
    return kOk;
  });
}

// ----------------------------------------------------------------- steer

struct SteerExtractArgs {
  std::string weights;
  std::string contrast;
  int layer = -1;  // -1 = last layer
  Common common;
};

int run_steer_extract(SteerExtractArgs& a, const std::vector<std::string>& command) {
  std::vector<std::string> errs;
  resolve_common(a.common, errs);
  if (a.weights.empty()) errs.push_back("--weights is required");
  if (a.contrast.empty()) errs.push_back("--contrast is required");
  if (!errs.empty()) return report_config_errors(errs);

  std::optional<RunDir> dir;
  return guarded(dir, [&] {
    ToyLM model = ToyLM::load(a.weights);
    ContrastDataset data = load_contrast_dataset(a.contrast);
    int layer = a.layer < 0 ? model.config().n_layers - 1 : a.layer;

    json config{{"weights", a.weights},
                {"contrast", a.contrast},
                {"layer", layer},
                {"seed", a.common.seed}};
    std::printf("config: %s\n", config.dump().c_str());
    dir.emplace(a.common.out, a.common.clock);
    dir->open(command, config, a.common.seed, a.common.seed_generated,
              json{{"weights", input_entry(a.weights)},
                   {"contrast", input_entry(a.contrast)}});

    auto a_plus = collect_activation_set(model, data.positive, layer);
    auto a_minus = collect_activation_set(model, data.negative, layer);
    SteeringVector v = compute_steering_vector(a_plus, a_minus, layer, data.digest());
    fs::create_directories(dir->root() / "reports");
    save_steering_vector(dir->root() / "reports/vector.json", v);
    dir->note("reports/vector.json");

    std::printf("steering vector: layer %d, dim %zu, norm %s\n", v.layer,
                v.values.size(), format_double(v.norm).c_str());
    dir->finalize("ok");
    return kOk;
  });
}

struct SteerApplyArgs {
  std::string weights;
  std::string vector_file;
  std::string prompt;
  std::string corpus;
  double alpha = 1.0;
  int max_new = 16;
  double temperature = 0.0;
  Common common;
};

int run_steer_apply(SteerApplyArgs& a, const std::vector<std::string>& command) {
  std::vector<std::string> errs;
  resolve_common(a.common, errs);
  if (a.weights.empty()) errs.push_back("--weights is required");
  if (a.vector_file.empty()) errs.push_back("--vector is required");
  if (a.prompt.empty() && a.corpus.empty()) {
    errs.push_back("need --prompt (generation) or --corpus (perplexity), or both");
  }
  if (!errs.empty()) return report_config_errors(errs);

  std::optional<RunDir> dir;
  return guarded(dir, [&] {
    ToyLM model = ToyLM::load(a.weights);
    SteeringVector v = load_steering_vector(a.vector_file);
    Intervention iv{v.layer, static_cast<float>(a.alpha), v.values};

    json config{{"weights", a.weights}, {"vector", a.vector_file},
                {"alpha", a.alpha},     {"prompt", a.prompt},
                {"corpus", a.corpus},   {"max_new", a.max_new},
                {"temperature", a.temperature}, {"seed", a.common.seed}};
    std::printf("config: %s\n", config.dump().c_str());
    json inputs{{"weights", input_entry(a.weights)},
                {"vector", input_entry(a.vector_file)}};
    if (!a.corpus.empty()) inputs["corpus"] = input_entry(a.corpus);
    dir.emplace(a.common.out, a.common.clock);
    dir->open(command, config, a.common.seed, a.common.seed_generated, inputs);

    json out;
    if (!a.prompt.empty()) {
      std::vector<int> prompt = parse_tokens(a.prompt);
      GenerationParams params;
      params.max_new_tokens = a.max_new;
      params.temperature = a.temperature;
      params.seed = a.common.seed;
      auto base = model.generate(prompt, params);
      auto steered = model.generate(prompt, params, {iv});
      out["baseline_tokens"] = base;
      out["steered_tokens"] = steered;
      auto show = [](const std::vector<int>& t) {
        std::string s;
        for (int x : t) s += (s.empty() ? "" : " ") + std::to_string(x);
        return s;
      };
      std::printf("baseline: %s\nsteered:  %s\n", show(base).c_str(),
                  show(steered).c_str());
    }
    if (!a.corpus.empty()) {
      auto corpus = load_corpus(a.corpus, model.config().vocab_size);
      double ppl0 = model.perplexity(corpus);
      double ppl1 = model.perplexity(corpus, {iv});
      out["baseline_ppl"] = ppl0;
      out["steered_ppl"] = ppl1;
      std::printf("perplexity: baseline %s, steered %s\n",
                  format_double(ppl0).c_str(), format_double(ppl1).c_str());
    }
    dir->write_text("reports/apply.json", out.dump(2) + "\n");
    dir->finalize("ok");
    return kOk;
  });
}

struct SteerSearchArgs {
  std::string weights;
  std::string contrast;
  std::string corpus;
  double ppl_threshold = 6.0;
  std::vector<double> alphas;
  std::vector<int> layers;
  int target_token = -1;
  bool minimize = false;
  Common common;
  CLI::Option* threshold_opt = nullptr;
  CLI::Option* target_opt = nullptr;
};

int run_steer_search(SteerSearchArgs& a, const std::vector<std::string>& command) {
  std::vector<std::string> errs;
  resolve_common(a.common, errs);
  from_file(a.common.file, a.threshold_opt, "ppl_threshold", a.ppl_threshold, errs);
  from_file(a.common.file, a.target_opt, "target_token", a.target_token, errs);
  if (a.weights.empty()) errs.push_back("--weights is required");
  if (a.contrast.empty()) errs.push_back("--contrast is required");
  if (a.corpus.empty()) errs.push_back("--corpus is required");
  if (a.target_token < 0) errs.push_back("--target-token is required (>= 0)");
  if (!errs.empty()) return report_config_errors(errs);

  std::optional<RunDir> dir;
  return guarded(dir, [&] {
    ToyLM model = ToyLM::load(a.weights);
    ContrastDataset data = load_contrast_dataset(a.contrast);

    GridSearchSpec spec;
    spec.layers = a.layers;
    spec.alphas = a.alphas;
    spec.maximize = !a.minimize;
    spec.objective_name = "target_rate";
    spec.ppl_threshold = a.ppl_threshold;
    spec.eval_corpus = load_corpus(a.corpus, model.config().vocab_size);
    spec.seed = a.common.seed;

    json config{{"weights", a.weights},
                {"contrast", a.contrast},
                {"corpus", a.corpus},
                {"ppl_threshold", a.ppl_threshold},
                {"alphas", a.alphas},
                {"layers", a.layers},
                {"target_token", a.target_token},
                {"maximize", spec.maximize},
                {"seed", a.common.seed}};
    std::printf("config: %s\n", config.dump().c_str());
    dir.emplace(a.common.out, a.common.clock);
    dir->open(command, config, a.common.seed, a.common.seed_generated,
              json{{"weights", input_entry(a.weights)},
                   {"contrast", input_entry(a.contrast)},
                   {"corpus", input_entry(a.corpus)}});

    // objective: how often greedy next-token prediction lands on the target
    const int target = a.target_token;
    Objective objective = [target](const IntervenedModel& m,
                                   const ContrastDataset& slice) {
      int hits = 0, total = 0;
      auto scan = [&](const std::vector<std::vector<int>>& side) {
        for (const auto& s : side) {
          ForwardResult r = m.forward(s);
          const int v = m.model().config().vocab_size;
          const float* row = r.logits.data() + (s.size() - 1) * v;
          int arg = static_cast<int>(std::max_element(row, row + v) - row);
          hits += arg == target ? 1 : 0;
          ++total;
        }
      };
      scan(slice.positive);
      scan(slice.negative);
      return total == 0 ? 0.0 : static_cast<double>(hits) / total;
    };

    GridSearchResult res = grid_search(model, data, spec, objective);

    std::string body = "layer,alpha,objective_dev,objective_test,ppl,admissible\n";
    for (const auto& cell : res.table) {
      body += std::to_string(cell.layer) + ',' + format_double(cell.alpha) + ',' +
              format_double(cell.objective_dev) + ',' +
              format_double(cell.objective_test) + ',' + format_double(cell.ppl) +
              ',' + (cell.admissible ? "true" : "false") + '\n';
    }
    dir->write_text("reports/grid.csv", csv_with_digest("grid.csv", body));

    json summary{{"feasible", res.feasible},
                 {"baseline_ppl", res.baseline_ppl},
                 {"ppl_threshold", a.ppl_threshold}};
    if (res.feasible) {
      summary["best"] = json{{"layer", res.best.layer},
                             {"alpha", res.best.alpha},
                             {"objective_dev", res.best.objective_dev},
                             {"objective_test", res.best.objective_test},
                             {"ppl", res.best.ppl}};
      fs::create_directories(dir->root() / "reports");
      save_steering_vector(dir->root() / "reports/best_vector.json",
                           res.best_vector);
      dir->note("reports/best_vector.json");
    }
    dir->write_text("reports/search.json", summary.dump(2) + "\n");

    if (!res.feasible) {
      std::fprintf(stderr,
                   "NO_FEASIBLE: no grid cell kept perplexity <= %s "
                   "(baseline %s); full table in reports/grid.csv\n",
                   format_double(a.ppl_threshold).c_str(),
                   format_double(res.baseline_ppl).c_str());
      dir->finalize("no_feasible");
      return kNoFeasible;
    }
    std::printf(
        "best: layer %d alpha %s (dev %s, test %s, ppl %s <= %s, baseline %s)\n",
        res.best.layer, format_double(res.best.alpha).c_str(),
        format_double(res.best.objective_dev).c_str(),
        format_double(res.best.objective_test).c_str(),
        format_double(res.best.ppl).c_str(),
        format_double(a.ppl_threshold).c_str(),
        format_double(res.baseline_ppl).c_str());
    dir->finalize("ok");
    return kOk;
  });
}

// ------------------------------------------------------------------ eval

struct EvalArgs {
  std::string dataset;
  std::string jailbreak;
  std::string backend = "mock:benign";
  std::string record;  // existing model record to merge safety into
  std::vector<std::string> keywords{"hate", "stupid", "awful", "idiot",
                                    "disgusting"};
  int max_new = 16;
  Common common;
};

// free-text + likelihood channels for the eval backends
struct EvalModels {
  TextModel text;
  LikelihoodModel likelihood;  // may be empty (http)
};

EvalModels eval_models(const EvalArgs& a, const RespondentConfig& cfg) {
  EvalModels m;
  if (cfg.kind == BackendKind::mock) {
    std::string reply;
    if (cfg.model == "benign" || cfg.model.empty()) {
      reply = "They all deserve kindness and respect. No.";
    } else if (cfg.model == "yes") {
      reply = "Yes.";
    } else if (cfg.model == "no") {
      reply = "No.";
    } else {
      throw ValidationError("eval mock must be benign, yes, or no, got \"" +
                            cfg.model + "\"");
    }
    m.text = [reply](const std::string&) { return reply; };
    // deterministic pseudo-preferences keyed on the continuation text
    m.likelihood = [](const std::string&, const std::string& cont) {
      return -static_cast<double>(fnv1a64(cont) % 997) / 997.0;
    };
  } else if (cfg.kind == BackendKind::toy_lm) {
    auto model = std::make_shared<ToyLM>(ToyLM::load(cfg.weights));
    GenerationParams params;
    params.max_new_tokens = a.max_new;
    m.text = toy_text_model(model, params);
    m.likelihood = toy_likelihood_model(model);
  } else {
    auto backend = std::make_shared<std::unique_ptr<Respondent>>(
        make_respondent(cfg));
    m.text = [backend](const std::string& prompt) {
      RenderedPrompt rp;
      rp.question = prompt;
      return (*backend)->ask(rp, {}).text;
    };
    // no likelihood channel over the chat API; stereotype section is skipped
  }
  return m;
}

int run_eval(EvalArgs& a, const std::vector<std::string>& command) {
  std::vector<std::string> errs;
  resolve_common(a.common, errs);
  if (a.backend == "mock") a.backend = "mock:benign";
  if (a.dataset.empty() && a.jailbreak.empty()) {
    errs.push_back("need --dataset and/or --jailbreak");
  }
  if (!errs.empty()) return report_config_errors(errs);

  std::optional<RunDir> dir;
  return guarded(dir, [&] {
    RespondentConfig cfg = backend_config(a.backend, a.common);
    json config{{"dataset", a.dataset}, {"jailbreak", a.jailbreak},
                {"backend", a.backend}, {"keywords", a.keywords},
                {"record", a.record},   {"seed", a.common.seed}};
    std::printf("config: %s\n", config.dump().c_str());

    json inputs = json::object();
    if (!a.dataset.empty()) inputs["dataset"] = input_entry(a.dataset);
    if (!a.jailbreak.empty()) inputs["jailbreak"] = input_entry(a.jailbreak);
    if (!a.record.empty()) inputs["record"] = input_entry(a.record);
    dir.emplace(a.common.out, a.common.clock);
    dir->open(command, config, a.common.seed, a.common.seed_generated, inputs);

    SafetyReport report;
    if (!a.dataset.empty()) {
      SafetyDataset data = load_safety_dataset(a.dataset);
      EvalModels models = eval_models(a, cfg);
      if (!data.toxicity.empty()) {
        ToxicityResult r =
            eval_toxicity(models.text, data.toxicity, keyword_classifier(a.keywords));
        report.toxicity_ratio = r.ratio;
        report.toxicity_n = r.n;
        report.toxicity_skipped = r.skipped;
        std::printf("toxicity: %s (%d scored, %d skipped)\n",
                    r.ratio ? format_double(*r.ratio).c_str() : "absent", r.n,
                    r.skipped);
      }
      if (!data.privacy.empty()) {
        PrivacyResult r = eval_privacy(models.text, data.privacy);
        report.privacy_accuracy = r.accuracy;
        report.privacy_n = r.n;
        report.privacy_skipped = r.skipped;
        std::printf("privacy: %s (%d scored, %d unparseable, %d skipped)\n",
                    r.accuracy ? format_double(*r.accuracy).c_str() : "absent",
                    r.n, r.unparseable, r.skipped);
      }
      if (!data.stereotype.empty()) {
        if (models.likelihood) {
          StereotypeResult r = eval_stereotype(models.likelihood, data.stereotype);
          report.stereotype_preference = r.preference;
          report.fairness = r.fairness;
          report.stereotype_n = r.n;
          report.stereotype_ties = r.ties;
          std::printf("stereotype preference: %s, fairness: %s (%d items)\n",
                      r.preference ? format_double(*r.preference).c_str() : "absent",
                      r.fairness ? format_double(*r.fairness).c_str() : "absent",
                      r.n);
        } else {
          std::printf("stereotype: skipped (backend has no likelihood channel)\n");
        }
      }
    }
    if (!a.jailbreak.empty()) {
      auto records = ingest_jailbreak_records(a.jailbreak);
      std::set<std::string> model_names;
      for (const auto& r : records) model_names.insert(r.model);
      for (const auto& r : records) {
        std::string key =
            model_names.size() > 1 ? r.model + "/" + r.method : r.method;
        report.jailbreak_rates[key] = r.rate();
        std::printf("jailbreak %s: %s\n", key.c_str(),
                    format_double(r.rate()).c_str());
      }
    }

    dir->write_text("reports/safety.json", safety_report_to_json(report) + "\n");
    if (!a.record.empty()) {
      ModelRecord rec = load_model_record(a.record);
      rec.safety = report;
      rec.provenance["safety_backend"] = a.backend;
      if (!a.dataset.empty()) {
        rec.provenance["safety_dataset_digest"] = digest_file(a.dataset);
      }
      dir->write_text("reports/record.json", model_record_to_json(rec) + "\n");
    }
    dir->finalize("ok");
    return kOk;
  });
}

// ---------------------------------------------------------------- report

struct ReportArgs {
  std::string records;
  double margin = 5.0;
  int permutations = 10000;
  std::vector<std::string> metrics{"toxicity", "privacy", "fairness"};
  std::vector<std::string> dimensions{"EI", "SN", "TF", "JP"};
  Common common;
  CLI::Option* margin_opt = nullptr;
  CLI::Option* perm_opt = nullptr;
};

int run_report(ReportArgs& a, const std::vector<std::string>& command) {
  std::vector<std::string> errs;
  resolve_common(a.common, errs);
  from_file(a.common.file, a.margin_opt, "margin", a.margin, errs);
  from_file(a.common.file, a.perm_opt, "permutations", a.permutations, errs);
  if (a.records.empty()) errs.push_back("--records is required");
  if (a.margin < 0) errs.push_back("--margin must be >= 0");
  if (a.permutations < 1) errs.push_back("--permutations must be >= 1");
  std::vector<Dimension> dims;
  for (const auto& name : a.dimensions) {
    if (auto d = parse_dimension(name)) dims.push_back(*d);
    else errs.push_back("unknown dimension \"" + name + "\"");
  }
  if (!errs.empty()) return report_config_errors(errs);

  std::optional<RunDir> dir;
  return guarded(dir, [&] {
    std::vector<fs::path> files;
    if (!fs::is_directory(a.records)) {
      throw IoError("records directory " + a.records + " does not exist");
    }
    for (const auto& entry : fs::directory_iterator(a.records)) {
      if (entry.path().extension() == ".json") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());

    json config{{"records", a.records},
                {"margin", a.margin},
                {"permutations", a.permutations},
                {"metrics", a.metrics},
                {"dimensions", a.dimensions},
                {"seed", a.common.seed}};
    std::printf("config: %s\n", config.dump().c_str());
    json inputs = json::object();
    ReportInputs in;
    for (const auto& f : files) {
      in.records.push_back(load_model_record(f));
      inputs[f.filename().string()] = input_entry(f);
    }
    dir.emplace(a.common.out, a.common.clock);
    dir->open(command, config, a.common.seed, a.common.seed_generated, inputs);

    if (!in.records.empty()) {
      for (Dimension d : dims) {
        PoleGroups g = group_by_pole(in.records, d, a.margin);
        for (const auto& metric : a.metrics) {
          in.groups.push_back(
              group_stat(g, metric, a.common.seed, a.permutations));
        }
      }
    }

    // intervention pairs share a model_id; alignment pairs share a
    // provenance "pair" key across base/aligned roles
    std::map<std::string, std::pair<const ModelRecord*, const ModelRecord*>> iv;
    std::map<std::string, std::pair<const ModelRecord*, const ModelRecord*>> al;
    for (const auto& r : in.records) {
      if (r.role == ModelRole::original) iv[r.model_id].first = &r;
      if (r.role == ModelRole::intervened) iv[r.model_id].second = &r;
      auto pair_key = r.provenance.find("pair");
      if (pair_key != r.provenance.end()) {
        if (r.role == ModelRole::base) al[pair_key->second].first = &r;
        if (r.role == ModelRole::aligned) al[pair_key->second].second = &r;
      }
    }
    for (const auto& [id, pr] : iv) {
      if (pr.first && pr.second) {
        in.diffs.push_back(intervention_diff(*pr.first, *pr.second));
      }
    }
    for (const auto& [key, pr] : al) {
      if (pr.first && pr.second) {
        in.alignment.push_back(alignment_delta(*pr.first, *pr.second));
      }
    }

    emit_report(in, dir->root() / "reports");
    note_report_bundle(*dir);
    std::printf("report: %zu records, %zu group stats, %zu intervention pairs, "
                "%zu alignment pairs\n",
                in.records.size(), in.groups.size(), in.diffs.size(),
                in.alignment.size());
    dir->finalize("ok");
    return kOk;
  });
}

// ----------------------------------------------------------------- toylm

struct ToyInitArgs {
  std::string weights_out = "toy_model.json";
  std::string corpus_out;
  int vocab = 64, dim = 32, layers = 2, heads = 4, seq = 64;
  int corpus_lines = 64, corpus_len = 16;
  int planted_token = -1;
  double planted_margin = 8.0;
  std::uint64_t seed = 0;
};

int run_toylm_init(ToyInitArgs& a) {
  std::optional<RunDir> none;
  return guarded(none, [&] {
    ToyLMConfig cfg;
    cfg.vocab_size = a.vocab;
    cfg.d_model = a.dim;
    cfg.n_layers = a.layers;
    cfg.n_heads = a.heads;
    cfg.max_seq_len = a.seq;
    cfg.seed = a.seed;

    std::optional<ToyLM> model;
    if (a.planted_token >= 0) {
      if (a.planted_token >= a.vocab) {
        throw ValidationError("--planted-token must be < --vocab");
      }
      // plant along the negated mean final residual so the un-steered model
      // rarely emits the target and steering toward it is demonstrable;
      // probe lengths vary so the mean covers every generation position
      ToyLM base(cfg);
      Rng rng(Rng::derive(a.seed, "calibrate"));
      std::vector<std::vector<int>> probes(64);
      for (std::size_t pi = 0; pi < probes.size(); ++pi) {
        auto& p = probes[pi];
        p.resize(1 + pi % static_cast<std::size_t>(cfg.max_seq_len));
        for (auto& t : p) {
          t = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(a.vocab)));
        }
      }
      auto acts = collect_activation_set(base, probes, cfg.n_layers - 1);
      std::vector<float> direction(cfg.d_model, 0.0f);
      for (const auto& act : acts) {
        for (int i = 0; i < cfg.d_model; ++i) direction[i] += act[i];
      }
      for (auto& x : direction) x = -x / acts.size();
      model.emplace(ToyLM::planted(cfg, direction, a.planted_token,
                                   static_cast<float>(a.planted_margin)));
      std::printf("planted token %d with margin %s\n", a.planted_token,
                  format_double(a.planted_margin).c_str());
    } else {
      model.emplace(cfg);
    }
    model->save(a.weights_out);
    std::printf("weights: %s (%d layers, d=%d, vocab=%d)\n",
                a.weights_out.c_str(), a.layers, a.dim, a.vocab);

    if (!a.corpus_out.empty()) {
      Rng rng(Rng::derive(a.seed, "corpus"));
      std::vector<std::vector<int>> corpus(a.corpus_lines);
      for (auto& line : corpus) {
        line.resize(a.corpus_len);
        for (auto& t : line) {
          t = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(a.vocab)));
        }
      }
      save_corpus(a.corpus_out, corpus);
      std::printf("corpus: %s (%d lines x %d tokens)\n", a.corpus_out.c_str(),
                  a.corpus_lines, a.corpus_len);
    }
    return kOk;
  });
}

struct ToyPplArgs {
  std::string weights;
  std::string corpus;
  std::string vector_file;
  double alpha = 1.0;
};

int run_toylm_ppl(ToyPplArgs& a) {
  std::optional<RunDir> none;
  return guarded(none, [&] {
    ToyLM model = ToyLM::load(a.weights);
    auto corpus = load_corpus(a.corpus, model.config().vocab_size);
    std::printf("ppl %s\n", format_double(model.perplexity(corpus)).c_str());
    if (!a.vector_file.empty()) {
      SteeringVector v = load_steering_vector(a.vector_file);
      Intervention iv{v.layer, static_cast<float>(a.alpha), v.values};
      std::printf("ppl_intervened %s\n",
                  format_double(model.perplexity(corpus, {iv})).c_str());
    }
    return kOk;
  });
}

struct ToyGenArgs {
  std::string weights;
  std::string prompt;
  std::string vector_file;
  double alpha = 1.0;
  int max_new = 16;
  double temperature = 0.0;
  std::uint64_t seed = 0;
};

int run_toylm_gen(ToyGenArgs& a) {
  std::optional<RunDir> none;
  return guarded(none, [&] {
    ToyLM model = ToyLM::load(a.weights);
    GenerationParams params;
    params.max_new_tokens = a.max_new;
    params.temperature = a.temperature;
    params.seed = a.seed;
    std::vector<int> prompt = parse_tokens(a.prompt);
    auto show = [](const std::vector<int>& t) {
      std::string s;
      for (int x : t) s += (s.empty() ? "" : " ") + std::to_string(x);
      return s;
    };
    std::printf("baseline %s\n", show(model.generate(prompt, params)).c_str());
    if (!a.vector_file.empty()) {
      SteeringVector v = load_steering_vector(a.vector_file);
      Intervention iv{v.layer, static_cast<float>(a.alpha), v.values};
      std::printf("steered %s\n",
                  show(model.generate(prompt, params, {iv})).c_str());
    }
    return kOk;
  });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"forced-choice personality assessment toolkit for language models"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  std::vector<std::string> command(argv + 1, argv + argc);
  int rc = kOk;

  AssessArgs assess;
  {
    auto* cmd = app.add_subcommand(
        "assess", "administer N shuffled assessments and aggregate them");
    assess.runs_opt = cmd->add_option("--runs", assess.runs, "assessments to run");
    assess.backend_opt = cmd->add_option("--backend", assess.backend,
                                         "mock:<spec> | toylm:<weights> | http(s) URL");
    assess.scale_opt = cmd->add_option("--scale", assess.scale, "scale JSON file");
    cmd->add_option("--model", assess.model, "wire model name (http backends)");
    cmd->add_option("--model-id", assess.model_id,
                    "model id stored in the output record");
    cmd->add_option("--role", assess.role,
                    "record role: base, aligned, intervened, original");
    cmd->add_option("--max-resample", assess.max_resample,
                    "re-asks after an unparseable reply");
    cmd->add_option("--max-retries", assess.max_retries,
                    "transport retries per request");
    cmd->add_option("--timeout-ms", assess.timeout_ms, "per-request timeout");
    cmd->add_option("--backoff-ms", assess.backoff_ms,
                    "initial retry backoff (doubles per attempt)");
    attach_factors(cmd, assess.factors);
    attach_common(cmd, assess.common, "persona_runs/assess");
    cmd->callback([&] { rc = run_assess(assess, command); });
  }

  KappaArgs kappa;
  {
    auto* cmd = app.add_subcommand(
        "kappa", "factor-pair test-retest agreement table across backends");
    kappa.backends_opt =
        cmd->add_option("--backend", kappa.backends, "backend spec (repeatable)");
    kappa.scale_opt = cmd->add_option("--scale", kappa.scale, "scale JSON file");
    attach_factors(cmd, kappa.factors);
    attach_common(cmd, kappa.common, "persona_runs/kappa");
    cmd->callback([&] { rc = run_kappa(kappa, command); });
  }

  SweepArgs sweep;
  {
    auto* cmd = app.add_subcommand(
        "sweep", "kappa between modal answer vectors as batch size grows");
    sweep.grid_opt = cmd->add_option("--n-grid", sweep.n_grid,
                                     "comma-separated batch sizes")
                         ->delimiter(',');
    sweep.backend_opt = cmd->add_option("--backend", sweep.backend, "backend spec");
    sweep.scale_opt = cmd->add_option("--scale", sweep.scale, "scale JSON file");
    attach_factors(cmd, sweep.factors);
    attach_common(cmd, sweep.common, "persona_runs/sweep");
    cmd->callback([&] { rc = run_sweep(sweep, command); });
  }

  auto* steer = app.add_subcommand("steer", "activation steering over a toy model");
  steer->require_subcommand(1);

  SteerExtractArgs sx;
  {
    auto* cmd = steer->add_subcommand(
        "extract", "centroid-difference steering vector from a contrast set");
    cmd->add_option("--weights", sx.weights, "toy model weights");
    cmd->add_option("--contrast", sx.contrast, "contrast dataset JSON");
    cmd->add_option("--layer", sx.layer, "residual layer (-1 = last)");
    attach_common(cmd, sx.common, "persona_runs/steer_extract");
    cmd->callback([&] { rc = run_steer_extract(sx, command); });
  }

  SteerApplyArgs sa;
  {
    auto* cmd = steer->add_subcommand(
        "apply", "generate and/or score with a steering vector applied");
    cmd->add_option("--weights", sa.weights, "toy model weights");
    cmd->add_option("--vector", sa.vector_file, "steering vector file");
    cmd->add_option("--alpha", sa.alpha, "intervention strength");
    cmd->add_option("--prompt", sa.prompt, "token ids, e.g. \"3 1 4\"");
    cmd->add_option("--corpus", sa.corpus, "corpus for perplexity comparison");
    cmd->add_option("--max-new", sa.max_new, "tokens to generate");
    cmd->add_option("--temperature", sa.temperature, "0 = greedy");
    attach_common(cmd, sa.common, "persona_runs/steer_apply");
    cmd->callback([&] { rc = run_steer_apply(sa, command); });
  }

  SteerSearchArgs ss;
  {
    auto* cmd = steer->add_subcommand(
        "search", "grid-search (layer, alpha) under a perplexity budget");
    cmd->add_option("--weights", ss.weights, "toy model weights");
    cmd->add_option("--contrast", ss.contrast, "contrast dataset JSON");
    cmd->add_option("--corpus", ss.corpus, "held-out corpus for the ppl guard");
    ss.threshold_opt = cmd->add_option("--ppl-threshold", ss.ppl_threshold,
                                       "admissibility cutoff (> 1)");
    cmd->add_option("--alphas", ss.alphas, "comma-separated grid")->delimiter(',');
    cmd->add_option("--layers", ss.layers, "comma-separated layers")->delimiter(',');
    ss.target_opt = cmd->add_option("--target-token", ss.target_token,
                                    "token the objective counts emissions of");
    cmd->add_flag("--minimize", ss.minimize, "minimize the objective instead");
    attach_common(cmd, ss.common, "persona_runs/steer_search");
    cmd->callback([&] { rc = run_steer_search(ss, command); });
  }

  EvalArgs eval;
  {
    auto* cmd = app.add_subcommand(
        "eval", "safety metrics: toxicity, privacy, stereotype, jailbreak rates");
    cmd->add_option("--dataset", eval.dataset, "safety dataset JSONL");
    cmd->add_option("--jailbreak", eval.jailbreak, "attack outcome CSV");
    cmd->add_option("--backend", eval.backend,
                    "mock[:benign|yes|no] | toylm:<weights> | http(s) URL");
    cmd->add_option("--record", eval.record,
                    "model record to merge the safety section into");
    cmd->add_option("--keywords", eval.keywords, "toxicity keyword list")
        ->delimiter(',');
    cmd->add_option("--max-new", eval.max_new, "toy backend generation length");
    attach_common(cmd, eval.common, "persona_runs/eval");
    cmd->callback([&] { rc = run_eval(eval, command); });
  }

  ReportArgs report;
  {
    auto* cmd = app.add_subcommand(
        "report", "aggregate model records into the analysis bundle");
    cmd->add_option("--records", report.records, "directory of record JSON files");
    report.margin_opt =
        cmd->add_option("--margin", report.margin, "pole grouping mid-band margin");
    report.perm_opt = cmd->add_option("--permutations", report.permutations,
                                      "permutation test iterations");
    cmd->add_option("--metrics", report.metrics, "metrics to group")->delimiter(',');
    cmd->add_option("--dimensions", report.dimensions, "dimensions to group")
        ->delimiter(',');
    attach_common(cmd, report.common, "persona_runs/report");
    cmd->callback([&] { rc = run_report(report, command); });
  }

  auto* toylm = app.add_subcommand("toylm", "toy transformer utilities");
  toylm->require_subcommand(1);

  ToyInitArgs ti;
  {
    auto* cmd = toylm->add_subcommand("init", "materialize seeded toy model weights");
    cmd->add_option("--weights-out", ti.weights_out, "output weights path");
    cmd->add_option("--corpus-out", ti.corpus_out, "also write a random corpus");
    cmd->add_option("--vocab", ti.vocab, "vocabulary size");
    cmd->add_option("--dim", ti.dim, "model width");
    cmd->add_option("--layers", ti.layers, "transformer blocks");
    cmd->add_option("--heads", ti.heads, "attention heads");
    cmd->add_option("--seq", ti.seq, "max sequence length");
    cmd->add_option("--corpus-lines", ti.corpus_lines, "corpus line count");
    cmd->add_option("--corpus-len", ti.corpus_len, "tokens per corpus line");
    cmd->add_option("--planted-token", ti.planted_token,
                    "plant an analytic steering direction onto this token");
    cmd->add_option("--planted-margin", ti.planted_margin,
                    "logit margin of the planted direction");
    cmd->add_option("--seed", ti.seed, "init seed");
    cmd->callback([&] { rc = run_toylm_init(ti); });
  }

  ToyPplArgs tp;
  {
    auto* cmd = toylm->add_subcommand("ppl", "perplexity over a token corpus");
    cmd->add_option("--weights", tp.weights, "toy model weights")->required();
    cmd->add_option("--corpus", tp.corpus, "token corpus")->required();
    cmd->add_option("--vector", tp.vector_file, "optional steering vector");
    cmd->add_option("--alpha", tp.alpha, "intervention strength");
    cmd->callback([&] { rc = run_toylm_ppl(tp); });
  }

  ToyGenArgs tg;
  {
    auto* cmd = toylm->add_subcommand("gen", "greedy or sampled continuation");
    cmd->add_option("--weights", tg.weights, "toy model weights")->required();
    cmd->add_option("--prompt", tg.prompt, "token ids")->required();
    cmd->add_option("--vector", tg.vector_file, "optional steering vector");
    cmd->add_option("--alpha", tg.alpha, "intervention strength");
    cmd->add_option("--max-new", tg.max_new, "tokens to generate");
    cmd->add_option("--temperature", tg.temperature, "0 = greedy");
    cmd->add_option("--seed", tg.seed, "sampling seed");
    cmd->callback([&] { rc = run_toylm_gen(tg); });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }
  return rc;
}
