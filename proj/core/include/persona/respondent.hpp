#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "persona/questionnaire.hpp"

namespace persona {

enum class BackendKind { http, toy_lm, mock };

struct RespondentConfig {
  BackendKind kind = BackendKind::mock;
  std::string endpoint;  // http only, e.g. http://127.0.0.1:8080
  std::string model = "estj";  // model name, or mock/toy_lm spec
  std::string weights;         // toy_lm only: weight file path
  double temperature = 0.0;
  int max_resample = 2;  // re-asks after an unparseable reply
  int max_retries = 3;   // transport retries within one ask
  std::chrono::milliseconds timeout{30000};
  std::chrono::milliseconds backoff{250};  // doubles per retry
  int max_concurrent = 4;
};

struct RawResponse {
  std::string text;
  std::chrono::milliseconds latency{0};
  int attempt_index = 0;  // transport attempt that produced this reply
};

enum class ParseMethod { label_match, description_match, unparsed };

std::string_view to_string(ParseMethod m);

struct ParsedChoice {
  std::string item_id;
  std::optional<Pole> pole;  // nullopt = unparseable
  ParseMethod method = ParseMethod::unparsed;
  std::string raw_text;
};

struct ItemResult {
  PresentedItem presented;
  std::string prompt_hash;  // digest of the full rendered text
  RawResponse response;
  int resample_index = 0;  // which re-ask produced the final parse
  ParsedChoice choice;
};

struct AssessmentRun {
  FactorConfig factors;  // seed field holds this run's seed
  std::uint64_t run_seed = 0;
  std::string respondent;
  std::vector<ItemResult> items;  // scale order
  bool failed = false;
  std::string failure_reason;

  const ItemResult* find(std::string_view item_id) const;
};

// What a backend may consult besides the prompt. The http backend ignores
// everything here so the wire payload stays exactly the rendered prompt;
// mocks use it to key deterministic answers off the presentation.
struct AskContext {
  const PresentedItem* item = nullptr;
  std::uint64_t run_seed = 0;
  int attempt = 0;  // resample ordinal
};

class Respondent {
 public:
  virtual ~Respondent() = default;
  virtual RawResponse ask(const RenderedPrompt& prompt,
                          const AskContext& ctx) = 0;
  virtual std::string describe() const = 0;
};

// Mock spec strings: "estj" (or any 4-letter type), "first", "lexi",
// "bernoulli:<p>", "desc:<text>", "unparseable".
std::unique_ptr<Respondent> make_mock(const std::string& spec);

// Dispatches on cfg.kind; mock specs come from cfg.model.
std::unique_ptr<Respondent> make_respondent(const RespondentConfig& cfg);

ParsedChoice parse_choice(const RawResponse& raw, const PresentedItem& item);

using RunPersist = std::function<void(const AssessmentRun&)>;

// One full pass over the scale: permute, render, ask, parse. Unparseable
// replies are re-asked up to cfg.max_resample times with the same
// presentation. On a hard backend failure the partial run is handed to
// `persist` with `failed` set, then the error is rethrown.
AssessmentRun administer_run(const Scale& scale, FactorConfig factors,
                             Respondent& backend, const RespondentConfig& cfg,
                             std::uint64_t run_seed,
                             const RunPersist& persist = {});

}  // namespace persona
