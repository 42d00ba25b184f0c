#include "persona/respondent.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <mutex>
#include <thread>

#include "persona/digest.hpp"
#include "persona/error.hpp"
#include "persona/rng.hpp"

namespace persona {

std::string_view to_string(ParseMethod m) {
  switch (m) {
    case ParseMethod::label_match: return "label_match";
    case ParseMethod::description_match: return "description_match";
    case ParseMethod::unparsed: return "unparsed";
  }
  return "unparsed";
}

const ItemResult* AssessmentRun::find(std::string_view item_id) const {
  for (const auto& it : items) {
    if (it.presented.item_id == item_id) return &it;
  }
  return nullptr;
}

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) {
    c = static_cast<char>(
        std::tolower(static_cast<unsigned char>(c)));
  }
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() &&
         std::isspace(static_cast<unsigned char>(s.front()))) {
    s.remove_prefix(1);
  }
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) {
    s.remove_suffix(1);
  }
  return s;
}

bool trailing_punct(char c) {
  switch (c) {
    case '.':
    case ',':
    case ':':
    case ';':
    case ')':
    case ']':
    case '!':
    case '?':
      return true;
    default:
      return false;
  }
}

struct Span {
  std::size_t pos;
  std::size_t len;
};

std::vector<Span> find_all(const std::string& haystack,
                           const std::string& needle) {
  std::vector<Span> out;
  if (needle.empty()) return out;
  std::size_t pos = 0;
  while ((pos = haystack.find(needle, pos)) != std::string::npos) {
    out.push_back({pos, needle.size()});
    pos += 1;
  }
  return out;
}

bool contained_in_any(const Span& s, const std::vector<Span>& others) {
  for (const auto& o : others) {
    if (o.len > s.len && o.pos <= s.pos && s.pos + s.len <= o.pos + o.len) {
      return true;
    }
  }
  return false;
}

}  // namespace

ParsedChoice parse_choice(const RawResponse& raw, const PresentedItem& item) {
  ParsedChoice out;
  out.item_id = item.item_id;
  out.raw_text = raw.text;

  const std::string text(trim(raw.text));
  const std::string low = lower(text);

  // leading label token, tolerant of trailing punctuation
  std::string token = low.substr(0, low.find_first_of(" \t\r\n"));
  while (!token.empty() && trailing_punct(token.back())) token.pop_back();
  if (!token.empty()) {
    for (const auto& opt : item.options) {
      if (token == lower(opt.label)) {
        out.pole = opt.pole;
        out.method = ParseMethod::label_match;
        return out;
      }
    }
  }

  // unique description match; an occurrence swallowed by the other
  // option's longer description does not count ("agree" in "disagree")
  const std::array<std::vector<Span>, 2> spans = {
      find_all(low, lower(item.options[0].description)),
      find_all(low, lower(item.options[1].description)),
  };
  std::array<int, 2> live = {0, 0};
  for (int i = 0; i < 2; ++i) {
    for (const auto& s : spans[i]) {
      if (!contained_in_any(s, spans[1 - i])) live[i] += 1;
    }
  }
  if ((live[0] > 0) != (live[1] > 0)) {
    const int idx = live[0] > 0 ? 0 : 1;
    out.pole = item.options[idx].pole;
    out.method = ParseMethod::description_match;
    return out;
  }

  out.method = ParseMethod::unparsed;
  return out;
}

namespace {

std::string option_reply(const PresentedOption& opt) {
  return opt.label + ". " + opt.description;
}

class PoleMock final : public Respondent {
 public:
  explicit PoleMock(const std::string& type) : type_(lower(type)) {
    if (type.size() != 4) {
      throw ValidationError("mock type must be 4 letters, got \"" + type +
                            "\"");
    }
    for (int i = 0; i < 4; ++i) {
      const char up = static_cast<char>(
          std::toupper(static_cast<unsigned char>(type[i])));
      const auto pole = parse_pole(std::string_view(&up, 1));
      if (!pole || pole_dimension(*pole) != kAllDimensions[i]) {
        throw ValidationError("mock type \"" + type + "\": letter " +
                              std::to_string(i + 1) + " does not fit " +
                              std::string(dimension_name(kAllDimensions[i])));
      }
      prefs_[i] = *pole;
    }
  }

  RawResponse ask(const RenderedPrompt&, const AskContext& ctx) override {
    const PresentedItem& p = *ctx.item;
    const Pole want = prefs_[static_cast<int>(p.dimension)];
    for (const auto& opt : p.options) {
      if (opt.pole == want) return {option_reply(opt), {}, 0};
    }
    return {option_reply(p.options[0]), {}, 0};
  }

  std::string describe() const override { return "mock:" + type_; }

 private:
  std::string type_;
  std::array<Pole, 4> prefs_{};
};

class FirstOptionMock final : public Respondent {
 public:
  RawResponse ask(const RenderedPrompt&, const AskContext& ctx) override {
    return {option_reply(ctx.item->options[0]), {}, 0};
  }
  std::string describe() const override { return "mock:first"; }
};

// Deterministic and presentation-invariant: keys on the descriptions
// themselves, answering with the lexicographically smaller one.
class LexiMock final : public Respondent {
 public:
  RawResponse ask(const RenderedPrompt&, const AskContext& ctx) override {
    const auto& o = ctx.item->options;
    const auto& pick =
        o[0].description <= o[1].description ? o[0] : o[1];
    // phrased so a description starting with "a" cannot read as label A
    return {"my choice: " + pick.description, {}, 0};
  }
  std::string describe() const override { return "mock:lexi"; }
};

class BernoulliMock final : public Respondent {
 public:
  explicit BernoulliMock(double p) : p_(p) {
    if (!(p >= 0.0 && p <= 1.0)) {
      throw ValidationError("bernoulli mock probability must be in [0,1]");
    }
  }

  RawResponse ask(const RenderedPrompt&, const AskContext& ctx) override {
    const PresentedItem& p = *ctx.item;
    const std::uint64_t base = Rng::derive(ctx.run_seed, p.item_id);
    Rng rng(Rng::derive(base, 0xb0b, static_cast<std::uint64_t>(ctx.attempt)));
    const Pole want = rng.next_double() < p_ ? first_pole(p.dimension)
                                             : second_pole(p.dimension);
    for (const auto& opt : p.options) {
      if (opt.pole == want) return {option_reply(opt), {}, 0};
    }
    return {option_reply(p.options[0]), {}, 0};
  }

  std::string describe() const override {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "mock:bernoulli:%g", p_);
    return buf;
  }

 private:
  double p_;
};

class DescriptionMock final : public Respondent {
 public:
  explicit DescriptionMock(std::string text) : text_(std::move(text)) {}

  RawResponse ask(const RenderedPrompt&, const AskContext& ctx) override {
    for (const auto& opt : ctx.item->options) {
      if (opt.description == text_) return {option_reply(opt), {}, 0};
    }
    return {text_, {}, 0};
  }
  std::string describe() const override { return "mock:desc:" + text_; }

 private:
  std::string text_;
};

// Unparseable until attempt `threshold`, then answers the first option.
class FlakyMock final : public Respondent {
 public:
  explicit FlakyMock(int threshold) : threshold_(threshold) {
    if (threshold < 0) {
      throw ValidationError("flaky mock threshold must be >= 0");
    }
  }

  RawResponse ask(const RenderedPrompt&, const AskContext& ctx) override {
    if (ctx.attempt < threshold_) return {"hard to say", {}, 0};
    return {option_reply(ctx.item->options[0]), {}, 0};
  }
  std::string describe() const override {
    return "mock:flaky:" + std::to_string(threshold_);
  }

 private:
  int threshold_;
};

class UnparseableMock final : public Respondent {
 public:
  RawResponse ask(const RenderedPrompt&, const AskContext&) override {
    return {"both options seem fine to me", {}, 0};
  }
  std::string describe() const override { return "mock:unparseable"; }
};

}  // namespace

std::unique_ptr<Respondent> make_mock(const std::string& spec) {
  if (spec == "first") return std::make_unique<FirstOptionMock>();
  if (spec == "lexi") return std::make_unique<LexiMock>();
  if (spec == "unparseable") return std::make_unique<UnparseableMock>();
  if (spec.rfind("bernoulli:", 0) == 0) {
    try {
      return std::make_unique<BernoulliMock>(std::stod(spec.substr(10)));
    } catch (const std::logic_error&) {
      throw ValidationError("bad bernoulli mock spec: \"" + spec + "\"");
    }
  }
  if (spec.rfind("desc:", 0) == 0) {
    return std::make_unique<DescriptionMock>(spec.substr(5));
  }
  if (spec.rfind("flaky:", 0) == 0) {
    try {
      return std::make_unique<FlakyMock>(std::stoi(spec.substr(6)));
    } catch (const std::logic_error&) {
      throw ValidationError("bad flaky mock spec: \"" + spec + "\"");
    }
  }
  return std::make_unique<PoleMock>(spec);
}

std::unique_ptr<Respondent> make_http_respondent(const RespondentConfig& cfg);
std::unique_ptr<Respondent> make_toy_lm_respondent(const RespondentConfig& cfg);

std::unique_ptr<Respondent> make_respondent(const RespondentConfig& cfg) {
  switch (cfg.kind) {
    case BackendKind::mock: return make_mock(cfg.model);
    case BackendKind::http: return make_http_respondent(cfg);
    case BackendKind::toy_lm: return make_toy_lm_respondent(cfg);
  }
  throw ValidationError("unknown backend kind");
}

AssessmentRun administer_run(const Scale& scale, FactorConfig factors,
                             Respondent& backend, const RespondentConfig& cfg,
                             std::uint64_t run_seed,
                             const RunPersist& persist) {
  if (cfg.max_resample < 0) throw ValidationError("max_resample must be >= 0");
  if (cfg.max_concurrent < 1) {
    throw ValidationError("max_concurrent must be >= 1");
  }
  factors.seed = run_seed;

  AssessmentRun run;
  run.factors = factors;
  run.run_seed = run_seed;
  run.respondent = backend.describe();

  const std::size_t n = scale.items.size();
  std::vector<std::optional<ItemResult>> slots(n);
  std::atomic<std::size_t> next{0};
  std::atomic<bool> stop{false};
  std::mutex error_mu;
  std::exception_ptr first_error;

  auto worker = [&] {
    for (;;) {
      const std::size_t idx = next.fetch_add(1);
      if (idx >= n || stop.load()) return;
      const ScaleItem& sitem = scale.items[idx];
      try {
        const PresentedItem p = permute_item(sitem, factors);
        const RenderedPrompt prompt = render_prompt(p, factors);
        ItemResult res;
        res.presented = p;
        res.prompt_hash = digest_hex(fnv1a64(prompt.full_text()));
        for (int attempt = 0;; ++attempt) {
          AskContext ctx;
          ctx.item = &p;
          ctx.run_seed = run_seed;
          ctx.attempt = attempt;
          res.response = backend.ask(prompt, ctx);
          res.resample_index = attempt;
          res.choice = parse_choice(res.response, p);
          if (res.choice.pole.has_value() || attempt >= cfg.max_resample) {
            break;
          }
        }
        slots[idx] = std::move(res);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mu);
        if (!first_error) first_error = std::current_exception();
        stop.store(true);
        return;
      }
    }
  };

  const int threads =
      std::max(1, std::min<int>(cfg.max_concurrent, static_cast<int>(n)));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (int i = 0; i < threads; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  // single writer assembles the record in scale order
  for (auto& slot : slots) {
    if (slot.has_value()) run.items.push_back(std::move(*slot));
  }

  if (first_error) {
    run.failed = true;
    try {
      std::rethrow_exception(first_error);
    } catch (const std::exception& e) {
      run.failure_reason = e.what();
    } catch (...) {
      run.failure_reason = "unknown backend failure";
    }
    if (persist) persist(run);
    std::rethrow_exception(first_error);
  }
  if (persist) persist(run);
  return run;
}

}  // namespace persona
