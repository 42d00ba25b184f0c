#include <doctest.h>

#include <atomic>
#include <cstdlib>
#include <map>
#include <mutex>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "persona/error.hpp"
#include "persona/questionnaire.hpp"
#include "persona/respondent.hpp"
#include "persona/scoring.hpp"

using namespace persona;

namespace {

Scale load_mini() {
  return load_scale(std::string(PERSONA_FIXTURE_DIR) + "/scale_mini.json");
}

Scale load_full() {
  return load_scale(std::string(PERSONA_DATA_DIR) + "/scales/synthetic_93.json");
}

PresentedItem agree_item(LabelForm form = LabelForm::number) {
  PresentedItem p;
  p.item_id = "x1";
  p.dimension = Dimension::EI;
  p.language = "en";
  p.stem = "stem";
  const bool num = form == LabelForm::number;
  p.options[0] = {num ? "1" : "A", "Agree", Pole::E};
  p.options[1] = {num ? "2" : "B", "Disagree", Pole::I};
  return p;
}

RawResponse raw(const std::string& text) { return {text, {}, 0}; }

std::string chat_reply(const std::string& content) {
  nlohmann::json msg = {{"role", "assistant"}, {"content", content}};
  nlohmann::json j = {{"choices", nlohmann::json::array({nlohmann::json{
                          {"message", msg}}})}};
  return j.dump();
}

struct StubServer {
  httplib::Server svr;
  int port = 0;
  std::thread th;

  void start() {
    port = svr.bind_to_any_port("127.0.0.1");
    REQUIRE(port > 0);
    th = std::thread([this] { svr.listen_after_bind(); });
    svr.wait_until_ready();
  }
  std::string endpoint() const {
    return "http://127.0.0.1:" + std::to_string(port);
  }
  ~StubServer() {
    svr.stop();
    if (th.joinable()) th.join();
  }
};

RespondentConfig http_config(const StubServer& stub) {
  RespondentConfig cfg;
  cfg.kind = BackendKind::http;
  cfg.endpoint = stub.endpoint();
  cfg.model = "llama-2-7b-chat";
  cfg.backoff = std::chrono::milliseconds(1);
  return cfg;
}

}  // namespace

TEST_CASE("choice parsing") {
  PresentedItem p = agree_item();

  SUBCASE("label tokens") {
    CHECK(parse_choice(raw("2"), p).pole == Pole::I);
    CHECK(parse_choice(raw(" 1 "), p).pole == Pole::E);
    CHECK(parse_choice(raw("2."), p).pole == Pole::I);
    CHECK(parse_choice(raw("2: because"), p).pole == Pole::I);
    CHECK(parse_choice(raw("1) Agree"), p).pole == Pole::E);
    CHECK(parse_choice(raw("2. Disagree"), p).method == ParseMethod::label_match);
  }
  SUBCASE("alphabet labels are case-insensitive") {
    PresentedItem q = agree_item(LabelForm::alphabet);
    CHECK(parse_choice(raw("b"), q).pole == Pole::I);
    CHECK(parse_choice(raw("B. Disagree"), q).pole == Pole::I);
    CHECK(parse_choice(raw("a."), q).pole == Pole::E);
    CHECK(parse_choice(raw("b"), q).method == ParseMethod::label_match);
  }
  SUBCASE("description fallback") {
    ParsedChoice c = parse_choice(raw("Agree."), p);
    CHECK(c.pole == Pole::E);
    CHECK(c.method == ParseMethod::description_match);
    CHECK(parse_choice(raw("I agree with this"), p).pole == Pole::E);
  }
  SUBCASE("shorter description inside the longer one does not count") {
    CHECK(parse_choice(raw("I would disagree with that statement."), p).pole ==
          Pole::I);
    CHECK(parse_choice(raw("disagree"), p).pole == Pole::I);
  }
  SUBCASE("both descriptions present is ambiguous") {
    ParsedChoice c = parse_choice(raw("agree or disagree, hard to say"), p);
    CHECK_FALSE(c.pole.has_value());
    CHECK(c.method == ParseMethod::unparsed);
  }
  SUBCASE("chinese negation containment") {
    PresentedItem q = agree_item();
    q.options[0].description = "同意";
    q.options[1].description = "不同意";
    CHECK(parse_choice(raw("我同意这个说法"), q).pole == Pole::E);
    CHECK(parse_choice(raw("我不同意"), q).pole == Pole::I);
    CHECK(parse_choice(raw("不同意"), q).pole == Pole::I);
  }
  SUBCASE("garbage stays unparsed") {
    CHECK(parse_choice(raw(""), p).method == ParseMethod::unparsed);
    CHECK(parse_choice(raw("   "), p).method == ParseMethod::unparsed);
    CHECK(parse_choice(raw("42"), p).method == ParseMethod::unparsed);
    CHECK(parse_choice(raw("maybe?"), p).method == ParseMethod::unparsed);
  }
  SUBCASE("raw text is preserved") {
    CHECK(parse_choice(raw("2. Disagree"), p).raw_text == "2. Disagree");
    CHECK(parse_choice(raw("2"), p).item_id == "x1");
  }
}

TEST_CASE("mock respondents") {
  Scale scale = load_mini();
  const ScaleItem& q1 = scale.items[0];
  FactorConfig plain;
  plain.seed = 3;  // 3 leaves q1 unswapped
  FactorConfig flipped;
  flipped.seed = 11;  // 11 swaps q1

  SUBCASE("pole mock tracks its pole across presentations") {
    auto backend = make_mock("estj");
    for (const FactorConfig* cfg : {&plain, &flipped}) {
      PresentedItem p = permute_item(q1, *cfg);
      RenderedPrompt prompt = render_prompt(p, *cfg);
      AskContext ctx{&p, cfg->seed, 0};
      ParsedChoice c = parse_choice(backend->ask(prompt, ctx), p);
      CHECK(c.pole == Pole::E);
    }
  }
  SUBCASE("first-option mock follows the presentation") {
    auto backend = make_mock("first");
    PresentedItem a = permute_item(q1, plain);
    PresentedItem b = permute_item(q1, flipped);
    REQUIRE(a.swapped != b.swapped);
    AskContext ca{&a, 0, 0}, cb{&b, 0, 0};
    RenderedPrompt ra = render_prompt(a, plain), rb = render_prompt(b, flipped);
    CHECK(parse_choice(backend->ask(ra, ca), a).pole !=
          parse_choice(backend->ask(rb, cb), b).pole);
  }
  SUBCASE("lexi mock is presentation invariant") {
    auto backend = make_mock("lexi");
    PresentedItem a = permute_item(q1, plain);
    PresentedItem b = permute_item(q1, flipped);
    AskContext ca{&a, 0, 0}, cb{&b, 0, 0};
    CHECK(parse_choice(backend->ask(render_prompt(a, plain), ca), a).pole ==
          parse_choice(backend->ask(render_prompt(b, flipped), cb), b).pole);
  }
  SUBCASE("bernoulli mock is keyed by run seed, item, and attempt") {
    auto backend = make_mock("bernoulli:0.5");
    PresentedItem p = permute_item(q1, plain);
    RenderedPrompt r = render_prompt(p, plain);
    AskContext c1{&p, 77, 0}, c2{&p, 77, 0}, c3{&p, 78, 0};
    CHECK(backend->ask(r, c1).text == backend->ask(r, c2).text);
    bool differs = false;
    for (std::uint64_t s = 0; s < 32 && !differs; ++s) {
      AskContext ca{&p, s, 0};
      AskContext cb{&p, s + 1000, 0};
      differs = backend->ask(r, ca).text != backend->ask(r, cb).text;
    }
    CHECK(differs);
    (void)c3;
  }
  SUBCASE("bernoulli extremes") {
    FactorConfig cfg = plain;
    RespondentConfig rc;
    auto always = make_mock("bernoulli:1");
    auto never = make_mock("bernoulli:0");
    AssessmentRun r1 = administer_run(scale, cfg, *always, rc, 5);
    AssessmentRun r0 = administer_run(scale, cfg, *never, rc, 5);
    CHECK(score_run(r1, scale).type_code == "ESTJ");
    CHECK(score_run(r0, scale).type_code == "INFP");
  }
  SUBCASE("description mock answers by content") {
    auto backend = make_mock("desc:stay home and read");
    PresentedItem p = permute_item(q1, plain);
    AskContext ctx{&p, 0, 0};
    CHECK(parse_choice(backend->ask(render_prompt(p, plain), ctx), p).pole ==
          Pole::I);
  }
  SUBCASE("bad specs are rejected") {
    CHECK_THROWS_AS(make_mock("zz"), ValidationError);
    CHECK_THROWS_AS(make_mock("qqqq"), ValidationError);
    CHECK_THROWS_AS(make_mock("bernoulli:nope"), ValidationError);
    CHECK_THROWS_AS(make_mock("bernoulli:1.5"), ValidationError);
    CHECK_THROWS_AS(make_mock("flaky:x"), ValidationError);
    CHECK_NOTHROW(make_mock("ESTJ"));
    CHECK_NOTHROW(make_mock("enfp"));
  }
}

TEST_CASE("administering runs") {
  Scale scale = load_mini();
  FactorConfig factors;
  RespondentConfig cfg;

  SUBCASE("metadata and order") {
    auto backend = make_mock("estj");
    AssessmentRun run = administer_run(scale, factors, *backend, cfg, 42);
    CHECK(run.run_seed == 42);
    CHECK(run.factors.seed == 42);
    CHECK(run.respondent == "mock:estj");
    CHECK_FALSE(run.failed);
    REQUIRE(run.items.size() == scale.items.size());
    for (std::size_t i = 0; i < run.items.size(); ++i) {
      CHECK(run.items[i].presented.item_id == scale.items[i].item_id);
      CHECK_FALSE(run.items[i].prompt_hash.empty());
    }
  }
  SUBCASE("identical seeds give identical runs") {
    auto backend = make_mock("bernoulli:0.5");
    AssessmentRun a = administer_run(scale, factors, *backend, cfg, 9);
    AssessmentRun b = administer_run(scale, factors, *backend, cfg, 9);
    REQUIRE(a.items.size() == b.items.size());
    for (std::size_t i = 0; i < a.items.size(); ++i) {
      CHECK(a.items[i].prompt_hash == b.items[i].prompt_hash);
      CHECK(a.items[i].response.text == b.items[i].response.text);
      CHECK(a.items[i].presented.swapped == b.items[i].presented.swapped);
      CHECK(a.items[i].choice.pole == b.items[i].choice.pole);
    }
  }
  SUBCASE("results do not depend on the worker count") {
    Scale full = load_full();
    auto backend = make_mock("bernoulli:0.7");
    RespondentConfig narrow = cfg, wide = cfg;
    narrow.max_concurrent = 1;
    wide.max_concurrent = 8;
    AssessmentRun a = administer_run(full, factors, *backend, narrow, 12);
    AssessmentRun b = administer_run(full, factors, *backend, wide, 12);
    REQUIRE(a.items.size() == b.items.size());
    for (std::size_t i = 0; i < a.items.size(); ++i) {
      CHECK(a.items[i].presented.item_id == b.items[i].presented.item_id);
      CHECK(a.items[i].choice.pole == b.items[i].choice.pole);
      CHECK(a.items[i].prompt_hash == b.items[i].prompt_hash);
    }
  }
  SUBCASE("presentation matches an independent recompute") {
    auto backend = make_mock("first");
    AssessmentRun run = administer_run(scale, factors, *backend, cfg, 631);
    FactorConfig seeded = factors;
    seeded.seed = 631;
    for (std::size_t i = 0; i < scale.items.size(); ++i) {
      PresentedItem expect = permute_item(scale.items[i], seeded);
      CHECK(run.items[i].presented.swapped == expect.swapped);
      CHECK(run.items[i].presented.options[0].description ==
            expect.options[0].description);
    }
  }
  SUBCASE("one resample recovers a parse and keeps the presentation") {
    auto backend = make_mock("flaky:1");
    AssessmentRun run = administer_run(scale, factors, *backend, cfg, 4);
    auto clean = make_mock("first");
    AssessmentRun ref = administer_run(scale, factors, *clean, cfg, 4);
    for (std::size_t i = 0; i < run.items.size(); ++i) {
      CHECK(run.items[i].resample_index == 1);
      CHECK(run.items[i].choice.pole.has_value());
      CHECK(run.items[i].prompt_hash == ref.items[i].prompt_hash);
      CHECK(run.items[i].choice.pole == ref.items[i].choice.pole);
    }
  }
  SUBCASE("resamples stop at the cap and leave the item missing") {
    auto backend = make_mock("flaky:5");
    AssessmentRun run = administer_run(scale, factors, *backend, cfg, 4);
    for (const auto& item : run.items) {
      CHECK(item.resample_index == cfg.max_resample);
      CHECK_FALSE(item.choice.pole.has_value());
      CHECK(item.choice.method == ParseMethod::unparsed);
    }
    RunScore score = score_run(run, scale);
    CHECK(score.type_code == "????");
  }
  SUBCASE("persist fires once on success") {
    auto backend = make_mock("estj");
    int calls = 0;
    std::size_t seen = 0;
    administer_run(scale, factors, *backend, cfg, 1,
                   [&](const AssessmentRun& r) {
                     ++calls;
                     seen = r.items.size();
                   });
    CHECK(calls == 1);
    CHECK(seen == scale.items.size());
  }
  SUBCASE("config validation") {
    auto backend = make_mock("estj");
    RespondentConfig bad = cfg;
    bad.max_concurrent = 0;
    CHECK_THROWS_AS(administer_run(scale, factors, *backend, bad, 1),
                    ValidationError);
    bad = cfg;
    bad.max_resample = -1;
    CHECK_THROWS_AS(administer_run(scale, factors, *backend, bad, 1),
                    ValidationError);
  }
}

TEST_CASE("http respondent request shape and auth") {
  setenv("PERSONA_API_KEY", "sekrit-key", 1);
  StubServer stub;
  std::mutex mu;
  std::vector<nlohmann::json> bodies;
  std::vector<std::string> auth;
  stub.svr.Post("/v1/chat/completions",
                [&](const httplib::Request& req, httplib::Response& res) {
                  std::lock_guard<std::mutex> lock(mu);
                  bodies.push_back(nlohmann::json::parse(req.body));
                  auth.push_back(req.get_header_value("Authorization"));
                  res.set_content(chat_reply("1"), "application/json");
                });
  stub.start();

  Scale scale = load_mini();
  RespondentConfig cfg = http_config(stub);
  cfg.max_concurrent = 1;
  auto backend = make_respondent(cfg);
  FactorConfig factors;
  AssessmentRun run = administer_run(scale, factors, *backend, cfg, 3);
  unsetenv("PERSONA_API_KEY");

  REQUIRE(bodies.size() == scale.items.size());
  FactorConfig seeded = factors;
  seeded.seed = 3;
  for (std::size_t i = 0; i < bodies.size(); ++i) {
    const nlohmann::json& b = bodies[i];
    CHECK(b["model"] == "llama-2-7b-chat");
    CHECK(b["temperature"] == 0.0);
    REQUIRE(b["messages"].size() == 2);
    CHECK(b["messages"][0]["role"] == "system");
    CHECK(b["messages"][1]["role"] == "user");
    RenderedPrompt expect =
        render_prompt(permute_item(scale.items[i], seeded), seeded);
    CHECK(b["messages"][0]["content"] == expect.instructions);
    CHECK(b["messages"][1]["content"] == expect.user_text());
    CHECK(auth[i] == "Bearer sekrit-key");
  }
  for (const auto& item : run.items) {
    CHECK(item.choice.method == ParseMethod::label_match);
  }
}

TEST_CASE("http respondent retries transient failures") {
  StubServer stub;
  std::atomic<int> hits{0};
  stub.svr.Post("/v1/chat/completions",
                [&](const httplib::Request&, httplib::Response& res) {
                  int n = ++hits;
                  if (n <= 2) {
                    res.status = n == 1 ? 500 : 429;
                    return;
                  }
                  res.set_content(chat_reply("1"), "application/json");
                });
  stub.start();

  Scale scale = load_mini();
  RespondentConfig cfg = http_config(stub);
  cfg.max_concurrent = 1;
  auto backend = make_respondent(cfg);
  FactorConfig factors;
  AssessmentRun run = administer_run(scale, factors, *backend, cfg, 8);

  CHECK(run.items[0].response.attempt_index == 2);
  for (std::size_t i = 1; i < run.items.size(); ++i) {
    CHECK(run.items[i].response.attempt_index == 0);
  }
  CHECK(hits.load() == static_cast<int>(scale.items.size()) + 2);
}

TEST_CASE("http respondent fails fast on non-transient status") {
  StubServer stub;
  std::atomic<int> hits{0};
  stub.svr.Post("/v1/chat/completions",
                [&](const httplib::Request&, httplib::Response& res) {
                  ++hits;
                  res.status = 404;
                });
  stub.start();

  Scale scale = load_mini();
  RespondentConfig cfg = http_config(stub);
  cfg.max_concurrent = 1;
  auto backend = make_respondent(cfg);
  FactorConfig factors;
  bool persisted = false;
  CHECK_THROWS_WITH_AS(
      administer_run(scale, factors, *backend, cfg, 8,
                     [&](const AssessmentRun& r) {
                       persisted = true;
                       CHECK(r.failed);
                       CHECK(r.failure_reason.find("404") != std::string::npos);
                     }),
      doctest::Contains("status 404"), BackendError);
  CHECK(persisted);
  CHECK(hits.load() == 1);  // no retry for a hard failure
}

TEST_CASE("http respondent rejects malformed replies") {
  StubServer stub;
  stub.svr.Post("/v1/chat/completions",
                [&](const httplib::Request&, httplib::Response& res) {
                  res.set_content("{\"unexpected\":true}", "application/json");
                });
  stub.start();

  RespondentConfig cfg = http_config(stub);
  auto backend = make_respondent(cfg);
  Scale scale = load_mini();
  FactorConfig factors;
  CHECK_THROWS_WITH_AS(administer_run(scale, factors, *backend, cfg, 8),
                       doctest::Contains("malformed"), BackendError);
}

TEST_CASE("http respondent reports connection failures") {
  RespondentConfig cfg;
  cfg.kind = BackendKind::http;
  cfg.endpoint = "http://127.0.0.1:1";  // nothing listens here
  cfg.max_retries = 0;
  cfg.timeout = std::chrono::milliseconds(2000);
  auto backend = make_respondent(cfg);
  PresentedItem p = agree_item();
  FactorConfig factors;
  RenderedPrompt prompt = render_prompt(p, factors);
  AskContext ctx{&p, 0, 0};
  CHECK_THROWS_WITH_AS(backend->ask(prompt, ctx),
                       doctest::Contains("connection error"), BackendError);
}

TEST_CASE("http respondent honors the concurrency cap") {
  StubServer stub;
  std::atomic<int> in_flight{0};
  std::atomic<int> max_seen{0};
  stub.svr.Post("/v1/chat/completions",
                [&](const httplib::Request&, httplib::Response& res) {
                  int cur = ++in_flight;
                  int prev = max_seen.load();
                  while (cur > prev && !max_seen.compare_exchange_weak(prev, cur)) {
                  }
                  std::this_thread::sleep_for(std::chrono::milliseconds(3));
                  --in_flight;
                  res.set_content(chat_reply("1"), "application/json");
                });
  stub.start();

  Scale scale = load_full();
  RespondentConfig cfg = http_config(stub);
  cfg.max_concurrent = 4;
  auto backend = make_respondent(cfg);
  FactorConfig factors;
  AssessmentRun run = administer_run(scale, factors, *backend, cfg, 5);
  CHECK(run.items.size() == scale.items.size());
  CHECK(max_seen.load() <= 4);
  WARN(max_seen.load() >= 2);  // parallelism sanity, not a contract
}

TEST_CASE("mid-run abort persists the partial run") {
  StubServer stub;
  std::atomic<int> hits{0};
  stub.svr.Post("/v1/chat/completions",
                [&](const httplib::Request&, httplib::Response& res) {
                  if (++hits <= 6) {
                    res.set_content(chat_reply("1"), "application/json");
                  } else {
                    res.status = 500;
                  }
                });
  stub.start();

  Scale scale = load_full();
  RespondentConfig cfg = http_config(stub);
  cfg.max_retries = 0;
  cfg.max_concurrent = 2;
  auto backend = make_respondent(cfg);
  FactorConfig factors;

  int persist_calls = 0;
  AssessmentRun persisted;
  CHECK_THROWS_AS(administer_run(scale, factors, *backend, cfg, 8,
                                 [&](const AssessmentRun& r) {
                                   ++persist_calls;
                                   persisted = r;
                                 }),
                  BackendError);
  CHECK(persist_calls == 1);
  CHECK(persisted.failed);
  CHECK_FALSE(persisted.failure_reason.empty());
  CHECK(persisted.items.size() >= 1);
  CHECK(persisted.items.size() < scale.items.size());
  for (const auto& item : persisted.items) {
    CHECK(item.choice.pole.has_value());  // only completed items are kept
  }
}

TEST_CASE("resampling resends the identical prompt") {
  StubServer stub;
  std::mutex mu;
  std::map<std::string, int> body_counts;
  stub.svr.Post("/v1/chat/completions",
                [&](const httplib::Request& req, httplib::Response& res) {
                  int count;
                  {
                    std::lock_guard<std::mutex> lock(mu);
                    count = ++body_counts[req.body];
                  }
                  res.set_content(
                      chat_reply(count == 1 ? "mumble" : "1"),
                      "application/json");
                });
  stub.start();

  Scale scale = load_mini();
  RespondentConfig cfg = http_config(stub);
  cfg.max_concurrent = 1;
  auto backend = make_respondent(cfg);
  FactorConfig factors;
  AssessmentRun run = administer_run(scale, factors, *backend, cfg, 8);

  REQUIRE(run.items.size() == scale.items.size());
  for (const auto& item : run.items) {
    CHECK(item.resample_index == 1);
    CHECK(item.choice.pole.has_value());
  }
  CHECK(body_counts.size() == scale.items.size());
  for (const auto& [body, count] : body_counts) {
    CHECK(count == 2);  // the resample reused the exact payload
  }
}
