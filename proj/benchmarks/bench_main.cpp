#include <benchmark/benchmark.h>

#include <optional>
#include <vector>

#include "persona/questionnaire.hpp"
#include "persona/respondent.hpp"
#include "persona/rng.hpp"
#include "persona/scoring.hpp"
#include "persona/steering.hpp"
#include "persona/toy_lm.hpp"

using namespace persona;

namespace {

Scale the_scale() {
  return load_scale(PERSONA_DATA_DIR "/scales/synthetic_93.json");
}

ToyLMConfig bench_lm_config() {
  ToyLMConfig cfg;
  cfg.n_layers = 2;
  cfg.d_model = 32;
  cfg.n_heads = 4;
  cfg.vocab_size = 64;
  cfg.max_seq_len = 64;
  cfg.seed = 9;
  return cfg;
}

std::vector<int> tokens(Rng& rng, int len, int vocab) {
  std::vector<int> out;
  for (int i = 0; i < len; ++i) {
    out.push_back(static_cast<int>(rng.next_below(vocab)));
  }
  return out;
}

}  // namespace

static void BM_PermuteAndRender(benchmark::State& state) {
  const Scale scale = the_scale();
  FactorConfig cfg;
  cfg.seed = 42;
  for (auto _ : state) {
    for (const auto& item : scale.items) {
      auto p = permute_item(item, cfg);
      auto r = render_prompt(p, cfg);
      benchmark::DoNotOptimize(r.full_text());
    }
  }
  state.SetItemsProcessed(state.iterations() * scale.items.size());
}
BENCHMARK(BM_PermuteAndRender);

static void BM_AdministerRunMock(benchmark::State& state) {
  const Scale scale = the_scale();
  RespondentConfig cfg;
  cfg.max_concurrent = static_cast<int>(state.range(0));
  auto backend = make_mock("estj");
  FactorConfig factors;
  std::uint64_t seed = 0;
  for (auto _ : state) {
    AssessmentRun run =
        administer_run(scale, factors, *backend, cfg, seed++);
    benchmark::DoNotOptimize(run.items.size());
  }
  state.SetItemsProcessed(state.iterations() * scale.items.size());
}
BENCHMARK(BM_AdministerRunMock)->Arg(1)->Arg(4);

static void BM_CohenKappa(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  Rng rng(7);
  std::vector<std::optional<int>> a(n), b(n);
  for (int i = 0; i < n; ++i) {
    a[i] = static_cast<int>(rng.next_below(2));
    b[i] = static_cast<int>(rng.next_below(2));
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(cohen_kappa(a, b).kappa);
  }
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_CohenKappa)->Arg(93)->Arg(930);

static void BM_ScoreAndAggregate(benchmark::State& state) {
  const Scale scale = the_scale();
  RespondentConfig cfg;
  auto backend = make_mock("bernoulli:0.7");
  FactorConfig factors;
  std::vector<AssessmentRun> runs;
  for (int i = 0; i < 30; ++i) {
    runs.push_back(administer_run(scale, factors, *backend, cfg,
                                  Rng::derive(3, i)));
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(aggregate(runs, scale).majority_type);
  }
  state.SetItemsProcessed(state.iterations() * runs.size());
}
BENCHMARK(BM_ScoreAndAggregate);

static void BM_ToyLMForward(benchmark::State& state) {
  ToyLM model(bench_lm_config());
  Rng rng(11);
  std::vector<int> toks = tokens(rng, static_cast<int>(state.range(0)), 64);
  for (auto _ : state) {
    benchmark::DoNotOptimize(model.forward(toks).logits.data());
  }
  state.SetItemsProcessed(state.iterations() * toks.size());
}
BENCHMARK(BM_ToyLMForward)->Arg(16)->Arg(64);

static void BM_ToyLMGenerate(benchmark::State& state) {
  ToyLM model(bench_lm_config());
  GenerationParams params;
  params.max_new_tokens = 16;
  for (auto _ : state) {
    benchmark::DoNotOptimize(model.generate({3, 1, 4, 1, 5}, params).size());
  }
  state.SetItemsProcessed(state.iterations() * params.max_new_tokens);
}
BENCHMARK(BM_ToyLMGenerate);

static void BM_SteeringVector(benchmark::State& state) {
  ToyLM model(bench_lm_config());
  Rng rng(13);
  std::vector<std::vector<int>> pos, neg;
  for (int i = 0; i < 16; ++i) {
    pos.push_back(tokens(rng, 12, 64));
    neg.push_back(tokens(rng, 12, 64));
  }
  for (auto _ : state) {
    auto a = collect_activation_set(model, pos, 1);
    auto b = collect_activation_set(model, neg, 1);
    benchmark::DoNotOptimize(compute_steering_vector(a, b, 1).norm);
  }
  state.SetItemsProcessed(state.iterations() * (pos.size() + neg.size()));
}
BENCHMARK(BM_SteeringVector);

static void BM_InterveneForward(benchmark::State& state) {
  ToyLM model(bench_lm_config());
  Rng rng(15);
  std::vector<float> v(32);
  for (float& x : v) x = static_cast<float>(rng.next_gaussian());
  IntervenedModel steered = intervene(model, Intervention{1, 2.0f, v});
  std::vector<int> toks = tokens(rng, 32, 64);
  for (auto _ : state) {
    benchmark::DoNotOptimize(steered.forward(toks).logits.data());
  }
  state.SetItemsProcessed(state.iterations() * toks.size());
}
BENCHMARK(BM_InterveneForward);

BENCHMARK_MAIN();
