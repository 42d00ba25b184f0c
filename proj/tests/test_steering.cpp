#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

#include "persona/error.hpp"
#include "persona/rng.hpp"
#include "persona/steering.hpp"

using namespace persona;

namespace {

ToyLMConfig small_config() {
  ToyLMConfig cfg;
  cfg.n_layers = 2;
  cfg.d_model = 16;
  cfg.n_heads = 4;
  cfg.vocab_size = 32;
  cfg.max_seq_len = 32;
  cfg.seed = 5;
  return cfg;
}

ContrastDataset fixture_dataset() {
  return load_contrast_dataset(std::string(PERSONA_FIXTURE_DIR) +
                               "/contrast_small.json");
}

std::vector<std::vector<float>> random_set(Rng& rng, int n, int d) {
  std::vector<std::vector<float>> out(n, std::vector<float>(d));
  for (auto& row : out) {
    for (float& x : row) x = static_cast<float>(rng.next_gaussian());
  }
  return out;
}

}  // namespace

TEST_CASE("centroid difference on singletons is exact") {
  SteeringVector v = compute_steering_vector({{5.0f, 1.0f}}, {{3.0f, 4.0f}}, 0);
  REQUIRE(v.values.size() == 2);
  CHECK(v.values[0] == 2.0f);
  CHECK(v.values[1] == -3.0f);
  CHECK(v.norm == doctest::Approx(std::sqrt(13.0)).epsilon(1e-12));
  CHECK(v.layer == 0);
}

TEST_CASE("swapping the sides negates the vector exactly") {
  Rng rng(41);
  for (int trial = 0; trial < 20; ++trial) {
    auto a = random_set(rng, 3 + static_cast<int>(rng.next_below(6)), 8);
    auto b = random_set(rng, 3 + static_cast<int>(rng.next_below(6)), 8);
    SteeringVector ab = compute_steering_vector(a, b, 1);
    SteeringVector ba = compute_steering_vector(b, a, 1);
    REQUIRE(ab.values.size() == ba.values.size());
    for (std::size_t i = 0; i < ab.values.size(); ++i) {
      REQUIRE(ab.values[i] == -ba.values[i]);
    }
    CHECK(ab.norm == ba.norm);
  }
}

TEST_CASE("shifting one side translates the vector") {
  // dyadic inputs keep the arithmetic exact
  std::vector<std::vector<float>> a = {{0.25f, 1.5f}, {0.75f, -0.5f}};
  std::vector<std::vector<float>> b = {{1.0f, 2.0f}, {3.0f, 0.5f}};
  SteeringVector base = compute_steering_vector(a, b, 0);
  for (auto& row : a) {
    row[0] += 2.0f;
    row[1] += 0.5f;
  }
  SteeringVector moved = compute_steering_vector(a, b, 0);
  CHECK(moved.values[0] == base.values[0] + 2.0f);
  CHECK(moved.values[1] == base.values[1] + 0.5f);
}

TEST_CASE("steering vector validation") {
  CHECK_THROWS_AS(compute_steering_vector({}, {{1.0f}}, 0), ValidationError);
  CHECK_THROWS_AS(compute_steering_vector({{1.0f}}, {}, 0), ValidationError);
  CHECK_THROWS_AS(compute_steering_vector({{1.0f, 2.0f}}, {{1.0f}}, 0),
                  ValidationError);
}

TEST_CASE("activation collection matches forward captures") {
  ToyLM model(small_config());
  std::vector<std::vector<int>> sentences = {{4, 9, 2}, {17, 3, 8, 1, 12}};
  auto acts = collect_activation_set(model, sentences, 1);
  REQUIRE(acts.size() == 2);
  for (std::size_t s = 0; s < sentences.size(); ++s) {
    ForwardResult fr = model.forward(sentences[s], {1});
    const auto& cap = fr.hooks.captures.at(1);
    const int d = model.config().d_model;
    const std::size_t last = sentences[s].size() - 1;
    REQUIRE(acts[s].size() == static_cast<std::size_t>(d));
    for (int j = 0; j < d; ++j) {
      REQUIRE(acts[s][j] == cap[last * d + j]);
    }
  }
  CHECK_THROWS_AS(collect_activation_set(model, {}, 1), ValidationError);
  CHECK_THROWS_AS(collect_activation_set(model, sentences, 7), ValidationError);
}

TEST_CASE("contrast dataset io and digest") {
  ContrastDataset data = fixture_dataset();
  CHECK(data.positive.size() == 8);
  CHECK(data.negative.size() == 8);
  CHECK(data.label_note == "toy direction probe");

  auto path = std::filesystem::temp_directory_path() / "contrast_rt.json";
  save_contrast_dataset(path, data);
  ContrastDataset back = load_contrast_dataset(path);
  CHECK(back.positive == data.positive);
  CHECK(back.negative == data.negative);
  CHECK(back.digest() == data.digest());

  back.positive[0][0] += 1;
  CHECK(back.digest() != data.digest());
  std::filesystem::remove(path);

  SUBCASE("swapping sides changes the digest") {
    ContrastDataset swapped;
    swapped.positive = data.negative;
    swapped.negative = data.positive;
    swapped.label_note = data.label_note;
    CHECK(swapped.digest() != data.digest());
  }
  SUBCASE("empty side rejected") {
    ContrastDataset bad = data;
    bad.negative.clear();
    auto p2 = std::filesystem::temp_directory_path() / "contrast_bad.json";
    save_contrast_dataset(p2, bad);
    CHECK_THROWS_WITH_AS(load_contrast_dataset(p2),
                         doctest::Contains("non-empty"), ParseError);
    std::filesystem::remove(p2);
  }
}

TEST_CASE("steering vector file round trip") {
  SteeringVector v;
  v.layer = 1;
  v.values = {0.5f, -2.0f, 3.25f};
  v.dataset_digest = "deadbeefcafef00d";
  v.norm = std::sqrt(0.25 + 4.0 + 10.5625);
  auto path = std::filesystem::temp_directory_path() / "steer_rt.ptnsr";
  save_steering_vector(path, v);
  SteeringVector back = load_steering_vector(path);
  CHECK(back.layer == 1);
  CHECK(back.values == v.values);
  CHECK(back.dataset_digest == v.dataset_digest);
  CHECK(back.norm == doctest::Approx(v.norm).epsilon(1e-12));
  std::filesystem::remove(path);
}

TEST_CASE("grid search selects by dev objective among admissible cells") {
  ToyLMConfig cfg = small_config();
  ToyLM model(cfg);
  ContrastDataset data = fixture_dataset();

  GridSearchSpec spec;
  spec.layers = {cfg.n_layers - 1};
  spec.alphas = {-2.0, -1.0, 1.0, 2.0};
  spec.eval_corpus = {{1, 2, 3, 4, 5, 6}, {9, 8, 7, 6, 5}};
  spec.seed = 13;
  spec.ppl_threshold = 1e9;  // everything admissible

  // reward equals alpha: transparent argmax
  Objective reward = [](const IntervenedModel& m, const ContrastDataset&) {
    return static_cast<double>(m.specs()[0].alpha);
  };
  GridSearchResult res = grid_search(model, data, spec, reward);
  REQUIRE(res.feasible);
  CHECK(res.best.alpha == 2.0);
  CHECK(res.best.layer == cfg.n_layers - 1);
  CHECK(res.table.size() == 4);
  for (const auto& cell : res.table) {
    CHECK(cell.admissible);
    CHECK(cell.ppl > 0.0);
    CHECK(cell.objective_dev == cell.alpha);
  }
  CHECK(res.baseline_ppl > 0.0);
  CHECK(res.best_vector.layer == res.best.layer);
  CHECK_FALSE(res.best_vector.values.empty());
  CHECK(res.best_vector.dataset_digest == data.digest());

  SUBCASE("minimize flips the choice") {
    GridSearchSpec minspec = spec;
    minspec.maximize = false;
    GridSearchResult low = grid_search(model, data, minspec, reward);
    CHECK(low.best.alpha == -2.0);
  }
}

TEST_CASE("grid search reports dev and test objectives separately") {
  ToyLM model(small_config());
  ContrastDataset data = fixture_dataset();  // 8 per side -> dev 4, test 4
  data.positive.pop_back();                  // 7 -> dev 4, test 3

  GridSearchSpec spec;
  spec.layers = {0};
  spec.alphas = {1.0};
  spec.eval_corpus = {{1, 2, 3, 4}};
  spec.ppl_threshold = 1e9;

  Objective size_probe = [](const IntervenedModel&,
                            const ContrastDataset& slice) {
    return static_cast<double>(slice.positive.size());
  };
  GridSearchResult res = grid_search(model, data, spec, size_probe);
  REQUIRE(res.feasible);
  CHECK(res.best.objective_dev == 4.0);
  CHECK(res.best.objective_test == 3.0);
  CHECK(res.split.dev_pos.size() == 4);
  CHECK(res.split.test_pos.size() == 3);
  CHECK(res.split.dev_neg.size() == 4);
  CHECK(res.split.test_neg.size() == 4);
}

TEST_CASE("split indices are disjoint, exhaustive, and seed-stable") {
  ToyLM model(small_config());
  ContrastDataset data = fixture_dataset();
  GridSearchSpec spec;
  spec.layers = {0};
  spec.alphas = {0.5};
  spec.eval_corpus = {{1, 2, 3, 4}};
  spec.ppl_threshold = 1e9;
  spec.seed = 77;
  Objective noop = [](const IntervenedModel&, const ContrastDataset&) {
    return 0.0;
  };

  GridSearchResult a = grid_search(model, data, spec, noop);
  GridSearchResult b = grid_search(model, data, spec, noop);
  CHECK(a.split.dev_pos == b.split.dev_pos);
  CHECK(a.split.test_neg == b.split.test_neg);

  std::set<std::size_t> seen;
  for (auto i : a.split.dev_pos) seen.insert(i);
  for (auto i : a.split.test_pos) seen.insert(i);
  CHECK(seen.size() == data.positive.size());
  for (auto i : a.split.dev_pos) {
    CHECK(std::find(a.split.test_pos.begin(), a.split.test_pos.end(), i) ==
          a.split.test_pos.end());
  }

  GridSearchSpec other = spec;
  other.seed = 78;
  GridSearchResult c = grid_search(model, data, other, noop);
  CHECK((a.split.dev_pos != c.split.dev_pos ||
         a.split.dev_neg != c.split.dev_neg));
}

TEST_CASE("default alpha grid spans both signs and excludes zero") {
  ToyLM model(small_config());
  ContrastDataset data = fixture_dataset();
  GridSearchSpec spec;  // layers and alphas default
  spec.eval_corpus = {{1, 2, 3, 4, 5}};
  spec.ppl_threshold = 1e9;
  Objective noop = [](const IntervenedModel&, const ContrastDataset&) {
    return 0.0;
  };
  GridSearchResult res = grid_search(model, data, spec, noop);
  CHECK(res.table.size() == 2u * 10u);  // 2 layers x 10 alphas
  int negatives = 0, positives = 0;
  for (const auto& cell : res.table) {
    CHECK(cell.alpha != 0.0);
    (cell.alpha < 0 ? negatives : positives) += 1;
  }
  CHECK(negatives == positives);
}

TEST_CASE("infeasible searches keep the full table for the caller") {
  ToyLM model(small_config());
  ContrastDataset data = fixture_dataset();
  GridSearchSpec spec;
  spec.layers = {0, 1};
  spec.alphas = {1.0, 2.0};
  spec.eval_corpus = {{1, 2, 3, 4, 5, 6}};
  spec.ppl_threshold = 1.0001;  // unreachable: ppl is far above 1
  Objective noop = [](const IntervenedModel&, const ContrastDataset&) {
    return 0.0;
  };
  GridSearchResult res = grid_search(model, data, spec, noop);
  CHECK_FALSE(res.feasible);
  CHECK(res.table.size() == 4);
  for (const auto& cell : res.table) {
    CHECK_FALSE(cell.admissible);
    CHECK(cell.ppl > spec.ppl_threshold);
  }
  CHECK(res.baseline_ppl > 0.0);
}

TEST_CASE("grid search validation") {
  ToyLM model(small_config());
  ContrastDataset data = fixture_dataset();
  Objective noop = [](const IntervenedModel&, const ContrastDataset&) {
    return 0.0;
  };
  GridSearchSpec spec;
  spec.eval_corpus = {{1, 2, 3}};

  SUBCASE("threshold must exceed one") {
    spec.ppl_threshold = 0.5;
    CHECK_THROWS_AS(grid_search(model, data, spec, noop), ValidationError);
  }
  SUBCASE("corpus required") {
    spec.eval_corpus.clear();
    CHECK_THROWS_AS(grid_search(model, data, spec, noop), ValidationError);
  }
  SUBCASE("empty sides rejected") {
    ContrastDataset bad = data;
    bad.positive.clear();
    CHECK_THROWS_AS(grid_search(model, bad, spec, noop), ValidationError);
  }
  SUBCASE("singleton sides cannot be split") {
    ContrastDataset tiny;
    tiny.positive = {{1, 2}};
    tiny.negative = {{3, 4}};
    CHECK_THROWS_AS(grid_search(model, tiny, spec, noop), ValidationError);
  }
  SUBCASE("bad layer index") {
    spec.layers = {9};
    CHECK_THROWS_AS(grid_search(model, data, spec, noop), ValidationError);
  }
}
