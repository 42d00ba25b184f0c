#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "persona/toy_lm.hpp"

namespace persona {

struct ContrastDataset {
  std::vector<std::vector<int>> positive;  // label 1
  std::vector<std::vector<int>> negative;  // label 0
  std::string label_note;  // e.g. "1 denotes E, 0 denotes I"

  std::string digest() const;
};

ContrastDataset load_contrast_dataset(const std::filesystem::path& path);
void save_contrast_dataset(const std::filesystem::path& path,
                           const ContrastDataset& set);

struct SteeringVector {
  int layer = 0;
  std::vector<float> values;
  std::string dataset_digest;
  double norm = 0.0;
};

void save_steering_vector(const std::filesystem::path& path,
                          const SteeringVector& v);
SteeringVector load_steering_vector(const std::filesystem::path& path);

// One vector per sentence: the layer residual at the final token position.
std::vector<std::vector<float>> collect_activation_set(
    const ToyLM& model, const std::vector<std::vector<int>>& sentences,
    int layer);

// v = mean(a_plus) - mean(a_minus), centroids by pairwise summation.
SteeringVector compute_steering_vector(
    const std::vector<std::vector<float>>& a_plus,
    const std::vector<std::vector<float>>& a_minus, int layer,
    const std::string& dataset_digest = "");

struct GridSearchSpec {
  std::vector<int> layers;     // empty = every model layer
  std::vector<double> alphas;  // empty = {±0.5, ±1, ±2, ±4, ±8}
  bool maximize = true;
  std::string objective_name = "objective";
  double ppl_threshold = 6.0;
  std::vector<std::vector<int>> eval_corpus;
  std::uint64_t seed = 0;
};

struct GridCell {
  int layer = 0;
  double alpha = 0.0;
  double objective_dev = 0.0;
  double objective_test = 0.0;
  double ppl = 0.0;
  bool admissible = false;
};

struct SplitIndices {
  std::vector<std::size_t> dev_pos, test_pos, dev_neg, test_neg;
};

struct GridSearchResult {
  bool feasible = false;  // false = NO_FEASIBLE; the table still tells why
  GridCell best{};
  SteeringVector best_vector;
  std::vector<GridCell> table;
  SplitIndices split;
  double baseline_ppl = 0.0;
};

// Scores one intervened handle against a (dev or test) slice of the data.
using Objective =
    std::function<double(const IntervenedModel&, const ContrastDataset&)>;

// Steering vectors come from the dev split; selection uses the dev
// objective among cells whose perplexity stays under the threshold; the
// test objective is reported alongside.
GridSearchResult grid_search(const ToyLM& model, const ContrastDataset& data,
                             const GridSearchSpec& spec,
                             const Objective& objective);

}  // namespace persona
