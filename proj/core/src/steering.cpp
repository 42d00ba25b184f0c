#include "persona/steering.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "persona/digest.hpp"
#include "persona/error.hpp"
#include "persona/rng.hpp"
#include "persona/tensor_file.hpp"

namespace persona {

using nlohmann::json;

std::string ContrastDataset::digest() const {
  std::uint64_t h = fnv1a64(label_note);
  const auto mix_side = [&h](const std::vector<std::vector<int>>& side,
                             const char* tag) {
    h = fnv1a64_append(h, tag);
    for (const auto& seq : side) {
      h = fnv1a64_append(h, "|");
      for (const int id : seq) {
        h = fnv1a64_append(h, std::to_string(id));
        h = fnv1a64_append(h, ",");
      }
    }
  };
  mix_side(positive, "+");
  mix_side(negative, "-");
  return digest_hex(h);
}

namespace {

std::vector<std::vector<int>> sequences_from_json(const json& arr,
                                                  const std::string& origin,
                                                  const char* side) {
  if (!arr.is_array() || arr.empty()) {
    throw ParseError(origin + ": \"" + side +
                     "\" must be a non-empty array of token sequences");
  }
  std::vector<std::vector<int>> out;
  for (const auto& seq : arr) {
    if (!seq.is_array() || seq.empty()) {
      throw ParseError(origin + ": sequences in \"" + side +
                       "\" must be non-empty arrays");
    }
    std::vector<int> ids;
    for (const auto& id : seq) {
      if (!id.is_number_integer() || id.get<int>() < 0) {
        throw ParseError(origin + ": token ids must be non-negative integers");
      }
      ids.push_back(id.get<int>());
    }
    out.push_back(std::move(ids));
  }
  return out;
}

}  // namespace

ContrastDataset load_contrast_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open contrast dataset " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  const json doc = json::parse(buf.str(), nullptr, false);
  if (doc.is_discarded() || !doc.is_object()) {
    throw ParseError(path.string() + ": not a JSON object");
  }
  ContrastDataset out;
  if (doc.contains("label_note")) {
    out.label_note = doc.at("label_note").get<std::string>();
  }
  if (!doc.contains("positive") || !doc.contains("negative")) {
    throw ParseError(path.string() +
                     ": needs \"positive\" and \"negative\" arrays");
  }
  out.positive =
      sequences_from_json(doc.at("positive"), path.string(), "positive");
  out.negative =
      sequences_from_json(doc.at("negative"), path.string(), "negative");
  return out;
}

void save_contrast_dataset(const std::filesystem::path& path,
                           const ContrastDataset& set) {
  json doc;
  doc["label_note"] = set.label_note;
  doc["positive"] = set.positive;
  doc["negative"] = set.negative;
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

void save_steering_vector(const std::filesystem::path& path,
                          const SteeringVector& v) {
  TensorFile file;
  const json meta = {{"kind", "steering_vector"},
                     {"layer", v.layer},
                     {"dataset_digest", v.dataset_digest},
                     {"norm", v.norm}};
  file.meta_json = meta.dump();
  TensorEntry t;
  t.name = "steering";
  t.shape = {static_cast<std::int64_t>(v.values.size())};
  t.data = v.values;
  file.tensors.push_back(std::move(t));
  file.write(path);
}

SteeringVector load_steering_vector(const std::filesystem::path& path) {
  const TensorFile file = TensorFile::read(path);
  const TensorEntry* t = file.find("steering");
  if (t == nullptr) {
    throw ParseError(path.string() + ": no \"steering\" tensor");
  }
  const json meta = json::parse(file.meta_json, nullptr, false);
  if (meta.is_discarded() || !meta.contains("layer")) {
    throw ParseError(path.string() + ": steering meta missing layer");
  }
  SteeringVector v;
  v.layer = meta.at("layer").get<int>();
  v.values = t->data;
  if (meta.contains("dataset_digest")) {
    v.dataset_digest = meta.at("dataset_digest").get<std::string>();
  }
  if (meta.contains("norm")) v.norm = meta.at("norm").get<double>();
  return v;
}

std::vector<std::vector<float>> collect_activation_set(
    const ToyLM& model, const std::vector<std::vector<int>>& sentences,
    int layer) {
  if (sentences.empty()) {
    throw ValidationError("no sentences to collect activations from");
  }
  std::vector<std::vector<float>> out;
  out.reserve(sentences.size());
  const int d = model.config().d_model;
  for (const auto& sent : sentences) {
    const ForwardResult fr = model.forward(sent, {layer});
    const auto& capture = fr.hooks.captures.at(layer);
    const std::size_t last = sent.size() - 1;
    out.emplace_back(capture.begin() + last * d,
                     capture.begin() + (last + 1) * d);
  }
  return out;
}

namespace {

// exact-order pairwise sum: deterministic and order-stable
std::vector<double> pairwise_sum(const std::vector<std::vector<float>>& xs,
                                 std::size_t lo, std::size_t hi) {
  if (hi - lo == 1) {
    return std::vector<double>(xs[lo].begin(), xs[lo].end());
  }
  const std::size_t mid = lo + (hi - lo) / 2;
  std::vector<double> a = pairwise_sum(xs, lo, mid);
  const std::vector<double> b = pairwise_sum(xs, mid, hi);
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  return a;
}

std::vector<double> centroid(const std::vector<std::vector<float>>& xs) {
  std::vector<double> sum = pairwise_sum(xs, 0, xs.size());
  for (auto& x : sum) x /= static_cast<double>(xs.size());
  return sum;
}

}  // namespace

SteeringVector compute_steering_vector(
    const std::vector<std::vector<float>>& a_plus,
    const std::vector<std::vector<float>>& a_minus, int layer,
    const std::string& dataset_digest) {
  if (a_plus.empty() || a_minus.empty()) {
    throw ValidationError("activation sets must be non-empty");
  }
  const std::size_t d = a_plus.front().size();
  for (const auto& v : a_plus) {
    if (v.size() != d) throw ValidationError("activation dimension mismatch");
  }
  for (const auto& v : a_minus) {
    if (v.size() != d) throw ValidationError("activation dimension mismatch");
  }
  const std::vector<double> cp = centroid(a_plus);
  const std::vector<double> cm = centroid(a_minus);
  SteeringVector out;
  out.layer = layer;
  out.dataset_digest = dataset_digest;
  out.values.resize(d);
  double norm2 = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    const double x = cp[i] - cm[i];
    out.values[i] = static_cast<float>(x);
    norm2 += x * x;
  }
  out.norm = std::sqrt(norm2);
  return out;
}

namespace {

// seeded 1:1 split of one side; first half (rounded up) is dev
void split_side(std::size_t n, std::uint64_t seed, const char* tag,
                std::vector<std::size_t>& dev, std::vector<std::size_t>& test) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(Rng::derive(seed, tag));
  for (std::size_t i = n; i > 1; --i) {
    std::swap(idx[i - 1], idx[rng.next_below(i)]);
  }
  const std::size_t half = (n + 1) / 2;
  dev.assign(idx.begin(), idx.begin() + half);
  test.assign(idx.begin() + half, idx.end());
}

std::vector<std::vector<int>> take(const std::vector<std::vector<int>>& all,
                                   const std::vector<std::size_t>& idx) {
  std::vector<std::vector<int>> out;
  out.reserve(idx.size());
  for (const auto i : idx) out.push_back(all[i]);
  return out;
}

}  // namespace

GridSearchResult grid_search(const ToyLM& model, const ContrastDataset& data,
                             const GridSearchSpec& spec,
                             const Objective& objective) {
  if (data.positive.empty() || data.negative.empty()) {
    throw ValidationError("contrast dataset sides must be non-empty");
  }
  if (spec.ppl_threshold <= 1.0) {
    throw ValidationError("perplexity threshold must exceed 1");
  }
  if (spec.eval_corpus.empty()) {
    throw ValidationError("grid search needs an evaluation corpus");
  }
  std::vector<int> layers = spec.layers;
  if (layers.empty()) {
    for (int l = 0; l < model.config().n_layers; ++l) layers.push_back(l);
  }
  std::vector<double> alphas = spec.alphas;
  if (alphas.empty()) {
    alphas = {-8, -4, -2, -1, -0.5, 0.5, 1, 2, 4, 8};
  }

  GridSearchResult out;
  split_side(data.positive.size(), spec.seed, "split.pos", out.split.dev_pos,
             out.split.test_pos);
  split_side(data.negative.size(), spec.seed, "split.neg", out.split.dev_neg,
             out.split.test_neg);

  ContrastDataset dev, test;
  dev.label_note = test.label_note = data.label_note;
  dev.positive = take(data.positive, out.split.dev_pos);
  dev.negative = take(data.negative, out.split.dev_neg);
  test.positive = take(data.positive, out.split.test_pos);
  test.negative = take(data.negative, out.split.test_neg);
  if (test.positive.empty() || test.negative.empty()) {
    throw ValidationError("contrast dataset too small to split 1:1");
  }

  out.baseline_ppl = model.perplexity(spec.eval_corpus);
  const std::string digest = data.digest();

  bool have_best = false;
  std::size_t best_cell = 0;
  std::vector<SteeringVector> vectors;
  std::vector<std::size_t> cell_vector;  // table row -> vectors index

  for (const int layer : layers) {
    const auto a_plus = collect_activation_set(model, dev.positive, layer);
    const auto a_minus = collect_activation_set(model, dev.negative, layer);
    vectors.push_back(
        compute_steering_vector(a_plus, a_minus, layer, digest));
    const SteeringVector& v = vectors.back();

    for (const double alpha : alphas) {
      const IntervenedModel handle = intervene(
          model, Intervention{layer, static_cast<float>(alpha), v.values});
      GridCell cell;
      cell.layer = layer;
      cell.alpha = alpha;
      cell.ppl = handle.perplexity(spec.eval_corpus);
      cell.admissible = cell.ppl <= spec.ppl_threshold;
      cell.objective_dev = objective(handle, dev);
      cell.objective_test = objective(handle, test);
      out.table.push_back(cell);
      cell_vector.push_back(vectors.size() - 1);

      if (!cell.admissible) continue;
      if (!have_best) {
        have_best = true;
        best_cell = out.table.size() - 1;
        continue;
      }
      const double cur = out.table[best_cell].objective_dev;
      const bool better = spec.maximize ? cell.objective_dev > cur
                                        : cell.objective_dev < cur;
      if (better) best_cell = out.table.size() - 1;
    }
  }

  out.feasible = have_best;
  if (have_best) {
    out.best = out.table[best_cell];
    out.best_vector = vectors[cell_vector[best_cell]];
  }
  return out;
}

}  // namespace persona
