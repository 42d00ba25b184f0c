#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace persona {

struct ToyLMConfig {
  int n_layers = 2;
  int d_model = 32;
  int n_heads = 4;
  int vocab_size = 64;
  int max_seq_len = 64;
  std::uint64_t seed = 0;
};

struct Intervention {
  int layer = 0;  // residual stream after block `layer`
  float alpha = 0.0f;
  std::vector<float> vector;  // length d_model
};

struct HookContext {
  // layer index -> [tokens, d_model] row-major, captured before the
  // intervention shift at that same layer
  std::map<int, std::vector<float>> captures;
  std::vector<Intervention> active;
};

struct ForwardResult {
  std::vector<float> logits;  // [tokens, vocab] row-major
  HookContext hooks;
};

struct GenerationParams {
  int max_new_tokens = 16;
  double temperature = 0.0;  // 0 = greedy
  std::uint64_t seed = 0;
  std::optional<int> stop_token;
  bool intervene_prompt = true;  // false: shift only generated positions
};

class ToyLM {
 public:
  // seeded Gaussian init
  explicit ToyLM(const ToyLMConfig& cfg);

  // Random model whose unembedding is altered so that the unit direction of
  // `direction` maps to logit `margin` on `target_token` and to exactly 0 on
  // every other token. Gives interventions an analytic ground truth at the
  // last layer, where the residual shift is linear in the logits.
  static ToyLM planted(const ToyLMConfig& cfg, std::vector<float> direction,
                       int target_token, float margin);

  ForwardResult forward(const std::vector<int>& tokens,
                        const std::vector<int>& capture_layers = {},
                        const std::vector<Intervention>& interventions = {},
                        int intervene_from = 0) const;

  std::vector<int> generate(const std::vector<int>& prompt,
                            const GenerationParams& params,
                            const std::vector<Intervention>& interventions =
                                {}) const;

  // exp of mean per-token negative log likelihood over all next-token
  // predictions in the corpus
  double perplexity(const std::vector<std::vector<int>>& corpus,
                    const std::vector<Intervention>& interventions = {}) const;

  const ToyLMConfig& config() const { return cfg_; }

  // direct weight access for tests and the planted constructor
  std::vector<float>& tensor(const std::string& name);
  const std::vector<float>& tensor(const std::string& name) const;

  void save(const std::filesystem::path& path) const;
  static ToyLM load(const std::filesystem::path& path);

 private:
  ToyLM() = default;
  void init_weights();
  void validate_interventions(const std::vector<Intervention>& iv) const;

  ToyLMConfig cfg_;
  std::map<std::string, std::vector<float>> weights_;
};

// Pins a set of interventions onto a model for downstream evaluation.
class IntervenedModel {
 public:
  IntervenedModel(const ToyLM& model, std::vector<Intervention> specs)
      : model_(&model), specs_(std::move(specs)) {}

  ForwardResult forward(const std::vector<int>& tokens,
                        const std::vector<int>& capture_layers = {}) const {
    return model_->forward(tokens, capture_layers, specs_);
  }
  std::vector<int> generate(const std::vector<int>& prompt,
                            const GenerationParams& params) const {
    return model_->generate(prompt, params, specs_);
  }
  double perplexity(const std::vector<std::vector<int>>& corpus) const {
    return model_->perplexity(corpus, specs_);
  }
  const ToyLM& model() const { return *model_; }
  const std::vector<Intervention>& specs() const { return specs_; }

 private:
  const ToyLM* model_;
  std::vector<Intervention> specs_;
};

inline IntervenedModel intervene(const ToyLM& model, Intervention spec) {
  return IntervenedModel(model, {std::move(spec)});
}

// One whitespace-separated sequence of integer token ids per line.
std::vector<std::vector<int>> load_corpus(const std::filesystem::path& path,
                                          int vocab_size);
void save_corpus(const std::filesystem::path& path,
                 const std::vector<std::vector<int>>& corpus);

// Whitespace words hashed into [0, vocab_size), keeping the trailing
// max_len tokens. Never returns an empty sequence.
std::vector<int> hash_tokenize(const std::string& text, int vocab_size,
                               int max_len);

}  // namespace persona
