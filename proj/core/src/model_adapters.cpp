#include "persona/model_adapters.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "persona/error.hpp"

namespace persona {

TextModel toy_text_model(std::shared_ptr<ToyLM> model, GenerationParams params) {
  if (!model) throw ValidationError("toy text model needs a model");
  return [model, params](const std::string& prompt) {
    const ToyLMConfig& cfg = model->config();
    const int room =
        std::max(1, cfg.max_seq_len - std::max(1, params.max_new_tokens));
    const std::vector<int> toks =
        hash_tokenize(prompt, cfg.vocab_size, room);
    const std::vector<int> out = model->generate(toks, params);
    std::string text;
    for (std::size_t i = toks.size(); i < out.size(); ++i) {
      if (!text.empty()) text += ' ';
      text += std::to_string(out[i]);
    }
    return text;
  };
}

LikelihoodModel toy_likelihood_model(std::shared_ptr<ToyLM> model) {
  if (!model) throw ValidationError("toy likelihood model needs a model");
  return [model](const std::string& context, const std::string& continuation) {
    const ToyLMConfig& cfg = model->config();
    const int V = cfg.vocab_size;
    std::vector<int> cont =
        hash_tokenize(continuation, V, std::max(1, cfg.max_seq_len - 1));
    const int room = cfg.max_seq_len - static_cast<int>(cont.size());
    std::vector<int> all = hash_tokenize(context, V, room);
    const std::size_t ctx_len = all.size();
    all.insert(all.end(), cont.begin(), cont.end());

    const ForwardResult fr = model->forward(all);
    double sum = 0.0;
    for (std::size_t i = ctx_len; i < all.size(); ++i) {
      const float* row = fr.logits.data() + (i - 1) * V;
      double mx = row[0];
      for (int v = 1; v < V; ++v) mx = std::max(mx, static_cast<double>(row[v]));
      double denom = 0.0;
      for (int v = 0; v < V; ++v) {
        denom += std::exp(static_cast<double>(row[v]) - mx);
      }
      sum += (static_cast<double>(row[all[i]]) - mx) - std::log(denom);
    }
    return sum / static_cast<double>(cont.size());
  };
}

}  // namespace persona
