#include "persona/toy_lm.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "persona/digest.hpp"
#include "persona/error.hpp"
#include "persona/respondent.hpp"
#include "persona/rng.hpp"
#include "persona/tensor_file.hpp"

namespace persona {

using nlohmann::json;

namespace {

std::vector<std::pair<std::string, std::vector<std::int64_t>>> expected_shapes(
    const ToyLMConfig& c) {
  const std::int64_t d = c.d_model, v = c.vocab_size, s = c.max_seq_len;
  std::vector<std::pair<std::string, std::vector<std::int64_t>>> out = {
      {"wte", {v, d}},
      {"wpe", {s, d}},
      {"unembed", {v, d}},
  };
  for (int i = 0; i < c.n_layers; ++i) {
    const std::string p = "b" + std::to_string(i) + ".";
    out.push_back({p + "ln1.g", {d}});
    out.push_back({p + "ln1.b", {d}});
    out.push_back({p + "attn.wq", {d, d}});
    out.push_back({p + "attn.bq", {d}});
    out.push_back({p + "attn.wk", {d, d}});
    out.push_back({p + "attn.bk", {d}});
    out.push_back({p + "attn.wv", {d, d}});
    out.push_back({p + "attn.bv", {d}});
    out.push_back({p + "attn.wo", {d, d}});
    out.push_back({p + "attn.bo", {d}});
    out.push_back({p + "ln2.g", {d}});
    out.push_back({p + "ln2.b", {d}});
    out.push_back({p + "mlp.fc", {4 * d, d}});
    out.push_back({p + "mlp.fcb", {4 * d}});
    out.push_back({p + "mlp.proj", {d, 4 * d}});
    out.push_back({p + "mlp.projb", {d}});
  }
  return out;
}

void validate_config(const ToyLMConfig& c) {
  if (c.n_layers < 1 || c.d_model < 1 || c.n_heads < 1 || c.vocab_size < 1 ||
      c.max_seq_len < 1) {
    throw ValidationError("model dimensions must all be positive");
  }
  if (c.d_model % c.n_heads != 0) {
    throw ValidationError("d_model must be divisible by n_heads");
  }
}

// y[0..out) = W[out,in] x + b
void linear(float* y, const float* W, const float* b, const float* x, int out,
            int in) {
  for (int o = 0; o < out; ++o) {
    float acc = b != nullptr ? b[o] : 0.0f;
    const float* row = W + static_cast<std::size_t>(o) * in;
    for (int i = 0; i < in; ++i) acc += row[i] * x[i];
    y[o] = acc;
  }
}

void layer_norm(float* y, const float* x, const float* g, const float* b,
                int d) {
  double mean = 0.0;
  for (int i = 0; i < d; ++i) mean += x[i];
  mean /= d;
  double var = 0.0;
  for (int i = 0; i < d; ++i) var += (x[i] - mean) * (x[i] - mean);
  var /= d;
  const double inv = 1.0 / std::sqrt(var + 1e-5);
  for (int i = 0; i < d; ++i) {
    y[i] = static_cast<float>((x[i] - mean) * inv) * g[i] + b[i];
  }
}

float gelu(float x) {
  const float c = 0.7978845608028654f;  // sqrt(2/pi)
  return 0.5f * x * (1.0f + std::tanh(c * (x + 0.044715f * x * x * x)));
}

double log_sum_exp(const float* row, int n) {
  double m = row[0];
  for (int i = 1; i < n; ++i) m = std::max(m, static_cast<double>(row[i]));
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += std::exp(row[i] - m);
  return m + std::log(s);
}

}  // namespace

ToyLM::ToyLM(const ToyLMConfig& cfg) {
  validate_config(cfg);
  cfg_ = cfg;
  init_weights();
}

void ToyLM::init_weights() {
  for (const auto& [name, shape] : expected_shapes(cfg_)) {
    std::int64_t count = 1;
    for (const auto d : shape) count *= d;
    std::vector<float> w(static_cast<std::size_t>(count));
    if (shape.size() == 1) {
      // every 1-D tensor is a layer-norm gain or some bias
      const bool gain = name.size() > 2 && name.substr(name.size() - 2) == ".g";
      std::fill(w.begin(), w.end(), gain ? 1.0f : 0.0f);
    } else {
      // per-tensor stream so init does not depend on allocation order
      Rng rng(Rng::derive(cfg_.seed, name));
      const float scale = name == "wpe" ? 0.01f : 0.02f;
      for (auto& x : w) x = static_cast<float>(rng.next_gaussian()) * scale;
    }
    weights_[name] = std::move(w);
  }
}

ToyLM ToyLM::planted(const ToyLMConfig& cfg, std::vector<float> direction,
                     int target_token, float margin) {
  ToyLM m(cfg);
  if (static_cast<int>(direction.size()) != cfg.d_model) {
    throw ValidationError("planted direction length must equal d_model");
  }
  if (target_token < 0 || target_token >= cfg.vocab_size) {
    throw ValidationError("planted target token out of range");
  }
  double norm2 = 0.0;
  for (const float x : direction) norm2 += static_cast<double>(x) * x;
  if (norm2 <= 0.0) throw ValidationError("planted direction must be nonzero");
  const double inv = 1.0 / std::sqrt(norm2);
  for (auto& x : direction) x = static_cast<float>(x * inv);

  auto& wu = m.weights_.at("unembed");
  const int d = cfg.d_model;
  for (int v = 0; v < cfg.vocab_size; ++v) {
    float* row = wu.data() + static_cast<std::size_t>(v) * d;
    double dot = 0.0;
    for (int i = 0; i < d; ++i) dot += static_cast<double>(row[i]) * direction[i];
    for (int i = 0; i < d; ++i) {
      row[i] = static_cast<float>(row[i] - dot * direction[i]);
    }
    if (v == target_token) {
      for (int i = 0; i < d; ++i) row[i] += margin * direction[i];
    }
  }
  return m;
}

std::vector<float>& ToyLM::tensor(const std::string& name) {
  const auto it = weights_.find(name);
  if (it == weights_.end()) {
    throw ValidationError("no tensor named \"" + name + "\"");
  }
  return it->second;
}

const std::vector<float>& ToyLM::tensor(const std::string& name) const {
  return const_cast<ToyLM*>(this)->tensor(name);
}

void ToyLM::validate_interventions(
    const std::vector<Intervention>& iv) const {
  for (const auto& spec : iv) {
    if (spec.layer < 0 || spec.layer >= cfg_.n_layers) {
      throw ValidationError("intervention layer " +
                            std::to_string(spec.layer) + " out of range");
    }
    if (static_cast<int>(spec.vector.size()) != cfg_.d_model) {
      throw ValidationError("intervention vector length must equal d_model");
    }
  }
}

ForwardResult ToyLM::forward(const std::vector<int>& tokens,
                             const std::vector<int>& capture_layers,
                             const std::vector<Intervention>& interventions,
                             int intervene_from) const {
  const int T = static_cast<int>(tokens.size());
  const int D = cfg_.d_model, V = cfg_.vocab_size, H = cfg_.n_heads;
  const int dh = D / H;
  if (T == 0) throw ValidationError("empty token sequence");
  if (T > cfg_.max_seq_len) {
    throw ValidationError("sequence length " + std::to_string(T) +
                          " exceeds max_seq_len " +
                          std::to_string(cfg_.max_seq_len));
  }
  for (const int t : tokens) {
    if (t < 0 || t >= V) {
      throw ValidationError("token id " + std::to_string(t) +
                            " outside vocabulary");
    }
  }
  validate_interventions(interventions);
  std::set<int> capture(capture_layers.begin(), capture_layers.end());
  for (const int l : capture) {
    if (l < 0 || l >= cfg_.n_layers) {
      throw ValidationError("capture layer " + std::to_string(l) +
                            " out of range");
    }
  }
  intervene_from = std::clamp(intervene_from, 0, T);

  const float* wte = weights_.at("wte").data();
  const float* wpe = weights_.at("wpe").data();

  std::vector<float> h(static_cast<std::size_t>(T) * D);
  for (int t = 0; t < T; ++t) {
    for (int i = 0; i < D; ++i) {
      h[t * D + i] = wte[tokens[t] * D + i] + wpe[t * D + i];
    }
  }

  std::vector<float> xn(h.size()), q(h.size()), k(h.size()), v(h.size()),
      att(h.size()), tmp(h.size());
  std::vector<float> hidden(static_cast<std::size_t>(T) * 4 * D);
  std::vector<float> probs(static_cast<std::size_t>(T));

  ForwardResult out;
  out.hooks.active = interventions;

  for (int l = 0; l < cfg_.n_layers; ++l) {
    const std::string p = "b" + std::to_string(l) + ".";
    const float* g1 = weights_.at(p + "ln1.g").data();
    const float* b1 = weights_.at(p + "ln1.b").data();
    const float* wq = weights_.at(p + "attn.wq").data();
    const float* bq = weights_.at(p + "attn.bq").data();
    const float* wk = weights_.at(p + "attn.wk").data();
    const float* bk = weights_.at(p + "attn.bk").data();
    const float* wv = weights_.at(p + "attn.wv").data();
    const float* bv = weights_.at(p + "attn.bv").data();
    const float* wo = weights_.at(p + "attn.wo").data();
    const float* bo = weights_.at(p + "attn.bo").data();
    const float* g2 = weights_.at(p + "ln2.g").data();
    const float* b2 = weights_.at(p + "ln2.b").data();
    const float* fc = weights_.at(p + "mlp.fc").data();
    const float* fcb = weights_.at(p + "mlp.fcb").data();
    const float* proj = weights_.at(p + "mlp.proj").data();
    const float* projb = weights_.at(p + "mlp.projb").data();

    for (int t = 0; t < T; ++t) {
      layer_norm(&xn[t * D], &h[t * D], g1, b1, D);
      linear(&q[t * D], wq, bq, &xn[t * D], D, D);
      linear(&k[t * D], wk, bk, &xn[t * D], D, D);
      linear(&v[t * D], wv, bv, &xn[t * D], D, D);
    }
    // causal attention, one (position, head) at a time
    const float inv_sqrt = 1.0f / std::sqrt(static_cast<float>(dh));
    for (int t = 0; t < T; ++t) {
      for (int hd = 0; hd < H; ++hd) {
        const float* qt = &q[t * D + hd * dh];
        double maxs = -1e30;
        for (int s = 0; s <= t; ++s) {
          const float* ks = &k[s * D + hd * dh];
          float dot = 0.0f;
          for (int i = 0; i < dh; ++i) dot += qt[i] * ks[i];
          probs[s] = dot * inv_sqrt;
          maxs = std::max(maxs, static_cast<double>(probs[s]));
        }
        double denom = 0.0;
        for (int s = 0; s <= t; ++s) {
          probs[s] = static_cast<float>(std::exp(probs[s] - maxs));
          denom += probs[s];
        }
        float* ot = &att[t * D + hd * dh];
        std::fill(ot, ot + dh, 0.0f);
        for (int s = 0; s <= t; ++s) {
          const float w = static_cast<float>(probs[s] / denom);
          const float* vs = &v[s * D + hd * dh];
          for (int i = 0; i < dh; ++i) ot[i] += w * vs[i];
        }
      }
    }
    for (int t = 0; t < T; ++t) {
      linear(&tmp[t * D], wo, bo, &att[t * D], D, D);
      for (int i = 0; i < D; ++i) h[t * D + i] += tmp[t * D + i];
    }
    for (int t = 0; t < T; ++t) {
      layer_norm(&xn[t * D], &h[t * D], g2, b2, D);
      linear(&hidden[t * 4 * D], fc, fcb, &xn[t * D], 4 * D, D);
      for (int i = 0; i < 4 * D; ++i) {
        hidden[t * 4 * D + i] = gelu(hidden[t * 4 * D + i]);
      }
      linear(&tmp[t * D], proj, projb, &hidden[t * 4 * D], D, 4 * D);
      for (int i = 0; i < D; ++i) h[t * D + i] += tmp[t * D + i];
    }

    // capture sees the block output, then the shift lands on this layer
    if (capture.count(l)) {
      out.hooks.captures[l] = h;
    }
    for (const auto& spec : interventions) {
      if (spec.layer != l) continue;
      for (int t = intervene_from; t < T; ++t) {
        for (int i = 0; i < D; ++i) {
          h[t * D + i] += spec.alpha * spec.vector[i];
        }
      }
    }
  }

  const float* wu = weights_.at("unembed").data();
  out.logits.resize(static_cast<std::size_t>(T) * V);
  for (int t = 0; t < T; ++t) {
    for (int tok = 0; tok < V; ++tok) {
      float acc = 0.0f;
      const float* row = wu + static_cast<std::size_t>(tok) * D;
      for (int i = 0; i < D; ++i) acc += row[i] * h[t * D + i];
      out.logits[t * static_cast<std::size_t>(V) + tok] = acc;
    }
  }
  return out;
}

std::vector<int> ToyLM::generate(const std::vector<int>& prompt,
                                 const GenerationParams& params,
                                 const std::vector<Intervention>&
                                     interventions) const {
  if (prompt.empty()) throw ValidationError("generation needs a prompt");
  if (params.temperature < 0.0) {
    throw ValidationError("temperature must be >= 0");
  }
  std::vector<int> seq = prompt;
  Rng rng(params.seed);
  const int V = cfg_.vocab_size;
  const int from =
      params.intervene_prompt ? 0 : static_cast<int>(prompt.size());
  for (int step = 0; step < params.max_new_tokens; ++step) {
    if (static_cast<int>(seq.size()) >= cfg_.max_seq_len) break;
    const ForwardResult fr = forward(seq, {}, interventions, from);
    const float* row = fr.logits.data() + (seq.size() - 1) * V;
    int next = 0;
    if (params.temperature == 0.0) {
      for (int tok = 1; tok < V; ++tok) {
        if (row[tok] > row[next]) next = tok;
      }
    } else {
      double m = row[0];
      for (int tok = 1; tok < V; ++tok) {
        m = std::max(m, static_cast<double>(row[tok]));
      }
      std::vector<double> p(V);
      double denom = 0.0;
      for (int tok = 0; tok < V; ++tok) {
        p[tok] = std::exp((row[tok] - m) / params.temperature);
        denom += p[tok];
      }
      double u = rng.next_double() * denom;
      next = V - 1;
      for (int tok = 0; tok < V; ++tok) {
        u -= p[tok];
        if (u <= 0.0) {
          next = tok;
          break;
        }
      }
    }
    seq.push_back(next);
    if (params.stop_token.has_value() && next == *params.stop_token) break;
  }
  return seq;
}

double ToyLM::perplexity(const std::vector<std::vector<int>>& corpus,
                         const std::vector<Intervention>& interventions)
    const {
  if (corpus.empty()) throw ValidationError("empty corpus");
  const int V = cfg_.vocab_size;
  double nll = 0.0;
  std::int64_t count = 0;
  for (const auto& seq : corpus) {
    if (seq.size() < 2) continue;
    const ForwardResult fr = forward(seq, {}, interventions);
    for (std::size_t t = 0; t + 1 < seq.size(); ++t) {
      const float* row = fr.logits.data() + t * V;
      nll += log_sum_exp(row, V) - row[seq[t + 1]];
      count += 1;
    }
  }
  if (count == 0) {
    throw ValidationError("corpus has no next-token predictions");
  }
  return std::exp(nll / static_cast<double>(count));
}

void ToyLM::save(const std::filesystem::path& path) const {
  TensorFile file;
  const json meta = {{"kind", "toy_lm"},
                     {"config",
                      {{"n_layers", cfg_.n_layers},
                       {"d_model", cfg_.d_model},
                       {"n_heads", cfg_.n_heads},
                       {"vocab_size", cfg_.vocab_size},
                       {"max_seq_len", cfg_.max_seq_len},
                       {"seed", cfg_.seed}}}};
  file.meta_json = meta.dump();
  for (const auto& [name, shape] : expected_shapes(cfg_)) {
    TensorEntry t;
    t.name = name;
    t.shape = shape;
    t.data = weights_.at(name);
    file.tensors.push_back(std::move(t));
  }
  file.write(path);
}

ToyLM ToyLM::load(const std::filesystem::path& path) {
  const TensorFile file = TensorFile::read(path);
  const json meta = json::parse(file.meta_json, nullptr, false);
  if (meta.is_discarded() || !meta.contains("config")) {
    throw ParseError(path.string() + ": missing model config in meta");
  }
  const json& c = meta.at("config");
  ToyLMConfig cfg;
  try {
    cfg.n_layers = c.at("n_layers").get<int>();
    cfg.d_model = c.at("d_model").get<int>();
    cfg.n_heads = c.at("n_heads").get<int>();
    cfg.vocab_size = c.at("vocab_size").get<int>();
    cfg.max_seq_len = c.at("max_seq_len").get<int>();
    cfg.seed = c.at("seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": bad model config: " + e.what());
  }
  validate_config(cfg);

  ToyLM m;
  m.cfg_ = cfg;
  for (const auto& [name, shape] : expected_shapes(cfg)) {
    const TensorEntry* t = file.find(name);
    if (t == nullptr) {
      throw ParseError(path.string() + ": missing tensor \"" + name + "\"");
    }
    if (t->shape != shape) {
      throw ParseError(path.string() + ": tensor \"" + name +
                       "\" has the wrong shape");
    }
    m.weights_[name] = t->data;
  }
  return m;
}

std::vector<std::vector<int>> load_corpus(const std::filesystem::path& path,
                                          int vocab_size) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open corpus " + path.string());
  std::vector<std::vector<int>> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    lineno += 1;
    std::istringstream ss(line);
    std::vector<int> seq;
    std::string tok;
    while (ss >> tok) {
      try {
        const int id = std::stoi(tok);
        if (id < 0 || id >= vocab_size) {
          throw ParseError(path.string() + ":" + std::to_string(lineno) +
                           ": token id " + tok + " outside vocabulary");
        }
        seq.push_back(id);
      } catch (const std::logic_error&) {
        throw ParseError(path.string() + ":" + std::to_string(lineno) +
                         ": \"" + tok + "\" is not a token id");
      }
    }
    if (!seq.empty()) out.push_back(std::move(seq));
  }
  return out;
}

void save_corpus(const std::filesystem::path& path,
                 const std::vector<std::vector<int>>& corpus) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write corpus " + path.string());
  for (const auto& seq : corpus) {
    for (std::size_t i = 0; i < seq.size(); ++i) {
      if (i > 0) out << ' ';
      out << seq[i];
    }
    out << '\n';
  }
}

std::vector<int> hash_tokenize(const std::string& text, int vocab_size,
                               int max_len) {
  if (vocab_size < 1) throw ValidationError("vocab_size must be positive");
  if (max_len < 1) throw ValidationError("max_len must be positive");
  std::vector<int> tokens;
  std::istringstream ss(text);
  std::string word;
  while (ss >> word) {
    tokens.push_back(
        static_cast<int>(fnv1a64(word) % static_cast<std::uint64_t>(vocab_size)));
  }
  if (static_cast<int>(tokens.size()) > max_len) {
    tokens.erase(tokens.begin(), tokens.end() - max_len);  // keep the tail
  }
  if (tokens.empty()) tokens.push_back(0);
  return tokens;
}

namespace {

// Text goes in through a hash tokenizer; the choice falls out of the logit
// comparison between two designated tokens. The presentation is consulted
// only to phrase the reply.
class ToyLmRespondent final : public Respondent {
 public:
  explicit ToyLmRespondent(const RespondentConfig& cfg)
      : model_(ToyLM::load(cfg.weights)), weights_(cfg.weights) {
    if (model_.config().vocab_size < 3) {
      throw ValidationError("toy_lm respondent needs vocab_size >= 3");
    }
  }

  RawResponse ask(const RenderedPrompt& prompt, const AskContext& ctx)
      override {
    const int V = model_.config().vocab_size;
    const std::vector<int> tokens = hash_tokenize(
        prompt.full_text(), V, model_.config().max_seq_len);
    const ForwardResult fr = model_.forward(tokens);
    const float* row = fr.logits.data() + (tokens.size() - 1) * V;
    const int pick = row[1] >= row[2] ? 0 : 1;
    const auto& opt = ctx.item->options[pick];
    return {opt.label + ". " + opt.description, {}, 0};
  }

  std::string describe() const override { return "toylm:" + weights_; }

 private:
  ToyLM model_;
  std::string weights_;
};

}  // namespace

std::unique_ptr<Respondent> make_toy_lm_respondent(
    const RespondentConfig& cfg) {
  if (cfg.weights.empty()) {
    throw ValidationError("toy_lm backend requires a weights file");
  }
  return std::make_unique<ToyLmRespondent>(cfg);
}

}  // namespace persona
