#include "pasta/transformer.hpp"

#include "pasta/io.hpp"

#include <json.hpp>

#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

namespace pasta {

void ModelConfig::validate() const {
  if (num_layers == 0 || hidden_size == 0 || num_heads == 0 || ffn_size == 0 ||
      vocab_size == 0 || max_len == 0) {
    throw std::invalid_argument("model config: all dimensions must be positive");
  }
  if (hidden_size % num_heads != 0) {
    throw std::invalid_argument("model config: hidden_size " + std::to_string(hidden_size) +
                                " not divisible by num_heads " + std::to_string(num_heads));
  }
}

std::string config_to_json(const ModelConfig& c) {
  nlohmann::json j;
  j["num_layers"] = c.num_layers;
  j["hidden_size"] = c.hidden_size;
  j["num_heads"] = c.num_heads;
  j["ffn_size"] = c.ffn_size;
  j["vocab_size"] = c.vocab_size;
  j["max_len"] = c.max_len;
  j["seed"] = c.seed;
  return j.dump(2);
}

ModelConfig config_from_json(const std::string& text) {
  const nlohmann::json j = nlohmann::json::parse(text);
  ModelConfig c;
  c.num_layers = j.at("num_layers").get<std::size_t>();
  c.hidden_size = j.at("hidden_size").get<std::size_t>();
  c.num_heads = j.at("num_heads").get<std::size_t>();
  c.ffn_size = j.at("ffn_size").get<std::size_t>();
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.max_len = j.at("max_len").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.validate();
  return c;
}

namespace {

std::string layer_prefix(std::size_t l) {
  std::string idx = std::to_string(l);
  if (idx.size() < 2) idx.insert(idx.begin(), '0');
  return "layer" + idx + ".";
}

}  // namespace

std::vector<std::pair<std::string, Tensor>> TransformerWeights::named_tensors() const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.emplace_back("token_embedding", token_embedding);
  out.emplace_back("position_embedding", position_embedding);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string p = layer_prefix(l);
    const LayerWeights& lw = layers[l];
    out.emplace_back(p + "wq", lw.wq);
    out.emplace_back(p + "wk", lw.wk);
    out.emplace_back(p + "wv", lw.wv);
    out.emplace_back(p + "wo", lw.wo);
    out.emplace_back(p + "ln1.gamma", lw.ln1_gamma);
    out.emplace_back(p + "ln1.beta", lw.ln1_beta);
    out.emplace_back(p + "ln2.gamma", lw.ln2_gamma);
    out.emplace_back(p + "ln2.beta", lw.ln2_beta);
    out.emplace_back(p + "ffn.w1", lw.ffn_w1);
    out.emplace_back(p + "ffn.w2", lw.ffn_w2);
  }
  out.emplace_back("final_norm.gamma", final_gamma);
  out.emplace_back("final_norm.beta", final_beta);
  return out;
}

std::size_t TransformerWeights::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : named_tensors()) n += t.size();
  return n;
}

void TransformerWeights::freeze() {
  for (auto& [name, t] : named_tensors()) {
    Tensor tt = t;
    tt.set_requires_grad(false);
  }
}

bool TransformerWeights::frozen() const {
  for (const auto& [name, t] : named_tensors()) {
    if (t.requires_grad()) return false;
  }
  return true;
}

std::string TransformerWeights::snapshot_bytes() const {
  std::ostringstream os(std::ios::binary);
  for (const auto& [name, t] : named_tensors()) write_tensor(os, t);
  return os.str();
}

namespace {

Tensor gaussian_tensor(std::vector<std::size_t> shape, std::mt19937_64& rng, double std_dev) {
  Tensor t = Tensor::zeros(std::move(shape));
  std::normal_distribution<double> dist(0.0, std_dev);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

}  // namespace

TransformerWeights init_model(const ModelConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  const std::size_t d = config.hidden_size, m = config.ffn_size;

  TransformerWeights w;
  w.token_embedding = gaussian_tensor({config.vocab_size, d}, rng, kInitStd);
  w.position_embedding = gaussian_tensor({config.max_len, d}, rng, kInitStd);
  w.layers.resize(config.num_layers);
  for (LayerWeights& lw : w.layers) {
    lw.wq = gaussian_tensor({d, d}, rng, kInitStd);
    lw.wk = gaussian_tensor({d, d}, rng, kInitStd);
    lw.wv = gaussian_tensor({d, d}, rng, kInitStd);
    lw.wo = gaussian_tensor({d, d}, rng, kInitStd);
    lw.ln1_gamma = Tensor::full({d}, 1.0);
    lw.ln1_beta = Tensor::zeros({d});
    lw.ln2_gamma = Tensor::full({d}, 1.0);
    lw.ln2_beta = Tensor::zeros({d});
    lw.ffn_w1 = gaussian_tensor({d, m}, rng, kInitStd);
    lw.ffn_w2 = gaussian_tensor({m, d}, rng, kInitStd);
  }
  w.final_gamma = Tensor::full({d}, 1.0);
  w.final_beta = Tensor::zeros({d});
  w.freeze();
  return w;
}

BatchLayout pack_sequences(const std::vector<std::vector<int>>& sequences) {
  BatchLayout b;
  for (const auto& seq : sequences) {
    b.segments.push_back({b.token_ids.size(), seq.size()});
    for (std::size_t i = 0; i < seq.size(); ++i) {
      b.token_ids.push_back(seq[i]);
      b.positions.push_back(i);
    }
  }
  return b;
}

BatchForwardResult forward_batch(const TransformerWeights& weights, const ModelConfig& config,
                                 const BatchLayout& batch, const std::vector<Tensor>& adaptation,
                                 bool collect_trace) {
  const std::size_t rows = batch.rows();
  const std::size_t d = config.hidden_size;
  const std::size_t num_layers = config.num_layers;
  if (weights.layers.size() != num_layers) {
    throw std::invalid_argument("forward: weights hold " +
                                std::to_string(weights.layers.size()) + " layers, config says " +
                                std::to_string(num_layers));
  }
  for (const Segment& s : batch.segments) {
    if (s.len > config.max_len) {
      throw std::invalid_argument("forward: sequence length " + std::to_string(s.len) +
                                  " exceeds max_len " + std::to_string(config.max_len));
    }
  }
  std::vector<std::size_t> token_rows(rows), pos_rows(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    const int id = batch.token_ids[i];
    if (id < 0 || static_cast<std::size_t>(id) >= config.vocab_size) {
      throw std::invalid_argument("forward: token id " + std::to_string(id) +
                                  " outside vocabulary of size " +
                                  std::to_string(config.vocab_size));
    }
    token_rows[i] = static_cast<std::size_t>(id);
    pos_rows[i] = batch.positions[i];
  }
  if (!adaptation.empty()) {
    if (adaptation.size() != num_layers) {
      throw std::invalid_argument("forward: expected " + std::to_string(num_layers) +
                                  " adaptation masks, got " + std::to_string(adaptation.size()));
    }
    for (const Tensor& m : adaptation) {
      if (m.shape() != std::vector<std::size_t>{rows, d}) {
        throw std::invalid_argument("forward: adaptation mask shape " +
                                    shape_string(m.shape()) + " does not match rows " +
                                    shape_string({rows, d}));
      }
    }
  }

  BatchForwardResult result;
  Tensor h = add(gather_rows(weights.token_embedding, token_rows),
                 gather_rows(weights.position_embedding, pos_rows));
  for (std::size_t l = 0; l < num_layers; ++l) {
    const LayerWeights& lw = weights.layers[l];
    Tensor x = adaptation.empty() ? h : add(h, adaptation[l]);
    if (collect_trace) result.packed_hidden.push_back(x);
    auto probs = collect_trace ? std::make_shared<AttentionProbs>() : nullptr;
    Tensor n1 = layer_norm(x, lw.ln1_gamma, lw.ln1_beta, kLayerNormEps);
    Tensor attn = multi_head_attention(n1, lw.wq, lw.wk, lw.wv, lw.wo, config.num_heads,
                                       batch.segments, batch.key_valid, probs);
    if (collect_trace) result.probs.push_back(probs);
    Tensor a = add(x, attn);
    Tensor n2 = layer_norm(a, lw.ln2_gamma, lw.ln2_beta, kLayerNormEps);
    Tensor f = matmul(gelu(matmul(n2, lw.ffn_w1)), lw.ffn_w2);
    h = add(a, f);
  }
  result.final_hidden = layer_norm(h, weights.final_gamma, weights.final_beta, kLayerNormEps);
  if (collect_trace) result.packed_hidden.push_back(result.final_hidden);
  return result;
}

namespace {

LayerTrace unpack_single_trace(const BatchForwardResult& r, std::size_t n,
                               std::size_t num_heads) {
  LayerTrace trace;
  trace.hidden_states = r.packed_hidden;
  for (const auto& probs : r.probs) {
    Tensor t = Tensor::zeros({num_heads, n, n});
    auto dst = t.data();
    for (std::size_t h = 0; h < num_heads; ++h) {
      const RowMatrixXd& p = probs->at(0, h);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) dst[(h * n + i) * n + j] = p(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    }
    trace.attention_probs.push_back(t);
  }
  return trace;
}

}  // namespace

LayerTrace forward(const TransformerWeights& weights, const ModelConfig& config,
                   const std::vector<int>& token_ids) {
  BatchLayout batch = pack_sequences({token_ids});
  BatchForwardResult r = forward_batch(weights, config, batch, {}, true);
  return unpack_single_trace(r, token_ids.size(), config.num_heads);
}

LayerTrace forward(const TransformerWeights& weights, const ModelConfig& config,
                   const std::vector<int>& token_ids, const std::vector<Tensor>& adaptation) {
  BatchLayout batch = pack_sequences({token_ids});
  BatchForwardResult r = forward_batch(weights, config, batch, adaptation, true);
  return unpack_single_trace(r, token_ids.size(), config.num_heads);
}

void save_model(const std::filesystem::path& dir, const ModelConfig& config,
                const TransformerWeights& weights) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "config.json");
    if (!out) throw std::runtime_error("cannot write " + (dir / "config.json").string());
    out << config_to_json(config) << "\n";
  }
  for (const auto& [name, t] : weights.named_tensors()) {
    save_tensor(dir / (name + ".tns"), t);
  }
}

std::pair<ModelConfig, TransformerWeights> load_model(const std::filesystem::path& dir) {
  std::ifstream in(dir / "config.json");
  if (!in) throw std::runtime_error("cannot read " + (dir / "config.json").string());
  std::stringstream ss;
  ss << in.rdbuf();
  const ModelConfig config = config_from_json(ss.str());

  TransformerWeights w;
  w.layers.resize(config.num_layers);
  auto load = [&dir](const std::string& name) { return load_tensor(dir / (name + ".tns")); };
  w.token_embedding = load("token_embedding");
  w.position_embedding = load("position_embedding");
  for (std::size_t l = 0; l < config.num_layers; ++l) {
    const std::string p = layer_prefix(l);
    LayerWeights& lw = w.layers[l];
    lw.wq = load(p + "wq");
    lw.wk = load(p + "wk");
    lw.wv = load(p + "wv");
    lw.wo = load(p + "wo");
    lw.ln1_gamma = load(p + "ln1.gamma");
    lw.ln1_beta = load(p + "ln1.beta");
    lw.ln2_gamma = load(p + "ln2.gamma");
    lw.ln2_beta = load(p + "ln2.beta");
    lw.ffn_w1 = load(p + "ffn.w1");
    lw.ffn_w2 = load(p + "ffn.w2");
  }
  w.final_gamma = load("final_norm.gamma");
  w.final_beta = load("final_norm.beta");
  w.freeze();
  return {config, w};
}

}  // namespace pasta
