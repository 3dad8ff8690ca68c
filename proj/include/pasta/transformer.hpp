#pragma once

// Pre-LN Transformer encoder with a frozen backbone.
//
// The layer ordering is norm -> attention -> residual -> norm -> FFN ->
// residual, with a final layer norm after the last block. Per-layer additive
// adaptation is applied to the layer input before the first norm of the
// attention sublayer; the captured trace holds exactly those post-addition
// states plus the final output.

#include "pasta/ops.hpp"
#include "pasta/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace pasta {

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kInitStd = 0.02;

struct ModelConfig {
  std::size_t num_layers = 2;
  std::size_t hidden_size = 32;
  std::size_t num_heads = 4;
  std::size_t ffn_size = 128;
  std::size_t vocab_size = 64;
  std::size_t max_len = 128;
  std::uint64_t seed = 42;

  void validate() const;  // throws std::invalid_argument on violations
  bool operator==(const ModelConfig&) const = default;
};

std::string config_to_json(const ModelConfig& config);
ModelConfig config_from_json(const std::string& text);

struct LayerWeights {
  Tensor wq, wk, wv, wo;              // [d x d]
  Tensor ln1_gamma, ln1_beta;         // [d]
  Tensor ln2_gamma, ln2_beta;         // [d]
  Tensor ffn_w1;                      // [d x m]
  Tensor ffn_w2;                      // [m x d]
};

struct TransformerWeights {
  Tensor token_embedding;             // [vocab x d]
  Tensor position_embedding;          // [max_len x d]
  std::vector<LayerWeights> layers;
  Tensor final_gamma, final_beta;     // [d]

  // Fixed-order (name, tensor) listing; the order defines snapshot layout.
  std::vector<std::pair<std::string, Tensor>> named_tensors() const;
  std::size_t parameter_count() const;
  void freeze();                      // clears requires_grad everywhere
  bool frozen() const;
  // Concatenated snapshot records of every tensor, for byte-identity checks.
  std::string snapshot_bytes() const;
};

// Seeded Gaussian init (std 0.02) with identity layer norms; the returned
// weights are already frozen and stand in for a pretrained backbone.
TransformerWeights init_model(const ModelConfig& config);

struct LayerTrace {
  std::vector<Tensor> hidden_states;    // L+1 tensors [N x d]
  std::vector<Tensor> attention_probs;  // L tensors [num_heads, N, N]
};

// Single-sequence forward. The adaptation overload takes one [N x d] additive
// mask per layer; omitting it skips the addition entirely.
LayerTrace forward(const TransformerWeights& weights, const ModelConfig& config,
                   const std::vector<int>& token_ids);
LayerTrace forward(const TransformerWeights& weights, const ModelConfig& config,
                   const std::vector<int>& token_ids, const std::vector<Tensor>& adaptation);

// --- batched path -----------------------------------------------------
// Training packs several sequences back to back (ragged, no padding) and
// runs them through one graph. Attention stays within segments; rows whose
// key_valid entry is 0 are treated as padding.

struct BatchLayout {
  std::vector<int> token_ids;            // packed, length R
  std::vector<std::size_t> positions;    // within-sequence positions
  std::vector<Segment> segments;         // one per sequence
  std::vector<std::uint8_t> key_valid;   // empty means all valid
  std::size_t rows() const { return token_ids.size(); }
};

BatchLayout pack_sequences(const std::vector<std::vector<int>>& sequences);

struct BatchForwardResult {
  Tensor final_hidden;                                  // [R x d], post final norm
  std::vector<Tensor> packed_hidden;                    // L+1 packed states (when traced)
  std::vector<std::shared_ptr<AttentionProbs>> probs;   // L entries (when traced)
};

// adaptation is either empty or one [R x d] mask per layer. Gradient
// recording follows tape attachment of the adaptation masks (the backbone is
// frozen); with no attached inputs this is a pure forward pass.
BatchForwardResult forward_batch(const TransformerWeights& weights, const ModelConfig& config,
                                 const BatchLayout& batch, const std::vector<Tensor>& adaptation,
                                 bool collect_trace = false);

// Checkpoints: a directory of tensor snapshots plus config.json.
void save_model(const std::filesystem::path& dir, const ModelConfig& config,
                const TransformerWeights& weights);
std::pair<ModelConfig, TransformerWeights> load_model(const std::filesystem::path& dir);

}  // namespace pasta
