#pragma once

// Special-token adaptation: trainable per-layer vectors added to the hidden
// states of special tokens before each attention sublayer.
//
// Slot identity is positional: the p-th special token of a sequence (left to
// right, zero-based) draws the slot-p vector, so repeated [SEP]s get their
// own parameters. Vectors start at zero, which makes the adapted model
// coincide with the frozen backbone exactly until training moves them.

#include "pasta/tensor.hpp"
#include "pasta/transformer.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace pasta {

enum class AblationMode { Full, NoCLS, NoSEP, SharedVector, ClassifierOnly };

std::string to_string(AblationMode mode);
AblationMode ablation_mode_from_string(const std::string& name);
inline constexpr AblationMode kAllAblationModes[] = {
    AblationMode::Full, AblationMode::NoCLS, AblationMode::NoSEP, AblationMode::SharedVector,
    AblationMode::ClassifierOnly};

struct SpecialTokenSpec {
  std::vector<int> special_token_ids;  // all ids treated as special
  std::vector<int> cls_token_ids;      // the subset counted as [CLS]-type
  std::size_t max_slots = 2;           // P, capacity of adapted tokens per sequence

  bool is_special(int id) const;
  bool is_cls(int id) const;
  void validate() const;
};

struct SpecialTokenLocation {
  std::size_t position;
  std::size_t slot;
  int token_id;
};

// Positions of special tokens in sequence order; the k-th found special
// token occupies slot k. Throws when a sequence holds more special tokens
// than the spec's capacity P.
std::vector<SpecialTokenLocation> locate_special_tokens(const std::vector<int>& token_ids,
                                                        const SpecialTokenSpec& spec);

class AdaptationBank {
 public:
  AdaptationBank(std::size_t num_layers, std::size_t max_slots, std::size_t hidden_size,
                 AblationMode mode);

  std::size_t num_layers() const { return num_layers_; }
  std::size_t max_slots() const { return max_slots_; }
  std::size_t hidden_size() const { return hidden_size_; }
  AblationMode mode() const { return mode_; }

  // Slots the mode trains, under the canonical layout where slot 0 is the
  // [CLS] position and later slots are [SEP]s.
  bool slot_trainable(std::size_t slot) const;

  // Trainable tensors, in (layer, slot) order; what the optimizer steps.
  std::vector<Tensor> parameters() const;
  std::size_t adaptation_param_count() const;

  // Stored vectors: L*P for per-slot modes, L for SharedVector.
  const std::vector<Tensor>& vectors() const { return vectors_; }
  Tensor vector_at(std::size_t layer, std::size_t slot) const;
  Tensor shared_vector(std::size_t layer) const;

  void attach(Tape& tape);
  void zero_grads();

 private:
  std::size_t num_layers_, max_slots_, hidden_size_;
  AblationMode mode_;
  std::vector<Tensor> vectors_;
};

// One [n x d] additive mask per layer for a single sequence. Masks reference
// the bank's tensors through the graph, so gradients flow back into them;
// disabled slots and non-special positions stay exactly zero.
std::vector<Tensor> build_masks(const std::vector<SpecialTokenLocation>& locations,
                                const SpecialTokenSpec& spec, const AdaptationBank& bank,
                                std::size_t n);

// Packed-batch variant: locations are per sequence, offset by the batch
// segments. Returns L masks of shape [batch.rows() x d].
std::vector<Tensor> build_masks_packed(
    const std::vector<std::vector<SpecialTokenLocation>>& locations,
    const SpecialTokenSpec& spec, const AdaptationBank& bank, const BatchLayout& batch);

struct ParamCount {
  std::size_t adaptation = 0;
  std::size_t total_trainable = 0;
  double fraction_of(std::size_t backbone_total) const {
    return static_cast<double>(total_trainable) / static_cast<double>(backbone_total);
  }
};

// Closed-form trainable-parameter arithmetic for a mode, assuming the
// canonical one-CLS layout: Full = L*P*d, SharedVector = L*d,
// NoCLS = L*(P-1)*d, NoSEP = L*d, ClassifierOnly = 0.
ParamCount trainable_param_count(const ModelConfig& config, const SpecialTokenSpec& spec,
                                 AblationMode mode, std::size_t head_params);

// Adaptation checkpoint: magic "PASTAADP", u32-length JSON header
// {L, P, d, mode, seed}, then the raw little-endian vector payloads
// (L*P of them, or L in shared mode).
inline constexpr char kAdaptationMagic[8] = {'P', 'A', 'S', 'T', 'A', 'A', 'D', 'P'};

void save_adaptation(const std::filesystem::path& path, const AdaptationBank& bank,
                     std::uint64_t seed);

struct LoadedAdaptation {
  AdaptationBank bank;
  std::uint64_t seed = 0;
};
LoadedAdaptation load_adaptation(const std::filesystem::path& path);

}  // namespace pasta
