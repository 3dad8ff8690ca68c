#pragma once

// Frozen-backbone training: AdamW over the adaptation bank and a task head,
// with everything else untouched.

#include "pasta/adaptation.hpp"
#include "pasta/taskgen.hpp"
#include "pasta/transformer.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace pasta {

enum class HeadKind { SequenceCLS, TokenLevel };

std::string to_string(HeadKind kind);
HeadKind head_kind_from_string(const std::string& name);

// Linear readout. SequenceCLS applies it to the final-layer state at the
// [CLS] position only; TokenLevel applies the same affine map to every
// final-layer token state.
struct ClassifierHead {
  HeadKind kind = HeadKind::SequenceCLS;
  Tensor weight;  // [d x num_classes]
  Tensor bias;    // [num_classes]

  static ClassifierHead init(HeadKind kind, std::size_t hidden_size, std::size_t num_classes,
                             std::uint64_t seed);
  std::size_t num_classes() const { return bias.size(); }
  std::vector<Tensor> parameters() const { return {weight, bias}; }
  std::size_t parameter_count() const { return weight.size() + bias.size(); }
  void attach(Tape& tape);
  void zero_grads();
  std::string snapshot_bytes() const;
};

void save_head(const std::filesystem::path& dir, const ClassifierHead& head);
ClassifierHead load_head(const std::filesystem::path& dir);

struct TrainConfig {
  double learning_rate = 5e-3;
  std::size_t batch_size = 32;
  std::size_t epochs = 50;
  double weight_decay = 0.0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 42;
  std::size_t max_len = 128;

  void validate() const;
};

// First/second moments per parameter, lazily sized on the first step.
struct AdamWState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::size_t step = 0;
};

// One AdamW update with decoupled weight decay. Gradients are read from the
// parameters' accumulated buffers; a parameter without a gradient this step
// contributes zero. Deterministic.
void adamw_step(std::vector<Tensor>& params, AdamWState& state, const TrainConfig& config);

struct EpochMetrics {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double dev_metric = 0.0;
};

std::string metrics_csv(const std::vector<EpochMetrics>& history);

struct Metrics {
  double accuracy = 0.0;
  std::optional<double> micro_f1;  // token-level tasks only
  double primary() const { return micro_f1 ? *micro_f1 : accuracy; }
};

struct TrainedArtifact {
  AdaptationBank bank;
  ClassifierHead head;
  std::vector<EpochMetrics> history;
};

// Runs the whole loop: batches the training split, optimizes bank + head,
// and records per-epoch loss and dev metric. The backbone is bit-identical
// before and after. Zero epochs is legal and returns the inputs unchanged.
TrainedArtifact train(const TransformerWeights& weights, const ModelConfig& model_config,
                      AdaptationBank bank, ClassifierHead head, const Dataset& dataset,
                      const TrainConfig& config);

Metrics evaluate(const TransformerWeights& weights, const ModelConfig& model_config,
                 const AdaptationBank& bank, const ClassifierHead& head,
                 const std::vector<Example>& examples, const Dataset& dataset);

// Token-level micro-F1 with label 0 as the negative (O) tag and ignored
// positions (-1) excluded; exact token matching, span-agnostic.
Metrics token_metrics(const std::vector<std::vector<int>>& predictions,
                      const std::vector<std::vector<int>>& gold);

}  // namespace pasta
