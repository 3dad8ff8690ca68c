#pragma once

// Deterministic synthetic tasks at desk scale.
//
// The sequence task labels each example by a nonlinear function of its bag
// of content tokens: a planted-keyword majority class, cyclically shifted
// when any flip token is present. The shift is what defeats a linear probe
// of the frozen backbone; argmax-of-counts alone would be linearly solvable.
//
// The token task tags entity-candidate tokens by their seeded type,
// cyclically shifted when a trigger token occurs within a window of the
// position, so a tag depends on its neighborhood rather than the token
// alone. Trigger density is tied to a per-example mode, which keeps the
// rule learnable from global context.

#include "pasta/adaptation.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace pasta {

struct ToyVocab {
  std::size_t size = 64;
  int cls_id = 1;
  int sep_id = 2;
  int pad_id = 0;

  void validate() const;
  SpecialTokenSpec special_spec(std::size_t max_slots) const;
};

enum class TaskKind { SequenceClassification, TokenClassification };

std::string to_string(TaskKind kind);
TaskKind task_kind_from_string(const std::string& name);

struct Example {
  std::vector<int> token_ids;      // always [cls, ...content..., sep]
  int label = -1;                  // sequence task
  std::vector<int> token_labels;   // token task, -1 at special positions
};

struct Dataset {
  TaskKind task = TaskKind::SequenceClassification;
  ToyVocab vocab;
  std::size_t num_classes = 0;     // label arity (token task counts the O tag)
  std::vector<Example> train;
  std::vector<Example> dev;

  // Generator provenance, recorded in the manifest.
  std::uint64_t seed = 0;
  std::size_t n_examples = 0;
  std::size_t seq_len = 0;
  double difficulty = 0.0;
  std::size_t num_entity_types = 0;
};

// Sequence classification with an 80/20 train/dev split. difficulty in
// [0, 1] thins the planted keywords and raises the flip probability.
Dataset gen_seq_task(std::uint64_t seed, std::size_t n_examples, std::size_t seq_len,
                     std::size_t num_classes, double difficulty);

// Token classification (NER-like) with num_entity_types entity tags plus O.
Dataset gen_tok_task(std::uint64_t seed, std::size_t n_examples, std::size_t seq_len,
                     std::size_t num_entity_types);

// Directory layout: train.jsonl, dev.jsonl, manifest.json.
void save_dataset(const std::filesystem::path& dir, const Dataset& dataset);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace pasta
