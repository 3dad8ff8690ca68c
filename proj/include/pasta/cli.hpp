#pragma once

// Command-line driver for the whole experiment lifecycle:
//   gen | train | eval | ablate | analyze | budget
//
// Every artifact-producing run writes a run_manifest.json capturing the
// command, an effective-config hash, seeds, paths, wall time and a metric
// summary. Reruns with identical inputs reproduce identical metrics.

#include "pasta/taskgen.hpp"
#include "pasta/training.hpp"
#include "pasta/transformer.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace pasta {

// Desk-scale defaults shared by the CLI and the test suites.
ModelConfig default_model_config();
TrainConfig default_train_config();

struct TaskGenDefaults {
  std::uint64_t seed = 42;
  std::size_t seq_examples = 3000;
  std::size_t tok_examples = 2000;
  std::size_t seq_len = 12;
  std::size_t num_classes = 2;
  std::size_t num_entity_types = 2;
  double difficulty = 0.5;
};
TaskGenDefaults default_taskgen();

inline constexpr std::size_t kDefaultBankSlots = 2;  // [CLS] plus one [SEP]

// Exit codes, also listed in --help.
inline constexpr int kExitOk = 0;
inline constexpr int kExitInternal = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitMissingFile = 3;
inline constexpr int kExitConfig = 4;

// args excludes the program name, e.g. {"budget", "--L", "24"}.
int cli_main(const std::vector<std::string>& args);

}  // namespace pasta
