#pragma once

// Diagnostic instruments: vertical attention-head detection, adaptation-norm
// maps, and the parameter-budget comparison against standard baselines.

#include "pasta/adaptation.hpp"
#include "pasta/transformer.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace pasta {

enum class DominantTarget { CLS, SEP, Mixed };

std::string to_string(DominantTarget target);

struct HeadReportEntry {
  std::size_t layer = 0;
  std::size_t head = 0;
  double fraction_to_special = 0.0;
  DominantTarget dominant = DominantTarget::Mixed;
  bool is_vertical = false;  // fraction_to_special >= threshold
};

struct VerticalHeadReport {
  double threshold = 0.9;
  std::size_t sequences_averaged = 1;
  std::vector<HeadReportEntry> entries;  // layer-major, head-minor

  std::size_t vertical_count() const;
  // "V vertical of H total"
  std::string count_line() const;
};

struct SpecialPositions {
  std::vector<std::size_t> cls;
  std::vector<std::size_t> sep;
};

SpecialPositions special_positions(const std::vector<int>& token_ids,
                                   const SpecialTokenSpec& spec);

// Per (layer, head): the fraction of query rows whose argmax key position is
// special. Row argmax ties resolve to the lowest key position. A head is
// vertical when the fraction reaches the threshold; the dominant target is
// the majority among special argmax hits, ties breaking toward Mixed. Empty
// position sets report zero fractions and no vertical heads.
VerticalHeadReport detect_vertical_heads(const LayerTrace& trace,
                                         const SpecialPositions& positions,
                                         double threshold = 0.9);

// Batch aggregate: fractions averaged across sequences before thresholding,
// dominance by summed hits. Flagged via sequences_averaged in the report.
VerticalHeadReport detect_vertical_heads(const std::vector<LayerTrace>& traces,
                                         const std::vector<SpecialPositions>& positions,
                                         double threshold = 0.9);

std::string vertical_head_csv(const VerticalHeadReport& report);

struct NormMap {
  std::size_t layers = 0;
  std::size_t slots = 0;           // 1 in shared mode
  std::vector<double> values;      // row-major [layers x slots]
  bool shared = false;
  double at(std::size_t layer, std::size_t slot) const { return values[layer * slots + slot]; }
};

// Euclidean norms of the adaptation vectors, layer rows by slot columns.
NormMap norm_map(const AdaptationBank& bank);
std::string norm_map_csv(const NormMap& map);

struct ParamBudgetEntry {
  std::string method;
  std::string formula;                 // asymptotic form with the constants used
  std::optional<std::size_t> exact;    // absent when data-dependent
  bool parameter_consistency = false;
};

struct BudgetExtras {
  std::size_t adapter_bottleneck = 64;  // r
  std::size_t prompt_length = 20;       // T
  std::size_t special_slots = 2;        // P
};

// Leading-term exact counts for the baseline methods and this one; the
// BitFit count uses 7 d-sized bias vectors per layer plus the FFN bias.
std::vector<ParamBudgetEntry> param_budget(const ModelConfig& config,
                                           const BudgetExtras& extras);

std::string budget_table(const std::vector<ParamBudgetEntry>& entries,
                         std::optional<std::size_t> backbone_total);

// Plain grid heatmap with a linear grayscale ramp and min/max legend.
void write_svg_heatmap(const std::filesystem::path& path, std::size_t rows, std::size_t cols,
                       const std::vector<double>& values, const std::string& title);

}  // namespace pasta
