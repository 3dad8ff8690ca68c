#include "pasta/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace pasta {

std::string to_string(DominantTarget target) {
  switch (target) {
    case DominantTarget::CLS: return "CLS";
    case DominantTarget::SEP: return "SEP";
    case DominantTarget::Mixed: return "Mixed";
  }
  throw std::logic_error("unknown dominant target");
}

std::size_t VerticalHeadReport::vertical_count() const {
  std::size_t n = 0;
  for (const auto& e : entries) n += e.is_vertical ? 1 : 0;
  return n;
}

std::string VerticalHeadReport::count_line() const {
  return std::to_string(vertical_count()) + " vertical of " + std::to_string(entries.size()) +
         " total";
}

SpecialPositions special_positions(const std::vector<int>& token_ids,
                                   const SpecialTokenSpec& spec) {
  SpecialPositions out;
  for (std::size_t i = 0; i < token_ids.size(); ++i) {
    if (!spec.is_special(token_ids[i])) continue;
    if (spec.is_cls(token_ids[i])) {
      out.cls.push_back(i);
    } else {
      out.sep.push_back(i);
    }
  }
  return out;
}

namespace {

struct HeadTally {
  std::size_t rows = 0;
  std::size_t special_hits = 0;
  std::size_t cls_hits = 0;
  std::size_t sep_hits = 0;
};

void tally_trace(const LayerTrace& trace, const SpecialPositions& positions,
                 std::vector<HeadTally>& tallies, std::size_t num_heads) {
  auto is_in = [](const std::vector<std::size_t>& v, std::size_t x) {
    return std::find(v.begin(), v.end(), x) != v.end();
  };
  for (std::size_t l = 0; l < trace.attention_probs.size(); ++l) {
    const Tensor& p = trace.attention_probs[l];
    const std::size_t n = p.shape()[1];
    const auto v = p.data();
    for (std::size_t h = 0; h < num_heads; ++h) {
      HeadTally& t = tallies[l * num_heads + h];
      for (std::size_t r = 0; r < n; ++r) {
        const double* row = v.data() + (h * n + r) * n;
        std::size_t best = 0;  // ties resolve to the lowest key position
        for (std::size_t k = 1; k < n; ++k) {
          if (row[k] > row[best]) best = k;
        }
        ++t.rows;
        if (is_in(positions.cls, best)) {
          ++t.special_hits;
          ++t.cls_hits;
        } else if (is_in(positions.sep, best)) {
          ++t.special_hits;
          ++t.sep_hits;
        }
      }
    }
  }
}

VerticalHeadReport report_from_tallies(const std::vector<HeadTally>& tallies,
                                       std::size_t num_layers, std::size_t num_heads,
                                       double threshold, std::size_t sequences) {
  VerticalHeadReport report;
  report.threshold = threshold;
  report.sequences_averaged = sequences;
  for (std::size_t l = 0; l < num_layers; ++l) {
    for (std::size_t h = 0; h < num_heads; ++h) {
      const HeadTally& t = tallies[l * num_heads + h];
      HeadReportEntry e;
      e.layer = l;
      e.head = h;
      e.fraction_to_special =
          t.rows ? static_cast<double>(t.special_hits) / static_cast<double>(t.rows) : 0.0;
      e.is_vertical = e.fraction_to_special >= threshold;
      if (t.cls_hits > t.sep_hits) {
        e.dominant = DominantTarget::CLS;
      } else if (t.sep_hits > t.cls_hits) {
        e.dominant = DominantTarget::SEP;
      } else {
        e.dominant = DominantTarget::Mixed;  // includes the zero-hit case
      }
      report.entries.push_back(e);
    }
  }
  return report;
}

}  // namespace

VerticalHeadReport detect_vertical_heads(const LayerTrace& trace,
                                         const SpecialPositions& positions, double threshold) {
  return detect_vertical_heads(std::vector<LayerTrace>{trace},
                               std::vector<SpecialPositions>{positions}, threshold);
}

VerticalHeadReport detect_vertical_heads(const std::vector<LayerTrace>& traces,
                                         const std::vector<SpecialPositions>& positions,
                                         double threshold) {
  if (traces.empty()) throw std::invalid_argument("detect_vertical_heads: no traces");
  if (positions.size() != traces.size()) {
    throw std::invalid_argument("detect_vertical_heads: traces and positions differ in count");
  }
  const std::size_t num_layers = traces[0].attention_probs.size();
  const std::size_t num_heads = num_layers ? traces[0].attention_probs[0].shape()[0] : 0;
  std::vector<HeadTally> tallies(num_layers * num_heads);
  for (std::size_t s = 0; s < traces.size(); ++s) {
    if (traces[s].attention_probs.size() != num_layers) {
      throw std::invalid_argument("detect_vertical_heads: trace depth mismatch");
    }
    tally_trace(traces[s], positions[s], tallies, num_heads);
  }
  return report_from_tallies(tallies, num_layers, num_heads, threshold, traces.size());
}

std::string vertical_head_csv(const VerticalHeadReport& report) {
  std::string out = "layer,head,fraction,dominant,is_vertical\n";
  char line[96];
  for (const auto& e : report.entries) {
    std::snprintf(line, sizeof(line), "%zu,%zu,%.6f,%s,%d\n", e.layer, e.head,
                  e.fraction_to_special, to_string(e.dominant).c_str(), e.is_vertical ? 1 : 0);
    out += line;
  }
  return out;
}

NormMap norm_map(const AdaptationBank& bank) {
  NormMap map;
  map.layers = bank.num_layers();
  map.shared = bank.mode() == AblationMode::SharedVector;
  map.slots = map.shared ? 1 : bank.max_slots();
  map.values.resize(map.layers * map.slots);
  for (std::size_t l = 0; l < map.layers; ++l) {
    for (std::size_t p = 0; p < map.slots; ++p) {
      const Tensor v = map.shared ? bank.shared_vector(l) : bank.vector_at(l, p);
      double s = 0.0;
      for (double x : v.data()) s += x * x;
      map.values[l * map.slots + p] = std::sqrt(s);
    }
  }
  return map;
}

std::string norm_map_csv(const NormMap& map) {
  std::string out = "layer";
  if (map.shared) {
    out += ",shared";
  } else {
    for (std::size_t p = 0; p < map.slots; ++p) out += ",slot" + std::to_string(p);
  }
  out += "\n";
  char cell[48];
  for (std::size_t l = 0; l < map.layers; ++l) {
    out += std::to_string(l);
    for (std::size_t p = 0; p < map.slots; ++p) {
      std::snprintf(cell, sizeof(cell), ",%.9f", map.at(l, p));
      out += cell;
    }
    out += "\n";
  }
  return out;
}

std::vector<ParamBudgetEntry> param_budget(const ModelConfig& config,
                                           const BudgetExtras& extras) {
  if (extras.adapter_bottleneck == 0 || extras.prompt_length == 0 ||
      extras.special_slots == 0) {
    throw std::invalid_argument("param_budget: extras must be positive");
  }
  const std::size_t l = config.num_layers, d = config.hidden_size, m = config.ffn_size;
  const std::size_t r = extras.adapter_bottleneck, t = extras.prompt_length;
  const std::size_t p = extras.special_slots;

  std::vector<ParamBudgetEntry> out;
  // Two adapters per layer, each a down+up projection pair; biases omitted
  // as sub-leading.
  out.push_back({"Adapter", "O(L*d*r), exact 2*L*(2*d*r)", 2 * l * (2 * d * r), true});
  out.push_back({"P-tuning v2", "O(L*d*T), exact L*T*d", l * t * d, true});
  // Seven d-sized bias vectors per layer (QKV, attention out, two LN betas,
  // FFN out) plus the m-sized FFN intermediate bias.
  out.push_back({"BitFit", "O(L*(d+m)), exact L*(7*d+m)", l * (7 * d + m), true});
  out.push_back({"Diff-Prune", "data-dependent", std::nullopt, false});
  out.push_back({"PASTA", "O(L*d), exact L*P*d", l * p * d, true});
  return out;
}

std::string budget_table(const std::vector<ParamBudgetEntry>& entries,
                         std::optional<std::size_t> backbone_total) {
  std::string out = "method        exact       consistent  formula\n";
  char line[160];
  for (const auto& e : entries) {
    std::string exact = e.exact ? std::to_string(*e.exact) : "-";
    if (e.exact && backbone_total) {
      char pct[32];
      std::snprintf(pct, sizeof(pct), " (%.4f%%)",
                    100.0 * static_cast<double>(*e.exact) /
                        static_cast<double>(*backbone_total));
      exact += pct;
    }
    std::snprintf(line, sizeof(line), "%-13s %-23s %-4s %s\n", e.method.c_str(), exact.c_str(),
                  e.parameter_consistency ? "yes" : "no", e.formula.c_str());
    out += line;
  }
  return out;
}

void write_svg_heatmap(const std::filesystem::path& path, std::size_t rows, std::size_t cols,
                       const std::vector<double>& values, const std::string& title) {
  if (values.size() != rows * cols) {
    throw std::invalid_argument("svg heatmap: values do not fill the grid");
  }
  double lo = values.empty() ? 0.0 : values[0], hi = lo;
  for (double v : values) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const double span = (hi > lo) ? (hi - lo) : 1.0;

  constexpr int kCell = 18, kPadLeft = 40, kPadTop = 28, kPadBottom = 20;
  const int width = kPadLeft + static_cast<int>(cols) * kCell + 10;
  const int height = kPadTop + static_cast<int>(rows) * kCell + kPadBottom;

  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
      << height << "\">\n";
  out << "<text x=\"4\" y=\"16\" font-size=\"12\" font-family=\"monospace\">" << title
      << "</text>\n";
  char buf[224];
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const double t = (values[r * cols + c] - lo) / span;
      const int shade = 255 - static_cast<int>(std::lround(t * 255.0));
      std::snprintf(buf, sizeof(buf),
                    "<rect x=\"%d\" y=\"%d\" width=\"%d\" height=\"%d\" "
                    "fill=\"rgb(%d,%d,255)\"/>\n",
                    kPadLeft + static_cast<int>(c) * kCell,
                    kPadTop + static_cast<int>(r) * kCell, kCell - 1, kCell - 1, shade, shade);
      out << buf;
    }
    std::snprintf(buf, sizeof(buf),
                  "<text x=\"4\" y=\"%d\" font-size=\"10\" font-family=\"monospace\">%zu</text>\n",
                  kPadTop + static_cast<int>(r) * kCell + 13, r);
    out << buf;
  }
  std::snprintf(buf, sizeof(buf),
                "<text x=\"4\" y=\"%d\" font-size=\"10\" font-family=\"monospace\">"
                "min %.4g max %.4g</text>\n",
                height - 6, lo, hi);
  out << buf;
  out << "</svg>\n";
}

}  // namespace pasta
