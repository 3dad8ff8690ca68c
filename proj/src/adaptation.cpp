#include "pasta/adaptation.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace pasta {

std::string to_string(AblationMode mode) {
  switch (mode) {
    case AblationMode::Full: return "full";
    case AblationMode::NoCLS: return "no-cls";
    case AblationMode::NoSEP: return "no-sep";
    case AblationMode::SharedVector: return "shared";
    case AblationMode::ClassifierOnly: return "classifier-only";
  }
  throw std::logic_error("unknown ablation mode");
}

AblationMode ablation_mode_from_string(const std::string& name) {
  for (AblationMode m : kAllAblationModes) {
    if (to_string(m) == name) return m;
  }
  throw std::invalid_argument("unknown ablation mode '" + name +
                              "' (expected full|no-cls|no-sep|shared|classifier-only)");
}

bool SpecialTokenSpec::is_special(int id) const {
  return std::find(special_token_ids.begin(), special_token_ids.end(), id) !=
         special_token_ids.end();
}

bool SpecialTokenSpec::is_cls(int id) const {
  return std::find(cls_token_ids.begin(), cls_token_ids.end(), id) != cls_token_ids.end();
}

void SpecialTokenSpec::validate() const {
  if (special_token_ids.empty()) {
    throw std::invalid_argument("special token spec: no special ids designated");
  }
  if (max_slots == 0) throw std::invalid_argument("special token spec: P must be >= 1");
  for (int id : cls_token_ids) {
    if (!is_special(id)) {
      throw std::invalid_argument("special token spec: cls id " + std::to_string(id) +
                                  " is not listed as special");
    }
  }
}

std::vector<SpecialTokenLocation> locate_special_tokens(const std::vector<int>& token_ids,
                                                        const SpecialTokenSpec& spec) {
  spec.validate();
  std::vector<SpecialTokenLocation> out;
  for (std::size_t i = 0; i < token_ids.size(); ++i) {
    if (!spec.is_special(token_ids[i])) continue;
    out.push_back({i, out.size(), token_ids[i]});
  }
  if (out.size() > spec.max_slots) {
    throw std::runtime_error("special token capacity exceeded: found " +
                             std::to_string(out.size()) + " special tokens, max slots P = " +
                             std::to_string(spec.max_slots));
  }
  return out;
}

AdaptationBank::AdaptationBank(std::size_t num_layers, std::size_t max_slots,
                               std::size_t hidden_size, AblationMode mode)
    : num_layers_(num_layers), max_slots_(max_slots), hidden_size_(hidden_size), mode_(mode) {
  if (num_layers == 0 || max_slots == 0 || hidden_size == 0) {
    throw std::invalid_argument("adaptation bank: dimensions must be positive");
  }
  const std::size_t count =
      (mode == AblationMode::SharedVector) ? num_layers : num_layers * max_slots;
  vectors_.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Tensor v = Tensor::zeros({hidden_size});
    const std::size_t slot = (mode == AblationMode::SharedVector) ? 0 : i % max_slots;
    if (mode == AblationMode::SharedVector || slot_trainable(slot)) v.set_requires_grad(true);
    vectors_.push_back(v);
  }
}

bool AdaptationBank::slot_trainable(std::size_t slot) const {
  switch (mode_) {
    case AblationMode::Full: return true;
    case AblationMode::NoCLS: return slot != 0;
    case AblationMode::NoSEP: return slot == 0;
    case AblationMode::SharedVector: return true;  // one shared vector per layer
    case AblationMode::ClassifierOnly: return false;
  }
  return false;
}

std::vector<Tensor> AdaptationBank::parameters() const {
  std::vector<Tensor> out;
  for (const Tensor& v : vectors_) {
    if (v.requires_grad()) out.push_back(v);
  }
  return out;
}

std::size_t AdaptationBank::adaptation_param_count() const {
  std::size_t n = 0;
  for (const Tensor& v : parameters()) n += v.size();
  return n;
}

Tensor AdaptationBank::vector_at(std::size_t layer, std::size_t slot) const {
  if (mode_ == AblationMode::SharedVector) return shared_vector(layer);
  return vectors_.at(layer * max_slots_ + slot);
}

Tensor AdaptationBank::shared_vector(std::size_t layer) const {
  if (mode_ != AblationMode::SharedVector) {
    throw std::logic_error("adaptation bank: shared_vector on a per-slot bank");
  }
  return vectors_.at(layer);
}

void AdaptationBank::attach(Tape& tape) {
  for (Tensor& v : vectors_) {
    if (v.requires_grad()) v.attach(tape);
  }
}

void AdaptationBank::zero_grads() {
  for (Tensor& v : vectors_) v.zero_grad();
}

namespace {

// Placement decision shared by the single and packed builders. Returns the
// bank vector to place at a located special token, or an invalid tensor when
// the mode disables it.
Tensor placed_vector(const AdaptationBank& bank, const SpecialTokenSpec& spec,
                     const SpecialTokenLocation& loc, std::size_t layer) {
  if (loc.slot >= bank.max_slots()) {
    throw std::runtime_error("adaptation: slot " + std::to_string(loc.slot) +
                             " exceeds bank capacity P = " + std::to_string(bank.max_slots()));
  }
  const bool cls = spec.is_cls(loc.token_id);
  switch (bank.mode()) {
    case AblationMode::ClassifierOnly: return Tensor();
    case AblationMode::NoCLS:
      if (cls) return Tensor();
      break;
    case AblationMode::NoSEP:
      if (!cls) return Tensor();
      break;
    default: break;
  }
  if (bank.mode() == AblationMode::SharedVector) return bank.shared_vector(layer);
  return bank.vector_at(layer, loc.slot);
}

}  // namespace

std::vector<Tensor> build_masks(const std::vector<SpecialTokenLocation>& locations,
                                const SpecialTokenSpec& spec, const AdaptationBank& bank,
                                std::size_t n) {
  std::vector<Tensor> masks;
  masks.reserve(bank.num_layers());
  for (std::size_t l = 0; l < bank.num_layers(); ++l) {
    std::vector<Tensor> used;
    std::vector<RowPlacement> placements;
    for (const SpecialTokenLocation& loc : locations) {
      if (loc.position >= n) {
        throw std::invalid_argument("adaptation: location " + std::to_string(loc.position) +
                                    " outside sequence of length " + std::to_string(n));
      }
      Tensor v = placed_vector(bank, spec, loc, l);
      if (!v.valid()) continue;
      placements.push_back({loc.position, used.size()});
      used.push_back(std::move(v));
    }
    masks.push_back(scatter_rows(used, placements, n, bank.hidden_size()));
  }
  return masks;
}

std::vector<Tensor> build_masks_packed(
    const std::vector<std::vector<SpecialTokenLocation>>& locations,
    const SpecialTokenSpec& spec, const AdaptationBank& bank, const BatchLayout& batch) {
  if (locations.size() != batch.segments.size()) {
    throw std::invalid_argument("adaptation: location lists do not match batch segments");
  }
  std::vector<Tensor> masks;
  masks.reserve(bank.num_layers());
  for (std::size_t l = 0; l < bank.num_layers(); ++l) {
    std::vector<Tensor> used;
    std::vector<RowPlacement> placements;
    for (std::size_t s = 0; s < locations.size(); ++s) {
      const Segment seg = batch.segments[s];
      for (const SpecialTokenLocation& loc : locations[s]) {
        if (loc.position >= seg.len) {
          throw std::invalid_argument("adaptation: location outside its segment");
        }
        Tensor v = placed_vector(bank, spec, loc, l);
        if (!v.valid()) continue;
        placements.push_back({seg.start + loc.position, used.size()});
        used.push_back(std::move(v));
      }
    }
    masks.push_back(scatter_rows(used, placements, batch.rows(), bank.hidden_size()));
  }
  return masks;
}

ParamCount trainable_param_count(const ModelConfig& config, const SpecialTokenSpec& spec,
                                 AblationMode mode, std::size_t head_params) {
  spec.validate();
  const std::size_t l = config.num_layers, p = spec.max_slots, d = config.hidden_size;
  ParamCount out;
  switch (mode) {
    case AblationMode::Full: out.adaptation = l * p * d; break;
    case AblationMode::NoCLS: out.adaptation = l * (p - 1) * d; break;
    case AblationMode::NoSEP: out.adaptation = l * 1 * d; break;
    case AblationMode::SharedVector: out.adaptation = l * d; break;
    case AblationMode::ClassifierOnly: out.adaptation = 0; break;
  }
  out.total_trainable = out.adaptation + head_params;
  return out;
}

void save_adaptation(const std::filesystem::path& path, const AdaptationBank& bank,
                     std::uint64_t seed) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  nlohmann::json header;
  header["L"] = bank.num_layers();
  header["P"] = bank.max_slots();
  header["d"] = bank.hidden_size();
  header["mode"] = to_string(bank.mode());
  header["seed"] = seed;
  const std::string hs = header.dump();
  const std::uint32_t hlen = static_cast<std::uint32_t>(hs.size());
  out.write(kAdaptationMagic, sizeof(kAdaptationMagic));
  out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (const Tensor& v : bank.vectors()) {
    out.write(reinterpret_cast<const char*>(v.data().data()),
              static_cast<std::streamsize>(v.size() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("adaptation checkpoint: write failed");
}

LoadedAdaptation load_adaptation(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for reading: " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kAdaptationMagic, sizeof(magic)) != 0) {
    throw std::runtime_error("adaptation checkpoint: bad magic (expected PASTAADP)");
  }
  std::uint32_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  std::string hs(hlen, '\0');
  in.read(hs.data(), hlen);
  if (!in) throw std::runtime_error("adaptation checkpoint: truncated header");
  const nlohmann::json header = nlohmann::json::parse(hs);

  AdaptationBank bank(header.at("L").get<std::size_t>(), header.at("P").get<std::size_t>(),
                      header.at("d").get<std::size_t>(),
                      ablation_mode_from_string(header.at("mode").get<std::string>()));
  for (const Tensor& v : bank.vectors()) {
    Tensor vv = v;
    in.read(reinterpret_cast<char*>(vv.data().data()),
            static_cast<std::streamsize>(vv.size() * sizeof(double)));
  }
  if (!in) throw std::runtime_error("adaptation checkpoint: truncated payload");
  return {std::move(bank), header.at("seed").get<std::uint64_t>()};
}

}  // namespace pasta
