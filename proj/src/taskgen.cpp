#include "pasta/taskgen.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>

namespace pasta {

void ToyVocab::validate() const {
  if (cls_id == sep_id || cls_id == pad_id || sep_id == pad_id) {
    throw std::invalid_argument("toy vocab: reserved ids must be distinct");
  }
  for (int id : {cls_id, sep_id, pad_id}) {
    if (id < 0 || static_cast<std::size_t>(id) >= size) {
      throw std::invalid_argument("toy vocab: reserved id " + std::to_string(id) +
                                  " outside vocabulary of size " + std::to_string(size));
    }
  }
}

SpecialTokenSpec ToyVocab::special_spec(std::size_t max_slots) const {
  SpecialTokenSpec spec;
  spec.special_token_ids = {cls_id, sep_id};
  spec.cls_token_ids = {cls_id};
  spec.max_slots = max_slots;
  return spec;
}

std::string to_string(TaskKind kind) {
  return kind == TaskKind::SequenceClassification ? "seq" : "tok";
}

TaskKind task_kind_from_string(const std::string& name) {
  if (name == "seq") return TaskKind::SequenceClassification;
  if (name == "tok") return TaskKind::TokenClassification;
  throw std::invalid_argument("unknown task kind '" + name + "' (expected seq|tok)");
}

namespace {

constexpr std::size_t kContentBase = 3;  // ids below are pad/cls/sep

// First content ids are keywords (kw_per_class per class), then flip
// tokens, then noise. The partition is a function of the counts only, so a
// dataset is reproducible from its manifest.
struct SeqPools {
  std::vector<std::vector<int>> keywords;  // per class
  std::vector<int> flips;
  std::vector<int> noise;
};

SeqPools seq_pools(std::size_t vocab_size, std::size_t num_classes, std::size_t kw_per_class,
                   std::size_t flip_count) {
  SeqPools pools;
  std::size_t next = kContentBase;
  pools.keywords.resize(num_classes);
  for (std::size_t c = 0; c < num_classes; ++c) {
    for (std::size_t k = 0; k < kw_per_class; ++k) pools.keywords[c].push_back(static_cast<int>(next++));
  }
  for (std::size_t k = 0; k < flip_count; ++k) pools.flips.push_back(static_cast<int>(next++));
  if (next >= vocab_size) {
    throw std::invalid_argument("taskgen: vocabulary too small for keyword partition");
  }
  for (; next < vocab_size; ++next) pools.noise.push_back(static_cast<int>(next));
  return pools;
}

void split_dataset(std::vector<Example> all, Dataset& out) {
  const std::size_t n_train = (all.size() * 8) / 10;
  out.train.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n_train));
  out.dev.assign(all.begin() + static_cast<std::ptrdiff_t>(n_train), all.end());
}

}  // namespace

Dataset gen_seq_task(std::uint64_t seed, std::size_t n_examples, std::size_t seq_len,
                     std::size_t num_classes, double difficulty) {
  if (num_classes < 2) throw std::invalid_argument("gen_seq_task: need at least 2 classes");
  if (difficulty < 0.0 || difficulty > 1.0) {
    throw std::invalid_argument("gen_seq_task: difficulty must lie in [0, 1]");
  }
  if (n_examples < 10) throw std::invalid_argument("gen_seq_task: need at least 10 examples");

  Dataset ds;
  ds.task = TaskKind::SequenceClassification;
  ds.num_classes = num_classes;
  ds.seed = seed;
  ds.n_examples = n_examples;
  ds.seq_len = seq_len;
  ds.difficulty = difficulty;
  ds.vocab.validate();

  // Difficulty thins the planted majority and raises the flip rate.
  const std::size_t n_kw = std::max<std::size_t>(
      2, static_cast<std::size_t>(std::lround(5.0 - 3.0 * difficulty)));
  const std::size_t n_dis = std::min<std::size_t>(
      n_kw - 1, static_cast<std::size_t>(std::lround(1.0 + difficulty)));
  const double p_flip = 0.30 + 0.30 * difficulty;
  const std::size_t n_flip = 2;
  const std::size_t planted = n_kw + n_dis * (num_classes - 1) + n_flip;
  if (seq_len < planted + 1) {
    throw std::invalid_argument("gen_seq_task: seq_len " + std::to_string(seq_len) +
                                " too short for " + std::to_string(planted) +
                                " planted tokens");
  }

  const SeqPools pools = seq_pools(ds.vocab.size, num_classes, 6, 4);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> noise_pick(0, pools.noise.size() - 1);

  std::vector<Example> all;
  all.reserve(n_examples);
  std::vector<std::size_t> slots(seq_len);
  for (std::size_t i = 0; i < n_examples; ++i) {
    const std::size_t base = i % num_classes;  // exact class balance before the shift
    std::vector<int> content(seq_len);
    for (int& t : content) t = pools.noise[noise_pick(rng)];

    std::iota(slots.begin(), slots.end(), 0);
    std::shuffle(slots.begin(), slots.end(), rng);
    std::size_t cursor = 0;
    auto plant = [&](int token) { content[slots[cursor++]] = token; };

    std::uniform_int_distribution<std::size_t> kw_pick(0, pools.keywords[base].size() - 1);
    for (std::size_t k = 0; k < n_kw; ++k) plant(pools.keywords[base][kw_pick(rng)]);
    for (std::size_t c = 0; c < num_classes; ++c) {
      if (c == base) continue;
      std::uniform_int_distribution<std::size_t> dis_pick(0, pools.keywords[c].size() - 1);
      for (std::size_t k = 0; k < n_dis; ++k) plant(pools.keywords[c][dis_pick(rng)]);
    }
    const bool flipped = unit(rng) < p_flip;
    if (flipped) {
      std::uniform_int_distribution<std::size_t> flip_pick(0, pools.flips.size() - 1);
      for (std::size_t k = 0; k < n_flip; ++k) plant(pools.flips[flip_pick(rng)]);
    }

    Example ex;
    ex.token_ids.reserve(seq_len + 2);
    ex.token_ids.push_back(ds.vocab.cls_id);
    ex.token_ids.insert(ex.token_ids.end(), content.begin(), content.end());
    ex.token_ids.push_back(ds.vocab.sep_id);
    ex.label = static_cast<int>((base + (flipped ? 1 : 0)) % num_classes);
    all.push_back(std::move(ex));
  }
  std::shuffle(all.begin(), all.end(), rng);
  split_dataset(std::move(all), ds);
  return ds;
}

Dataset gen_tok_task(std::uint64_t seed, std::size_t n_examples, std::size_t seq_len,
                     std::size_t num_entity_types) {
  if (num_entity_types < 2) throw std::invalid_argument("gen_tok_task: need >= 2 entity types");
  if (n_examples < 10) throw std::invalid_argument("gen_tok_task: need at least 10 examples");
  if (seq_len < 4) throw std::invalid_argument("gen_tok_task: seq_len too short");

  Dataset ds;
  ds.task = TaskKind::TokenClassification;
  ds.num_classes = num_entity_types + 1;  // entity tags plus O
  ds.seed = seed;
  ds.n_examples = n_examples;
  ds.seq_len = seq_len;
  ds.num_entity_types = num_entity_types;
  ds.vocab.validate();

  // Content partition: triggers, entity candidates (typed round-robin), fillers.
  constexpr std::size_t kTriggers = 6, kEntities = 18, kWindow = 2;
  std::vector<int> triggers, entities, fillers;
  std::size_t next = kContentBase;
  for (std::size_t k = 0; k < kTriggers; ++k) triggers.push_back(static_cast<int>(next++));
  for (std::size_t k = 0; k < kEntities; ++k) entities.push_back(static_cast<int>(next++));
  for (; next < ds.vocab.size; ++next) fillers.push_back(static_cast<int>(next));
  auto entity_type = [&](int id) {
    return static_cast<std::size_t>(id - triggers.size() - kContentBase) % num_entity_types;
  };

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> ent_pick(0, entities.size() - 1);
  std::uniform_int_distribution<std::size_t> trig_pick(0, triggers.size() - 1);
  std::uniform_int_distribution<std::size_t> fill_pick(0, fillers.size() - 1);

  std::vector<Example> all;
  all.reserve(n_examples);
  for (std::size_t i = 0; i < n_examples; ++i) {
    const bool dense = unit(rng) < 0.5;  // trigger-rich vs trigger-free mode
    std::vector<int> content(seq_len);
    for (int& t : content) {
      const double r = unit(rng);
      if (r < 0.35) {
        t = entities[ent_pick(rng)];
      } else if (dense && r < 0.70) {
        t = triggers[trig_pick(rng)];
      } else {
        t = fillers[fill_pick(rng)];
      }
    }

    std::vector<int> labels(seq_len, 0);
    auto is_trigger = [&](int id) {
      return id >= static_cast<int>(kContentBase) &&
             id < static_cast<int>(kContentBase + kTriggers);
    };
    for (std::size_t j = 0; j < seq_len; ++j) {
      const int id = content[j];
      if (id < static_cast<int>(kContentBase + kTriggers) ||
          id >= static_cast<int>(kContentBase + kTriggers + kEntities)) {
        continue;  // triggers and fillers tag O
      }
      bool shifted = false;
      const std::size_t lo = (j >= kWindow) ? j - kWindow : 0;
      const std::size_t hi = std::min(seq_len - 1, j + kWindow);
      for (std::size_t k = lo; k <= hi && !shifted; ++k) shifted = is_trigger(content[k]);
      const std::size_t tag = (entity_type(id) + (shifted ? 1 : 0)) % num_entity_types;
      labels[j] = static_cast<int>(1 + tag);
    }

    Example ex;
    ex.token_ids.reserve(seq_len + 2);
    ex.token_ids.push_back(ds.vocab.cls_id);
    ex.token_ids.insert(ex.token_ids.end(), content.begin(), content.end());
    ex.token_ids.push_back(ds.vocab.sep_id);
    ex.token_labels.reserve(seq_len + 2);
    ex.token_labels.push_back(-1);
    ex.token_labels.insert(ex.token_labels.end(), labels.begin(), labels.end());
    ex.token_labels.push_back(-1);
    all.push_back(std::move(ex));
  }
  std::shuffle(all.begin(), all.end(), rng);
  split_dataset(std::move(all), ds);
  return ds;
}

namespace {

void write_jsonl(const std::filesystem::path& path, const std::vector<Example>& examples,
                 TaskKind task) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const Example& ex : examples) {
    nlohmann::json j;
    j["token_ids"] = ex.token_ids;
    if (task == TaskKind::SequenceClassification) {
      j["label"] = ex.label;
    } else {
      j["labels"] = ex.token_labels;
    }
    out << j.dump() << "\n";
  }
}

std::vector<Example> read_jsonl(const std::filesystem::path& path, TaskKind task) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::vector<Example> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const nlohmann::json j = nlohmann::json::parse(line);
    Example ex;
    ex.token_ids = j.at("token_ids").get<std::vector<int>>();
    if (task == TaskKind::SequenceClassification) {
      ex.label = j.at("label").get<int>();
    } else {
      ex.token_labels = j.at("labels").get<std::vector<int>>();
    }
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace

void save_dataset(const std::filesystem::path& dir, const Dataset& ds) {
  std::filesystem::create_directories(dir);
  write_jsonl(dir / "train.jsonl", ds.train, ds.task);
  write_jsonl(dir / "dev.jsonl", ds.dev, ds.task);

  nlohmann::json m;
  m["task"] = to_string(ds.task);
  m["seed"] = ds.seed;
  m["n_examples"] = ds.n_examples;
  m["seq_len"] = ds.seq_len;
  m["num_classes"] = ds.num_classes;
  m["difficulty"] = ds.difficulty;
  m["num_entity_types"] = ds.num_entity_types;
  m["vocab"] = {{"size", ds.vocab.size},
                {"cls_id", ds.vocab.cls_id},
                {"sep_id", ds.vocab.sep_id},
                {"pad_id", ds.vocab.pad_id}};
  m["counts"] = {{"train", ds.train.size()}, {"dev", ds.dev.size()}};
  std::ofstream out(dir / "manifest.json");
  if (!out) throw std::runtime_error("cannot write " + (dir / "manifest.json").string());
  out << m.dump(2) << "\n";
}

Dataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw std::runtime_error("cannot read " + (dir / "manifest.json").string());
  nlohmann::json m;
  in >> m;

  Dataset ds;
  ds.task = task_kind_from_string(m.at("task").get<std::string>());
  ds.seed = m.at("seed").get<std::uint64_t>();
  ds.n_examples = m.at("n_examples").get<std::size_t>();
  ds.seq_len = m.at("seq_len").get<std::size_t>();
  ds.num_classes = m.at("num_classes").get<std::size_t>();
  ds.difficulty = m.at("difficulty").get<double>();
  ds.num_entity_types = m.at("num_entity_types").get<std::size_t>();
  const auto& v = m.at("vocab");
  ds.vocab.size = v.at("size").get<std::size_t>();
  ds.vocab.cls_id = v.at("cls_id").get<int>();
  ds.vocab.sep_id = v.at("sep_id").get<int>();
  ds.vocab.pad_id = v.at("pad_id").get<int>();
  ds.vocab.validate();
  ds.train = read_jsonl(dir / "train.jsonl", ds.task);
  ds.dev = read_jsonl(dir / "dev.jsonl", ds.task);
  return ds;
}

}  // namespace pasta
