#include "pasta/training.hpp"

#include "pasta/io.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

namespace pasta {

std::string to_string(HeadKind kind) {
  return kind == HeadKind::SequenceCLS ? "sequence-cls" : "token-level";
}

HeadKind head_kind_from_string(const std::string& name) {
  if (name == "sequence-cls") return HeadKind::SequenceCLS;
  if (name == "token-level") return HeadKind::TokenLevel;
  throw std::invalid_argument("unknown head kind '" + name + "'");
}

ClassifierHead ClassifierHead::init(HeadKind kind, std::size_t hidden_size,
                                    std::size_t num_classes, std::uint64_t seed) {
  if (hidden_size == 0 || num_classes < 2) {
    throw std::invalid_argument("classifier head: need hidden size > 0 and >= 2 classes");
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, kInitStd);
  ClassifierHead head;
  head.kind = kind;
  head.weight = Tensor::zeros({hidden_size, num_classes});
  for (double& v : head.weight.data()) v = dist(rng);
  head.bias = Tensor::zeros({num_classes});
  head.weight.set_requires_grad(true);
  head.bias.set_requires_grad(true);
  return head;
}

void ClassifierHead::attach(Tape& tape) {
  weight.attach(tape);
  bias.attach(tape);
}

void ClassifierHead::zero_grads() {
  weight.zero_grad();
  bias.zero_grad();
}

std::string ClassifierHead::snapshot_bytes() const {
  return tensor_bytes(weight) + tensor_bytes(bias);
}

void save_head(const std::filesystem::path& dir, const ClassifierHead& head) {
  std::filesystem::create_directories(dir);
  nlohmann::json j;
  j["kind"] = to_string(head.kind);
  std::ofstream out(dir / "head.json");
  if (!out) throw std::runtime_error("cannot write " + (dir / "head.json").string());
  out << j.dump(2) << "\n";
  save_tensor(dir / "head.weight.tns", head.weight);
  save_tensor(dir / "head.bias.tns", head.bias);
}

ClassifierHead load_head(const std::filesystem::path& dir) {
  std::ifstream in(dir / "head.json");
  if (!in) throw std::runtime_error("cannot read " + (dir / "head.json").string());
  nlohmann::json j;
  in >> j;
  ClassifierHead head;
  head.kind = head_kind_from_string(j.at("kind").get<std::string>());
  head.weight = load_tensor(dir / "head.weight.tns");
  head.bias = load_tensor(dir / "head.bias.tns");
  head.weight.set_requires_grad(true);
  head.bias.set_requires_grad(true);
  return head;
}

void TrainConfig::validate() const {
  if (learning_rate <= 0.0) throw std::invalid_argument("train config: learning_rate must be > 0");
  if (batch_size == 0) throw std::invalid_argument("train config: batch_size must be >= 1");
  if (adam_beta1 < 0.0 || adam_beta1 >= 1.0 || adam_beta2 < 0.0 || adam_beta2 >= 1.0) {
    throw std::invalid_argument("train config: betas must lie in [0, 1)");
  }
  if (adam_eps <= 0.0) throw std::invalid_argument("train config: adam_eps must be > 0");
  if (weight_decay < 0.0) throw std::invalid_argument("train config: weight_decay must be >= 0");
}

void adamw_step(std::vector<Tensor>& params, AdamWState& state, const TrainConfig& config) {
  if (state.m.empty()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.m[i].assign(params[i].size(), 0.0);
      state.v[i].assign(params[i].size(), 0.0);
    }
  }
  if (state.m.size() != params.size()) {
    throw std::invalid_argument("adamw: state tracks " + std::to_string(state.m.size()) +
                                " params, got " + std::to_string(params.size()));
  }
  ++state.step;
  const double b1 = config.adam_beta1, b2 = config.adam_beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    if (state.m[i].size() != p.size()) {
      throw std::invalid_argument("adamw: state size mismatch on param " + std::to_string(i));
    }
    auto values = p.data();
    const auto grads = p.grad();
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double g = grads.empty() ? 0.0 : grads[j];
      state.m[i][j] = b1 * state.m[i][j] + (1.0 - b1) * g;
      state.v[i][j] = b2 * state.v[i][j] + (1.0 - b2) * g * g;
      const double mhat = state.m[i][j] / bc1;
      const double vhat = state.v[i][j] / bc2;
      const double prev = values[j];
      values[j] = prev - config.learning_rate *
                             (mhat / (std::sqrt(vhat) + config.adam_eps) +
                              config.weight_decay * prev);
    }
  }
}

std::string metrics_csv(const std::vector<EpochMetrics>& history) {
  std::string out = "epoch,train_loss,dev_metric\n";
  char line[96];
  for (const EpochMetrics& m : history) {
    std::snprintf(line, sizeof(line), "%zu,%.6f,%.6f\n", m.epoch, m.train_loss, m.dev_metric);
    out += line;
  }
  return out;
}

namespace {

struct BatchData {
  BatchLayout layout;
  std::vector<std::vector<SpecialTokenLocation>> locations;
  std::vector<std::size_t> cls_rows;  // packed row of the [CLS] readout per example
  std::vector<int> labels;            // per example (seq) or per packed row (token)
};

BatchData make_batch(const std::vector<const Example*>& batch, const Dataset& ds,
                     const SpecialTokenSpec& spec) {
  BatchData b;
  std::vector<std::vector<int>> seqs;
  seqs.reserve(batch.size());
  for (const Example* ex : batch) seqs.push_back(ex->token_ids);
  b.layout = pack_sequences(seqs);
  b.layout.key_valid.assign(b.layout.rows(), 1);
  for (std::size_t i = 0; i < b.layout.rows(); ++i) {
    if (b.layout.token_ids[i] == ds.vocab.pad_id) b.layout.key_valid[i] = 0;
  }

  for (std::size_t s = 0; s < batch.size(); ++s) {
    const Example& ex = *batch[s];
    const Segment seg = b.layout.segments[s];
    b.locations.push_back(locate_special_tokens(ex.token_ids, spec));

    std::size_t cls_pos = 0;  // fall back to the first row if no [CLS] is present
    for (const SpecialTokenLocation& loc : b.locations.back()) {
      if (spec.is_cls(loc.token_id)) {
        cls_pos = loc.position;
        break;
      }
    }
    b.cls_rows.push_back(seg.start + cls_pos);

    if (ds.task == TaskKind::SequenceClassification) {
      b.labels.push_back(ex.label);
    } else {
      for (std::size_t i = 0; i < ex.token_labels.size(); ++i) {
        const bool pad = ex.token_ids[i] == ds.vocab.pad_id;
        b.labels.push_back(pad ? -1 : ex.token_labels[i]);
      }
    }
  }
  return b;
}

Tensor batch_logits(const TransformerWeights& weights, const ModelConfig& mc,
                    const AdaptationBank& bank, const SpecialTokenSpec& spec,
                    const ClassifierHead& head, const BatchData& b) {
  std::vector<Tensor> masks;
  if (bank.mode() != AblationMode::ClassifierOnly) {
    masks = build_masks_packed(b.locations, spec, bank, b.layout);
  }
  BatchForwardResult out = forward_batch(weights, mc, b.layout, masks);
  Tensor readout = head.kind == HeadKind::SequenceCLS
                       ? gather_rows(out.final_hidden, b.cls_rows)
                       : out.final_hidden;
  return add_row_bias(matmul(readout, head.weight), head.bias);
}

void check_task_setup(const Dataset& ds, const ClassifierHead& head, std::size_t max_len) {
  const bool seq_task = ds.task == TaskKind::SequenceClassification;
  if (seq_task != (head.kind == HeadKind::SequenceCLS)) {
    throw std::invalid_argument("head kind " + to_string(head.kind) +
                                " does not match task " + to_string(ds.task));
  }
  if (head.num_classes() != ds.num_classes) {
    throw std::invalid_argument("head has " + std::to_string(head.num_classes()) +
                                " classes, dataset has " + std::to_string(ds.num_classes));
  }
  for (const auto* split : {&ds.train, &ds.dev}) {
    for (const Example& ex : *split) {
      if (ex.token_ids.size() > max_len) {
        throw std::invalid_argument("example length " + std::to_string(ex.token_ids.size()) +
                                    " exceeds max_len " + std::to_string(max_len));
      }
    }
  }
}

}  // namespace

TrainedArtifact train(const TransformerWeights& weights, const ModelConfig& mc,
                      AdaptationBank bank, ClassifierHead head, const Dataset& dataset,
                      const TrainConfig& config) {
  config.validate();
  if (dataset.train.empty()) throw std::invalid_argument("train: empty dataset");
  check_task_setup(dataset, head, std::min(config.max_len, mc.max_len));
  const SpecialTokenSpec spec = dataset.vocab.special_spec(bank.max_slots());

  Tape tape;
  bank.attach(tape);
  head.attach(tape);
  std::vector<Tensor> params = bank.parameters();
  for (const Tensor& p : head.parameters()) params.push_back(p);
  AdamWState state;

  std::mt19937_64 shuffle_rng(config.seed);
  std::vector<std::size_t> order(dataset.train.size());
  std::iota(order.begin(), order.end(), 0);

  std::vector<EpochMetrics> history;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t at = 0; at < order.size(); at += config.batch_size) {
      const std::size_t end = std::min(order.size(), at + config.batch_size);
      std::vector<const Example*> chunk;
      chunk.reserve(end - at);
      for (std::size_t k = at; k < end; ++k) chunk.push_back(&dataset.train[order[k]]);

      tape.clear();
      bank.zero_grads();
      head.zero_grads();
      const BatchData b = make_batch(chunk, dataset, spec);
      Tensor loss = cross_entropy(batch_logits(weights, mc, bank, spec, head, b), b.labels);
      backward(loss);
      adamw_step(params, state, config);
      loss_sum += loss.data()[0];
      ++batches;
    }
    const Metrics dev = evaluate(weights, mc, bank, head, dataset.dev, dataset);
    history.push_back({epoch, loss_sum / static_cast<double>(batches), dev.primary()});
  }
  return {std::move(bank), std::move(head), std::move(history)};
}

Metrics evaluate(const TransformerWeights& weights, const ModelConfig& mc,
                 const AdaptationBank& bank, const ClassifierHead& head,
                 const std::vector<Example>& examples, const Dataset& dataset) {
  const SpecialTokenSpec spec = dataset.vocab.special_spec(bank.max_slots());
  Metrics metrics;
  if (examples.empty()) return metrics;

  std::vector<std::vector<int>> token_preds, token_gold;
  std::size_t correct = 0, total = 0;
  constexpr std::size_t kEvalBatch = 64;
  for (std::size_t at = 0; at < examples.size(); at += kEvalBatch) {
    const std::size_t end = std::min(examples.size(), at + kEvalBatch);
    std::vector<const Example*> chunk;
    for (std::size_t k = at; k < end; ++k) chunk.push_back(&examples[k]);
    const BatchData b = make_batch(chunk, dataset, spec);
    Tensor logits = batch_logits(weights, mc, bank, spec, head, b);

    const std::size_t classes = head.num_classes();
    auto argmax_row = [&](std::size_t row) {
      const auto v = logits.data();
      std::size_t best = 0;
      for (std::size_t j = 1; j < classes; ++j) {
        if (v[row * classes + j] > v[row * classes + best]) best = j;
      }
      return static_cast<int>(best);
    };

    if (head.kind == HeadKind::SequenceCLS) {
      for (std::size_t s = 0; s < chunk.size(); ++s) {
        if (argmax_row(s) == chunk[s]->label) ++correct;
        ++total;
      }
    } else {
      for (std::size_t s = 0; s < chunk.size(); ++s) {
        const Segment seg = b.layout.segments[s];
        std::vector<int> pred(seg.len), gold(seg.len);
        for (std::size_t i = 0; i < seg.len; ++i) {
          pred[i] = argmax_row(seg.start + i);
          gold[i] = b.labels[seg.start + i];
        }
        token_preds.push_back(std::move(pred));
        token_gold.push_back(std::move(gold));
      }
    }
  }

  if (head.kind == HeadKind::SequenceCLS) {
    metrics.accuracy = static_cast<double>(correct) / static_cast<double>(total);
    return metrics;
  }
  return token_metrics(token_preds, token_gold);
}

Metrics token_metrics(const std::vector<std::vector<int>>& predictions,
                      const std::vector<std::vector<int>>& gold) {
  std::size_t correct = 0, total = 0, tp = 0, fp = 0, fn = 0;
  for (std::size_t s = 0; s < gold.size(); ++s) {
    for (std::size_t i = 0; i < gold[s].size(); ++i) {
      const int g = gold[s][i];
      if (g < 0) continue;  // special or padding position
      const int p = predictions[s][i];
      ++total;
      if (p == g) ++correct;
      if (p > 0 && p == g) ++tp;
      if (p > 0 && p != g) ++fp;
      if (g > 0 && p != g) ++fn;
    }
  }
  Metrics m;
  m.accuracy = total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
  const double precision = (tp + fp) ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  const double recall = (tp + fn) ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  m.micro_f1 = (precision + recall > 0.0) ? 2.0 * precision * recall / (precision + recall) : 0.0;
  return m;
}

}  // namespace pasta
