#pragma once

// Dense f64 tensors with reverse-mode gradient recording.
//
// A Tensor is a cheap handle onto a shared node holding shape, row-major
// values and (lazily allocated) gradient storage. Operations in ops.hpp are
// free functions; when an input requires gradients and is attached to a
// Tape, the op records a backward rule on that tape. backward(loss) replays
// the tape in reverse and accumulates gradients additively. Callers zero
// gradients between optimizer steps.
//
// Tensors without tape attachment are immutable by convention and safe to
// share read-only across threads. Each training run owns one tape.

#include <Eigen/Core>

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace pasta {

using RowMatrixXd = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrixXd>;
using ConstMatMap = Eigen::Map<const RowMatrixXd>;

class Tape;

namespace detail {

struct TensorNode {
  std::vector<std::size_t> shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until the first accumulation
  bool requires_grad = false;
  Tape* tape = nullptr;  // non-owning
};

}  // namespace detail

std::size_t shape_numel(const std::vector<std::size_t>& shape);
std::string shape_string(const std::vector<std::size_t>& shape);

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<std::size_t> shape);
  static Tensor full(std::vector<std::size_t> shape, double value);
  static Tensor from_data(std::vector<std::size_t> shape, std::vector<double> values);
  static Tensor scalar(double value);

  bool valid() const { return node_ != nullptr; }
  const std::vector<std::size_t>& shape() const { return node_->shape; }
  std::size_t ndim() const { return node_->shape.size(); }
  std::size_t size() const { return node_->values.size(); }

  // 2-d view: 1-d tensors are a single row, [r x c] otherwise.
  std::size_t rows() const;
  std::size_t cols() const;
  MatMap mat();
  ConstMatMap mat() const;

  std::span<double> data() { return node_->values; }
  std::span<const double> data() const { return node_->values; }
  double& at(std::size_t i) { return node_->values[i]; }
  double at(std::size_t i) const { return node_->values[i]; }
  double& at(std::size_t r, std::size_t c) { return node_->values[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return node_->values[r * cols() + c]; }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool v);
  Tape* tape() const { return node_->tape; }
  Tensor& attach(Tape& tape);

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  void zero_grad();
  // Adds g (same length as values) into the gradient buffer, allocating on
  // first use. No-op for tensors that do not require gradients.
  void accumulate_grad(std::span<const double> g);
  std::span<double> grad_buffer();  // allocates zeros on demand

  // Node identity, used as a key when walking graphs.
  const detail::TensorNode* node() const { return node_.get(); }

  // Deep copy of values only; the copy is detached and requires no grad.
  Tensor clone_detached() const;

 private:
  explicit Tensor(std::shared_ptr<detail::TensorNode> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::TensorNode> node_;
};

// Wengert list: ops append records in execution order, so every record's
// inputs were produced by earlier records (or are leaves).
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  void record(Tensor output, std::vector<Tensor> inputs, BackwardFn rule, const char* op_name);
  void clear() { records_.clear(); }
  std::size_t size() const { return records_.size(); }

  friend void backward(const Tensor& loss);

 private:
  struct Record {
    Tensor output;
    std::vector<Tensor> inputs;
    BackwardFn rule;
    const char* op_name;
  };
  std::vector<Record> records_;
};

// Reverse sweep from a scalar loss. Seeds d(loss)=1 and fires each recorded
// rule at most once; rules whose output never received a gradient are
// skipped. A loss that does not require gradients leaves every gradient
// buffer untouched.
void backward(const Tensor& loss);

}  // namespace pasta
