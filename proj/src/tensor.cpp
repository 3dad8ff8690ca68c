#include "pasta/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>

namespace pasta {

std::size_t shape_numel(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_string(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor Tensor::zeros(std::vector<std::size_t> shape) {
  auto node = std::make_shared<detail::TensorNode>();
  node->values.assign(shape_numel(shape), 0.0);
  node->shape = std::move(shape);
  return Tensor(std::move(node));
}

Tensor Tensor::full(std::vector<std::size_t> shape, double value) {
  Tensor t = zeros(std::move(shape));
  std::fill(t.node_->values.begin(), t.node_->values.end(), value);
  return t;
}

Tensor Tensor::from_data(std::vector<std::size_t> shape, std::vector<double> values) {
  if (shape_numel(shape) != values.size()) {
    throw std::invalid_argument("tensor: shape " + shape_string(shape) + " expects " +
                                std::to_string(shape_numel(shape)) + " values, got " +
                                std::to_string(values.size()));
  }
  auto node = std::make_shared<detail::TensorNode>();
  node->shape = std::move(shape);
  node->values = std::move(values);
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value) { return from_data({1}, {value}); }

std::size_t Tensor::rows() const {
  const auto& s = node_->shape;
  if (s.size() <= 1) return s.empty() ? 1 : 1;
  if (s.size() == 2) return s[0];
  throw std::invalid_argument("tensor: no 2-d view of shape " + shape_string(s));
}

std::size_t Tensor::cols() const {
  const auto& s = node_->shape;
  if (s.empty()) return 1;
  if (s.size() == 1) return s[0];
  if (s.size() == 2) return s[1];
  throw std::invalid_argument("tensor: no 2-d view of shape " + shape_string(s));
}

MatMap Tensor::mat() {
  return MatMap(node_->values.data(), static_cast<Eigen::Index>(rows()),
                static_cast<Eigen::Index>(cols()));
}

ConstMatMap Tensor::mat() const {
  return ConstMatMap(node_->values.data(), static_cast<Eigen::Index>(rows()),
                     static_cast<Eigen::Index>(cols()));
}

Tensor& Tensor::set_requires_grad(bool v) {
  node_->requires_grad = v;
  if (!v) node_->grad.clear();
  return *this;
}

Tensor& Tensor::attach(Tape& tape) {
  node_->tape = &tape;
  return *this;
}

void Tensor::zero_grad() {
  std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

void Tensor::accumulate_grad(std::span<const double> g) {
  if (!node_->requires_grad) return;
  auto buf = grad_buffer();
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += g[i];
}

std::span<double> Tensor::grad_buffer() {
  if (node_->grad.empty()) node_->grad.assign(node_->values.size(), 0.0);
  return node_->grad;
}

Tensor Tensor::clone_detached() const {
  return Tensor::from_data(node_->shape, node_->values);
}

void Tape::record(Tensor output, std::vector<Tensor> inputs, BackwardFn rule,
                  const char* op_name) {
  records_.push_back(Record{std::move(output), std::move(inputs), std::move(rule), op_name});
}

void backward(const Tensor& loss) {
  if (loss.size() != 1) {
    throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                shape_string(loss.shape()));
  }
  if (!loss.requires_grad()) return;  // frozen graph: nothing to populate
  Tape* tape = loss.tape();
  if (tape == nullptr) return;

  Tensor seed = loss;
  seed.grad_buffer()[0] += 1.0;
  for (auto it = tape->records_.rbegin(); it != tape->records_.rend(); ++it) {
    if (!it->output.has_grad()) continue;  // not on the path to this loss
    it->rule();
  }
}

}  // namespace pasta
