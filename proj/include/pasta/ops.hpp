#pragma once

// Differentiable operations over Tensor. Every function computes its result
// eagerly; when gradients are required and the inputs carry a tape, a
// backward rule is recorded. Shapes are checked strictly: the only broadcast
// is the row-wise bias add.

#include "pasta/tensor.hpp"

#include <cstdint>
#include <memory>
#include <utility>
#include <vector>

namespace pasta {

// out = a @ b for a [m x k], b [k x n]. Backward: da = dy.b^T, db = a^T.dy.
Tensor matmul(const Tensor& a, const Tensor& b);

// Elementwise sum of identically shaped tensors.
Tensor add(const Tensor& a, const Tensor& b);

// Elementwise product of identically shaped tensors.
Tensor mul(const Tensor& a, const Tensor& b);

// out[i, j] = x[i, j] + bias[j]; the one permitted broadcast.
Tensor add_row_bias(const Tensor& x, const Tensor& bias);

// Exact GELU, x * Phi(x) with the Gaussian CDF.
Tensor gelu(const Tensor& x);

// Softmax along `axis` (0 or 1 for 2-d, 0/-1 for 1-d; -1 means last).
// Stabilized by max subtraction, so huge logits do not overflow. NaN inputs
// propagate to NaN outputs.
Tensor softmax(const Tensor& x, int axis = -1);

// Per-row layer normalization of x [n x d] with affine gamma, beta [d].
// eps must be positive; a constant row maps to beta.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

// out[i] = x[indices[i]]; gradient scatter-adds into x.
Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& indices);

// Builds a [num_rows x d] tensor that is zero everywhere except that row r
// holds vectors[v] for every placement (r, v). Gradients route back into the
// placed vectors, summing over all rows a vector was placed at.
struct RowPlacement {
  std::size_t row;
  std::size_t vector_index;
};
Tensor scatter_rows(const std::vector<Tensor>& vectors,
                    const std::vector<RowPlacement>& placements, std::size_t num_rows,
                    std::size_t dim);

// Sum of all elements, as a scalar.
Tensor sum(const Tensor& x);

// Mean negative log-likelihood of integer labels under softmax(logits).
// logits is [n x num_classes]; labels has n entries; label -1 marks a row
// ignored by both the loss and the gradient.
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels);

// Attention probabilities captured by multi_head_attention, one [n x n]
// row-stochastic matrix per (segment, head).
struct AttentionProbs {
  std::size_t num_heads = 0;
  std::vector<RowMatrixXd> maps;  // indexed segment * num_heads + head
  const RowMatrixXd& at(std::size_t segment, std::size_t head) const {
    return maps[segment * num_heads + head];
  }
};

struct Segment {
  std::size_t start = 0;
  std::size_t len = 0;
};

// Scaled dot-product multi-head self-attention over packed rows.
//
// x is [R x d] holding one or more sequences back to back as described by
// `segments`; attention never crosses a segment boundary. wq/wk/wv/wo are
// [d x d] with num_heads | d. Rows whose key_valid entry is 0 are excluded
// as keys via an additive -inf logit (padding); an empty key_valid means all
// rows are valid. When probs_out is non-null it receives the attention maps.
Tensor multi_head_attention(const Tensor& x, const Tensor& wq, const Tensor& wk,
                            const Tensor& wv, const Tensor& wo, std::size_t num_heads,
                            const std::vector<Segment>& segments,
                            const std::vector<std::uint8_t>& key_valid = {},
                            const std::shared_ptr<AttentionProbs>& probs_out = nullptr);

}  // namespace pasta
