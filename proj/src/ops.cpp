#include "pasta/ops.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace pasta {

namespace {

constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

Tape* merge_tape(std::initializer_list<const Tensor*> inputs) {
  Tape* tape = nullptr;
  for (const Tensor* t : inputs) {
    if (t->tape() == nullptr) continue;
    if (tape == nullptr) {
      tape = t->tape();
    } else if (tape != t->tape()) {
      throw std::invalid_argument("op: inputs recorded on different tapes");
    }
  }
  return tape;
}

bool any_requires(std::initializer_list<const Tensor*> inputs) {
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

// Marks the output differentiable and records the rule when a tape is live.
void finalize(Tensor& out, std::initializer_list<const Tensor*> inputs,
              std::vector<Tensor> kept, Tape::BackwardFn rule, const char* name) {
  if (!any_requires(inputs)) return;
  out.set_requires_grad(true);
  Tape* tape = merge_tape(inputs);
  if (tape == nullptr) return;
  out.attach(*tape);
  tape->record(out, std::move(kept), std::move(rule), name);
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() > 2 || b.ndim() > 2) {
    throw std::invalid_argument("matmul: expects 2-d operands, got " +
                                shape_string(a.shape()) + " and " + shape_string(b.shape()));
  }
  if (a.cols() != b.rows()) {
    throw std::invalid_argument("matmul: inner dimensions mismatch " +
                                shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  Tensor out = Tensor::zeros({a.rows(), b.cols()});
  out.mat().noalias() = a.mat() * b.mat();

  Tensor at = a, bt = b, ot = out;
  finalize(
      out, {&a, &b}, {a, b},
      [at, bt, ot]() mutable {
        ConstMatMap dy(ot.grad().data(), ot.mat().rows(), ot.mat().cols());
        if (at.requires_grad()) {
          MatMap da(at.grad_buffer().data(), at.mat().rows(), at.mat().cols());
          da.noalias() += dy * bt.mat().transpose();
        }
        if (bt.requires_grad()) {
          MatMap db(bt.grad_buffer().data(), bt.mat().rows(), bt.mat().cols());
          db.noalias() += at.mat().transpose() * dy;
        }
      },
      "matmul");
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = Tensor::zeros(a.shape());
  const auto av = a.data();
  const auto bv = b.data();
  auto ov = out.data();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];

  Tensor at = a, bt = b, ot = out;
  finalize(
      out, {&a, &b}, {a, b},
      [at, bt, ot]() mutable {
        at.accumulate_grad(ot.grad());
        bt.accumulate_grad(ot.grad());
      },
      "add");
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out = Tensor::zeros(a.shape());
  const auto av = a.data();
  const auto bv = b.data();
  auto ov = out.data();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];

  Tensor at = a, bt = b, ot = out;
  finalize(
      out, {&a, &b}, {a, b},
      [at, bt, ot]() mutable {
        const auto dy = ot.grad();
        if (at.requires_grad()) {
          auto da = at.grad_buffer();
          const auto bv2 = bt.data();
          for (std::size_t i = 0; i < da.size(); ++i) da[i] += dy[i] * bv2[i];
        }
        if (bt.requires_grad()) {
          auto db = bt.grad_buffer();
          const auto av2 = at.data();
          for (std::size_t i = 0; i < db.size(); ++i) db[i] += dy[i] * av2[i];
        }
      },
      "mul");
  return out;
}

Tensor add_row_bias(const Tensor& x, const Tensor& bias) {
  if (x.ndim() != 2 || bias.ndim() != 1 || bias.size() != x.cols()) {
    throw std::invalid_argument("add_row_bias: incompatible shapes " +
                                shape_string(x.shape()) + " and " + shape_string(bias.shape()));
  }
  Tensor out = Tensor::zeros(x.shape());
  out.mat() = x.mat();
  out.mat().rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.data().data(),
                                                              static_cast<Eigen::Index>(bias.size()));

  Tensor xt = x, bt = bias, ot = out;
  finalize(
      out, {&x, &bias}, {x, bias},
      [xt, bt, ot]() mutable {
        xt.accumulate_grad(ot.grad());
        if (bt.requires_grad()) {
          ConstMatMap dy(ot.grad().data(), ot.mat().rows(), ot.mat().cols());
          Eigen::Map<Eigen::RowVectorXd> db(bt.grad_buffer().data(),
                                            static_cast<Eigen::Index>(bt.size()));
          db += dy.colwise().sum();
        }
      },
      "add_row_bias");
  return out;
}

Tensor gelu(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  const auto xv = x.data();
  auto ov = out.data();
  for (std::size_t i = 0; i < ov.size(); ++i) {
    ov[i] = 0.5 * xv[i] * (1.0 + std::erf(xv[i] * kInvSqrt2));
  }

  Tensor xt = x, ot = out;
  finalize(
      out, {&x}, {x},
      [xt, ot]() mutable {
        const auto dy = ot.grad();
        auto dx = xt.grad_buffer();
        const auto xv2 = xt.data();
        for (std::size_t i = 0; i < dx.size(); ++i) {
          const double v = xv2[i];
          const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
          const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
          dx[i] += dy[i] * (cdf + v * pdf);
        }
      },
      "gelu");
  return out;
}

namespace {

// Softmax over contiguous slices of length `len` strided by `stride`;
// covers both row-wise (stride 1) and column-wise application.
void softmax_slices(const double* in, double* out, std::size_t count, std::size_t len,
                    std::size_t outer_stride, std::size_t inner_stride) {
  for (std::size_t s = 0; s < count; ++s) {
    const double* src = in + s * outer_stride;
    double* dst = out + s * outer_stride;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < len; ++i) mx = std::max(mx, src[i * inner_stride]);
    double total = 0.0;
    for (std::size_t i = 0; i < len; ++i) {
      const double e = std::exp(src[i * inner_stride] - mx);
      dst[i * inner_stride] = e;
      total += e;
    }
    for (std::size_t i = 0; i < len; ++i) dst[i * inner_stride] /= total;
  }
}

void softmax_backward_slices(const double* p, const double* dy, double* dx, std::size_t count,
                             std::size_t len, std::size_t outer_stride,
                             std::size_t inner_stride) {
  for (std::size_t s = 0; s < count; ++s) {
    const double* ps = p + s * outer_stride;
    const double* dys = dy + s * outer_stride;
    double* dxs = dx + s * outer_stride;
    double dot = 0.0;
    for (std::size_t i = 0; i < len; ++i) dot += ps[i * inner_stride] * dys[i * inner_stride];
    for (std::size_t i = 0; i < len; ++i) {
      dxs[i * inner_stride] += ps[i * inner_stride] * (dys[i * inner_stride] - dot);
    }
  }
}

}  // namespace

Tensor softmax(const Tensor& x, int axis) {
  const std::size_t nd = x.ndim();
  if (nd == 0 || nd > 2) {
    throw std::invalid_argument("softmax: expects 1-d or 2-d input, got " +
                                shape_string(x.shape()));
  }
  if (axis < 0) axis += static_cast<int>(nd);
  if (axis < 0 || axis >= static_cast<int>(nd)) {
    throw std::invalid_argument("softmax: invalid axis for shape " + shape_string(x.shape()));
  }

  Tensor out = Tensor::zeros(x.shape());
  std::size_t count, len, outer, inner;
  if (nd == 1) {
    count = 1, len = x.size(), outer = 0, inner = 1;
  } else if (axis == 1) {
    count = x.rows(), len = x.cols(), outer = x.cols(), inner = 1;
  } else {
    count = x.cols(), len = x.rows(), outer = 1, inner = x.cols();
  }
  softmax_slices(x.data().data(), out.data().data(), count, len, outer, inner);

  Tensor xt = x, ot = out;
  finalize(
      out, {&x}, {x},
      [xt, ot, count, len, outer, inner]() mutable {
        softmax_backward_slices(ot.data().data(), ot.grad().data(), xt.grad_buffer().data(),
                                count, len, outer, inner);
      },
      "softmax");
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  if (eps <= 0.0) throw std::invalid_argument("layer_norm: eps must be positive");
  if (x.ndim() != 2 || gamma.ndim() != 1 || beta.ndim() != 1 || gamma.size() != x.cols() ||
      beta.size() != x.cols()) {
    throw std::invalid_argument("layer_norm: incompatible shapes " + shape_string(x.shape()) +
                                ", " + shape_string(gamma.shape()) + ", " +
                                shape_string(beta.shape()));
  }
  const std::size_t n = x.rows(), d = x.cols();
  Tensor out = Tensor::zeros(x.shape());
  // Normalized activations and inverse stddevs are reused by the backward rule.
  auto xhat = std::make_shared<std::vector<double>>(n * d);
  auto inv_std = std::make_shared<std::vector<double>>(n);

  const double* xv = x.data().data();
  double* ov = out.data().data();
  const double* gv = gamma.data().data();
  const double* bv = beta.data().data();
  for (std::size_t r = 0; r < n; ++r) {
    const double* row = xv + r * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += row[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = row[j] - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = inv;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (row[j] - mean) * inv;
      (*xhat)[r * d + j] = h;
      ov[r * d + j] = gv[j] * h + bv[j];
    }
  }

  Tensor xt = x, gt = gamma, bt = beta, ot = out;
  finalize(
      out, {&x, &gamma, &beta}, {x, gamma, beta},
      [xt, gt, bt, ot, xhat, inv_std, n, d]() mutable {
        const double* dy = ot.grad().data();
        const double* gv2 = gt.data().data();
        if (gt.requires_grad()) {
          auto dg = gt.grad_buffer();
          for (std::size_t r = 0; r < n; ++r)
            for (std::size_t j = 0; j < d; ++j) dg[j] += dy[r * d + j] * (*xhat)[r * d + j];
        }
        if (bt.requires_grad()) {
          auto db = bt.grad_buffer();
          for (std::size_t r = 0; r < n; ++r)
            for (std::size_t j = 0; j < d; ++j) db[j] += dy[r * d + j];
        }
        if (xt.requires_grad()) {
          auto dx = xt.grad_buffer();
          for (std::size_t r = 0; r < n; ++r) {
            double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              const double dxh = dy[r * d + j] * gv2[j];
              sum_dxhat += dxh;
              sum_dxhat_xhat += dxh * (*xhat)[r * d + j];
            }
            const double inv = (*inv_std)[r];
            const double inv_d = 1.0 / static_cast<double>(d);
            for (std::size_t j = 0; j < d; ++j) {
              const double dxh = dy[r * d + j] * gv2[j];
              dx[r * d + j] += inv * (dxh - inv_d * sum_dxhat -
                                      (*xhat)[r * d + j] * inv_d * sum_dxhat_xhat);
            }
          }
        }
      },
      "layer_norm");
  return out;
}

Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& indices) {
  if (x.ndim() != 2) {
    throw std::invalid_argument("gather_rows: expects 2-d input, got " +
                                shape_string(x.shape()));
  }
  const std::size_t d = x.cols();
  for (std::size_t idx : indices) {
    if (idx >= x.rows()) {
      throw std::invalid_argument("gather_rows: index " + std::to_string(idx) +
                                  " out of range for " + shape_string(x.shape()));
    }
  }
  Tensor out = Tensor::zeros({indices.size(), d});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    out.mat().row(static_cast<Eigen::Index>(i)) =
        x.mat().row(static_cast<Eigen::Index>(indices[i]));
  }

  Tensor xt = x, ot = out;
  auto idx = std::make_shared<std::vector<std::size_t>>(indices);
  finalize(
      out, {&x}, {x},
      [xt, ot, idx, d]() mutable {
        auto dx = xt.grad_buffer();
        const auto dy = ot.grad();
        for (std::size_t i = 0; i < idx->size(); ++i) {
          const std::size_t r = (*idx)[i];
          for (std::size_t j = 0; j < d; ++j) dx[r * d + j] += dy[i * d + j];
        }
      },
      "gather_rows");
  return out;
}

Tensor scatter_rows(const std::vector<Tensor>& vectors,
                    const std::vector<RowPlacement>& placements, std::size_t num_rows,
                    std::size_t dim) {
  for (const Tensor& v : vectors) {
    if (v.ndim() != 1 || v.size() != dim) {
      throw std::invalid_argument("scatter_rows: vectors must be 1-d of length " +
                                  std::to_string(dim) + ", got " + shape_string(v.shape()));
    }
  }
  Tensor out = Tensor::zeros({num_rows, dim});
  for (const RowPlacement& p : placements) {
    if (p.row >= num_rows || p.vector_index >= vectors.size()) {
      throw std::invalid_argument("scatter_rows: placement (" + std::to_string(p.row) + ", " +
                                  std::to_string(p.vector_index) + ") out of range");
    }
    const auto src = vectors[p.vector_index].data();
    auto dst = out.data();
    for (std::size_t j = 0; j < dim; ++j) dst[p.row * dim + j] += src[j];
  }

  bool needs_grad = false;
  for (const Tensor& v : vectors) needs_grad |= v.requires_grad();
  if (!needs_grad) return out;

  Tape* tape = nullptr;
  for (const Tensor& v : vectors) {
    if (v.tape() != nullptr) {
      if (tape != nullptr && tape != v.tape())
        throw std::invalid_argument("scatter_rows: inputs recorded on different tapes");
      tape = v.tape();
    }
  }
  out.set_requires_grad(true);
  if (tape == nullptr) return out;
  out.attach(*tape);

  Tensor ot = out;
  auto kept_vectors = std::make_shared<std::vector<Tensor>>(vectors);
  auto kept_placements = std::make_shared<std::vector<RowPlacement>>(placements);
  tape->record(
      out, vectors,
      [ot, kept_vectors, kept_placements, dim]() mutable {
        const auto dy = ot.grad();
        for (const RowPlacement& p : *kept_placements) {
          Tensor& v = (*kept_vectors)[p.vector_index];
          if (!v.requires_grad()) continue;
          auto dv = v.grad_buffer();
          for (std::size_t j = 0; j < dim; ++j) dv[j] += dy[p.row * dim + j];
        }
      },
      "scatter_rows");
  return out;
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  Tensor out = Tensor::scalar(total);

  Tensor xt = x, ot = out;
  finalize(
      out, {&x}, {x},
      [xt, ot]() mutable {
        const double g = ot.grad()[0];
        auto dx = xt.grad_buffer();
        for (double& v : dx) v += g;
      },
      "sum");
  return out;
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  if (logits.ndim() != 2) {
    throw std::invalid_argument("cross_entropy: logits must be 2-d, got " +
                                shape_string(logits.shape()));
  }
  const std::size_t n = logits.rows(), c = logits.cols();
  if (labels.size() != n) {
    throw std::invalid_argument("cross_entropy: " + std::to_string(labels.size()) +
                                " labels for " + std::to_string(n) + " rows");
  }
  // Softmax probabilities are kept for the backward rule.
  auto probs = std::make_shared<std::vector<double>>(n * c);
  const double* z = logits.data().data();
  double loss = 0.0;
  std::size_t valid = 0;
  for (std::size_t r = 0; r < n; ++r) {
    const int label = labels[r];
    if (label >= static_cast<int>(c)) {
      throw std::invalid_argument("cross_entropy: label " + std::to_string(label) +
                                  " out of range for " + std::to_string(c) + " classes");
    }
    const double* row = z + r * c;
    double mx = row[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double total = 0.0;
    for (std::size_t j = 0; j < c; ++j) total += std::exp(row[j] - mx);
    const double lse = mx + std::log(total);
    for (std::size_t j = 0; j < c; ++j) (*probs)[r * c + j] = std::exp(row[j] - lse);
    if (label < 0) continue;  // ignored row
    loss += lse - row[label];
    ++valid;
  }
  if (valid == 0) {
    throw std::invalid_argument("cross_entropy: no valid labels (all ignored)");
  }
  loss /= static_cast<double>(valid);
  Tensor out = Tensor::scalar(loss);

  Tensor lt = logits, ot = out;
  auto kept_labels = std::make_shared<std::vector<int>>(labels);
  finalize(
      out, {&logits}, {logits},
      [lt, ot, probs, kept_labels, n, c, valid]() mutable {
        const double g = ot.grad()[0] / static_cast<double>(valid);
        auto dz = lt.grad_buffer();
        for (std::size_t r = 0; r < n; ++r) {
          const int label = (*kept_labels)[r];
          if (label < 0) continue;
          for (std::size_t j = 0; j < c; ++j) {
            const double onehot = (static_cast<int>(j) == label) ? 1.0 : 0.0;
            dz[r * c + j] += g * ((*probs)[r * c + j] - onehot);
          }
        }
      },
      "cross_entropy");
  return out;
}

Tensor multi_head_attention(const Tensor& x, const Tensor& wq, const Tensor& wk,
                            const Tensor& wv, const Tensor& wo, std::size_t num_heads,
                            const std::vector<Segment>& segments,
                            const std::vector<std::uint8_t>& key_valid,
                            const std::shared_ptr<AttentionProbs>& probs_out) {
  const std::size_t rows = x.rows(), d = x.cols();
  if (x.ndim() != 2 || wq.shape() != std::vector<std::size_t>{d, d} ||
      wk.shape() != std::vector<std::size_t>{d, d} ||
      wv.shape() != std::vector<std::size_t>{d, d} ||
      wo.shape() != std::vector<std::size_t>{d, d}) {
    throw std::invalid_argument("attention: incompatible shapes, x " + shape_string(x.shape()));
  }
  if (num_heads == 0 || d % num_heads != 0) {
    throw std::invalid_argument("attention: num_heads " + std::to_string(num_heads) +
                                " must divide width " + std::to_string(d));
  }
  if (!key_valid.empty() && key_valid.size() != rows) {
    throw std::invalid_argument("attention: key_valid length mismatch");
  }
  const std::size_t dh = d / num_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const Eigen::Index edh = static_cast<Eigen::Index>(dh);

  // Projections and attention maps are saved for the backward rule.
  auto q_all = std::make_shared<RowMatrixXd>(x.mat() * wq.mat());
  auto k_all = std::make_shared<RowMatrixXd>(x.mat() * wk.mat());
  auto v_all = std::make_shared<RowMatrixXd>(x.mat() * wv.mat());
  auto probs = probs_out ? probs_out : std::make_shared<AttentionProbs>();
  probs->num_heads = num_heads;
  probs->maps.assign(segments.size() * num_heads, RowMatrixXd());

  Tensor out = Tensor::zeros({rows, d});
  RowMatrixXd ctx(rows, d);
  ctx.setZero();
  for (std::size_t s = 0; s < segments.size(); ++s) {
    const auto [start, len] = segments[s];
    if (start + len > rows) throw std::invalid_argument("attention: segment out of range");
    const Eigen::Index es = static_cast<Eigen::Index>(start);
    const Eigen::Index el = static_cast<Eigen::Index>(len);
    for (std::size_t h = 0; h < num_heads; ++h) {
      const Eigen::Index hc = static_cast<Eigen::Index>(h * dh);
      auto qh = q_all->block(es, hc, el, edh);
      auto kh = k_all->block(es, hc, el, edh);
      auto vh = v_all->block(es, hc, el, edh);
      RowMatrixXd scores = (qh * kh.transpose()) * scale;
      if (!key_valid.empty()) {
        for (Eigen::Index j = 0; j < el; ++j) {
          if (!key_valid[start + static_cast<std::size_t>(j)]) {
            scores.col(j).setConstant(-std::numeric_limits<double>::infinity());
          }
        }
      }
      RowMatrixXd& p = probs->maps[s * num_heads + h];
      p.resize(el, el);
      for (Eigen::Index r = 0; r < el; ++r) {
        const double mx = scores.row(r).maxCoeff();
        double total = 0.0;
        for (Eigen::Index j = 0; j < el; ++j) {
          // scalar std::exp: exactly zero at -inf, unlike packet exp
          const double e = std::exp(scores(r, j) - mx);
          p(r, j) = e;
          total += e;
        }
        p.row(r) /= total;
      }
      ctx.block(es, hc, el, edh).noalias() = p * vh;
    }
  }
  out.mat().noalias() = ctx * wo.mat();

  Tensor xt = x, wqt = wq, wkt = wk, wvt = wv, wot = wo, ot = out;
  auto kept_segments = std::make_shared<std::vector<Segment>>(segments);
  finalize(
      out, {&x, &wq, &wk, &wv, &wo}, {x, wq, wk, wv, wo},
      [xt, wqt, wkt, wvt, wot, ot, q_all, k_all, v_all, probs, kept_segments, num_heads, dh,
       scale, rows, d]() mutable {
        const Eigen::Index ed2 = static_cast<Eigen::Index>(d);
        const Eigen::Index edh2 = static_cast<Eigen::Index>(dh);
        ConstMatMap dy(ot.grad().data(), static_cast<Eigen::Index>(rows), ed2);
        RowMatrixXd dctx = dy * wot.mat().transpose();
        RowMatrixXd dq(rows, d), dk(rows, d), dv(rows, d);
        dq.setZero();
        dk.setZero();
        dv.setZero();
        RowMatrixXd ctx2;
        if (wot.requires_grad()) {
          ctx2.resize(rows, d);
          ctx2.setZero();
        }
        for (std::size_t s = 0; s < kept_segments->size(); ++s) {
          const auto [start, len] = (*kept_segments)[s];
          const Eigen::Index es = static_cast<Eigen::Index>(start);
          const Eigen::Index el = static_cast<Eigen::Index>(len);
          for (std::size_t h = 0; h < num_heads; ++h) {
            const Eigen::Index hc = static_cast<Eigen::Index>(h * dh);
            const RowMatrixXd& p = probs->maps[s * num_heads + h];
            auto qh = q_all->block(es, hc, el, edh2);
            auto kh = k_all->block(es, hc, el, edh2);
            auto vh = v_all->block(es, hc, el, edh2);
            auto dctx_h = dctx.block(es, hc, el, edh2);
            RowMatrixXd dp = dctx_h * vh.transpose();
            // Softmax backward per query row; masked keys have p == 0.
            RowMatrixXd ds(el, el);
            for (Eigen::Index r = 0; r < el; ++r) {
              const double dot = dp.row(r).dot(p.row(r));
              ds.row(r) = p.row(r).array() * (dp.row(r).array() - dot);
            }
            dq.block(es, hc, el, edh2).noalias() = (ds * kh) * scale;
            dk.block(es, hc, el, edh2).noalias() = (ds.transpose() * qh) * scale;
            dv.block(es, hc, el, edh2).noalias() = p.transpose() * dctx_h;
            if (wot.requires_grad()) {
              ctx2.block(es, hc, el, edh2).noalias() = p * vh;
            }
          }
        }
        if (xt.requires_grad()) {
          MatMap dx(xt.grad_buffer().data(), static_cast<Eigen::Index>(rows), ed2);
          dx.noalias() += dq * wqt.mat().transpose();
          dx.noalias() += dk * wkt.mat().transpose();
          dx.noalias() += dv * wvt.mat().transpose();
        }
        if (wqt.requires_grad()) {
          MatMap dwq(wqt.grad_buffer().data(), ed2, ed2);
          dwq.noalias() += xt.mat().transpose() * dq;
        }
        if (wkt.requires_grad()) {
          MatMap dwk(wkt.grad_buffer().data(), ed2, ed2);
          dwk.noalias() += xt.mat().transpose() * dk;
        }
        if (wvt.requires_grad()) {
          MatMap dwv(wvt.grad_buffer().data(), ed2, ed2);
          dwv.noalias() += xt.mat().transpose() * dv;
        }
        if (wot.requires_grad()) {
          MatMap dwo(wot.grad_buffer().data(), ed2, ed2);
          dwo.noalias() += ctx2.transpose() * dy;
        }
      },
      "attention");
  return out;
}

}  // namespace pasta
