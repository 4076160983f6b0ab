#include "dpl/numerics/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "dpl/error.hpp"
#include "dpl/numerics/kernels.hpp"

namespace dpl {

KeyMask::KeyMask(std::size_t rows, std::size_t cols, bool fill)
    : rows_(rows), cols_(cols), bits_(rows * cols, fill ? 1 : 0) {}

bool KeyMask::is_all_visible() const noexcept {
  return std::all_of(bits_.begin(), bits_.end(), [](std::uint8_t b) { return b != 0; });
}

KeyMask KeyMask::block(std::size_t row_begin, std::size_t row_count, std::size_t col_begin,
                       std::size_t col_count) const {
  if (row_begin + row_count > rows_ || col_begin + col_count > cols_) {
    fail(ErrorKind::InvalidShape, "KeyMask::block out of range");
  }
  KeyMask out(row_count, col_count, false);
  for (std::size_t r = 0; r < row_count; ++r) {
    for (std::size_t c = 0; c < col_count; ++c) out.set(r, c, visible(row_begin + r, col_begin + c));
  }
  return out;
}

namespace {

void check_mask(const Tensor2D& m, const KeyMask* mask) {
  if (mask != nullptr && (mask->rows() != m.rows() || mask->cols() != m.cols())) {
    fail(ErrorKind::InvalidShape, "mask shape does not match logits");
  }
}

}  // namespace

Tensor2D softmax_rows_masked(const Tensor2D& m, const KeyMask* mask) {
  if (mask == nullptr) return softmax_rows(m);
  check_mask(m, mask);
  if (m.rows() == 0 || m.cols() == 0) fail(ErrorKind::InvalidShape, "softmax_rows: empty shape");
  if (!m.all_finite()) fail(ErrorKind::Evaluation, "softmax_rows: non-finite input");
  const auto& k = simd::kernels();
  Tensor2D out(m.rows(), m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto in = m.row(r);
    auto dst = out.row(r);
    bool any = false;
    double mx = 0.0;
    for (std::size_t c = 0; c < in.size(); ++c) {
      if (!mask->visible(r, c)) continue;
      if (!any || in[c] > mx) mx = in[c];
      any = true;
    }
    if (!any) continue;
    double total = 0.0;
    for (std::size_t c = 0; c < in.size(); ++c) {
      if (!mask->visible(r, c)) continue;
      dst[c] = std::exp(in[c] - mx);
      total += dst[c];
    }
    k.scale(dst.data(), 1.0 / total, dst.data(), dst.size());
  }
  return out;
}

namespace ad {

const Tensor2D& Var::value() const {
  if (tape_ == nullptr) fail(ErrorKind::State, "use of an unbound Var");
  return tape_->value(*this);
}

Var Tape::constant(Tensor2D value) {
  nodes_.push_back(Node{std::move(value), {}, false, false, {}});
  return {this, nodes_.size() - 1};
}

Var Tape::variable(Tensor2D value) {
  nodes_.push_back(Node{std::move(value), {}, true, false, {}});
  return {this, nodes_.size() - 1};
}

Tensor2D Tape::grad(Var v) const {
  const Node& n = nodes_[v.id()];
  if (n.has_grad) return n.grad;
  return Tensor2D(n.value.rows(), n.value.cols());
}

Var Tape::record(Tensor2D value, std::initializer_list<Var> parents, Backward backward) {
  return record(std::move(value), std::span<const Var>(parents.begin(), parents.size()),
                std::move(backward));
}

Var Tape::record(Tensor2D value, std::span<const Var> parents, Backward backward) {
  bool needs = false;
  for (const Var& p : parents) {
    if (p.tape() != this) fail(ErrorKind::State, "operands recorded on different tapes");
    needs = needs || nodes_[p.id()].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), {}, needs, false, needs ? std::move(backward) : Backward{}});
  return {this, nodes_.size() - 1};
}

void Tape::accumulate(std::size_t id, const Tensor2D& g) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return;
  if (!g.same_shape(n.value)) fail(ErrorKind::InvalidShape, "gradient shape mismatch");
  if (!n.has_grad) {
    n.grad = g;
    n.has_grad = true;
  } else {
    simd::kernels().add(n.grad.data(), g.data(), n.grad.data(), g.size());
  }
}

void Tape::backward(Var out) {
  if (out.tape() != this) fail(ErrorKind::State, "backward on a foreign Var");
  const Tensor2D& v = value(out);
  if (v.rows() != 1 || v.cols() != 1) fail(ErrorKind::InvalidShape, "backward requires a 1x1 output");
  for (auto& n : nodes_) {
    n.has_grad = false;
    n.grad = Tensor2D();
  }
  accumulate(out.id(), Tensor2D(1, 1, 1.0));
  for (std::size_t i = out.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.has_grad && n.backward) n.backward(*this);
  }
}

namespace {

std::size_t self_id(const Tape& t) { return t.size(); }

const Tensor2D& g_of(const Tape& t, std::size_t id) { return t.grad_ref(id); }

// Column sums of a (r x c) into 1 x c, rows summed in order.
Tensor2D column_sums(const Tensor2D& a) {
  Tensor2D out(1, a.cols());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    simd::kernels().add(out.data(), a.row(r).data(), out.data(), a.cols());
  }
  return out;
}

}  // namespace

Var add(Var a, Var b) {
  Tape& t = *a.tape();
  const std::size_t self = self_id(t);
  return t.record(dpl::add(a.value(), b.value()), {a, b}, [a, b, self](Tape& tp) {
    tp.accumulate(a.id(), g_of(tp, self));
    tp.accumulate(b.id(), g_of(tp, self));
  });
}

Var sub(Var a, Var b) {
  Tape& t = *a.tape();
  const std::size_t self = self_id(t);
  return t.record(dpl::sub(a.value(), b.value()), {a, b}, [a, b, self](Tape& tp) {
    tp.accumulate(a.id(), g_of(tp, self));
    if (tp.requires_grad(b)) tp.accumulate(b.id(), dpl::scale(g_of(tp, self), -1.0));
  });
}

Var hadamard(Var a, Var b) {
  Tape& t = *a.tape();
  const std::size_t self = self_id(t);
  return t.record(dpl::hadamard(a.value(), b.value()), {a, b}, [a, b, self](Tape& tp) {
    const Tensor2D& g = g_of(tp, self);
    if (tp.requires_grad(a)) tp.accumulate(a.id(), dpl::hadamard(g, tp.value(b)));
    if (tp.requires_grad(b)) tp.accumulate(b.id(), dpl::hadamard(g, tp.value(a)));
  });
}

Var scale(Var a, double s) {
  Tape& t = *a.tape();
  const std::size_t self = self_id(t);
  return t.record(dpl::scale(a.value(), s), {a}, [a, s, self](Tape& tp) {
    tp.accumulate(a.id(), dpl::scale(g_of(tp, self), s));
  });
}

Var matmul(Var a, Var b) {
  Tape& t = *a.tape();
  const std::size_t self = self_id(t);
  return t.record(dpl::matmul(a.value(), b.value()), {a, b}, [a, b, self](Tape& tp) {
    const Tensor2D& g = g_of(tp, self);
    if (tp.requires_grad(a)) tp.accumulate(a.id(), dpl::matmul_nt(g, tp.value(b)));
    if (tp.requires_grad(b)) tp.accumulate(b.id(), dpl::matmul(dpl::transpose(tp.value(a)), g));
  });
}

Var matmul_nt(Var a, Var b) {
  Tape& t = *a.tape();
  const std::size_t self = self_id(t);
  return t.record(dpl::matmul_nt(a.value(), b.value()), {a, b}, [a, b, self](Tape& tp) {
    const Tensor2D& g = g_of(tp, self);
    if (tp.requires_grad(a)) tp.accumulate(a.id(), dpl::matmul(g, tp.value(b)));
    if (tp.requires_grad(b)) tp.accumulate(b.id(), dpl::matmul(dpl::transpose(g), tp.value(a)));
  });
}

Var transpose(Var a) {
  Tape& t = *a.tape();
  const std::size_t self = self_id(t);
  return t.record(dpl::transpose(a.value()), {a}, [a, self](Tape& tp) {
    tp.accumulate(a.id(), dpl::transpose(g_of(tp, self)));
  });
}

Var add_row(Var a, Var bias) {
  const Tensor2D& av = a.value();
  const Tensor2D& bv = bias.value();
  if (bv.rows() != 1 || bv.cols() != av.cols()) fail(ErrorKind::InvalidShape, "add_row: bias shape");
  Tensor2D out(av.rows(), av.cols());
  for (std::size_t r = 0; r < av.rows(); ++r) {
    simd::kernels().add(av.row(r).data(), bv.data(), out.row(r).data(), av.cols());
  }
  Tape& t = *a.tape();
  const std::size_t self = self_id(t);
  return t.record(std::move(out), {a, bias}, [a, bias, self](Tape& tp) {
    const Tensor2D& g = g_of(tp, self);
    tp.accumulate(a.id(), g);
    if (tp.requires_grad(bias)) tp.accumulate(bias.id(), column_sums(g));
  });
}

Var scale_rows(Var a, Var col) {
  const Tensor2D& av = a.value();
  const Tensor2D& cv = col.value();
  if (cv.cols() != 1 || cv.rows() != av.rows()) fail(ErrorKind::InvalidShape, "scale_rows: column shape");
  Tensor2D out(av.rows(), av.cols());
  for (std::size_t r = 0; r < av.rows(); ++r) {
    simd::kernels().scale(av.row(r).data(), cv(r, 0), out.row(r).data(), av.cols());
  }
  Tape& t = *a.tape();
  const std::size_t self = self_id(t);
  return t.record(std::move(out), {a, col}, [a, col, self](Tape& tp) {
    const Tensor2D& g = g_of(tp, self);
    const Tensor2D& av2 = tp.value(a);
    const Tensor2D& cv2 = tp.value(col);
    if (tp.requires_grad(a)) {
      Tensor2D ga(g.rows(), g.cols());
      for (std::size_t r = 0; r < g.rows(); ++r) {
        simd::kernels().scale(g.row(r).data(), cv2(r, 0), ga.row(r).data(), g.cols());
      }
      tp.accumulate(a.id(), ga);
    }
    if (tp.requires_grad(col)) {
      Tensor2D gc(g.rows(), 1);
      for (std::size_t r = 0; r < g.rows(); ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < g.cols(); ++c) s += g(r, c) * av2(r, c);
        gc(r, 0) = s;
      }
      tp.accumulate(col.id(), gc);
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) fail(ErrorKind::InvalidShape, "concat_rows: no parts");
  std::vector<Tensor2D> values;
  values.reserve(parts.size());
  for (const Var& p : parts) values.push_back(p.value());
  Tape& t = *parts.front().tape();
  const std::size_t self = self_id(t);
  std::vector<Var> ps(parts.begin(), parts.end());
  return t.record(dpl::concat_rows(values), parts, [ps, self](Tape& tp) {
    const Tensor2D& g = g_of(tp, self);
    std::size_t offset = 0;
    for (const Var& p : ps) {
      const std::size_t n = tp.value(p).rows();
      if (tp.requires_grad(p)) tp.accumulate(p.id(), dpl::slice_rows(g, offset, n));
      offset += n;
    }
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) fail(ErrorKind::InvalidShape, "concat_cols: no parts");
  std::vector<Tensor2D> values;
  values.reserve(parts.size());
  for (const Var& p : parts) values.push_back(p.value());
  Tape& t = *parts.front().tape();
  const std::size_t self = self_id(t);
  std::vector<Var> ps(parts.begin(), parts.end());
  return t.record(dpl::concat_cols(values), parts, [ps, self](Tape& tp) {
    const Tensor2D& g = g_of(tp, self);
    std::size_t offset = 0;
    for (const Var& p : ps) {
      const std::size_t n = tp.value(p).cols();
      if (tp.requires_grad(p)) tp.accumulate(p.id(), dpl::slice_cols(g, offset, n));
      offset += n;
    }
  });
}

Var slice_rows(Var a, std::size_t begin, std::size_t count) {
  Tape& t = *a.tape();
  const std::size_t self = self_id(t);
  return t.record(dpl::slice_rows(a.value(), begin, count), {a}, [a, begin, count, self](Tape& tp) {
    const Tensor2D& g = g_of(tp, self);
    const Tensor2D& av = tp.value(a);
    Tensor2D ga(av.rows(), av.cols());
    std::copy(g.values().begin(), g.values().end(), ga.data() + begin * av.cols());
    (void)count;
    tp.accumulate(a.id(), ga);
  });
}

Var slice_cols(Var a, std::size_t begin, std::size_t count) {
  Tape& t = *a.tape();
  const std::size_t self = self_id(t);
  return t.record(dpl::slice_cols(a.value(), begin, count), {a}, [a, begin, count, self](Tape& tp) {
    const Tensor2D& g = g_of(tp, self);
    const Tensor2D& av = tp.value(a);
    Tensor2D ga(av.rows(), av.cols());
    for (std::size_t r = 0; r < g.rows(); ++r) {
      std::copy_n(g.row(r).data(), count, ga.row(r).data() + begin);
    }
    tp.accumulate(a.id(), ga);
  });
}

Var gather_rows(Var table, std::span<const std::size_t> indices) {
  const Tensor2D& tv = table.value();
  Tensor2D out(indices.size(), tv.cols());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= tv.rows()) fail(ErrorKind::InvalidShape, "gather_rows: index out of range");
    std::copy(tv.row(indices[r]).begin(), tv.row(indices[r]).end(), out.row(r).begin());
  }
  Tape& t = *table.tape();
  const std::size_t self = self_id(t);
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return t.record(std::move(out), {table}, [table, self, idx](Tape& tp) {
    const Tensor2D& g = g_of(tp, self);
    const Tensor2D& tv2 = tp.value(table);
    Tensor2D gt(tv2.rows(), tv2.cols());
    for (std::size_t r = 0; r < idx.size(); ++r) {
      simd::kernels().add(gt.row(idx[r]).data(), g.row(r).data(), gt.row(idx[r]).data(), g.cols());
    }
    tp.accumulate(table.id(), gt);
  });
}

Var softmax_rows(Var a, const KeyMask* mask) {
  Tape& t = *a.tape();
  const std::size_t self = self_id(t);
  return t.record(softmax_rows_masked(a.value(), mask), {a}, [a, self](Tape& tp) {
    const Tensor2D& g = g_of(tp, self);
    const Tensor2D& p = tp.value(self);
    Tensor2D ga(p.rows(), p.cols());
    for (std::size_t r = 0; r < p.rows(); ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < p.cols(); ++c) dot += g(r, c) * p(r, c);
      for (std::size_t c = 0; c < p.cols(); ++c) ga(r, c) = p(r, c) * (g(r, c) - dot);
    }
    tp.accumulate(a.id(), ga);
  });
}

Var row_logsumexp(Var a, const KeyMask* mask) {
  const Tensor2D& av = a.value();
  check_mask(av, mask);
  if (!av.all_finite()) fail(ErrorKind::Evaluation, "row_logsumexp: non-finite input");
  Tensor2D out(av.rows(), 1);
  for (std::size_t r = 0; r < av.rows(); ++r) {
    bool any = false;
    double mx = 0.0;
    for (std::size_t c = 0; c < av.cols(); ++c) {
      if (mask != nullptr && !mask->visible(r, c)) continue;
      if (!any || av(r, c) > mx) mx = av(r, c);
      any = true;
    }
    if (!any) {
      out(r, 0) = -std::numeric_limits<double>::infinity();
      continue;
    }
    double total = 0.0;
    for (std::size_t c = 0; c < av.cols(); ++c) {
      if (mask != nullptr && !mask->visible(r, c)) continue;
      total += std::exp(av(r, c) - mx);
    }
    out(r, 0) = mx + std::log(total);
  }
  Tape& t = *a.tape();
  const std::size_t self = self_id(t);
  const KeyMask mask_copy = mask != nullptr ? *mask : KeyMask();
  const bool masked = mask != nullptr;
  return t.record(std::move(out), {a}, [a, self, mask_copy, masked](Tape& tp) {
    const Tensor2D& g = g_of(tp, self);
    const Tensor2D& lse = tp.value(self);
    const Tensor2D& av2 = tp.value(a);
    Tensor2D ga(av2.rows(), av2.cols());
    for (std::size_t r = 0; r < av2.rows(); ++r) {
      if (std::isinf(lse(r, 0))) continue;
      for (std::size_t c = 0; c < av2.cols(); ++c) {
        if (masked && !mask_copy.visible(r, c)) continue;
        ga(r, c) = g(r, 0) * std::exp(av2(r, c) - lse(r, 0));
      }
    }
    tp.accumulate(a.id(), ga);
  });
}

Var exp(Var a) {
  const Tensor2D& av = a.value();
  Tensor2D out(av.rows(), av.cols());
  for (std::size_t i = 0; i < av.size(); ++i) out.data()[i] = std::exp(av.data()[i]);
  Tape& t = *a.tape();
  const std::size_t self = self_id(t);
  return t.record(std::move(out), {a}, [a, self](Tape& tp) {
    tp.accumulate(a.id(), dpl::hadamard(g_of(tp, self), tp.value(self)));
  });
}

Var layer_norm(Var a, Var gamma, Var beta, double eps) {
  const Tensor2D& x = a.value();
  const Tensor2D& gv = gamma.value();
  const Tensor2D& bv = beta.value();
  const std::size_t n = x.cols();
  if (gv.rows() != 1 || gv.cols() != n || !gv.same_shape(bv)) {
    fail(ErrorKind::InvalidShape, "layer_norm: gamma/beta shape");
  }
  Tensor2D xhat(x.rows(), n);
  Tensor2D inv_std(x.rows(), 1);
  Tensor2D out(x.rows(), n);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double mean = 0.0;
    for (std::size_t c = 0; c < n; ++c) mean += x(r, c);
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t c = 0; c < n; ++c) var += (x(r, c) - mean) * (x(r, c) - mean);
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std(r, 0) = is;
    for (std::size_t c = 0; c < n; ++c) {
      xhat(r, c) = (x(r, c) - mean) * is;
      out(r, c) = xhat(r, c) * gv(0, c) + bv(0, c);
    }
  }
  Tape& t = *a.tape();
  const std::size_t self = self_id(t);
  return t.record(std::move(out), {a, gamma, beta},
                  [a, gamma, beta, self, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& tp) {
    const Tensor2D& g = g_of(tp, self);
    const Tensor2D& gv2 = tp.value(gamma);
    const std::size_t cols = g.cols();
    if (tp.requires_grad(a)) {
      Tensor2D ga(g.rows(), cols);
      for (std::size_t r = 0; r < g.rows(); ++r) {
        double mean_d = 0.0;
        double mean_dx = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
          const double d = g(r, c) * gv2(0, c);
          mean_d += d;
          mean_dx += d * xhat(r, c);
        }
        mean_d /= static_cast<double>(cols);
        mean_dx /= static_cast<double>(cols);
        for (std::size_t c = 0; c < cols; ++c) {
          const double d = g(r, c) * gv2(0, c);
          ga(r, c) = inv_std(r, 0) * (d - mean_d - xhat(r, c) * mean_dx);
        }
      }
      tp.accumulate(a.id(), ga);
    }
    if (tp.requires_grad(gamma)) tp.accumulate(gamma.id(), column_sums(dpl::hadamard(g, xhat)));
    if (tp.requires_grad(beta)) tp.accumulate(beta.id(), column_sums(g));
  });
}

Var gelu(Var a) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kA = 0.044715;
  const Tensor2D& x = a.value();
  Tensor2D out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x.data()[i];
    out.data()[i] = 0.5 * v * (1.0 + std::tanh(kC * (v + kA * v * v * v)));
  }
  Tape& t = *a.tape();
  const std::size_t self = self_id(t);
  return t.record(std::move(out), {a}, [a, self](Tape& tp) {
    const Tensor2D& g = g_of(tp, self);
    const Tensor2D& xv = tp.value(a);
    Tensor2D ga(xv.rows(), xv.cols());
    for (std::size_t i = 0; i < xv.size(); ++i) {
      const double v = xv.data()[i];
      const double th = std::tanh(kC * (v + kA * v * v * v));
      const double d = 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * kC * (1.0 + 3.0 * kA * v * v);
      ga.data()[i] = g.data()[i] * d;
    }
    tp.accumulate(a.id(), ga);
  });
}

Var row_l2_normalize(Var a) {
  const Tensor2D& x = a.value();
  Tensor2D out(x.rows(), x.cols());
  Tensor2D norms(x.rows(), 1);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double s = 0.0;
    for (double v : x.row(r)) s += v * v;
    const double nrm = std::sqrt(s);
    if (!(nrm > 0.0)) fail(ErrorKind::Evaluation, "row_l2_normalize: zero row");
    norms(r, 0) = nrm;
    for (std::size_t c = 0; c < x.cols(); ++c) out(r, c) = x(r, c) / nrm;
  }
  Tape& t = *a.tape();
  const std::size_t self = self_id(t);
  return t.record(std::move(out), {a}, [a, self, norms = std::move(norms)](Tape& tp) {
    const Tensor2D& g = g_of(tp, self);
    const Tensor2D& y = tp.value(self);
    Tensor2D ga(y.rows(), y.cols());
    for (std::size_t r = 0; r < y.rows(); ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < y.cols(); ++c) dot += g(r, c) * y(r, c);
      for (std::size_t c = 0; c < y.cols(); ++c) ga(r, c) = (g(r, c) - y(r, c) * dot) / norms(r, 0);
    }
    tp.accumulate(a.id(), ga);
  });
}

Var sum(Var a) {
  Tape& t = *a.tape();
  const std::size_t self = self_id(t);
  return t.record(Tensor2D(1, 1, dpl::sum(a.value())), {a}, [a, self](Tape& tp) {
    const Tensor2D& av = tp.value(a);
    tp.accumulate(a.id(), Tensor2D(av.rows(), av.cols(), g_of(tp, self)(0, 0)));
  });
}

Var weighted_sum(Var a, const Tensor2D& weights) {
  const Tensor2D& av = a.value();
  if (!av.same_shape(weights)) fail(ErrorKind::InvalidShape, "weighted_sum: shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) s += av.data()[i] * weights.data()[i];
  Tape& t = *a.tape();
  const std::size_t self = self_id(t);
  return t.record(Tensor2D(1, 1, s), {a}, [a, self, weights](Tape& tp) {
    tp.accumulate(a.id(), dpl::scale(weights, g_of(tp, self)(0, 0)));
  });
}

Var cross_entropy(Var logits, std::span<const std::size_t> labels) {
  const Tensor2D& lv = logits.value();
  if (labels.size() != lv.rows() || lv.rows() == 0) fail(ErrorKind::InvalidShape, "cross_entropy: label count");
  const Tensor2D probs = softmax_rows(lv);
  double loss = 0.0;
  for (std::size_t r = 0; r < lv.rows(); ++r) {
    if (labels[r] >= lv.cols()) fail(ErrorKind::InvalidShape, "cross_entropy: label out of range");
    const double mx = simd::kernels().max(lv.row(r).data(), lv.cols());
    double total = 0.0;
    for (double v : lv.row(r)) total += std::exp(v - mx);
    loss += mx + std::log(total) - lv(r, labels[r]);
  }
  loss /= static_cast<double>(lv.rows());
  Tape& t = *logits.tape();
  const std::size_t self = self_id(t);
  std::vector<std::size_t> lab(labels.begin(), labels.end());
  return t.record(Tensor2D(1, 1, loss), {logits}, [logits, self, probs, lab](Tape& tp) {
    const double g = g_of(tp, self)(0, 0) / static_cast<double>(lab.size());
    Tensor2D gl = dpl::scale(probs, g);
    for (std::size_t r = 0; r < lab.size(); ++r) gl(r, lab[r]) -= g;
    tp.accumulate(logits.id(), gl);
  });
}

Var Binder::bind(const Tensor2D& param, bool trainable) {
  if (auto it = overrides_.find(&param); it != overrides_.end()) return it->second;
  if (auto it = trainable_.find(&param); it != trainable_.end()) return it->second;
  if (auto it = constants_.find(&param); it != constants_.end()) return it->second;
  if (trainable) {
    Var v = tape_.variable(param);
    trainable_.emplace(&param, v);
    order_.emplace_back(&param, v);
    return v;
  }
  Var v = tape_.constant(param);
  constants_.emplace(&param, v);
  return v;
}

}  // namespace ad
}  // namespace dpl
