#pragma once

// Reverse-mode differentiation over Tensor2D values.
//
// A Tape records every operation of one forward pass. Var is a lightweight
// handle (tape pointer + node index). Nodes that do not depend on any
// variable carry no backward closure, so frozen weights cost one copy.
// Tapes are single-writer; build one per forward pass.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dpl/numerics/tensor.hpp"

namespace dpl {

// Boolean key-visibility matrix: visible(q, k) says whether query q may
// attend to key k.
class KeyMask {
 public:
  KeyMask() = default;
  KeyMask(std::size_t rows, std::size_t cols, bool fill);

  static KeyMask all_visible(std::size_t rows, std::size_t cols) { return {rows, cols, true}; }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool visible(std::size_t q, std::size_t k) const noexcept { return bits_[q * cols_ + k] != 0; }
  void set(std::size_t q, std::size_t k, bool v) noexcept { bits_[q * cols_ + k] = v ? 1 : 0; }
  bool is_all_visible() const noexcept;
  KeyMask block(std::size_t row_begin, std::size_t row_count, std::size_t col_begin,
                std::size_t col_count) const;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<std::uint8_t> bits_;
};

// Masked keys receive probability 0. A row with no visible key yields an
// all-zero row. With a null or all-visible mask the result is bit-identical
// to softmax_rows.
Tensor2D softmax_rows_masked(const Tensor2D& m, const KeyMask* mask);

namespace ad {

class Tape;

class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) noexcept : tape_(tape), id_(id) {}

  bool valid() const noexcept { return tape_ != nullptr; }
  Tape* tape() const noexcept { return tape_; }
  std::size_t id() const noexcept { return id_; }

  const Tensor2D& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor2D value);
  Var variable(Tensor2D value);

  const Tensor2D& value(Var v) const { return nodes_[v.id()].value; }
  bool requires_grad(Var v) const { return nodes_[v.id()].requires_grad; }
  // Zero tensor of the value's shape when no gradient reached the node.
  Tensor2D grad(Var v) const;
  std::size_t size() const noexcept { return nodes_.size(); }

  // Seeds d(out)/d(out) = 1; out must be 1x1.
  void backward(Var out);

  // Op authoring interface.
  Var record(Tensor2D value, std::initializer_list<Var> parents, Backward backward);
  Var record(Tensor2D value, std::span<const Var> parents, Backward backward);
  const Tensor2D& grad_ref(std::size_t id) const { return nodes_[id].grad; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  const Tensor2D& value(std::size_t id) const { return nodes_[id].value; }
  void accumulate(std::size_t id, const Tensor2D& g);

 private:
  struct Node {
    Tensor2D value;
    Tensor2D grad;
    bool requires_grad = false;
    bool has_grad = false;
    Backward backward;
  };
  std::vector<Node> nodes_;
};

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var hadamard(Var a, Var b);
Var scale(Var a, double s);
Var matmul(Var a, Var b);
// a * b^T
Var matmul_nt(Var a, Var b);
Var transpose(Var a);
// a (r x c) + bias (1 x c) broadcast over rows
Var add_row(Var a, Var bias);
// row i of a (r x c) multiplied by col(i, 0), col is r x 1
Var scale_rows(Var a, Var col);
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
Var slice_rows(Var a, std::size_t begin, std::size_t count);
Var slice_cols(Var a, std::size_t begin, std::size_t count);
// Rows of table selected by index (embedding lookup); gradients scatter-add.
Var gather_rows(Var table, std::span<const std::size_t> indices);
Var softmax_rows(Var a, const KeyMask* mask = nullptr);
// r x 1 log-sum-exp over visible entries of each row; -inf for a row with
// no visible entry.
Var row_logsumexp(Var a, const KeyMask* mask = nullptr);
Var exp(Var a);
Var layer_norm(Var a, Var gamma, Var beta, double eps = 1e-5);
// tanh approximation
Var gelu(Var a);
Var row_l2_normalize(Var a);
// 1x1
Var sum(Var a);
Var weighted_sum(Var a, const Tensor2D& weights);
// Mean over rows of -log softmax(logits)[label].
Var cross_entropy(Var logits, std::span<const std::size_t> labels);

// Creates leaves for model parameters. Trainable parameters become
// variables; others become constants unless an override routes them to a
// caller-supplied Var (used to differentiate w.r.t. one weight at a time).
class Binder {
 public:
  explicit Binder(Tape& tape) : tape_(tape) {}

  Tape& tape() noexcept { return tape_; }
  // Each parameter is bound once per binder; later calls return the same Var.
  Var bind(const Tensor2D& param, bool trainable);
  void override_with(const Tensor2D* target, Var v) { overrides_[target] = v; }

  // Variables created for trainable parameters, keyed by parameter address.
  const std::unordered_map<const Tensor2D*, Var>& trainable() const noexcept {
    return trainable_;
  }
  std::span<const std::pair<const Tensor2D*, Var>> trainable_in_order() const noexcept {
    return order_;
  }

 private:
  Tape& tape_;
  std::unordered_map<const Tensor2D*, Var> overrides_;
  std::unordered_map<const Tensor2D*, Var> constants_;
  std::unordered_map<const Tensor2D*, Var> trainable_;
  std::vector<std::pair<const Tensor2D*, Var>> order_;
};

}  // namespace ad
}  // namespace dpl
