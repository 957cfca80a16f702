#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "metadiffub/ndarray.hpp"

namespace metadiffub {

class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy; valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const NDArray& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

/// Per-node gradient accumulators produced by Tape::backward.
class Gradients {
 public:
  Gradients(const Tape* tape, std::vector<NDArray> grads)
      : tape_(tape), grads_(std::move(grads)) {}

  // Gradient of the loss with respect to `v`; zeros if `v` did not reach the loss.
  NDArray of(Var v) const;
  NDArray of(std::size_t id) const;

 private:
  const Tape* tape_;
  std::vector<NDArray> grads_;
};

/// Reverse-mode tape. Nodes are appended in evaluation order, so the node
/// vector is always a valid topological order. Single owner; not thread-safe.
class Tape {
 public:
  // Accumulates the node's incoming gradient into its inputs' slots.
  using BackwardFn = std::function<void(const NDArray& grad_out, std::vector<NDArray>& grads)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(NDArray value);
  Var constant(NDArray value);
  Var record(NDArray value, BackwardFn backward);

  const NDArray& value(std::size_t id) const { return nodes_[id].value; }
  std::size_t size() const { return nodes_.size(); }

  // Loss must be a single-element node.
  Gradients backward(Var loss) const;

  // Lazily zero-initialised gradient slot for node `id`.
  NDArray& slot(std::vector<NDArray>& grads, std::size_t id) const;

 private:
  struct Node {
    NDArray value;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
};

// Primitive operations. Every operand is rank-2; scalars are 1x1.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var add_row(Var a, Var row);
Var matmul(Var a, Var b);
Var transpose(Var a);
Var exp(Var a);
Var log(Var a);
Var tanh(Var a);
Var sigmoid(Var a);
Var log_sigmoid(Var a);
Var gelu(Var a);
Var softmax(Var a, int axis);
Var log_softmax_rows(Var a);
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
Var slice_rows(Var a, std::size_t begin, std::size_t count);
Var slice_cols(Var a, std::size_t begin, std::size_t count);
Var gather_rows(Var table, std::span<const std::size_t> indices);
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
Var sum(Var a);
Var mean(Var a);

/// sum_r weight[r] * sum_c (pred - target)^2
Var weighted_sse(Var pred, Var target, std::span<const double> row_weights);
Var mse(Var pred, Var target);

/// sum_r weight[r] * -log softmax(logits_r)[target_r]
Var cross_entropy(Var logits, std::span<const std::size_t> targets,
                  std::span<const double> row_weights);

/// Multi-head scaled dot-product self-attention over stacked sequences.
/// q, k, v are [B*seq_len x d]; each block of seq_len rows attends only
/// within itself; heads split the columns evenly.
Var attention(Var q, Var k, Var v, std::size_t seq_len, std::size_t heads);

}  // namespace metadiffub
