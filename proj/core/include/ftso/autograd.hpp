#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ftso/tensor.hpp"

namespace ftso {

class Tape;

// Handle to a value recorded on a tape.
struct Var {
  Tape* tape = nullptr;
  std::int32_t id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

// Define-by-run record of primitive operations. A tape is rebuilt for every
// forward pass and is used by one thread at a time.
//
// FLOP accounting follows one convention throughout: convolution and matmul
// count one FLOP per multiply-accumulate, pooling counts one FLOP per window element
// read, and weighted_sum counts one FLOP per input element. Elementwise
// activations, normalization and arithmetic on architecture vectors are not
// counted.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::int32_t self)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  Var constant(Tensor value);
  // Leaf whose gradient is kept on the tape (read it with grad()).
  Var input(Tensor value, bool requires_grad = true);
  // Leaf bound to a parameter; backward() accumulates into param.grad().
  // The parameter must outlive the tape and stay unmodified while it is live.
  Var param(Parameter& p, bool requires_grad = true);

  Var record(Tensor value, std::vector<std::int32_t> inputs, BackwardFn fn);

  const Tensor& value(std::int32_t id) const;
  const Tensor& value(Var v) const { return value(v.id); }
  bool requires_grad(std::int32_t id) const { return nodes_[id].requires_grad; }
  // Gradient buffer of a node, allocated as zeros on first use.
  Tensor& grad_ref(std::int32_t id);
  // Gradient after backward(); zeros when the node was not reached.
  Tensor grad(Var v) const;

  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }
  bool grad_enabled() const { return grad_enabled_; }

  std::int64_t flops() const { return flops_; }
  void add_flops(std::int64_t n) { flops_ += n; }
  void reset_flops() { flops_ = 0; }

 private:
  struct Node {
    Tensor value;
    const Tensor* external = nullptr;
    Tensor grad;
    std::vector<std::int32_t> inputs;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
  };

  std::vector<Node> nodes_;
  bool grad_enabled_ = true;
  bool backward_done_ = false;
  std::int64_t flops_ = 0;
};

struct Conv2dOptions {
  int stride = 1;
  int padding = 0;
  int dilation = 1;
  int groups = 1;
};

struct PoolOptions {
  int kernel = 3;
  int stride = 1;
  int padding = 1;
};

// Elementwise; operands must have identical shapes.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var relu(Var x);
Var log(Var x);

// [M,K] x [K,N] -> [M,N]
Var matmul(Var a, Var b);
// x: [M,N], bias: [N]
Var add_row_bias(Var x, Var bias);

// x: [N,C,H,W]; weight: [C_out, C/groups, k, k]; bias: [C_out] or invalid.
Var conv2d(Var x, Var weight, Var bias, const Conv2dOptions& opt);
Var max_pool2d(Var x, const PoolOptions& opt);
// Padding cells are excluded from the divisor.
Var avg_pool2d(Var x, const PoolOptions& opt);
// [N,C,H,W] -> [N,C]
Var global_avg_pool(Var x);

// Per-channel normalization with batch statistics. gamma/beta may be invalid
// (affine disabled). When running_mean/var are given they are updated with
// the batch statistics.
Var batch_norm_train(Var x, Var gamma, Var beta, double eps = 1e-5,
                     Tensor* running_mean = nullptr,
                     Tensor* running_var = nullptr, double momentum = 0.1);
// Normalization with fixed statistics.
Var batch_norm_eval(Var x, Var gamma, Var beta, const Tensor& running_mean,
                    const Tensor& running_var, double eps = 1e-5);

// Softmax along the last axis of a 1-D or 2-D tensor.
Var softmax(Var x);
Var sum(Var x);
Var mean(Var x);
// Mean over the batch of -log softmax(logits)[label]; logits: [N,K].
Var cross_entropy(Var logits, std::span<const int> labels);

Var concat_channels(std::span<const Var> xs);
Var gather_channels(Var x, std::span<const int> channels);
// Copy of base with the listed channels replaced by src's channels in order.
Var scatter_channels(Var base, std::span<const int> channels, Var src);

// sum_i weights[i] * xs[i]; weights is a 1-D tensor of length xs.size().
Var weighted_sum(std::span<const Var> xs, Var weights);
// Row block [start, start+count) along the first axis.
Var slice_rows(Var x, std::int64_t start, std::int64_t count);
// M: [R,C], v: [R] -> M[r,c] * v[r]
Var scale_rows(Var m, Var v);
Var reshape(Var x, Shape shape);
// Spatial window [top, top+h) x [left, left+w) of an [N,C,H,W] tensor.
Var crop2d(Var x, std::int64_t top, std::int64_t left, std::int64_t h,
           std::int64_t w);
// Zeros with the given shape; does not depend on any input.
Var zeros(Tape& tape, Shape shape);

}  // namespace ftso
