#include "ftso/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ftso/error.hpp"

namespace ftso {

const Tensor& Var::value() const { return tape->value(id); }

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, static_cast<std::int32_t>(nodes_.size() - 1)};
}

Var Tape::input(Tensor value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad && grad_enabled_;
  nodes_.push_back(std::move(n));
  return {this, static_cast<std::int32_t>(nodes_.size() - 1)};
}

Var Tape::param(Parameter& p, bool requires_grad) {
  Node n;
  n.external = &p.value();
  n.param = &p;
  n.requires_grad = requires_grad && grad_enabled_ && !p.frozen();
  nodes_.push_back(std::move(n));
  return {this, static_cast<std::int32_t>(nodes_.size() - 1)};
}

Var Tape::record(Tensor value, std::vector<std::int32_t> inputs,
                 BackwardFn fn) {
#ifndef NDEBUG
  if (!value.all_finite()) {
    throw NumericalError("non-finite value produced by recorded primitive #" +
                         std::to_string(nodes_.size()));
  }
#endif
  Node n;
  n.value = std::move(value);
  if (grad_enabled_) {
    for (auto id : inputs) {
      if (nodes_[id].requires_grad) n.requires_grad = true;
    }
    if (n.requires_grad) {
      n.inputs = std::move(inputs);
      n.backward = std::move(fn);
    }
  }
  nodes_.push_back(std::move(n));
  return {this, static_cast<std::int32_t>(nodes_.size() - 1)};
}

const Tensor& Tape::value(std::int32_t id) const {
  const Node& n = nodes_.at(static_cast<std::size_t>(id));
  return n.external ? *n.external : n.value;
}

Tensor& Tape::grad_ref(std::int32_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = Tensor(value(id).shape());
  return n.grad;
}

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_.at(static_cast<std::size_t>(v.id));
  if (n.grad.empty()) return Tensor(value(v.id).shape());
  return n.grad;
}

void Tape::backward(Var loss) {
  if (nodes_.empty()) throw Error("backward on empty tape");
  if (loss.tape != this) throw Error("backward: loss is not on this tape");
  if (backward_done_) throw Error("backward called twice on one tape");
  if (value(loss.id).numel() != 1) {
    throw ShapeError("backward: loss must be scalar, got shape " +
                     shape_str(value(loss.id).shape()));
  }
  backward_done_ = true;
  if (!nodes_[loss.id].requires_grad) return;
  grad_ref(loss.id).fill(1.0);
  for (std::int32_t id = loss.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.backward) n.backward(*this, id);
    if (n.param) n.param->grad() += n.grad;
  }
}

namespace {

Tape& same_tape(Var a, Var b, const char* op) {
  if (!a.valid() || !b.valid() || a.tape != b.tape) {
    throw Error(std::string(op) + ": operands must live on the same tape");
  }
  return *a.tape;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " +
                     std::to_string(rank) + ", got shape " +
                     shape_str(t.shape()));
  }
}

}  // namespace

Var add(Var a, Var b) {
  Tape& t = same_tape(a, b, "add");
  const Tensor& x = t.value(a);
  const Tensor& y = t.value(b);
  require_same_shape(x, y, "add");
  Tensor out = x;
  out += y;
  return t.record(std::move(out), {a.id, b.id}, [a, b](Tape& t, std::int32_t self) {
    const Tensor& g = t.grad_ref(self);
    if (t.requires_grad(a.id)) t.grad_ref(a.id) += g;
    if (t.requires_grad(b.id)) t.grad_ref(b.id) += g;
  });
}

Var sub(Var a, Var b) {
  Tape& t = same_tape(a, b, "sub");
  const Tensor& x = t.value(a);
  const Tensor& y = t.value(b);
  require_same_shape(x, y, "sub");
  Tensor out = x;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= y[i];
  return t.record(std::move(out), {a.id, b.id}, [a, b](Tape& t, std::int32_t self) {
    const Tensor& g = t.grad_ref(self);
    if (t.requires_grad(a.id)) t.grad_ref(a.id) += g;
    if (t.requires_grad(b.id)) {
      Tensor& gb = t.grad_ref(b.id);
      for (std::size_t i = 0; i < g.numel(); ++i) gb[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  Tape& t = same_tape(a, b, "mul");
  const Tensor& x = t.value(a);
  const Tensor& y = t.value(b);
  require_same_shape(x, y, "mul");
  Tensor out = x;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= y[i];
  return t.record(std::move(out), {a.id, b.id}, [a, b](Tape& t, std::int32_t self) {
    const Tensor& g = t.grad_ref(self);
    const Tensor& x = t.value(a);
    const Tensor& y = t.value(b);
    if (t.requires_grad(a.id)) {
      Tensor& ga = t.grad_ref(a.id);
      for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * y[i];
    }
    if (t.requires_grad(b.id)) {
      Tensor& gb = t.grad_ref(b.id);
      for (std::size_t i = 0; i < g.numel(); ++i) gb[i] += g[i] * x[i];
    }
  });
}

Var scale(Var a, double s) {
  Tape& t = *a.tape;
  Tensor out = t.value(a);
  out *= s;
  return t.record(std::move(out), {a.id}, [a, s](Tape& t, std::int32_t self) {
    const Tensor& g = t.grad_ref(self);
    Tensor& ga = t.grad_ref(a.id);
    for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += s * g[i];
  });
}

Var relu(Var x) {
  Tape& t = *x.tape;
  Tensor out = t.value(x);
  for (auto& v : out.data()) v = v > 0.0 ? v : 0.0;
  return t.record(std::move(out), {x.id}, [x](Tape& t, std::int32_t self) {
    const Tensor& g = t.grad_ref(self);
    const Tensor& in = t.value(x);
    Tensor& gx = t.grad_ref(x.id);
    for (std::size_t i = 0; i < g.numel(); ++i) {
      if (in[i] > 0.0) gx[i] += g[i];
    }
  });
}

Var log(Var x) {
  Tape& t = *x.tape;
  Tensor out = t.value(x);
  for (auto& v : out.data()) {
    if (v <= 0.0) throw NumericalError("log: non-positive argument");
    v = std::log(v);
  }
  return t.record(std::move(out), {x.id}, [x](Tape& t, std::int32_t self) {
    const Tensor& g = t.grad_ref(self);
    const Tensor& in = t.value(x);
    Tensor& gx = t.grad_ref(x.id);
    for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += g[i] / in[i];
  });
}

Var matmul(Var a, Var b) {
  Tape& t = same_tape(a, b, "matmul");
  const Tensor& x = t.value(a);
  const Tensor& y = t.value(b);
  require_rank(x, 2, "matmul");
  require_rank(y, 2, "matmul");
  const auto m = x.dim(0), k = x.dim(1), n = y.dim(1);
  if (y.dim(0) != k) {
    throw ShapeError("matmul: inner extents differ " + shape_str(x.shape()) +
                     " x " + shape_str(y.shape()));
  }
  Tensor out({m, n});
  for (std::int64_t i = 0; i < m; ++i) {
    double* orow = out.ptr() + i * n;
    for (std::int64_t p = 0; p < k; ++p) {
      const double xv = x[i * k + p];
      const double* yrow = y.ptr() + p * n;
      for (std::int64_t j = 0; j < n; ++j) orow[j] += xv * yrow[j];
    }
  }
  t.add_flops(m * n * k);
  return t.record(std::move(out), {a.id, b.id},
                  [a, b, m, k, n](Tape& t, std::int32_t self) {
                    const Tensor& g = t.grad_ref(self);
                    const Tensor& x = t.value(a);
                    const Tensor& y = t.value(b);
                    if (t.requires_grad(a.id)) {
                      Tensor& ga = t.grad_ref(a.id);
                      for (std::int64_t i = 0; i < m; ++i)
                        for (std::int64_t p = 0; p < k; ++p) {
                          double s = 0.0;
                          for (std::int64_t j = 0; j < n; ++j)
                            s += g[i * n + j] * y[p * n + j];
                          ga[i * k + p] += s;
                        }
                    }
                    if (t.requires_grad(b.id)) {
                      Tensor& gb = t.grad_ref(b.id);
                      for (std::int64_t i = 0; i < m; ++i)
                        for (std::int64_t p = 0; p < k; ++p) {
                          const double xv = x[i * k + p];
                          for (std::int64_t j = 0; j < n; ++j)
                            gb[p * n + j] += xv * g[i * n + j];
                        }
                    }
                  });
}

Var add_row_bias(Var x, Var bias) {
  Tape& t = same_tape(x, bias, "add_row_bias");
  const Tensor& in = t.value(x);
  const Tensor& b = t.value(bias);
  require_rank(in, 2, "add_row_bias");
  if (b.rank() != 1 || b.dim(0) != in.dim(1)) {
    throw ShapeError("add_row_bias: bias " + shape_str(b.shape()) +
                     " does not match columns of " + shape_str(in.shape()));
  }
  const auto rows = in.dim(0), cols = in.dim(1);
  Tensor out = in;
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t c = 0; c < cols; ++c) out[r * cols + c] += b[c];
  return t.record(std::move(out), {x.id, bias.id},
                  [x, bias, rows, cols](Tape& t, std::int32_t self) {
                    const Tensor& g = t.grad_ref(self);
                    if (t.requires_grad(x.id)) t.grad_ref(x.id) += g;
                    if (t.requires_grad(bias.id)) {
                      Tensor& gb = t.grad_ref(bias.id);
                      for (std::int64_t r = 0; r < rows; ++r)
                        for (std::int64_t c = 0; c < cols; ++c)
                          gb[c] += g[r * cols + c];
                    }
                  });
}

namespace {

struct ConvGeometry {
  std::int64_t n, c_in, h, w, c_out, k, h_out, w_out, icpg, ocpg;
  int stride, pad, dil, groups;
};

// Range of output columns ow for which ow*stride - pad + offset lies in [0, w).
inline void valid_range(std::int64_t out_extent, std::int64_t in_extent,
                        int stride, std::int64_t shift, std::int64_t& lo,
                        std::int64_t& hi) {
  // shift = kw*dil - pad; need 0 <= ow*stride + shift < in_extent
  lo = shift >= 0 ? 0 : (-shift + stride - 1) / stride;
  const std::int64_t top = in_extent - 1 - shift;
  hi = top < 0 ? -1 : std::min(out_extent - 1, top / stride);
}

enum class ConvPass { Forward, InputGrad, WeightGrad };

inline void axpy(double* __restrict y, const double* __restrict x, double a, std::int64_t n) {
  for (std::int64_t i = 0; i < n; ++i) y[i] += a * x[i];
}

inline double dot(const double* __restrict a, const double* __restrict b, std::int64_t n) {
  double s = 0.0;
  for (std::int64_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

// Column buffer of one image and group: row (ic, kh, kw) holds the input
// samples that tap meets at every output position, zero where it falls into
// padding.
void im2col(const ConvGeometry& g, const double* img, double* col) {
  const std::int64_t out_plane = g.h_out * g.w_out;
  for (std::int64_t ic = 0; ic < g.icpg; ++ic) {
    const double* plane = img + ic * g.h * g.w;
    for (std::int64_t kh = 0; kh < g.k; ++kh) {
      const std::int64_t hshift = kh * g.dil - g.pad;
      std::int64_t oh_lo, oh_hi;
      valid_range(g.h_out, g.h, g.stride, hshift, oh_lo, oh_hi);
      for (std::int64_t kw = 0; kw < g.k; ++kw) {
        const std::int64_t wshift = kw * g.dil - g.pad;
        std::int64_t ow_lo, ow_hi;
        valid_range(g.w_out, g.w, g.stride, wshift, ow_lo, ow_hi);
        double* row = col + ((ic * g.k + kh) * g.k + kw) * out_plane;
        std::fill_n(row, out_plane, 0.0);
        if (oh_lo > oh_hi || ow_lo > ow_hi) continue;
        for (std::int64_t oh = oh_lo; oh <= oh_hi; ++oh) {
          const double* src = plane + (oh * g.stride + hshift) * g.w + wshift;
          double* dst = row + oh * g.w_out;
          if (g.stride == 1) {
            std::copy(src + ow_lo, src + ow_hi + 1, dst + ow_lo);
          } else {
            for (std::int64_t ow = ow_lo; ow <= ow_hi; ++ow) dst[ow] = src[ow * g.stride];
          }
        }
      }
    }
  }
}

// Adjoint of im2col: accumulates column rows back into the image.
void col2im(const ConvGeometry& g, const double* col, double* img) {
  const std::int64_t out_plane = g.h_out * g.w_out;
  for (std::int64_t ic = 0; ic < g.icpg; ++ic) {
    double* plane = img + ic * g.h * g.w;
    for (std::int64_t kh = 0; kh < g.k; ++kh) {
      const std::int64_t hshift = kh * g.dil - g.pad;
      std::int64_t oh_lo, oh_hi;
      valid_range(g.h_out, g.h, g.stride, hshift, oh_lo, oh_hi);
      for (std::int64_t kw = 0; kw < g.k; ++kw) {
        const std::int64_t wshift = kw * g.dil - g.pad;
        std::int64_t ow_lo, ow_hi;
        valid_range(g.w_out, g.w, g.stride, wshift, ow_lo, ow_hi);
        if (oh_lo > oh_hi || ow_lo > ow_hi) continue;
        const double* row = col + ((ic * g.k + kh) * g.k + kw) * out_plane;
        for (std::int64_t oh = oh_lo; oh <= oh_hi; ++oh) {
          double* dst = plane + (oh * g.stride + hshift) * g.w + wshift;
          const double* src = row + oh * g.w_out;
          if (g.stride == 1) {
            axpy(dst + ow_lo, src + ow_lo, 1.0, ow_hi - ow_lo + 1);
          } else {
            for (std::int64_t ow = ow_lo; ow <= ow_hi; ++ow) dst[ow * g.stride] += src[ow];
          }
        }
      }
    }
  }
}

// The three passes share one structure: per image and group, the input is
// unfolded into columns and every (output channel, column row) pair becomes a
// contiguous axpy or dot over the output plane.
void conv_loops(const ConvGeometry& g, ConvPass pass, const double* in,
                const double* weight, const double* gout, double* out,
                double* gin, double* gweight) {
  const std::int64_t in_plane = g.h * g.w;
  const std::int64_t out_plane = g.h_out * g.w_out;
  const std::int64_t rows = g.icpg * g.k * g.k;
  // A 1x1, stride-1, unpadded convolution reads its input planes directly.
  const bool direct = g.k == 1 && g.stride == 1 && g.pad == 0;
  std::vector<double> col(direct ? 0 : static_cast<std::size_t>(rows * out_plane));
  for (std::int64_t n = 0; n < g.n; ++n) {
    for (int grp = 0; grp < g.groups; ++grp) {
      const std::int64_t c0 = grp * g.icpg;
      const std::int64_t img = (n * g.c_in + c0) * in_plane;
      const double* cols = nullptr;
      double* gcols = nullptr;
      if (pass == ConvPass::InputGrad) {
        if (direct) {
          gcols = gin + img;
        } else {
          std::fill(col.begin(), col.end(), 0.0);
          gcols = col.data();
        }
      } else if (direct) {
        cols = in + img;
      } else {
        im2col(g, in + img, col.data());
        cols = col.data();
      }
      for (std::int64_t oc = 0; oc < g.ocpg; ++oc) {
        const std::int64_t ocg = grp * g.ocpg + oc;
        const std::int64_t obase = (n * g.c_out + ocg) * out_plane;
        const std::int64_t wbase = ocg * rows;
        switch (pass) {
          case ConvPass::Forward:
            for (std::int64_t r = 0; r < rows; ++r)
              axpy(out + obase, cols + r * out_plane, weight[wbase + r], out_plane);
            break;
          case ConvPass::InputGrad:
            for (std::int64_t r = 0; r < rows; ++r)
              axpy(gcols + r * out_plane, gout + obase, weight[wbase + r], out_plane);
            break;
          case ConvPass::WeightGrad:
            for (std::int64_t r = 0; r < rows; ++r)
              gweight[wbase + r] += dot(gout + obase, cols + r * out_plane, out_plane);
            break;
        }
      }
      if (pass == ConvPass::InputGrad && !direct) col2im(g, col.data(), gin + img);
    }
  }
}

}  // namespace

Var conv2d(Var x, Var weight, Var bias, const Conv2dOptions& opt) {
  Tape& t = same_tape(x, weight, "conv2d");
  const Tensor& in = t.value(x);
  const Tensor& w = t.value(weight);
  require_rank(in, 4, "conv2d");
  require_rank(w, 4, "conv2d");
  if (opt.stride < 1 || opt.dilation < 1 || opt.groups < 1 || opt.padding < 0) {
    throw ShapeError("conv2d: invalid stride/dilation/groups/padding");
  }
  ConvGeometry g{};
  g.n = in.dim(0);
  g.c_in = in.dim(1);
  g.h = in.dim(2);
  g.w = in.dim(3);
  g.c_out = w.dim(0);
  g.k = w.dim(2);
  g.stride = opt.stride;
  g.pad = opt.padding;
  g.dil = opt.dilation;
  g.groups = opt.groups;
  if (w.dim(3) != g.k) throw ShapeError("conv2d: kernel must be square, got " + shape_str(w.shape()));
  if (g.c_in % g.groups != 0 || g.c_out % g.groups != 0) {
    throw ShapeError("conv2d: channels " + std::to_string(g.c_in) + "->" +
                     std::to_string(g.c_out) + " not divisible by groups " +
                     std::to_string(g.groups));
  }
  g.icpg = g.c_in / g.groups;
  g.ocpg = g.c_out / g.groups;
  if (w.dim(1) != g.icpg) {
    throw ShapeError("conv2d: weight " + shape_str(w.shape()) +
                     " expects " + std::to_string(w.dim(1) * g.groups) +
                     " input channels, input has shape " + shape_str(in.shape()));
  }
  const std::int64_t span = g.dil * (g.k - 1) + 1;
  if (g.h + 2 * g.pad < span || g.w + 2 * g.pad < span) {
    throw ShapeError("conv2d: input " + shape_str(in.shape()) +
                     " smaller than kernel footprint " + std::to_string(span));
  }
  g.h_out = (g.h + 2 * g.pad - span) / g.stride + 1;
  g.w_out = (g.w + 2 * g.pad - span) / g.stride + 1;
  const bool has_bias = bias.valid();
  if (has_bias) {
    const Tensor& b = t.value(bias);
    if (b.rank() != 1 || b.dim(0) != g.c_out) {
      throw ShapeError("conv2d: bias " + shape_str(b.shape()) + " for " +
                       std::to_string(g.c_out) + " output channels");
    }
  }
  Tensor out({g.n, g.c_out, g.h_out, g.w_out});
  if (has_bias) {
    const Tensor& b = t.value(bias);
    const std::int64_t plane = g.h_out * g.w_out;
    for (std::int64_t n = 0; n < g.n; ++n)
      for (std::int64_t c = 0; c < g.c_out; ++c)
        std::fill_n(out.ptr() + (n * g.c_out + c) * plane, plane, b[c]);
  }
  conv_loops(g, ConvPass::Forward, in.ptr(), w.ptr(), nullptr, out.ptr(),
             nullptr, nullptr);
  t.add_flops(g.n * g.c_out * g.h_out * g.w_out * g.icpg * g.k * g.k);

  std::vector<std::int32_t> inputs{x.id, weight.id};
  if (has_bias) inputs.push_back(bias.id);
  return t.record(
      std::move(out), std::move(inputs),
      [x, weight, bias, g, has_bias](Tape& t, std::int32_t self) {
        const Tensor& gout = t.grad_ref(self);
        const Tensor& in = t.value(x);
        const Tensor& w = t.value(weight);
        if (t.requires_grad(x.id)) {
          conv_loops(g, ConvPass::InputGrad, nullptr, w.ptr(), gout.ptr(),
                     nullptr, t.grad_ref(x.id).ptr(), nullptr);
        }
        if (t.requires_grad(weight.id)) {
          conv_loops(g, ConvPass::WeightGrad, in.ptr(), nullptr, gout.ptr(),
                     nullptr, nullptr, t.grad_ref(weight.id).ptr());
        }
        if (has_bias && t.requires_grad(bias.id)) {
          Tensor& gb = t.grad_ref(bias.id);
          const std::int64_t plane = g.h_out * g.w_out;
          for (std::int64_t n = 0; n < g.n; ++n)
            for (std::int64_t c = 0; c < g.c_out; ++c) {
              const double* p = gout.ptr() + (n * g.c_out + c) * plane;
              double s = 0.0;
              for (std::int64_t i = 0; i < plane; ++i) s += p[i];
              gb[c] += s;
            }
        }
      });
}

namespace {

struct PoolGeometry {
  std::int64_t n, c, h, w, h_out, w_out;
  int k, stride, pad;
};

PoolGeometry pool_geometry(const Tensor& in, const PoolOptions& opt,
                           const char* op) {
  require_rank(in, 4, op);
  PoolGeometry g{in.dim(0), in.dim(1), in.dim(2), in.dim(3), 0, 0,
                 opt.kernel, opt.stride, opt.padding};
  if (g.k < 1 || g.stride < 1 || g.pad < 0 || 2 * g.pad > g.k) {
    throw ShapeError(std::string(op) + ": invalid kernel/stride/padding");
  }
  if (g.h + 2 * g.pad < g.k || g.w + 2 * g.pad < g.k) {
    throw ShapeError(std::string(op) + ": input " + shape_str(in.shape()) +
                     " smaller than window " + std::to_string(g.k));
  }
  g.h_out = (g.h + 2 * g.pad - g.k) / g.stride + 1;
  g.w_out = (g.w + 2 * g.pad - g.k) / g.stride + 1;
  return g;
}

}  // namespace

Var max_pool2d(Var x, const PoolOptions& opt) {
  Tape& t = *x.tape;
  const Tensor& in = t.value(x);
  const PoolGeometry g = pool_geometry(in, opt, "max_pool2d");
  Tensor out({g.n, g.c, g.h_out, g.w_out});
  std::vector<std::int64_t> argmax(out.numel());
  std::int64_t o = 0;
  for (std::int64_t nc = 0; nc < g.n * g.c; ++nc) {
    const double* plane = in.ptr() + nc * g.h * g.w;
    for (std::int64_t oh = 0; oh < g.h_out; ++oh)
      for (std::int64_t ow = 0; ow < g.w_out; ++ow, ++o) {
        double best = -std::numeric_limits<double>::infinity();
        std::int64_t best_idx = -1;
        for (int kh = 0; kh < g.k; ++kh) {
          const std::int64_t ih = oh * g.stride - g.pad + kh;
          if (ih < 0 || ih >= g.h) continue;
          for (int kw = 0; kw < g.k; ++kw) {
            const std::int64_t iw = ow * g.stride - g.pad + kw;
            if (iw < 0 || iw >= g.w) continue;
            const double v = plane[ih * g.w + iw];
            if (v > best) {
              best = v;
              best_idx = nc * g.h * g.w + ih * g.w + iw;
            }
          }
        }
        out[o] = best;
        argmax[o] = best_idx;
      }
  }
  t.add_flops(static_cast<std::int64_t>(out.numel()) * g.k * g.k);
  return t.record(std::move(out), {x.id},
                  [x, argmax = std::move(argmax)](Tape& t, std::int32_t self) {
                    const Tensor& gout = t.grad_ref(self);
                    Tensor& gx = t.grad_ref(x.id);
                    for (std::size_t i = 0; i < gout.numel(); ++i)
                      gx[argmax[i]] += gout[i];
                  });
}

Var avg_pool2d(Var x, const PoolOptions& opt) {
  Tape& t = *x.tape;
  const Tensor& in = t.value(x);
  const PoolGeometry g = pool_geometry(in, opt, "avg_pool2d");
  Tensor out({g.n, g.c, g.h_out, g.w_out});
  // Divisors depend only on the output position.
  std::vector<double> inv_count(static_cast<std::size_t>(g.h_out * g.w_out));
  for (std::int64_t oh = 0; oh < g.h_out; ++oh)
    for (std::int64_t ow = 0; ow < g.w_out; ++ow) {
      const auto h0 = std::max<std::int64_t>(0, oh * g.stride - g.pad);
      const auto h1 = std::min<std::int64_t>(g.h, oh * g.stride - g.pad + g.k);
      const auto w0 = std::max<std::int64_t>(0, ow * g.stride - g.pad);
      const auto w1 = std::min<std::int64_t>(g.w, ow * g.stride - g.pad + g.k);
      inv_count[oh * g.w_out + ow] = 1.0 / static_cast<double>((h1 - h0) * (w1 - w0));
    }
  for (std::int64_t nc = 0; nc < g.n * g.c; ++nc) {
    const double* plane = in.ptr() + nc * g.h * g.w;
    double* oplane = out.ptr() + nc * g.h_out * g.w_out;
    for (std::int64_t oh = 0; oh < g.h_out; ++oh)
      for (std::int64_t ow = 0; ow < g.w_out; ++ow) {
        const auto h0 = std::max<std::int64_t>(0, oh * g.stride - g.pad);
        const auto h1 = std::min<std::int64_t>(g.h, oh * g.stride - g.pad + g.k);
        const auto w0 = std::max<std::int64_t>(0, ow * g.stride - g.pad);
        const auto w1 = std::min<std::int64_t>(g.w, ow * g.stride - g.pad + g.k);
        double s = 0.0;
        for (auto ih = h0; ih < h1; ++ih)
          for (auto iw = w0; iw < w1; ++iw) s += plane[ih * g.w + iw];
        oplane[oh * g.w_out + ow] = s * inv_count[oh * g.w_out + ow];
      }
  }
  t.add_flops(static_cast<std::int64_t>(out.numel()) * g.k * g.k);
  return t.record(
      std::move(out), {x.id},
      [x, g, inv_count = std::move(inv_count)](Tape& t, std::int32_t self) {
        const Tensor& gout = t.grad_ref(self);
        Tensor& gx = t.grad_ref(x.id);
        for (std::int64_t nc = 0; nc < g.n * g.c; ++nc) {
          double* gplane = gx.ptr() + nc * g.h * g.w;
          const double* oplane = gout.ptr() + nc * g.h_out * g.w_out;
          for (std::int64_t oh = 0; oh < g.h_out; ++oh)
            for (std::int64_t ow = 0; ow < g.w_out; ++ow) {
              const double v = oplane[oh * g.w_out + ow] * inv_count[oh * g.w_out + ow];
              const auto h0 = std::max<std::int64_t>(0, oh * g.stride - g.pad);
              const auto h1 = std::min<std::int64_t>(g.h, oh * g.stride - g.pad + g.k);
              const auto w0 = std::max<std::int64_t>(0, ow * g.stride - g.pad);
              const auto w1 = std::min<std::int64_t>(g.w, ow * g.stride - g.pad + g.k);
              for (auto ih = h0; ih < h1; ++ih)
                for (auto iw = w0; iw < w1; ++iw) gplane[ih * g.w + iw] += v;
            }
        }
      });
}

Var global_avg_pool(Var x) {
  Tape& t = *x.tape;
  const Tensor& in = t.value(x);
  require_rank(in, 4, "global_avg_pool");
  const auto n = in.dim(0), c = in.dim(1), plane = in.dim(2) * in.dim(3);
  Tensor out({n, c});
  for (std::int64_t i = 0; i < n * c; ++i) {
    double s = 0.0;
    for (std::int64_t j = 0; j < plane; ++j) s += in[i * plane + j];
    out[i] = s / static_cast<double>(plane);
  }
  return t.record(std::move(out), {x.id}, [x, n, c, plane](Tape& t, std::int32_t self) {
    const Tensor& g = t.grad_ref(self);
    Tensor& gx = t.grad_ref(x.id);
    const double inv = 1.0 / static_cast<double>(plane);
    for (std::int64_t i = 0; i < n * c; ++i)
      for (std::int64_t j = 0; j < plane; ++j) gx[i * plane + j] += g[i] * inv;
  });
}

namespace {

void check_affine(Tape& t, Var gamma, Var beta, std::int64_t c) {
  if (gamma.valid() != beta.valid()) {
    throw Error("batch_norm: gamma and beta must both be given or both omitted");
  }
  if (gamma.valid()) {
    if (t.value(gamma).numel() != static_cast<std::size_t>(c) ||
        t.value(beta).numel() != static_cast<std::size_t>(c)) {
      throw ShapeError("batch_norm: affine parameters must have " +
                       std::to_string(c) + " entries");
    }
  }
}

}  // namespace

Var batch_norm_train(Var x, Var gamma, Var beta, double eps,
                     Tensor* running_mean, Tensor* running_var,
                     double momentum) {
  Tape& t = *x.tape;
  const Tensor& in = t.value(x);
  require_rank(in, 4, "batch_norm");
  const auto n = in.dim(0), c = in.dim(1), plane = in.dim(2) * in.dim(3);
  check_affine(t, gamma, beta, c);
  const bool affine = gamma.valid();
  const double count = static_cast<double>(n * plane);
  std::vector<double> mean(c, 0.0), inv_std(c, 0.0);
  Tensor xhat(in.shape());
  for (std::int64_t ch = 0; ch < c; ++ch) {
    double s = 0.0;
    for (std::int64_t b = 0; b < n; ++b) {
      const double* p = in.ptr() + (b * c + ch) * plane;
      for (std::int64_t i = 0; i < plane; ++i) s += p[i];
    }
    const double mu = s / count;
    double v = 0.0;
    for (std::int64_t b = 0; b < n; ++b) {
      const double* p = in.ptr() + (b * c + ch) * plane;
      for (std::int64_t i = 0; i < plane; ++i) v += (p[i] - mu) * (p[i] - mu);
    }
    const double var = v / count;
    mean[ch] = mu;
    inv_std[ch] = 1.0 / std::sqrt(var + eps);
    for (std::int64_t b = 0; b < n; ++b) {
      const double* p = in.ptr() + (b * c + ch) * plane;
      double* q = xhat.ptr() + (b * c + ch) * plane;
      for (std::int64_t i = 0; i < plane; ++i) q[i] = (p[i] - mu) * inv_std[ch];
    }
    if (running_mean && running_var) {
      const double unbiased = count > 1.0 ? var * count / (count - 1.0) : var;
      (*running_mean)[ch] = (1.0 - momentum) * (*running_mean)[ch] + momentum * mu;
      (*running_var)[ch] = (1.0 - momentum) * (*running_var)[ch] + momentum * unbiased;
    }
  }
  Tensor out = xhat;
  if (affine) {
    const Tensor& gm = t.value(gamma);
    const Tensor& bt = t.value(beta);
    for (std::int64_t b = 0; b < n; ++b)
      for (std::int64_t ch = 0; ch < c; ++ch) {
        double* q = out.ptr() + (b * c + ch) * plane;
        for (std::int64_t i = 0; i < plane; ++i) q[i] = q[i] * gm[ch] + bt[ch];
      }
  }
  std::vector<std::int32_t> inputs{x.id};
  if (affine) {
    inputs.push_back(gamma.id);
    inputs.push_back(beta.id);
  }
  return t.record(
      std::move(out), std::move(inputs),
      [x, gamma, beta, affine, n, c, plane, count, inv_std = std::move(inv_std),
       xhat = std::move(xhat)](Tape& t, std::int32_t self) {
        const Tensor& gout = t.grad_ref(self);
        if (affine && t.requires_grad(gamma.id)) {
          Tensor& gg = t.grad_ref(gamma.id);
          for (std::int64_t b = 0; b < n; ++b)
            for (std::int64_t ch = 0; ch < c; ++ch) {
              const double* g = gout.ptr() + (b * c + ch) * plane;
              const double* q = xhat.ptr() + (b * c + ch) * plane;
              double s = 0.0;
              for (std::int64_t i = 0; i < plane; ++i) s += g[i] * q[i];
              gg[ch] += s;
            }
        }
        if (affine && t.requires_grad(beta.id)) {
          Tensor& gb = t.grad_ref(beta.id);
          for (std::int64_t b = 0; b < n; ++b)
            for (std::int64_t ch = 0; ch < c; ++ch) {
              const double* g = gout.ptr() + (b * c + ch) * plane;
              double s = 0.0;
              for (std::int64_t i = 0; i < plane; ++i) s += g[i];
              gb[ch] += s;
            }
        }
        if (!t.requires_grad(x.id)) return;
        Tensor& gx = t.grad_ref(x.id);
        const Tensor* gm = affine ? &t.value(gamma) : nullptr;
        for (std::int64_t ch = 0; ch < c; ++ch) {
          const double scale_c = gm ? (*gm)[ch] : 1.0;
          double sum_g = 0.0, sum_gx = 0.0;
          for (std::int64_t b = 0; b < n; ++b) {
            const double* g = gout.ptr() + (b * c + ch) * plane;
            const double* q = xhat.ptr() + (b * c + ch) * plane;
            for (std::int64_t i = 0; i < plane; ++i) {
              sum_g += g[i];
              sum_gx += g[i] * q[i];
            }
          }
          const double k = scale_c * inv_std[ch] / count;
          for (std::int64_t b = 0; b < n; ++b) {
            const double* g = gout.ptr() + (b * c + ch) * plane;
            const double* q = xhat.ptr() + (b * c + ch) * plane;
            double* gi = gx.ptr() + (b * c + ch) * plane;
            for (std::int64_t i = 0; i < plane; ++i)
              gi[i] += k * (count * g[i] - sum_g - q[i] * sum_gx);
          }
        }
      });
}

Var batch_norm_eval(Var x, Var gamma, Var beta, const Tensor& running_mean,
                    const Tensor& running_var, double eps) {
  Tape& t = *x.tape;
  const Tensor& in = t.value(x);
  require_rank(in, 4, "batch_norm");
  const auto n = in.dim(0), c = in.dim(1), plane = in.dim(2) * in.dim(3);
  check_affine(t, gamma, beta, c);
  const bool affine = gamma.valid();
  std::vector<double> inv_std(c);
  for (std::int64_t ch = 0; ch < c; ++ch)
    inv_std[ch] = 1.0 / std::sqrt(running_var[ch] + eps);
  Tensor xhat(in.shape());
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const double* p = in.ptr() + (b * c + ch) * plane;
      double* q = xhat.ptr() + (b * c + ch) * plane;
      for (std::int64_t i = 0; i < plane; ++i)
        q[i] = (p[i] - running_mean[ch]) * inv_std[ch];
    }
  Tensor out = xhat;
  if (affine) {
    const Tensor& gm = t.value(gamma);
    const Tensor& bt = t.value(beta);
    for (std::int64_t b = 0; b < n; ++b)
      for (std::int64_t ch = 0; ch < c; ++ch) {
        double* q = out.ptr() + (b * c + ch) * plane;
        for (std::int64_t i = 0; i < plane; ++i) q[i] = q[i] * gm[ch] + bt[ch];
      }
  }
  std::vector<std::int32_t> inputs{x.id};
  if (affine) {
    inputs.push_back(gamma.id);
    inputs.push_back(beta.id);
  }
  return t.record(
      std::move(out), std::move(inputs),
      [x, gamma, beta, affine, n, c, plane, inv_std = std::move(inv_std),
       xhat = std::move(xhat)](Tape& t, std::int32_t self) {
        const Tensor& gout = t.grad_ref(self);
        const Tensor* gm = affine ? &t.value(gamma) : nullptr;
        for (std::int64_t b = 0; b < n; ++b)
          for (std::int64_t ch = 0; ch < c; ++ch) {
            const std::int64_t base = (b * c + ch) * plane;
            if (t.requires_grad(x.id)) {
              Tensor& gx = t.grad_ref(x.id);
              const double k = (gm ? (*gm)[ch] : 1.0) * inv_std[ch];
              for (std::int64_t i = 0; i < plane; ++i) gx[base + i] += k * gout[base + i];
            }
            if (affine && t.requires_grad(gamma.id)) {
              double s = 0.0;
              for (std::int64_t i = 0; i < plane; ++i) s += gout[base + i] * xhat[base + i];
              t.grad_ref(gamma.id)[ch] += s;
            }
            if (affine && t.requires_grad(beta.id)) {
              double s = 0.0;
              for (std::int64_t i = 0; i < plane; ++i) s += gout[base + i];
              t.grad_ref(beta.id)[ch] += s;
            }
          }
      });
}

Var softmax(Var x) {
  Tape& t = *x.tape;
  const Tensor& in = t.value(x);
  if (in.rank() != 1 && in.rank() != 2) {
    throw ShapeError("softmax: expected rank 1 or 2, got " + shape_str(in.shape()));
  }
  const std::int64_t cols = in.dim(in.rank() - 1);
  const std::int64_t rows = static_cast<std::int64_t>(in.numel()) / cols;
  Tensor out(in.shape());
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* p = in.ptr() + r * cols;
    double* q = out.ptr() + r * cols;
    const double m = *std::max_element(p, p + cols);
    double z = 0.0;
    for (std::int64_t j = 0; j < cols; ++j) z += (q[j] = std::exp(p[j] - m));
    for (std::int64_t j = 0; j < cols; ++j) q[j] /= z;
  }
  return t.record(std::move(out), {x.id}, [x, rows, cols](Tape& t, std::int32_t self) {
    const Tensor& g = t.grad_ref(self);
    const Tensor& y = t.value(self);
    Tensor& gx = t.grad_ref(x.id);
    for (std::int64_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::int64_t j = 0; j < cols; ++j) dot += g[r * cols + j] * y[r * cols + j];
      for (std::int64_t j = 0; j < cols; ++j)
        gx[r * cols + j] += y[r * cols + j] * (g[r * cols + j] - dot);
    }
  });
}

Var sum(Var x) {
  Tape& t = *x.tape;
  Tensor out = Tensor::scalar(t.value(x).sum());
  return t.record(std::move(out), {x.id}, [x](Tape& t, std::int32_t self) {
    const double g = t.grad_ref(self)[0];
    for (auto& v : t.grad_ref(x.id).data()) v += g;
  });
}

Var mean(Var x) {
  Tape& t = *x.tape;
  const double n = static_cast<double>(t.value(x).numel());
  Tensor out = Tensor::scalar(t.value(x).sum() / n);
  return t.record(std::move(out), {x.id}, [x, n](Tape& t, std::int32_t self) {
    const double g = t.grad_ref(self)[0] / n;
    for (auto& v : t.grad_ref(x.id).data()) v += g;
  });
}

Var cross_entropy(Var logits, std::span<const int> labels) {
  Tape& t = *logits.tape;
  const Tensor& z = t.value(logits);
  require_rank(z, 2, "cross_entropy");
  const auto n = z.dim(0), k = z.dim(1);
  if (static_cast<std::int64_t>(labels.size()) != n) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) +
                     " labels for " + std::to_string(n) + " rows");
  }
  Tensor probs(z.shape());
  double loss = 0.0;
  for (std::int64_t r = 0; r < n; ++r) {
    const int y = labels[r];
    if (y < 0 || y >= k) {
      throw DataError("cross_entropy: label " + std::to_string(y) +
                      " outside [0," + std::to_string(k) + ")");
    }
    const double* p = z.ptr() + r * k;
    double* q = probs.ptr() + r * k;
    const double m = *std::max_element(p, p + k);
    double s = 0.0;
    for (std::int64_t j = 0; j < k; ++j) s += (q[j] = std::exp(p[j] - m));
    for (std::int64_t j = 0; j < k; ++j) q[j] /= s;
    loss += -(p[y] - m - std::log(s));
  }
  loss /= static_cast<double>(n);
  std::vector<int> lab(labels.begin(), labels.end());
  return t.record(Tensor::scalar(loss), {logits.id},
                  [logits, n, k, lab = std::move(lab),
                   probs = std::move(probs)](Tape& t, std::int32_t self) {
                    const double g = t.grad_ref(self)[0] / static_cast<double>(n);
                    Tensor& gz = t.grad_ref(logits.id);
                    for (std::int64_t r = 0; r < n; ++r)
                      for (std::int64_t j = 0; j < k; ++j) {
                        const double onehot = (j == lab[r]) ? 1.0 : 0.0;
                        gz[r * k + j] += g * (probs[r * k + j] - onehot);
                      }
                  });
}

Var concat_channels(std::span<const Var> xs) {
  if (xs.empty()) throw ShapeError("concat_channels: no inputs");
  Tape& t = *xs[0].tape;
  const Tensor& first = t.value(xs[0]);
  require_rank(first, 4, "concat_channels");
  const auto n = first.dim(0), h = first.dim(2), w = first.dim(3);
  std::int64_t c_total = 0;
  std::vector<std::int64_t> offsets;
  std::vector<std::int32_t> ids;
  for (const Var& v : xs) {
    if (v.tape != &t) throw Error("concat_channels: operands on different tapes");
    const Tensor& x = t.value(v);
    require_rank(x, 4, "concat_channels");
    if (x.dim(0) != n || x.dim(2) != h || x.dim(3) != w) {
      throw ShapeError("concat_channels: " + shape_str(x.shape()) +
                       " incompatible with " + shape_str(first.shape()));
    }
    offsets.push_back(c_total);
    c_total += x.dim(1);
    ids.push_back(v.id);
  }
  const std::int64_t plane = h * w;
  Tensor out({n, c_total, h, w});
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const Tensor& x = t.value(xs[i]);
    const auto c = x.dim(1);
    for (std::int64_t b = 0; b < n; ++b)
      std::copy_n(x.ptr() + b * c * plane, c * plane,
                  out.ptr() + (b * c_total + offsets[i]) * plane);
  }
  return t.record(std::move(out), ids,
                  [ids, offsets, n, c_total, plane](Tape& t, std::int32_t self) {
                    const Tensor& g = t.grad_ref(self);
                    for (std::size_t i = 0; i < ids.size(); ++i) {
                      if (!t.requires_grad(ids[i])) continue;
                      Tensor& gx = t.grad_ref(ids[i]);
                      const auto c = gx.dim(1);
                      for (std::int64_t b = 0; b < n; ++b) {
                        const double* src = g.ptr() + (b * c_total + offsets[i]) * plane;
                        double* dst = gx.ptr() + b * c * plane;
                        for (std::int64_t j = 0; j < c * plane; ++j) dst[j] += src[j];
                      }
                    }
                  });
}

Var gather_channels(Var x, std::span<const int> channels) {
  Tape& t = *x.tape;
  const Tensor& in = t.value(x);
  require_rank(in, 4, "gather_channels");
  const auto n = in.dim(0), c = in.dim(1), plane = in.dim(2) * in.dim(3);
  const auto m = static_cast<std::int64_t>(channels.size());
  for (int ch : channels) {
    if (ch < 0 || ch >= c) {
      throw ShapeError("gather_channels: channel " + std::to_string(ch) +
                       " outside tensor of shape " + shape_str(in.shape()));
    }
  }
  Tensor out({n, m, in.dim(2), in.dim(3)});
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t j = 0; j < m; ++j)
      std::copy_n(in.ptr() + (b * c + channels[j]) * plane, plane,
                  out.ptr() + (b * m + j) * plane);
  std::vector<int> ch(channels.begin(), channels.end());
  return t.record(std::move(out), {x.id},
                  [x, n, c, m, plane, ch = std::move(ch)](Tape& t, std::int32_t self) {
                    const Tensor& g = t.grad_ref(self);
                    Tensor& gx = t.grad_ref(x.id);
                    for (std::int64_t b = 0; b < n; ++b)
                      for (std::int64_t j = 0; j < m; ++j) {
                        const double* src = g.ptr() + (b * m + j) * plane;
                        double* dst = gx.ptr() + (b * c + ch[j]) * plane;
                        for (std::int64_t i = 0; i < plane; ++i) dst[i] += src[i];
                      }
                  });
}

Var scatter_channels(Var base, std::span<const int> channels, Var src) {
  Tape& t = same_tape(base, src, "scatter_channels");
  const Tensor& b0 = t.value(base);
  const Tensor& s0 = t.value(src);
  require_rank(b0, 4, "scatter_channels");
  require_rank(s0, 4, "scatter_channels");
  const auto n = b0.dim(0), c = b0.dim(1), plane = b0.dim(2) * b0.dim(3);
  const auto m = static_cast<std::int64_t>(channels.size());
  if (s0.dim(0) != n || s0.dim(1) != m || s0.dim(2) != b0.dim(2) ||
      s0.dim(3) != b0.dim(3)) {
    throw ShapeError("scatter_channels: source " + shape_str(s0.shape()) +
                     " does not fit " + std::to_string(m) + " channels of " +
                     shape_str(b0.shape()));
  }
  std::vector<char> replaced(c, 0);
  for (int ch : channels) {
    if (ch < 0 || ch >= c || replaced[ch]) {
      throw ShapeError("scatter_channels: invalid or repeated channel " +
                       std::to_string(ch));
    }
    replaced[ch] = 1;
  }
  Tensor out = b0;
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t j = 0; j < m; ++j)
      std::copy_n(s0.ptr() + (b * m + j) * plane, plane,
                  out.ptr() + (b * c + channels[j]) * plane);
  std::vector<int> ch(channels.begin(), channels.end());
  return t.record(
      std::move(out), {base.id, src.id},
      [base, src, n, c, m, plane, ch = std::move(ch),
       replaced = std::move(replaced)](Tape& t, std::int32_t self) {
        const Tensor& g = t.grad_ref(self);
        if (t.requires_grad(base.id)) {
          Tensor& gb = t.grad_ref(base.id);
          for (std::int64_t b = 0; b < n; ++b)
            for (std::int64_t k = 0; k < c; ++k) {
              if (replaced[k]) continue;
              const double* p = g.ptr() + (b * c + k) * plane;
              double* q = gb.ptr() + (b * c + k) * plane;
              for (std::int64_t i = 0; i < plane; ++i) q[i] += p[i];
            }
        }
        if (t.requires_grad(src.id)) {
          Tensor& gs = t.grad_ref(src.id);
          for (std::int64_t b = 0; b < n; ++b)
            for (std::int64_t j = 0; j < m; ++j) {
              const double* p = g.ptr() + (b * c + ch[j]) * plane;
              double* q = gs.ptr() + (b * m + j) * plane;
              for (std::int64_t i = 0; i < plane; ++i) q[i] += p[i];
            }
        }
      });
}

Var weighted_sum(std::span<const Var> xs, Var weights) {
  if (xs.empty()) throw ShapeError("weighted_sum: no inputs");
  Tape& t = *weights.tape;
  const Tensor& wv = t.value(weights);
  if (wv.rank() != 1 || wv.numel() != xs.size()) {
    throw ShapeError("weighted_sum: weights " + shape_str(wv.shape()) + " for " +
                     std::to_string(xs.size()) + " inputs");
  }
  const Shape& shape = t.value(xs[0]).shape();
  std::vector<std::int32_t> ids;
  ids.reserve(xs.size() + 1);
  for (const Var& v : xs) {
    if (v.tape != &t) throw Error("weighted_sum: operands on different tapes");
    if (t.value(v).shape() != shape) {
      throw ShapeError("weighted_sum: shape mismatch " + shape_str(shape) +
                       " vs " + shape_str(t.value(v).shape()));
    }
    ids.push_back(v.id);
  }
  Tensor out(shape);
  const std::size_t len = out.numel();
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double a = wv[i];
    const double* p = t.value(xs[i]).ptr();
    double* q = out.ptr();
    for (std::size_t j = 0; j < len; ++j) q[j] += a * p[j];
  }
  t.add_flops(static_cast<std::int64_t>(len * xs.size()));
  std::vector<std::int32_t> inputs = ids;
  inputs.push_back(weights.id);
  return t.record(std::move(out), std::move(inputs),
                  [ids, weights, len](Tape& t, std::int32_t self) {
                    const Tensor& g = t.grad_ref(self);
                    const Tensor& wv = t.value(weights);
                    const bool need_w = t.requires_grad(weights.id);
                    for (std::size_t i = 0; i < ids.size(); ++i) {
                      if (need_w) {
                        const double* p = t.value(ids[i]).ptr();
                        double s = 0.0;
                        for (std::size_t j = 0; j < len; ++j) s += g[j] * p[j];
                        t.grad_ref(weights.id)[i] += s;
                      }
                      if (t.requires_grad(ids[i])) {
                        double* q = t.grad_ref(ids[i]).ptr();
                        const double a = wv[i];
                        for (std::size_t j = 0; j < len; ++j) q[j] += a * g[j];
                      }
                    }
                  });
}

Var slice_rows(Var x, std::int64_t start, std::int64_t count) {
  Tape& t = *x.tape;
  const Tensor& in = t.value(x);
  if (in.rank() < 1 || start < 0 || count < 1 || start + count > in.dim(0)) {
    throw ShapeError("slice_rows: rows [" + std::to_string(start) + "," +
                     std::to_string(start + count) + ") of " + shape_str(in.shape()));
  }
  const std::int64_t row = static_cast<std::int64_t>(in.numel()) / in.dim(0);
  Shape shape = in.shape();
  shape[0] = count;
  std::vector<double> data(in.ptr() + start * row, in.ptr() + (start + count) * row);
  return t.record(Tensor(shape, std::move(data)), {x.id},
                  [x, start, count, row](Tape& t, std::int32_t self) {
                    const Tensor& g = t.grad_ref(self);
                    Tensor& gx = t.grad_ref(x.id);
                    for (std::int64_t i = 0; i < count * row; ++i)
                      gx[start * row + i] += g[i];
                  });
}

Var scale_rows(Var m, Var v) {
  Tape& t = same_tape(m, v, "scale_rows");
  const Tensor& a = t.value(m);
  const Tensor& s = t.value(v);
  require_rank(a, 2, "scale_rows");
  if (s.rank() != 1 || s.dim(0) != a.dim(0)) {
    throw ShapeError("scale_rows: " + shape_str(s.shape()) + " for matrix " +
                     shape_str(a.shape()));
  }
  const auto rows = a.dim(0), cols = a.dim(1);
  Tensor out = a;
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t c = 0; c < cols; ++c) out[r * cols + c] *= s[r];
  return t.record(std::move(out), {m.id, v.id}, [m, v, rows, cols](Tape& t, std::int32_t self) {
    const Tensor& g = t.grad_ref(self);
    const Tensor& a = t.value(m);
    const Tensor& s = t.value(v);
    if (t.requires_grad(m.id)) {
      Tensor& gm = t.grad_ref(m.id);
      for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t c = 0; c < cols; ++c) gm[r * cols + c] += g[r * cols + c] * s[r];
    }
    if (t.requires_grad(v.id)) {
      Tensor& gv = t.grad_ref(v.id);
      for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t c = 0; c < cols; ++c) gv[r] += g[r * cols + c] * a[r * cols + c];
    }
  });
}

Var reshape(Var x, Shape shape) {
  Tape& t = *x.tape;
  Tensor out = t.value(x).reshaped(std::move(shape));
  return t.record(std::move(out), {x.id}, [x](Tape& t, std::int32_t self) {
    const Tensor& g = t.grad_ref(self);
    Tensor& gx = t.grad_ref(x.id);
    for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += g[i];
  });
}

Var crop2d(Var x, std::int64_t top, std::int64_t left, std::int64_t h,
           std::int64_t w) {
  Tape& t = *x.tape;
  const Tensor& in = t.value(x);
  require_rank(in, 4, "crop2d");
  const auto n = in.dim(0), c = in.dim(1), ih = in.dim(2), iw = in.dim(3);
  if (top < 0 || left < 0 || h < 1 || w < 1 || top + h > ih || left + w > iw) {
    throw ShapeError("crop2d: window (" + std::to_string(top) + "," +
                     std::to_string(left) + ")+" + std::to_string(h) + "x" +
                     std::to_string(w) + " outside " + shape_str(in.shape()));
  }
  Tensor out({n, c, h, w});
  for (std::int64_t p = 0; p < n * c; ++p)
    for (std::int64_t r = 0; r < h; ++r)
      std::copy_n(in.ptr() + (p * ih + top + r) * iw + left, w,
                  out.ptr() + (p * h + r) * w);
  return t.record(std::move(out), {x.id},
                  [x, n, c, ih, iw, top, left, h, w](Tape& t, std::int32_t self) {
                    const Tensor& g = t.grad_ref(self);
                    Tensor& gx = t.grad_ref(x.id);
                    for (std::int64_t p = 0; p < n * c; ++p)
                      for (std::int64_t r = 0; r < h; ++r) {
                        const double* src = g.ptr() + (p * h + r) * w;
                        double* dst = gx.ptr() + (p * ih + top + r) * iw + left;
                        for (std::int64_t j = 0; j < w; ++j) dst[j] += src[j];
                      }
                  });
}

Var zeros(Tape& tape, Shape shape) { return tape.constant(Tensor(std::move(shape))); }

}  // namespace ftso
