#include "ftso/ops.hpp"

#include <cmath>
#include <sstream>

#include "ftso/error.hpp"

namespace ftso {

std::string_view operator_name(OperatorKind kind) {
  switch (kind) {
    case OperatorKind::SepConv3x3: return "sep_conv_3x3";
    case OperatorKind::SepConv5x5: return "sep_conv_5x5";
    case OperatorKind::DilConv3x3: return "dil_conv_3x3";
    case OperatorKind::DilConv5x5: return "dil_conv_5x5";
    case OperatorKind::MaxPool3x3: return "max_pool_3x3";
    case OperatorKind::AvgPool3x3: return "avg_pool_3x3";
    case OperatorKind::SkipConnect: return "skip_connect";
    case OperatorKind::Zero: return "none";
  }
  return "?";
}

OperatorKind parse_operator(std::string_view name) {
  for (OperatorKind k : kAllOperators) {
    if (operator_name(k) == name) return k;
  }
  throw DataError("unknown operator name '" + std::string(name) + "'");
}

std::vector<OperatorKind> parse_operator_list(std::string_view text) {
  std::vector<OperatorKind> ops;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t comma = text.find(',', pos);
    const std::string_view item =
        text.substr(pos, comma == std::string_view::npos ? text.size() - pos : comma - pos);
    if (item.empty()) throw DataError("empty entry in operator list '" + std::string(text) + "'");
    const OperatorKind k = parse_operator(item);
    for (OperatorKind seen : ops) {
      if (seen == k) throw DataError("duplicate operator '" + std::string(item) + "' in list");
    }
    ops.push_back(k);
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  return ops;
}

std::string join_operator_names(const std::vector<OperatorKind>& ops) {
  std::string out;
  for (std::size_t i = 0; i < ops.size(); ++i) {
    if (i) out += ',';
    out += operator_name(ops[i]);
  }
  return out;
}

int operator_kernel(OperatorKind kind) {
  switch (kind) {
    case OperatorKind::SepConv5x5:
    case OperatorKind::DilConv5x5: return 5;
    case OperatorKind::SkipConnect: return 1;
    case OperatorKind::Zero: return 0;
    default: return 3;
  }
}

bool is_parameter_free(OperatorKind kind) {
  return kind == OperatorKind::MaxPool3x3 || kind == OperatorKind::AvgPool3x3 ||
         kind == OperatorKind::SkipConnect || kind == OperatorKind::Zero;
}

std::string candidate_name(const CandidateOp& op) {
  if (const auto* k = std::get_if<OperatorKind>(&op)) return std::string(operator_name(*k));
  const int ks = std::get<VanillaConvSpec>(op).kernel;
  return "conv_" + std::to_string(ks) + "x" + std::to_string(ks);
}

std::int64_t operator_param_count(const CandidateOp& op, std::int64_t c_in,
                                  std::int64_t c_out, int stride, bool affine) {
  if (const auto* v = std::get_if<VanillaConvSpec>(&op)) {
    const std::int64_t k = v->kernel;
    return (k * k * c_in + 1) * c_out;
  }
  const OperatorKind kind = std::get<OperatorKind>(op);
  const std::int64_t k = operator_kernel(kind);
  switch (kind) {
    case OperatorKind::SepConv3x3:
    case OperatorKind::SepConv5x5:
      return 2 * k * k * c_in + c_in * c_in + c_in * c_out +
             (affine ? 2 * c_in + 2 * c_out : 0);
    case OperatorKind::DilConv3x3:
    case OperatorKind::DilConv5x5:
      return k * k * c_in + c_in * c_out + (affine ? 2 * c_out : 0);
    case OperatorKind::SkipConnect:
      return stride == 1 ? 0 : c_in * c_out + (affine ? 2 * c_out : 0);
    case OperatorKind::MaxPool3x3:
    case OperatorKind::AvgPool3x3:
    case OperatorKind::Zero:
      return 0;
  }
  return 0;
}

std::int64_t operator_flop_count(const CandidateOp& op, std::int64_t c_in,
                                 std::int64_t h_out, std::int64_t w_out,
                                 std::int64_t c_out, int stride) {
  const std::int64_t hw = h_out * w_out;
  if (const auto* v = std::get_if<VanillaConvSpec>(&op)) {
    const std::int64_t k = v->kernel;
    return k * k * c_in * hw * c_out;
  }
  const OperatorKind kind = std::get<OperatorKind>(op);
  const std::int64_t k = operator_kernel(kind);
  switch (kind) {
    case OperatorKind::SepConv3x3:
    case OperatorKind::SepConv5x5:
      return (2 * k * k * c_in + c_in * c_in + c_in * c_out) * hw;
    case OperatorKind::DilConv3x3:
    case OperatorKind::DilConv5x5:
      return (k * k * c_in + c_in * c_out) * hw;
    case OperatorKind::MaxPool3x3:
    case OperatorKind::AvgPool3x3:
      return 9 * c_out * hw;
    case OperatorKind::SkipConnect:
      return stride == 1 ? 0 : c_in * c_out * hw;
    case OperatorKind::Zero:
      return 0;
  }
  return 0;
}

// -- building blocks ---------------------------------------------------------

ConvUnit::ConvUnit(std::int64_t c_in, std::int64_t c_out, int kernel,
                   Conv2dOptions o, bool bias, std::mt19937_64& rng)
    : has_bias(bias), opt(o) {
  const std::int64_t fan_in = (c_in / o.groups) * kernel * kernel;
  const double std_dev = std::sqrt(2.0 / static_cast<double>(fan_in));
  weight = Parameter(Tensor::randn({c_out, c_in / o.groups, kernel, kernel}, rng, std_dev),
                     "conv.weight");
  if (bias) this->bias = Parameter(Tensor({c_out}), "conv.bias");
}

Var ConvUnit::forward(Var x) {
  Tape& t = *x.tape;
  Var w = t.param(weight);
  Var b = has_bias ? t.param(bias) : Var{};
  return conv2d(x, w, b, opt);
}

void ConvUnit::collect(std::vector<Parameter*>& out) {
  out.push_back(&weight);
  if (has_bias) out.push_back(&bias);
}

BatchNormUnit::BatchNormUnit(std::int64_t c, bool aff)
    : channels(c), affine(aff), running_mean({c}, 0.0), running_var({c}, 1.0) {
  if (affine) {
    gamma = Parameter(Tensor({c}, 1.0), "bn.gamma");
    beta = Parameter(Tensor({c}, 0.0), "bn.beta");
  }
}

Var BatchNormUnit::forward(Var x, bool training) {
  Tape& t = *x.tape;
  Var g = affine ? t.param(gamma) : Var{};
  Var b = affine ? t.param(beta) : Var{};
  if (training) return batch_norm_train(x, g, b, 1e-5, &running_mean, &running_var);
  return batch_norm_eval(x, g, b, running_mean, running_var);
}

void BatchNormUnit::collect(std::vector<Parameter*>& out) {
  if (affine) {
    out.push_back(&gamma);
    out.push_back(&beta);
  }
}

ReluConvBn::ReluConvBn(std::int64_t c_in, std::int64_t c_out, int kernel,
                       int stride, int padding, bool affine, std::mt19937_64& rng)
    : conv(c_in, c_out, kernel, Conv2dOptions{stride, padding, 1, 1}, false, rng),
      bn(c_out, affine) {}

Var ReluConvBn::forward(Var x, bool training) {
  return bn.forward(conv.forward(relu(x)), training);
}

void ReluConvBn::collect(std::vector<Parameter*>& out) {
  conv.collect(out);
  bn.collect(out);
}

FactorizedReduceUnit::FactorizedReduceUnit(std::int64_t c_in, std::int64_t c_out,
                                           bool affine, std::mt19937_64& rng)
    : conv_a(c_in, c_out / 2, 1, Conv2dOptions{2, 0, 1, 1}, false, rng),
      conv_b(c_in, c_out / 2, 1, Conv2dOptions{2, 0, 1, 1}, false, rng),
      bn(c_out, affine) {
  if (c_out % 2 != 0) {
    throw ShapeError("factorized reduce needs an even output channel count, got " +
                     std::to_string(c_out));
  }
}

Var FactorizedReduceUnit::forward(Var x, bool training) {
  const Shape s = x.shape();
  if (s[2] % 2 != 0 || s[3] % 2 != 0) {
    throw ShapeError("factorized reduce needs even spatial extents, got " + shape_str(s));
  }
  Var r = relu(x);
  Var shifted = crop2d(r, 1, 1, s[2] - 1, s[3] - 1);
  const std::array<Var, 2> halves{conv_a.forward(r), conv_b.forward(shifted)};
  return bn.forward(concat_channels(halves), training);
}

void FactorizedReduceUnit::collect(std::vector<Parameter*>& out) {
  conv_a.collect(out);
  conv_b.collect(out);
  bn.collect(out);
}

// -- operators ----------------------------------------------------------------

std::vector<Parameter*> Operator::parameters() {
  std::vector<Parameter*> out;
  collect_parameters(out);
  return out;
}

std::int64_t Operator::allocated_parameters() {
  std::int64_t n = 0;
  for (Parameter* p : parameters()) n += static_cast<std::int64_t>(p->numel());
  return n;
}

void Operator::check_input(Var x) const {
  const Shape& s = x.shape();
  if (s.size() != 4 || s[1] != c_in_) {
    throw ShapeError(candidate_name(spec_) + ": expected " + std::to_string(c_in_) +
                     " input channels, got shape " + shape_str(s));
  }
}

namespace {

class SepConv final : public Operator {
 public:
  SepConv(OperatorKind kind, std::int64_t c_in, std::int64_t c_out, int stride,
          bool affine, std::mt19937_64& rng)
      : Operator(kind, c_in, c_out, stride) {
    const int k = operator_kernel(kind);
    const int pad = k / 2;
    dw1_ = ConvUnit(c_in, c_in, k, Conv2dOptions{stride, pad, 1, static_cast<int>(c_in)}, false, rng);
    pw1_ = ConvUnit(c_in, c_in, 1, Conv2dOptions{}, false, rng);
    bn1_ = BatchNormUnit(c_in, affine);
    dw2_ = ConvUnit(c_in, c_in, k, Conv2dOptions{1, pad, 1, static_cast<int>(c_in)}, false, rng);
    pw2_ = ConvUnit(c_in, c_out, 1, Conv2dOptions{}, false, rng);
    bn2_ = BatchNormUnit(c_out, affine);
  }
  Var forward(Var x, bool training) override {
    check_input(x);
    Var y = bn1_.forward(pw1_.forward(dw1_.forward(relu(x))), training);
    return bn2_.forward(pw2_.forward(dw2_.forward(relu(y))), training);
  }
  void collect_parameters(std::vector<Parameter*>& out) override {
    dw1_.collect(out);
    pw1_.collect(out);
    bn1_.collect(out);
    dw2_.collect(out);
    pw2_.collect(out);
    bn2_.collect(out);
  }
  std::unique_ptr<Operator> clone() const override { return std::make_unique<SepConv>(*this); }

 private:
  ConvUnit dw1_, pw1_, dw2_, pw2_;
  BatchNormUnit bn1_, bn2_;
};

class DilConv final : public Operator {
 public:
  DilConv(OperatorKind kind, std::int64_t c_in, std::int64_t c_out, int stride,
          bool affine, std::mt19937_64& rng)
      : Operator(kind, c_in, c_out, stride) {
    const int k = operator_kernel(kind);
    dw_ = ConvUnit(c_in, c_in, k, Conv2dOptions{stride, k - 1, 2, static_cast<int>(c_in)}, false, rng);
    pw_ = ConvUnit(c_in, c_out, 1, Conv2dOptions{}, false, rng);
    bn_ = BatchNormUnit(c_out, affine);
  }
  Var forward(Var x, bool training) override {
    check_input(x);
    return bn_.forward(pw_.forward(dw_.forward(relu(x))), training);
  }
  void collect_parameters(std::vector<Parameter*>& out) override {
    dw_.collect(out);
    pw_.collect(out);
    bn_.collect(out);
  }
  std::unique_ptr<Operator> clone() const override { return std::make_unique<DilConv>(*this); }

 private:
  ConvUnit dw_, pw_;
  BatchNormUnit bn_;
};

class Pool final : public Operator {
 public:
  Pool(OperatorKind kind, std::int64_t c, int stride) : Operator(kind, c, c, stride) {}
  Var forward(Var x, bool) override {
    check_input(x);
    const PoolOptions opt{3, stride(), 1};
    return std::get<OperatorKind>(spec()) == OperatorKind::MaxPool3x3 ? max_pool2d(x, opt)
                                                                     : avg_pool2d(x, opt);
  }
  void collect_parameters(std::vector<Parameter*>&) override {}
  std::unique_ptr<Operator> clone() const override { return std::make_unique<Pool>(*this); }
};

class Identity final : public Operator {
 public:
  explicit Identity(std::int64_t c) : Operator(OperatorKind::SkipConnect, c, c, 1) {}
  Var forward(Var x, bool) override {
    check_input(x);
    return x;
  }
  void collect_parameters(std::vector<Parameter*>&) override {}
  std::unique_ptr<Operator> clone() const override { return std::make_unique<Identity>(*this); }
};

class FactorizedReduce final : public Operator {
 public:
  FactorizedReduce(std::int64_t c_in, std::int64_t c_out, bool affine, std::mt19937_64& rng)
      : Operator(OperatorKind::SkipConnect, c_in, c_out, 2), unit_(c_in, c_out, affine, rng) {}
  Var forward(Var x, bool training) override {
    check_input(x);
    return unit_.forward(x, training);
  }
  void collect_parameters(std::vector<Parameter*>& out) override { unit_.collect(out); }
  std::unique_ptr<Operator> clone() const override {
    return std::make_unique<FactorizedReduce>(*this);
  }

 private:
  FactorizedReduceUnit unit_;
};

class ZeroOp final : public Operator {
 public:
  ZeroOp(std::int64_t c_in, std::int64_t c_out, int stride)
      : Operator(OperatorKind::Zero, c_in, c_out, stride) {}
  Var forward(Var x, bool) override {
    check_input(x);
    const Shape s = x.shape();
    const std::int64_t st = stride();
    return zeros(*x.tape, {s[0], c_out(), (s[2] + st - 1) / st, (s[3] + st - 1) / st});
  }
  void collect_parameters(std::vector<Parameter*>&) override {}
  std::unique_ptr<Operator> clone() const override { return std::make_unique<ZeroOp>(*this); }
};

class VanillaConv final : public Operator {
 public:
  VanillaConv(VanillaConvSpec spec, std::int64_t c_in, std::int64_t c_out, int stride,
              std::mt19937_64& rng)
      : Operator(spec, c_in, c_out, stride),
        conv_(c_in, c_out, spec.kernel, Conv2dOptions{stride, spec.kernel / 2, 1, 1}, true, rng) {}
  Var forward(Var x, bool) override {
    check_input(x);
    return conv_.forward(x);
  }
  void collect_parameters(std::vector<Parameter*>& out) override { conv_.collect(out); }
  std::unique_ptr<Operator> clone() const override { return std::make_unique<VanillaConv>(*this); }

 private:
  ConvUnit conv_;
};

}  // namespace

std::unique_ptr<Operator> make_operator(const CandidateOp& op, std::int64_t c_in,
                                        std::int64_t c_out, int stride, bool affine,
                                        std::mt19937_64& rng) {
  if (c_in < 1 || c_out < 1) throw ShapeError("operator channels must be positive");
  if (stride != 1 && stride != 2) throw ShapeError("operator stride must be 1 or 2");
  if (const auto* v = std::get_if<VanillaConvSpec>(&op)) {
    if (v->kernel < 1 || v->kernel % 2 == 0) {
      throw ShapeError("vanilla convolution kernel must be odd and positive");
    }
    return std::make_unique<VanillaConv>(*v, c_in, c_out, stride, rng);
  }
  const OperatorKind kind = std::get<OperatorKind>(op);
  auto require_same = [&] {
    if (c_in != c_out) {
      throw ShapeError(std::string(operator_name(kind)) + " cannot map " +
                       std::to_string(c_in) + " channels to " + std::to_string(c_out));
    }
  };
  switch (kind) {
    case OperatorKind::SepConv3x3:
    case OperatorKind::SepConv5x5:
      return std::make_unique<SepConv>(kind, c_in, c_out, stride, affine, rng);
    case OperatorKind::DilConv3x3:
    case OperatorKind::DilConv5x5:
      return std::make_unique<DilConv>(kind, c_in, c_out, stride, affine, rng);
    case OperatorKind::MaxPool3x3:
    case OperatorKind::AvgPool3x3:
      require_same();
      return std::make_unique<Pool>(kind, c_in, stride);
    case OperatorKind::SkipConnect:
      if (stride == 1) {
        require_same();
        return std::make_unique<Identity>(c_in);
      }
      return std::make_unique<FactorizedReduce>(c_in, c_out, affine, rng);
    case OperatorKind::Zero:
      return std::make_unique<ZeroOp>(c_in, c_out, stride);
  }
  throw ShapeError("unknown operator kind");
}

Var apply_operator(Operator& op, Var x, bool training) { return op.forward(x, training); }

}  // namespace ftso
