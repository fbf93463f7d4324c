#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "ftso/autograd.hpp"

namespace ftso {

// The eight candidate operators of the DARTS cell space.
enum class OperatorKind : std::uint8_t {
  SepConv3x3,
  SepConv5x5,
  DilConv3x3,
  DilConv5x5,
  MaxPool3x3,
  AvgPool3x3,
  SkipConnect,
  Zero,
};

inline constexpr std::array<OperatorKind, 8> kAllOperators = {
    OperatorKind::SepConv3x3, OperatorKind::SepConv5x5,
    OperatorKind::DilConv3x3, OperatorKind::DilConv5x5,
    OperatorKind::MaxPool3x3, OperatorKind::AvgPool3x3,
    OperatorKind::SkipConnect, OperatorKind::Zero,
};

// Canonical names used in genotype files: sep_conv_3x3, ..., skip_connect, none.
std::string_view operator_name(OperatorKind kind);
// Throws DataError for unknown names.
OperatorKind parse_operator(std::string_view name);
std::vector<OperatorKind> parse_operator_list(std::string_view comma_separated);
std::string join_operator_names(const std::vector<OperatorKind>& ops);

int operator_kernel(OperatorKind kind);
bool is_parameter_free(OperatorKind kind);

// Plain k x k convolution with bias. Not a member of the candidate set; it
// exists so closed-form cost formulas that assume uniform convolutions can be
// checked against a constructed super-net.
struct VanillaConvSpec {
  int kernel = 3;
  friend bool operator==(const VanillaConvSpec&, const VanillaConvSpec&) = default;
};

using CandidateOp = std::variant<OperatorKind, VanillaConvSpec>;

std::string candidate_name(const CandidateOp& op);

// Trainable scalars held by an operator instance. Separable and dilated
// convolutions follow the DARTS stacks; BN affine terms are included only when
// affine is set. Stride-2 skip is the factorized reduce.
std::int64_t operator_param_count(const CandidateOp& op, std::int64_t c_in,
                                  std::int64_t c_out, int stride = 1,
                                  bool affine = false);

// Forward FLOPs for one image under the tape's counting convention.
std::int64_t operator_flop_count(const CandidateOp& op, std::int64_t c_in,
                                 std::int64_t h_out, std::int64_t w_out,
                                 std::int64_t c_out, int stride = 1);

// Convolution plus batch normalization parameters, used as building blocks.
struct ConvUnit {
  Parameter weight;
  Parameter bias;  // empty when has_bias is false
  bool has_bias = false;
  Conv2dOptions opt;

  ConvUnit() = default;
  ConvUnit(std::int64_t c_in, std::int64_t c_out, int kernel, Conv2dOptions opt,
           bool bias, std::mt19937_64& rng);
  Var forward(Var x);
  void collect(std::vector<Parameter*>& out);
};

struct BatchNormUnit {
  std::int64_t channels = 0;
  bool affine = false;
  Parameter gamma;
  Parameter beta;
  Tensor running_mean;
  Tensor running_var;

  BatchNormUnit() = default;
  BatchNormUnit(std::int64_t channels, bool affine);
  // training: batch statistics (running statistics are updated);
  // otherwise the running statistics are used.
  Var forward(Var x, bool training);
  void collect(std::vector<Parameter*>& out);
};

class Operator {
 public:
  Operator(CandidateOp spec, std::int64_t c_in, std::int64_t c_out, int stride)
      : spec_(spec), c_in_(c_in), c_out_(c_out), stride_(stride) {}
  virtual ~Operator() = default;

  virtual Var forward(Var x, bool training) = 0;
  virtual void collect_parameters(std::vector<Parameter*>& out) = 0;
  virtual std::unique_ptr<Operator> clone() const = 0;

  std::vector<Parameter*> parameters();
  std::int64_t allocated_parameters();

  const CandidateOp& spec() const { return spec_; }
  std::int64_t c_in() const { return c_in_; }
  std::int64_t c_out() const { return c_out_; }
  int stride() const { return stride_; }

 protected:
  void check_input(Var x) const;

 private:
  CandidateOp spec_;
  std::int64_t c_in_;
  std::int64_t c_out_;
  int stride_;
};

// Throws ShapeError when the operator cannot map c_in to c_out at the stride.
std::unique_ptr<Operator> make_operator(const CandidateOp& op, std::int64_t c_in,
                                        std::int64_t c_out, int stride,
                                        bool affine, std::mt19937_64& rng);

// Convenience: build and apply.
Var apply_operator(Operator& op, Var x, bool training = true);

// ReLU -> 1x1 conv -> BN, the DARTS cell preprocessing unit.
struct ReluConvBn {
  ConvUnit conv;
  BatchNormUnit bn;

  ReluConvBn() = default;
  ReluConvBn(std::int64_t c_in, std::int64_t c_out, int kernel, int stride,
             int padding, bool affine, std::mt19937_64& rng);
  Var forward(Var x, bool training);
  void collect(std::vector<Parameter*>& out);
};

// Two offset 1x1 stride-2 convolutions concatenated; halves resolution.
struct FactorizedReduceUnit {
  ConvUnit conv_a;
  ConvUnit conv_b;
  BatchNormUnit bn;

  FactorizedReduceUnit() = default;
  FactorizedReduceUnit(std::int64_t c_in, std::int64_t c_out, bool affine,
                       std::mt19937_64& rng);
  Var forward(Var x, bool training);
  void collect(std::vector<Parameter*>& out);
};

}  // namespace ftso
