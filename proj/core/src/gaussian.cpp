#include "scpl/gaussian.hpp"

#include <algorithm>
#include <cmath>

namespace scpl {

const char* op_name(Op op) {
  switch (op) {
    case Op::Input: return "input";
    case Op::Param: return "param";
    case Op::Const: return "const";
    case Op::MatMul: return "matmul";
    case Op::AddBias: return "add_bias";
    case Op::Conv2d: return "conv2d";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Scale: return "scale";
    case Op::AddScalar: return "add_scalar";
    case Op::Relu: return "relu";
    case Op::Tanh: return "tanh";
    case Op::Exp: return "exp";
    case Op::Log: return "log";
    case Op::Square: return "square";
    case Op::Sum: return "sum";
    case Op::Mean: return "mean";
    case Op::SumRows: return "sum_rows";
    case Op::Minimum: return "minimum";
    case Op::Concat: return "concat";
    case Op::Slice: return "slice";
    case Op::Reshape: return "reshape";
    case Op::StopGrad: return "stop_gradient";
  }
  return "?";
}

DiagGaussian::DiagGaussian(std::vector<double> mean, std::vector<double> log_std,
                           LogStdRange range)
    : mean_(std::move(mean)), log_std_(std::move(log_std)) {
  if (mean_.size() != log_std_.size())
    throw ShapeError("DiagGaussian: mean and log_std dimensions differ");
  for (auto& l : log_std_) l = std::clamp(l, range.min, range.max);
}

double DiagGaussian::log_density(std::span<const double> x) const {
  if (x.size() != dim()) throw ShapeError("log_density dimension mismatch");
  double lp = 0.0;
  for (std::size_t i = 0; i < dim(); ++i) {
    const double z = (x[i] - mean_[i]) * std::exp(-log_std_[i]);
    lp += -0.5 * z * z - log_std_[i] - 0.5 * std::log(2.0 * std::numbers::pi);
  }
  return lp;
}

double diag_gaussian_kl(const DiagGaussian& p, const DiagGaussian& q) {
  if (p.dim() != q.dim())
    throw ShapeError("diag_gaussian_kl: dimension mismatch " + std::to_string(p.dim()) + " vs " +
                     std::to_string(q.dim()));
  double kl = 0.0;
  for (std::size_t i = 0; i < p.dim(); ++i) {
    const double lp = p.log_std()[i], lq = q.log_std()[i];
    const double d = p.mean()[i] - q.mean()[i];
    kl += (lq - lp) + (std::exp(2.0 * lp) + d * d) / (2.0 * std::exp(2.0 * lq)) - 0.5;
  }
  return std::max(kl, 0.0);
}

SquashedSample squashed_sample(const DiagGaussian& policy, std::span<const double> noise) {
  if (noise.size() != policy.dim()) throw ShapeError("squashed_sample: noise dimension mismatch");
  SquashedSample out;
  out.action.resize(policy.dim());
  double lp = 0.0;
  for (std::size_t i = 0; i < policy.dim(); ++i) {
    const double u = policy.mean()[i] + std::exp(policy.log_std()[i]) * noise[i];
    const double a = std::tanh(u);
    out.action[i] = a;
    lp += -0.5 * noise[i] * noise[i] - policy.log_std()[i] -
          0.5 * std::log(2.0 * std::numbers::pi) - std::log(1.0 - a * a + kSquashEps);
  }
  out.log_prob = lp;
  return out;
}

}  // namespace scpl
