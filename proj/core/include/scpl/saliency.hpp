#pragma once

#include <span>
#include <vector>

#include "scpl/env.hpp"
#include "scpl/image.hpp"

namespace scpl {

/// Anything that can differentiate its Q estimate with respect to the observation pixels.
class SaliencySource {
 public:
  virtual ~SaliencySource() = default;
  /// dQ(obs, action)/d obs, laid out like `obs.pixels`.
  virtual std::vector<float> input_gradient(const Observation& obs, std::span<const float> action,
                                            SaliencyMode mode) = 0;
};

/// |grad| reduced by elementwise max over channels and the stacked frames.
GradMap aggregate_gradient(std::span<const float> grad, std::size_t stacked_channels,
                           std::size_t height, std::size_t width, SaliencyMode mode);

GradMap input_gradient_map(SaliencySource& critic, const Observation& obs,
                           std::span<const float> action, SaliencyMode mode);

/// k = ceil((1 - rho) * n), with products that land within 1e-9 of an integer snapped to it.
std::size_t quantile_count(double rho, std::size_t n);

/// Top-k pixels by (value descending, flat index ascending) set to 1.
BitMask rho_quantile_binarize(const GradMap& map, double rho);

/// s (.) mask broadcast over channels and frames.
Observation apply_mask(const Observation& obs, const BitMask& mask);
/// In-place variant over a raw [frames*channels, H, W] buffer.
void apply_mask_inplace(std::span<float> pixels, std::size_t planes, const BitMask& mask);

struct AttentionMetrics {
  double acc = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double auc = 0.0;
};

class DegenerateGroundTruth : public Error {
 public:
  using Error::Error;
};

/// Mann-Whitney AUC with midranks for ties. Throws when either class is empty.
double midrank_auc(std::span<const double> scores, std::span<const std::uint8_t> labels);

/// ACC and F1 of `mask` against `gt`, AUC of the continuous `scores` against `gt`.
AttentionMetrics attention_metrics(const BitMask& mask, const GradMap& scores, const BitMask& gt);

}  // namespace scpl
