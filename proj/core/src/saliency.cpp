#include "scpl/saliency.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace scpl {

GradMap aggregate_gradient(std::span<const float> grad, std::size_t planes, std::size_t height,
                           std::size_t width, SaliencyMode mode) {
  const std::size_t hw = height * width;
  if (grad.size() != planes * hw) throw ShapeError("gradient buffer does not match geometry");
  GradMap map;
  map.height = height;
  map.width = width;
  map.source_mode = mode;
  map.values.assign(hw, 0.0);
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t i = 0; i < hw; ++i) {
      const float g = grad[p * hw + i];
      if (!std::isfinite(g))
        throw NumericError("non-finite input gradient at plane " + std::to_string(p) + ", pixel " +
                           std::to_string(i));
      map.values[i] = std::max(map.values[i], static_cast<double>(std::abs(g)));
    }
  return map;
}

GradMap input_gradient_map(SaliencySource& critic, const Observation& obs,
                           std::span<const float> action, SaliencyMode mode) {
  auto grad = critic.input_gradient(obs, action, mode);
  return aggregate_gradient(grad, obs.stacked_channels(), obs.size, obs.size, mode);
}

std::size_t quantile_count(double rho, std::size_t n) {
  if (!(rho >= 0.0 && rho < 1.0)) throw Error("rho must lie in [0, 1)");
  const double x = (1.0 - rho) * static_cast<double>(n);
  const double nearest = std::round(x);
  const double k = std::abs(x - nearest) < 1e-9 * std::max(1.0, x) ? nearest : std::ceil(x);
  return std::clamp<std::size_t>(static_cast<std::size_t>(k), n == 0 ? 0 : 1, n);
}

BitMask rho_quantile_binarize(const GradMap& map, double rho) {
  const std::size_t n = map.size();
  const std::size_t k = quantile_count(rho, n);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto before = [&](std::size_t a, std::size_t b) {
    if (map.values[a] != map.values[b]) return map.values[a] > map.values[b];
    return a < b;
  };
  std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k == 0 ? 0 : k - 1),
                   order.end(), before);
  BitMask mask(map.height, map.width);
  mask.rho = rho;
  for (std::size_t i = 0; i < k; ++i) mask.bits[order[i]] = 1;
  return mask;
}

void apply_mask_inplace(std::span<float> pixels, std::size_t planes, const BitMask& mask) {
  const std::size_t hw = mask.size();
  if (pixels.size() != planes * hw) throw ShapeError("mask does not match observation geometry");
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t i = 0; i < hw; ++i)
      if (!mask.bits[i]) pixels[p * hw + i] = 0.0f;
}

Observation apply_mask(const Observation& obs, const BitMask& mask) {
  if (mask.height != obs.size || mask.width != obs.size)
    throw ShapeError("mask " + std::to_string(mask.height) + "x" + std::to_string(mask.width) +
                     " does not match observation side " + std::to_string(obs.size));
  Observation out = obs;
  apply_mask_inplace(out.pixels, obs.stacked_channels(), mask);
  return out;
}

double midrank_auc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) throw ShapeError("auc: scores and labels differ in size");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum_pos = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1 .. j
    for (std::size_t t = i; t < j; ++t)
      if (labels[order[t]]) {
        rank_sum_pos += midrank;
        ++n_pos;
      }
    i = j;
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0)
    throw DegenerateGroundTruth("auc undefined: ground truth has a single class");
  const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
  return (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn);
}

AttentionMetrics attention_metrics(const BitMask& mask, const GradMap& scores, const BitMask& gt) {
  if (mask.size() != gt.size() || scores.size() != gt.size() || mask.height != gt.height)
    throw ShapeError("attention_metrics: mask, scores and ground truth differ in shape");
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const bool p = mask.bits[i] != 0, t = gt.bits[i] != 0;
    if (p && t) ++tp;
    else if (p) ++fp;
    else if (t) ++fn;
    else ++tn;
  }
  if (tp + fn == 0) throw DegenerateGroundTruth("ground truth mask is all zero; F1 and AUC undefined");
  AttentionMetrics m;
  m.acc = static_cast<double>(tp + tn) / static_cast<double>(gt.size());
  m.precision = tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  m.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
  m.f1 = m.precision + m.recall > 0 ? 2 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
  m.auc = midrank_auc(scores.values, gt.bits);
  return m;
}

}  // namespace scpl
