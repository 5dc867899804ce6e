#pragma once

#include <cmath>
#include <string>

#include "scpl/graph.hpp"
#include "scpl/rng.hpp"

namespace scpl {

/// Convolutional encoder geometry. Layer 0 uses `first_stride`, later layers stride 1.
struct EncoderSpec {
  std::size_t in_channels = 9;
  std::size_t frame_size = 32;
  std::size_t layers = 4;
  std::size_t filters = 32;
  std::size_t kernel = 3;
  std::size_t first_stride = 2;
  std::size_t embed_dim = 100;
  /// Layer normalization between the dense projection and the tanh.
  bool layer_norm = true;

  /// Spatial side length of the last conv feature map.
  std::size_t output_side() const {
    std::size_t side = frame_size;
    for (std::size_t l = 0; l < layers; ++l) {
      const std::size_t s = l == 0 ? first_stride : 1;
      if (side < kernel) throw ShapeError("encoder too deep for frame size " + std::to_string(frame_size));
      side = (side - kernel) / s + 1;
    }
    return side;
  }
  std::size_t flat_dim() const {
    const std::size_t side = output_side();
    return (layers == 0 ? in_channels : filters) * side * side;
  }
};

/// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases the same; drawn in 64-bit then cast
/// so that float and double stores initialised from the same stream agree.
template <typename T>
void init_dense(ParamStore<T>& store, const std::string& prefix, std::size_t in, std::size_t out,
                Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  Tensor<T> w({in, out});
  for (auto& v : w.data) v = static_cast<T>(rng.uniform(-bound, bound));
  Tensor<T> b({out});
  for (auto& v : b.data) v = static_cast<T>(rng.uniform(-bound, bound));
  store.add(prefix + ".w", std::move(w));
  store.add(prefix + ".b", std::move(b));
}

template <typename T>
void init_conv(ParamStore<T>& store, const std::string& prefix, std::size_t in_ch,
               std::size_t out_ch, std::size_t k, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_ch * k * k));
  Tensor<T> w({out_ch, in_ch, k, k});
  for (auto& v : w.data) v = static_cast<T>(rng.uniform(-bound, bound));
  Tensor<T> b({out_ch});
  for (auto& v : b.data) v = static_cast<T>(rng.uniform(-bound, bound));
  store.add(prefix + ".w", std::move(w));
  store.add(prefix + ".b", std::move(b));
}

template <typename T>
void init_encoder(ParamStore<T>& store, const std::string& prefix, const EncoderSpec& spec,
                  Rng& rng) {
  std::size_t ch = spec.in_channels;
  for (std::size_t l = 0; l < spec.layers; ++l) {
    init_conv(store, prefix + ".conv" + std::to_string(l), ch, spec.filters, spec.kernel, rng);
    ch = spec.filters;
  }
  init_dense(store, prefix + ".fc", spec.flat_dim(), spec.embed_dim, rng);
  if (spec.layer_norm) {
    store.add(prefix + ".ln.g", Tensor<T>({1, spec.embed_dim}, std::vector<T>(spec.embed_dim, T(1))));
    store.add(prefix + ".ln.b", Tensor<T>({spec.embed_dim}));
  }
}

/// Fully connected stack: `layers` dense layers, ReLU between them.
template <typename T>
void init_mlp(ParamStore<T>& store, const std::string& prefix, std::size_t in, std::size_t hidden,
              std::size_t out, std::size_t layers, Rng& rng) {
  std::size_t d = in;
  for (std::size_t l = 0; l < layers; ++l) {
    const std::size_t o = l + 1 == layers ? out : hidden;
    init_dense(store, prefix + ".l" + std::to_string(l), d, o, rng);
    d = o;
  }
}

template <typename T>
NodeId dense(Graph<T>& g, const std::string& prefix, NodeId x) {
  return g.add_bias(g.matmul(x, g.param(prefix + ".w")), g.param(prefix + ".b"));
}

/// Per-row normalization of x [N,E] with gain g [1,E] and bias b [E], built from primitive ops.
/// Row statistics are broadcast back with a matmul against a ones row.
template <typename T>
NodeId layer_norm(Graph<T>& g, NodeId x, NodeId gain, NodeId bias, T eps = T(1e-5)) {
  const std::size_t n = g.shape(x)[0], e = g.shape(x)[1];
  NodeId ones_row = g.constant(Tensor<T>({1, e}, std::vector<T>(e, T(1))), "ones_row");
  NodeId ones_col = g.constant(Tensor<T>({n, 1}, std::vector<T>(n, T(1))), "ones_col");
  const T inv_e = T(1) / static_cast<T>(e);
  NodeId mu = g.scale(g.sum_rows(x), inv_e);
  NodeId xc = g.sub(x, g.matmul(mu, ones_row));
  NodeId var = g.scale(g.sum_rows(g.square(xc)), inv_e);
  NodeId inv_std = g.exp(g.scale(g.log(g.add_scalar(var, eps)), T(-0.5)));
  NodeId y = g.mul(xc, g.matmul(inv_std, ones_row));
  return g.add_bias(g.mul(y, g.matmul(ones_col, gain)), bias);
}

/// Conv stack -> flatten -> dense -> (layer norm) -> tanh.
template <typename T>
NodeId encoder(Graph<T>& g, const std::string& prefix, const EncoderSpec& spec, NodeId x,
               bool guided = false) {
  NodeId h = x;
  for (std::size_t l = 0; l < spec.layers; ++l) {
    const std::string p = prefix + ".conv" + std::to_string(l);
    h = g.relu(g.conv2d(h, g.param(p + ".w"), g.param(p + ".b"), l == 0 ? spec.first_stride : 1),
               guided);
  }
  NodeId z = dense(g, prefix + ".fc", g.flatten(h));
  if (spec.layer_norm) z = layer_norm(g, z, g.param(prefix + ".ln.g"), g.param(prefix + ".ln.b"));
  return g.tanh(z);
}

template <typename T>
NodeId mlp(Graph<T>& g, const std::string& prefix, std::size_t layers, NodeId x,
           bool guided = false) {
  NodeId h = x;
  for (std::size_t l = 0; l < layers; ++l) {
    h = dense(g, prefix + ".l" + std::to_string(l), h);
    if (l + 1 < layers) h = g.relu(h, guided);
  }
  return h;
}

}  // namespace scpl
