#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "scpl/env.hpp"
#include "scpl/tensor.hpp"

namespace scpl {

/// Rounds every pixel to the nearest multiple of 1/255, the grid the replay buffer stores.
void quantize_observation(Observation& obs);

struct TransitionBatch {
  std::vector<Observation> obs;
  Tensor<float> action;        // [B, A]
  std::vector<float> reward;   // B
  std::vector<Observation> next_obs;
  std::vector<float> done;     // B, 1 on true termination
  std::size_t size() const { return obs.size(); }
};

/// Ring buffer of transitions with 8-bit pixel storage.
///
/// Pixels are kept as round(255 v); inputs already on that grid (see
/// quantize_observation) come back bit-identical.
class ReplayBuffer {
 public:
  ReplayBuffer(std::size_t capacity, std::size_t channels, std::size_t frame_size,
               std::size_t action_dim);

  void add(const Observation& obs, std::span<const float> action, double reward, bool done,
           const Observation& next_obs);

  std::size_t size() const { return size_; }
  std::size_t capacity() const { return capacity_; }
  std::size_t cursor() const { return cursor_; }
  std::size_t action_dim() const { return action_dim_; }

  /// Uniform with replacement over stored items; draws `batch` indices from `rng`.
  TransitionBatch sample(std::size_t batch, Rng& rng) const;
  /// Slots are storage positions in [0, size()).
  TransitionBatch gather(std::span<const std::size_t> slots) const;
  /// Storage position of the i-th oldest stored transition.
  std::size_t slot_of_age(std::size_t i) const;

  std::vector<std::uint8_t> serialize() const;
  void deserialize(std::span<const std::uint8_t> bytes);

 private:
  Observation decode(const std::vector<std::uint8_t>& store, std::size_t slot) const;
  void encode(std::vector<std::uint8_t>& store, std::size_t slot, const Observation& obs);

  std::size_t capacity_;
  std::size_t channels_;
  std::size_t frame_size_;
  std::size_t action_dim_;
  std::size_t obs_len_;
  std::size_t size_ = 0;
  std::size_t cursor_ = 0;
  std::vector<std::uint8_t> obs_;
  std::vector<std::uint8_t> next_obs_;
  std::vector<float> action_;
  std::vector<float> reward_;
  std::vector<std::uint8_t> done_;
};

}  // namespace scpl
