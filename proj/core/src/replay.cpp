#include "scpl/replay.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace scpl {

namespace {

std::uint8_t to_byte(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}
float from_byte(std::uint8_t b) { return static_cast<float>(b) / 255.0f; }

template <typename T>
void put(std::vector<std::uint8_t>& out, const T& v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

template <typename T>
T take(std::span<const std::uint8_t> in, std::size_t& off) {
  if (off + sizeof(T) > in.size())
    throw Error("replay blob truncated at offset " + std::to_string(off));
  T v;
  std::memcpy(&v, in.data() + off, sizeof(T));
  off += sizeof(T);
  return v;
}

}  // namespace

void quantize_observation(Observation& obs) {
  for (float& v : obs.pixels) v = from_byte(to_byte(v));
}

ReplayBuffer::ReplayBuffer(std::size_t capacity, std::size_t channels, std::size_t frame_size,
                           std::size_t action_dim)
    : capacity_(capacity),
      channels_(channels),
      frame_size_(frame_size),
      action_dim_(action_dim),
      obs_len_(Observation::kFrames * channels * frame_size * frame_size) {
  if (capacity == 0) throw Error("replay capacity must be positive");
}

void ReplayBuffer::encode(std::vector<std::uint8_t>& store, std::size_t slot, const Observation& obs) {
  if (obs.channels != channels_ || obs.size != frame_size_)
    throw ShapeError("observation geometry does not match replay buffer");
  if (store.size() < (slot + 1) * obs_len_) store.resize((slot + 1) * obs_len_);
  std::uint8_t* dst = store.data() + slot * obs_len_;
  for (std::size_t i = 0; i < obs_len_; ++i) dst[i] = to_byte(obs.pixels[i]);
}

Observation ReplayBuffer::decode(const std::vector<std::uint8_t>& store, std::size_t slot) const {
  Observation o(channels_, frame_size_);
  const std::uint8_t* src = store.data() + slot * obs_len_;
  for (std::size_t i = 0; i < obs_len_; ++i) o.pixels[i] = from_byte(src[i]);
  return o;
}

void ReplayBuffer::add(const Observation& obs, std::span<const float> action, double reward,
                       bool done, const Observation& next_obs) {
  if (action.size() != action_dim_) throw ShapeError("action has wrong dimension");
  if (!std::isfinite(reward)) throw NumericError("non-finite reward");
  const std::size_t slot = cursor_;
  encode(obs_, slot, obs);
  encode(next_obs_, slot, next_obs);
  if (action_.size() < (slot + 1) * action_dim_) {
    action_.resize((slot + 1) * action_dim_);
    reward_.resize(slot + 1);
    done_.resize(slot + 1);
  }
  std::copy(action.begin(), action.end(), action_.begin() + static_cast<std::ptrdiff_t>(slot * action_dim_));
  reward_[slot] = static_cast<float>(reward);
  done_[slot] = done ? 1 : 0;
  cursor_ = (cursor_ + 1) % capacity_;
  size_ = std::min(size_ + 1, capacity_);
}

std::size_t ReplayBuffer::slot_of_age(std::size_t i) const {
  if (i >= size_) throw Error("replay index out of range");
  const std::size_t oldest = size_ < capacity_ ? 0 : cursor_;
  return (oldest + i) % capacity_;
}

TransitionBatch ReplayBuffer::gather(std::span<const std::size_t> slots) const {
  TransitionBatch b;
  const std::size_t n = slots.size();
  b.action = Tensor<float>({n, action_dim_});
  b.reward.resize(n);
  b.done.resize(n);
  b.obs.reserve(n);
  b.next_obs.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t s = slots[i];
    if (s >= size_) throw Error("replay slot out of range");
    b.obs.push_back(decode(obs_, s));
    b.next_obs.push_back(decode(next_obs_, s));
    for (std::size_t j = 0; j < action_dim_; ++j) b.action[i * action_dim_ + j] = action_[s * action_dim_ + j];
    b.reward[i] = reward_[s];
    b.done[i] = done_[s];
  }
  return b;
}

TransitionBatch ReplayBuffer::sample(std::size_t batch, Rng& rng) const {
  if (size_ == 0) throw Error("cannot sample from an empty replay buffer");
  std::vector<std::size_t> slots(batch);
  for (auto& s : slots) s = rng.uniform_int(size_);
  return gather(slots);
}

std::vector<std::uint8_t> ReplayBuffer::serialize() const {
  std::vector<std::uint8_t> out;
  for (std::uint64_t v : {capacity_, channels_, frame_size_, action_dim_, size_, cursor_})
    put(out, v);
  out.insert(out.end(), obs_.begin(), obs_.begin() + static_cast<std::ptrdiff_t>(size_ * obs_len_));
  out.insert(out.end(), next_obs_.begin(), next_obs_.begin() + static_cast<std::ptrdiff_t>(size_ * obs_len_));
  for (std::size_t i = 0; i < size_ * action_dim_; ++i) put(out, action_[i]);
  for (std::size_t i = 0; i < size_; ++i) put(out, reward_[i]);
  out.insert(out.end(), done_.begin(), done_.begin() + static_cast<std::ptrdiff_t>(size_));
  return out;
}

void ReplayBuffer::deserialize(std::span<const std::uint8_t> in) {
  std::size_t off = 0;
  std::uint64_t hdr[6];
  for (auto& h : hdr) h = take<std::uint64_t>(in, off);
  if (hdr[0] != capacity_ || hdr[1] != channels_ || hdr[2] != frame_size_ || hdr[3] != action_dim_)
    throw Error("replay blob was written for a different buffer geometry");
  const std::size_t n = hdr[4];
  if (n > capacity_ || hdr[5] >= capacity_) throw Error("replay blob has inconsistent size");
  const std::size_t need = 2 * n * obs_len_ + n * action_dim_ * 4 + n * 4 + n;
  if (in.size() - off < need) throw Error("replay blob truncated at offset " + std::to_string(in.size()));
  obs_.assign(in.begin() + static_cast<std::ptrdiff_t>(off), in.begin() + static_cast<std::ptrdiff_t>(off + n * obs_len_));
  off += n * obs_len_;
  next_obs_.assign(in.begin() + static_cast<std::ptrdiff_t>(off), in.begin() + static_cast<std::ptrdiff_t>(off + n * obs_len_));
  off += n * obs_len_;
  action_.resize(n * action_dim_);
  for (auto& a : action_) a = take<float>(in, off);
  reward_.resize(n);
  for (auto& r : reward_) r = take<float>(in, off);
  done_.assign(in.begin() + static_cast<std::ptrdiff_t>(off), in.begin() + static_cast<std::ptrdiff_t>(off + n));
  off += n;
  if (off != in.size()) throw Error("replay blob has trailing bytes");
  size_ = n;
  cursor_ = hdr[5];
}

}  // namespace scpl
