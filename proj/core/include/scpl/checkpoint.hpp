#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "scpl/tensor.hpp"

namespace scpl {

/// Binary layout (all integers little-endian):
///
///   "SCPL" | u32 version | u64 n_params  | tensor * n_params
///                        | u64 n_optim   | tensor * n_optim
///                        | u64 n_state   | blob * n_state
///
///   tensor = u32 name_len | name | u32 rank | u64 dims[rank] | f32 data[prod(dims)]
///   blob   = u32 name_len | name | u32 rank (= 1) | u64 byte_len | u8 data[byte_len]
///
/// Entries are written in the order they are stored, so encode(decode(b)) == b.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor<float> value;
  bool operator==(const NamedTensor&) const = default;
};

struct NamedBlob {
  std::string name;
  std::vector<std::uint8_t> bytes;
  bool operator==(const NamedBlob&) const = default;
};

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::vector<NamedTensor> params;
  std::vector<NamedTensor> optimizer;
  std::vector<NamedBlob> state;

  const NamedTensor& param(const std::string& name) const;
  const NamedTensor& optimizer_tensor(const std::string& name) const;
  const NamedBlob& blob(const std::string& name) const;
  bool has_blob(const std::string& name) const;
  std::string blob_text(const std::string& name) const;
  void add_blob(const std::string& name, std::span<const std::uint8_t> bytes);
  void add_text(const std::string& name, const std::string& text);

  bool operator==(const Checkpoint&) const = default;
};

class CheckpointError : public Error {
 public:
  CheckpointError(const std::string& what, std::size_t offset)
      : Error(what + " at byte offset " + std::to_string(offset)), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
/// Throws CheckpointError on bad magic, unsupported version, truncation or trailing bytes.
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace scpl
