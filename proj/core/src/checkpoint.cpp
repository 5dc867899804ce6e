#include "scpl/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "scpl/image.hpp"

namespace scpl {

namespace {

constexpr char kMagic[4] = {'S', 'C', 'P', 'L'};
constexpr std::uint32_t kMaxName = 1u << 16;
constexpr std::uint32_t kMaxRank = 8;

template <typename U>
U to_le(U v) {
  if constexpr (std::endian::native == std::endian::big) {
    U out;
    auto* src = reinterpret_cast<const unsigned char*>(&v);
    auto* dst = reinterpret_cast<unsigned char*>(&out);
    for (std::size_t i = 0; i < sizeof(U); ++i) dst[i] = src[sizeof(U) - 1 - i];
    return out;
  } else {
    return v;
  }
}

class Writer {
 public:
  explicit Writer(std::vector<std::uint8_t>& out) : out_(out) {}

  template <typename U>
  void put(U v) {
    v = to_le(v);
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    out_.insert(out_.end(), p, p + sizeof(U));
  }
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void name(const std::string& s) {
    put(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }

 private:
  std::vector<std::uint8_t>& out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  template <typename U>
  U get(const char* what) {
    need(sizeof(U), what);
    U v;
    std::memcpy(&v, in_.data() + pos_, sizeof(U));
    pos_ += sizeof(U);
    return to_le(v);
  }
  void read(void* dst, std::size_t n, const char* what) {
    need(n, what);
    std::memcpy(dst, in_.data() + pos_, n);
    pos_ += n;
  }
  std::string name() {
    const std::size_t at = pos_;
    const auto len = get<std::uint32_t>("name length");
    if (len > kMaxName) throw CheckpointError("implausible name length " + std::to_string(len), at);
    std::string s(len, '\0');
    read(s.data(), len, "name");
    return s;
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  void need(std::size_t n, const char* what) {
    if (in_.size() - pos_ < n)
      throw CheckpointError(std::string("truncated checkpoint while reading ") + what, pos_);
  }
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

void write_tensors(Writer& w, const std::vector<NamedTensor>& ts) {
  w.put(static_cast<std::uint64_t>(ts.size()));
  for (const auto& t : ts) {
    w.name(t.name);
    w.put(static_cast<std::uint32_t>(t.value.rank()));
    for (auto d : t.value.shape) w.put(static_cast<std::uint64_t>(d));
    for (float f : t.value.data) w.put(std::bit_cast<std::uint32_t>(f));
  }
}

std::vector<NamedTensor> read_tensors(Reader& r) {
  const auto n = r.get<std::uint64_t>("tensor count");
  std::vector<NamedTensor> out;
  for (std::uint64_t i = 0; i < n; ++i) {
    NamedTensor t;
    t.name = r.name();
    const std::size_t rank_at = r.pos();
    const auto rank = r.get<std::uint32_t>("rank");
    if (rank > kMaxRank) throw CheckpointError("implausible tensor rank " + std::to_string(rank), rank_at);
    Shape shape(rank);
    std::size_t count = 1;
    for (auto& d : shape) {
      d = static_cast<std::size_t>(r.get<std::uint64_t>("dimension"));
      count *= d;
    }
    if (count > r.remaining() / 4)
      throw CheckpointError("truncated checkpoint while reading data of '" + t.name + "'", r.pos());
    t.value = Tensor<float>(shape);
    for (auto& f : t.value.data) f = std::bit_cast<float>(r.get<std::uint32_t>("tensor data"));
    out.push_back(std::move(t));
  }
  return out;
}

template <typename V>
auto& find_named(V& items, const std::string& name, const char* kind) {
  for (auto& it : items)
    if (it.name == name) return it;
  throw Error(std::string("checkpoint has no ") + kind + " '" + name + "'");
}

}  // namespace

const NamedTensor& Checkpoint::param(const std::string& name) const {
  return find_named(params, name, "parameter");
}
const NamedTensor& Checkpoint::optimizer_tensor(const std::string& name) const {
  return find_named(optimizer, name, "optimizer tensor");
}
const NamedBlob& Checkpoint::blob(const std::string& name) const {
  return find_named(state, name, "state block");
}
bool Checkpoint::has_blob(const std::string& name) const {
  for (const auto& b : state)
    if (b.name == name) return true;
  return false;
}
std::string Checkpoint::blob_text(const std::string& name) const {
  const auto& b = blob(name).bytes;
  return std::string(b.begin(), b.end());
}
void Checkpoint::add_blob(const std::string& name, std::span<const std::uint8_t> bytes) {
  state.push_back(NamedBlob{name, std::vector<std::uint8_t>(bytes.begin(), bytes.end())});
}
void Checkpoint::add_text(const std::string& name, const std::string& text) {
  state.push_back(NamedBlob{name, std::vector<std::uint8_t>(text.begin(), text.end())});
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  std::vector<std::uint8_t> out;
  Writer w(out);
  w.bytes(kMagic, 4);
  w.put(ckpt.version);
  write_tensors(w, ckpt.params);
  write_tensors(w, ckpt.optimizer);
  w.put(static_cast<std::uint64_t>(ckpt.state.size()));
  for (const auto& b : ckpt.state) {
    w.name(b.name);
    w.put(std::uint32_t{1});
    w.put(static_cast<std::uint64_t>(b.bytes.size()));
    w.bytes(b.bytes.data(), b.bytes.size());
  }
  return out;
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  char magic[4];
  r.read(magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0) throw CheckpointError("bad checkpoint magic", 0);
  Checkpoint ckpt;
  ckpt.version = r.get<std::uint32_t>("version");
  if (ckpt.version != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(ckpt.version) +
                              " (expected " + std::to_string(kCheckpointVersion) + ")",
                          4);
  ckpt.params = read_tensors(r);
  ckpt.optimizer = read_tensors(r);
  const auto n = r.get<std::uint64_t>("state count");
  for (std::uint64_t i = 0; i < n; ++i) {
    NamedBlob b;
    b.name = r.name();
    const std::size_t rank_at = r.pos();
    if (r.get<std::uint32_t>("rank") != 1) throw CheckpointError("state block must have rank 1", rank_at);
    const auto len = r.get<std::uint64_t>("byte length");
    if (len > r.remaining())
      throw CheckpointError("truncated checkpoint while reading state '" + b.name + "'", r.pos());
    b.bytes.resize(static_cast<std::size_t>(len));
    r.read(b.bytes.data(), b.bytes.size(), "state data");
    ckpt.state.push_back(std::move(b));
  }
  if (r.remaining() != 0) throw CheckpointError("trailing bytes after checkpoint", r.pos());
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(ckpt);
  // Write next to the target and rename so a crash never leaves a half-written checkpoint.
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open '" + tmp.string() + "' for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("write failed for '" + tmp.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at '" + path.string() + "': " + ec.message());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace scpl
