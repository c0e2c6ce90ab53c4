#include "scn/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>

namespace scn {
namespace {

class Writer {
 public:
  template <class T>
  void put(T value) {
    static_assert(std::is_integral_v<T> || std::is_same_v<T, double>);
    std::uint64_t bits;
    if constexpr (std::is_same_v<T, double>) {
      bits = std::bit_cast<std::uint64_t>(value);
    } else {
      bits = static_cast<std::uint64_t>(value);
    }
    for (std::size_t i = 0; i < sizeof(T); ++i) bytes.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
  }

  void put_bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    bytes.insert(bytes.end(), b, b + n);
  }

  std::vector<std::uint8_t> bytes;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <class T>
  T get() {
    need(sizeof(T));
    std::uint64_t bits = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += sizeof(T);
    if constexpr (std::is_same_v<T, double>) {
      return std::bit_cast<double>(bits);
    } else {
      return static_cast<T>(bits);
    }
  }

  std::string get_string(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (remaining() < n) throw CheckpointError("checkpoint truncated");
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes a uInt length; feed in chunks.
  std::size_t off = 0;
  while (off < bytes.size()) {
    const auto n = static_cast<uInt>(std::min<std::size_t>(bytes.size() - off, 1u << 30));
    crc = crc32(crc, bytes.data() + off, n);
    off += n;
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(std::span<const CheckpointEntry> entries) {
  if (entries.size() > std::numeric_limits<std::uint32_t>::max()) throw CheckpointError("too many tensors");
  Writer w;
  w.put_bytes(kCheckpointMagic, sizeof(kCheckpointMagic));
  w.put<std::uint16_t>(kCheckpointVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    if (e.name.size() > std::numeric_limits<std::uint16_t>::max()) throw CheckpointError("tensor name too long");
    if (e.tensor.rank() > std::numeric_limits<std::uint8_t>::max()) throw CheckpointError("tensor rank too large");
    w.put<std::uint16_t>(static_cast<std::uint16_t>(e.name.size()));
    w.put_bytes(e.name.data(), e.name.size());
    w.put<std::uint8_t>(static_cast<std::uint8_t>(e.tensor.rank()));
    for (std::size_t d : e.tensor.shape()) {
      if (d > std::numeric_limits<std::uint32_t>::max()) throw CheckpointError("tensor dimension too large");
      w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
    }
    for (double x : e.tensor.data()) w.put<double>(x);
  }
  w.put<std::uint32_t>(crc32_of(w.bytes));
  return std::move(w.bytes);
}

std::vector<CheckpointEntry> decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < sizeof(kCheckpointMagic) ||
      std::memcmp(bytes.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0) {
    throw CheckpointError("not a checkpoint (bad magic)");
  }
  if (bytes.size() < sizeof(kCheckpointMagic) + 2 + 4 + 4) throw CheckpointError("checkpoint truncated");

  Reader header(bytes.subspan(sizeof(kCheckpointMagic)));
  const auto version = header.get<std::uint16_t>();
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }

  const auto body = bytes.first(bytes.size() - 4);
  Reader tail(bytes.last(4));
  if (tail.get<std::uint32_t>() != crc32_of(body)) throw CheckpointError("checkpoint corrupt");

  Reader r(body.subspan(sizeof(kCheckpointMagic) + 2));
  const auto count = r.get<std::uint32_t>();
  std::vector<CheckpointEntry> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    e.name = r.get_string(r.get<std::uint16_t>());
    const auto rank = r.get<std::uint8_t>();
    Shape shape(rank);
    for (auto& d : shape) d = r.get<std::uint32_t>();
    const std::size_t n = numel(shape);
    if (n > r.remaining() / 8) throw CheckpointError("checkpoint truncated");
    std::vector<double> data(n);
    for (auto& x : data) x = r.get<double>();
    e.tensor = Tensor(shape, std::move(data));
    out.push_back(std::move(e));
  }
  if (r.remaining() != 0) throw CheckpointError("checkpoint has trailing bytes");
  return out;
}

void write_checkpoint(const std::filesystem::path& path, std::span<const CheckpointEntry> entries) {
  const auto bytes = encode_checkpoint(entries);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw CheckpointError("cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw CheckpointError("cannot write " + path.string());
}

std::vector<CheckpointEntry> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot read " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

std::vector<CheckpointEntry> checkpoint_entries(const ModelParams& params, const OptimState* state) {
  std::vector<CheckpointEntry> out;
  const auto learn = params.learnables();
  for (const auto& p : learn) out.push_back({p.name, p.tensor->detach()});
  for (const auto& p : params.buffers()) out.push_back({p.name, p.tensor->detach()});
  if (state && state->t > 0) {
    if (state->m.size() != learn.size()) throw CheckpointError("optimizer state does not match the model");
    for (std::size_t i = 0; i < learn.size(); ++i) out.push_back({"optim/m/" + learn[i].name, state->m[i]});
    for (std::size_t i = 0; i < learn.size(); ++i) out.push_back({"optim/v/" + learn[i].name, state->v[i]});
    for (std::size_t i = 0; i < learn.size(); ++i) out.push_back({"optim/vhat/" + learn[i].name, state->v_hat[i]});
    out.push_back({"optim/t", Tensor::scalar(static_cast<double>(state->t))});
  }
  return out;
}

void save_checkpoint(const ModelParams& params, const OptimState* state, const std::filesystem::path& path) {
  write_checkpoint(path, checkpoint_entries(params, state));
}

void restore_checkpoint(std::span<const CheckpointEntry> entries, ModelParams& params, OptimState* state) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& e : entries) by_name[e.name] = &e.tensor;

  auto fetch = [&](const std::string& name, const Shape& expected) -> Tensor {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw CheckpointError("checkpoint is missing tensor " + name);
    if (it->second->shape() != expected) {
      throw CheckpointError("checkpoint shape mismatch for " + name + ": expected " + to_string(expected) + ", got " +
                            to_string(it->second->shape()));
    }
    return *it->second;
  };

  // Validate everything before touching the model.
  auto learn = params.learnables();
  auto bufs = params.buffers();
  std::vector<Tensor> learn_vals, buf_vals;
  for (const auto& p : learn) learn_vals.push_back(fetch(p.name, p.tensor->shape()));
  for (const auto& p : bufs) buf_vals.push_back(fetch(p.name, p.tensor->shape()));

  OptimState loaded;
  const bool has_optim = by_name.count("optim/t") != 0;
  if (state && has_optim) {
    for (std::size_t i = 0; i < learn.size(); ++i) {
      const Shape& s = learn[i].tensor->shape();
      loaded.m.push_back(fetch("optim/m/" + learn[i].name, s));
      loaded.v.push_back(fetch("optim/v/" + learn[i].name, s));
      loaded.v_hat.push_back(fetch("optim/vhat/" + learn[i].name, s));
    }
    loaded.t = static_cast<std::uint64_t>(fetch("optim/t", Shape{1}).item());
  }

  for (std::size_t i = 0; i < learn.size(); ++i) *learn[i].tensor = learn_vals[i];
  for (std::size_t i = 0; i < bufs.size(); ++i) *bufs[i].tensor = buf_vals[i];
  if (state) *state = std::move(loaded);
}

void load_checkpoint(const std::filesystem::path& path, ModelParams& params, OptimState* state) {
  restore_checkpoint(read_checkpoint(path), params, state);
}

}  // namespace scn
