#pragma once

// Binary checkpoint layout (all integers little-endian):
//
//   "DWCK"  u32 version  u32 tensor_count
//   tensor_count × { u16 name_len, name (UTF-8), u8 rank, u32 dims[rank],
//                    f32 payload[product(dims)] }
//   u32 meta_len, meta (UTF-8 JSON: architecture, fingerprint, streams,
//                       iteration, labels, pixel_mean)
//   u32 crc32 over every byte after the version field, up to the CRC.

#include <bit>
#include <limits>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <zlib.h>

#include <nlohmann/json.hpp>

#include "deepwriter/architecture.hpp"
#include "deepwriter/errors.hpp"
#include "deepwriter/network.hpp"
#include "deepwriter/optimizer.hpp"
#include "deepwriter/tensor.hpp"

namespace deepwriter {

static_assert(std::numeric_limits<float>::is_iec559, "checkpoints store IEEE-754 binary32");

struct NamedTensor {
  std::string name;
  Tensor<float> tensor;
  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::uint32_t version = kVersion;
  std::string architecture;  // canonical text of the ArchitectureSpec
  std::uint64_t fingerprint = 0;
  int streams = 1;
  std::vector<NamedTensor> tensors;
  long long iteration = 0;
  std::vector<std::string> labels;
  double pixel_mean = 0.0;

  const NamedTensor* find(const std::string& name) const {
    for (const auto& t : tensors) {
      if (t.name == name) return &t;
    }
    return nullptr;
  }

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

inline std::string weight_name(const std::string& layer) { return layer + ".weight"; }
inline std::string bias_name(const std::string& layer) { return layer + ".bias"; }
inline std::string velocity_name(const std::string& tensor) { return tensor + ".velocity"; }

namespace detail {

class ByteWriter {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u16(std::uint16_t v) { le(v, 2); }
  void u32(std::uint32_t v) { le(v, 4); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void str(const std::string& s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }
  std::vector<std::uint8_t>& bytes() { return bytes_; }

 private:
  void le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  ByteReader(const std::vector<std::uint8_t>& bytes, std::size_t begin, std::size_t end,
             std::string name)
      : bytes_(bytes), pos_(begin), end_(end), name_(std::move(name)) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(le(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(le(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_),
                  bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return end_ - pos_; }

 private:
  void need(std::size_t n) const {
    if (end_ - pos_ < n) throw CorruptFileError("checkpoint '" + name_ + "' is truncated");
  }
  std::uint64_t le(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_, end_;
  std::string name_;
};

inline std::uint32_t crc32_of(const std::uint8_t* data, std::size_t n) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = ::crc32(crc, data, chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& c) {
  detail::ByteWriter w;
  w.str("DWCK");
  w.u32(c.version);
  w.u32(static_cast<std::uint32_t>(c.tensors.size()));
  for (const auto& t : c.tensors) {
    if (t.name.size() > 0xffff) throw DomainError("tensor name too long: " + t.name);
    w.u16(static_cast<std::uint16_t>(t.name.size()));
    w.str(t.name);
    w.u8(static_cast<std::uint8_t>(t.tensor.rank()));
    for (auto d : t.tensor.dims()) w.u32(static_cast<std::uint32_t>(d));
    for (float v : t.tensor.data()) w.f32(v);
  }
  nlohmann::json meta;
  meta["architecture"] = c.architecture;
  meta["fingerprint"] = detail::hex64(c.fingerprint);
  meta["streams"] = c.streams;
  meta["iteration"] = c.iteration;
  meta["labels"] = c.labels;
  meta["pixel_mean"] = c.pixel_mean;
  const std::string text = meta.dump();
  w.u32(static_cast<std::uint32_t>(text.size()));
  w.str(text);
  auto& bytes = w.bytes();
  const std::uint32_t crc = detail::crc32_of(bytes.data() + 8, bytes.size() - 8);
  w.u32(crc);
  return std::move(bytes);
}

/// Decodes and verifies magic, version, CRC and architecture fingerprint.
inline Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes,
                                    const std::string& name = "<memory>") {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "DWCK", 4) != 0) {
    throw CorruptFileError("'" + name + "' is not a checkpoint (bad magic)");
  }
  if (bytes.size() < 16) throw CorruptFileError("checkpoint '" + name + "' is truncated");
  Checkpoint c;
  detail::ByteReader header(bytes, 4, 8, name);
  c.version = header.u32();
  if (c.version != Checkpoint::kVersion) {
    throw IncompatibleError("checkpoint '" + name + "' has format version " +
                            std::to_string(c.version) + ", expected " +
                            std::to_string(Checkpoint::kVersion));
  }
  const std::size_t crc_pos = bytes.size() - 4;
  detail::ByteReader tail(bytes, crc_pos, bytes.size(), name);
  if (tail.u32() != detail::crc32_of(bytes.data() + 8, crc_pos - 8)) {
    throw CorruptFileError("checkpoint '" + name + "' failed its CRC32 check (corrupt or truncated)");
  }

  detail::ByteReader r(bytes, 8, crc_pos, name);
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = r.str(r.u16());
    const std::uint8_t rank = r.u8();
    Shape dims(rank);
    for (auto& d : dims) d = r.u32();
    const std::size_t n = shape_size(dims);
    if (rank == 0 || n == 0 || n > r.remaining() / 4) {
      throw CorruptFileError("checkpoint '" + name + "' has an invalid tensor '" + t.name + "'");
    }
    std::vector<float> data(n);
    for (auto& v : data) v = r.f32();
    t.tensor = Tensor<float>(std::move(dims), std::move(data));
    c.tensors.push_back(std::move(t));
  }
  const std::string text = r.str(r.u32());
  if (r.remaining() != 0) throw CorruptFileError("checkpoint '" + name + "' has trailing bytes");
  try {
    const auto meta = nlohmann::json::parse(text);
    c.architecture = meta.at("architecture").get<std::string>();
    c.fingerprint = std::stoull(meta.at("fingerprint").get<std::string>(), nullptr, 16);
    c.streams = meta.at("streams").get<int>();
    c.iteration = meta.at("iteration").get<long long>();
    c.labels = meta.at("labels").get<std::vector<std::string>>();
    c.pixel_mean = meta.at("pixel_mean").get<double>();
  } catch (const std::exception& e) {
    throw CorruptFileError("checkpoint '" + name + "' has malformed metadata: " + e.what());
  }
  if (fingerprint(parse_architecture(c.architecture)) != c.fingerprint) {
    throw IncompatibleError("checkpoint '" + name + "' architecture fingerprint mismatch");
  }
  return c;
}

inline void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(c);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("error writing checkpoint '" + path.string() + "'");
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes, path.string());
}

// --------------------------------------------------------------------------
// Network <-> checkpoint

template <typename T>
Checkpoint make_checkpoint(const Network<T>& net, std::vector<std::string> labels,
                           long long iteration = 0, const OptimState<T>* state = nullptr) {
  Checkpoint c;
  c.architecture = to_string(net.spec());
  c.fingerprint = fingerprint(net.spec());
  c.streams = net.streams();
  c.iteration = iteration;
  c.labels = std::move(labels);
  c.pixel_mean = static_cast<double>(net.pixel_mean());
  const auto params = net.params();
  const auto& names = net.param_names();
  for (std::size_t i = 0; i < params.size(); ++i) {
    c.tensors.push_back({weight_name(names[i]), params[i].weights.template cast<float>()});
    c.tensors.push_back({bias_name(names[i]), params[i].biases.template cast<float>()});
  }
  if (state) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      c.tensors.push_back({velocity_name(weight_name(names[i])),
                           state->velocities[i].weights.template cast<float>()});
      c.tensors.push_back({velocity_name(bias_name(names[i])),
                           state->velocities[i].biases.template cast<float>()});
    }
  }
  return c;
}

namespace detail {
template <typename T>
bool copy_tensor(const Checkpoint& c, const std::string& name, Tensor<T>& dst,
                 std::vector<std::string>& problems) {
  const NamedTensor* src = c.find(name);
  if (!src) {
    problems.push_back(name + " (missing)");
    return false;
  }
  if (src->tensor.dims() != dst.dims()) {
    problems.push_back(name + " (" + format_dims(src->tensor.dims()) + " vs " +
                       format_dims(dst.dims()) + ")");
    return false;
  }
  dst = src->tensor.template cast<T>();
  return true;
}
}  // namespace detail

/// Rebuilds the network stored in a checkpoint.
template <typename T>
Network<T> network_from_checkpoint(const Checkpoint& c) {
  auto net = Network<T>::zeros(parse_architecture(c.architecture), c.streams);
  std::vector<std::string> problems;
  auto params = net.params();
  const auto& names = net.param_names();
  for (std::size_t i = 0; i < params.size(); ++i) {
    detail::copy_tensor(c, weight_name(names[i]), params[i].weights, problems);
    detail::copy_tensor(c, bias_name(names[i]), params[i].biases, problems);
  }
  if (!problems.empty()) {
    std::string msg = "checkpoint does not match its architecture:";
    for (const auto& p : problems) msg += " " + p;
    throw IncompatibleError(msg);
  }
  net.set_pixel_mean(static_cast<T>(c.pixel_mean));
  return net;
}

/// Optimizer momentum buffers stored alongside the parameters; zeros for
/// any buffer the checkpoint lacks.
template <typename T>
OptimState<T> optim_state_from_checkpoint(const Checkpoint& c, const Network<T>& net) {
  auto state = OptimState<T>::zeros_like(net.params());
  std::vector<std::string> ignored;
  const auto& names = net.param_names();
  for (std::size_t i = 0; i < names.size(); ++i) {
    detail::copy_tensor(c, velocity_name(weight_name(names[i])), state.velocities[i].weights, ignored);
    detail::copy_tensor(c, velocity_name(bias_name(names[i])), state.velocities[i].biases, ignored);
  }
  state.iteration = c.iteration;
  return state;
}

/**
 * Copies stream parameters from a checkpoint into `target` by name. The
 * classifier is copied only when `include_classifier` is set and its dims
 * match; otherwise it is left untouched. Returns true when the classifier
 * was copied. Throws TransferError listing every missing or mismatched
 * stream layer.
 */
template <typename T>
bool transfer_parameters(Network<T>& target, const Checkpoint& source, bool include_classifier) {
  std::vector<std::string> problems;
  auto params = target.params();
  const auto& names = target.param_names();
  const std::size_t ci = target.classifier_index();
  for (std::size_t i = 0; i < ci; ++i) {
    detail::copy_tensor(source, weight_name(names[i]), params[i].weights, problems);
    detail::copy_tensor(source, bias_name(names[i]), params[i].biases, problems);
  }
  if (!problems.empty()) {
    std::string msg = "cannot transfer parameters:";
    for (const auto& p : problems) msg += " " + p;
    throw TransferError(msg);
  }
  if (!include_classifier) return false;
  const auto* w = source.find(weight_name(names[ci]));
  const auto* b = source.find(bias_name(names[ci]));
  if (!w || !b || w->tensor.dims() != params[ci].weights.dims() ||
      b->tensor.dims() != params[ci].biases.dims()) {
    return false;
  }
  params[ci].weights = w->tensor.template cast<T>();
  params[ci].biases = b->tensor.template cast<T>();
  return true;
}

}  // namespace deepwriter
