#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <vector>

#include "cmir/errors.hpp"
#include "cmir/keyvalue.hpp"
#include "cmir/model.hpp"

// Binary checkpoint, all integers and floats little-endian:
//   "CMIRCKPT"  u32 version
//   u64 echo_len, echo bytes   (key=value lines; model.* keys rebuild the net)
//   u64 parameter count
//   per parameter: u32 name_len, name, u64 rows, u64 cols, rows*cols float64

namespace cmir {

inline constexpr char kCheckpointMagic[8] = {'C', 'M', 'I', 'R', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline kv::Record to_record(const ModelConfig& c) {
  std::vector<double> dims(c.input_dims.begin(), c.input_dims.end());
  return {
      {"model.input_dims", kv::format_list(dims)},
      {"model.shared_dim", std::to_string(c.shared_dim)},
      {"model.hidden_dim", std::to_string(c.hidden_dim)},
      {"model.depth", std::to_string(c.depth)},
      {"model.output_dim", std::to_string(c.output_dim)},
      {"model.unimodal_heads", c.unimodal_heads ? "1" : "0"},
  };
}

struct Checkpoint {
  CmirModel model;
  kv::Record echo;  ///< everything stored in the header, including model.* keys
};

namespace detail {

class ByteWriter {
 public:
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }
  void bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
  const std::vector<char>& buffer() const { return buf_; }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  std::vector<char> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::vector<char> data) : data_(std::move(data)) {}
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  double f64() { return std::bit_cast<double>(get(8)); }
  std::string bytes(std::uint64_t n) {
    need(n);
    std::string s(data_.begin() + static_cast<std::ptrdiff_t>(pos_),
                  data_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
  }
  bool at_end() const { return pos_ == data_.size(); }

 private:
  void need(std::uint64_t n) const {
    if (n > data_.size() - pos_) throw LoadError("checkpoint truncated");
  }
  std::uint64_t get(int n) {
    need(static_cast<std::uint64_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    }
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::vector<char> data_;
  std::size_t pos_ = 0;
};

inline ModelConfig model_config_from(const kv::Record& echo) {
  ModelConfig c;
  bool dims_seen = false;
  for (const auto& [k, v] : echo) {
    if (k == "model.input_dims") {
      c.input_dims.clear();
      for (double d : kv::parse_list(k, v)) c.input_dims.push_back(static_cast<std::size_t>(d));
      dims_seen = true;
    } else if (k == "model.shared_dim") c.shared_dim = kv::parse_uint(k, v);
    else if (k == "model.hidden_dim") c.hidden_dim = kv::parse_uint(k, v);
    else if (k == "model.depth") c.depth = kv::parse_uint(k, v);
    else if (k == "model.output_dim") c.output_dim = kv::parse_uint(k, v);
    else if (k == "model.unimodal_heads") c.unimodal_heads = kv::parse_bool(k, v);
  }
  if (!dims_seen) throw LoadError("checkpoint header lacks model.input_dims");
  return c;
}

}  // namespace detail

/// Serialized bytes of a checkpoint. `extra` is appended to the model echo.
inline std::vector<char> checkpoint_bytes(const CmirModel& model, const kv::Record& extra = {}) {
  kv::Record echo = to_record(model.config());
  echo.insert(echo.end(), extra.begin(), extra.end());
  const std::string text = kv::format_lines(echo);
  detail::ByteWriter w;
  w.bytes(std::string_view(kCheckpointMagic, sizeof kCheckpointMagic));
  w.u32(kCheckpointVersion);
  w.u64(text.size());
  w.bytes(text);
  const auto params = model.named_parameters();
  w.u64(params.size());
  for (const auto& p : params) {
    w.u32(static_cast<std::uint32_t>(p.name.size()));
    w.bytes(p.name);
    w.u64(p.tensor.rows());
    w.u64(p.tensor.cols());
    for (double v : p.tensor.values()) w.f64(v);
  }
  return w.buffer();
}

inline void save_checkpoint(const CmirModel& model, const std::string& path, const kv::Record& extra = {}) {
  const auto bytes = checkpoint_bytes(model, extra);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write checkpoint '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline Checkpoint parse_checkpoint(std::vector<char> bytes) {
  detail::ByteReader r(std::move(bytes));
  if (r.bytes(sizeof kCheckpointMagic) != std::string_view(kCheckpointMagic, sizeof kCheckpointMagic)) {
    throw LoadError("not a CmIR checkpoint (bad magic)");
  }
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw LoadError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                    std::to_string(kCheckpointVersion) + ")");
  }
  const std::string text = r.bytes(r.u64());
  std::istringstream in(text);
  kv::Record echo;
  try {
    echo = kv::parse_lines(in);
  } catch (const ConfigError& e) {
    throw LoadError(std::string("checkpoint header: ") + e.what());
  }
  CmirModel model(detail::model_config_from(echo), 0);
  auto params = model.named_parameters();
  const std::uint64_t count = r.u64();
  if (count != params.size()) {
    throw LoadError("checkpoint holds " + std::to_string(count) + " parameters, model expects " +
                    std::to_string(params.size()));
  }
  for (auto& p : params) {
    const std::string name = r.bytes(r.u32());
    const std::uint64_t rows = r.u64();
    const std::uint64_t cols = r.u64();
    if (name != p.name || rows != p.tensor.rows() || cols != p.tensor.cols()) {
      throw LoadError("checkpoint parameter '" + name + "' does not match '" + p.name + "' " + p.tensor.shape());
    }
    for (double& v : p.tensor.values()) v = r.f64();
  }
  if (!r.at_end()) throw LoadError("trailing bytes after checkpoint parameters");
  return {std::move(model), std::move(echo)};
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open checkpoint '" + path + "'");
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_checkpoint(std::move(bytes));
}

}  // namespace cmir
