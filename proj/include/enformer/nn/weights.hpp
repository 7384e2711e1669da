#pragma once

#include <fstream>
#include <map>

#include "enformer/nn/module.hpp"

// Flat binary weight manifest. Layout, all integers little-endian:
//   magic "EFW1" | u32 version=1 | u8 elem_size (4|8) | u32 record count
//   per record: u32 name length | name bytes | u32 ndim | i64 dims | data
//   trailer: u32 crc32 over every preceding byte
// elem_size 4 stores IEEE float32 (pretrained backbone shipping format),
// 8 stores float64 (checkpoint format). Values are exposed as double either
// way. A wrong checksum or truncated stream raises an integrity error.

namespace enformer {

inline uint32_t crc32_update(uint32_t crc, const void* buf, size_t len) {
  static const auto table = [] {
    std::array<uint32_t, 256> t{};
    for (uint32_t i = 0; i < 256; ++i) {
      uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  const auto* p = static_cast<const unsigned char*>(buf);
  crc = ~crc;
  for (size_t i = 0; i < len; ++i) crc = table[(crc ^ p[i]) & 0xFF] ^ (crc >> 8);
  return ~crc;
}

struct WeightRecord {
  std::string name;
  Shape shape;
  std::vector<double> data;
};

namespace detail {

class CrcWriter {
 public:
  explicit CrcWriter(std::ostream& os) : os_(os) {}
  void write(const void* p, size_t n) {
    os_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    crc_ = crc32_update(crc_, p, n);
  }
  template <typename U>
  void put(U v) {
    static_assert(std::is_trivially_copyable_v<U>);
    write(&v, sizeof v);
  }
  uint32_t crc() const { return crc_; }

 private:
  std::ostream& os_;
  uint32_t crc_ = 0;
};

class CrcReader {
 public:
  explicit CrcReader(std::istream& is, const std::string& path) : is_(is), path_(path) {}
  void read(void* p, size_t n) {
    is_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<size_t>(is_.gcount()) != n)
      throw std::runtime_error("weight manifest '" + path_ + "': truncated file");
    crc_ = crc32_update(crc_, p, n);
  }
  template <typename U>
  U get() {
    static_assert(std::is_trivially_copyable_v<U>);
    U v;
    read(&v, sizeof v);
    return v;
  }
  uint32_t crc() const { return crc_; }

 private:
  std::istream& is_;
  std::string path_;
  uint32_t crc_ = 0;
};

}  // namespace detail

inline void write_weights(std::ostream& os, const std::vector<WeightRecord>& records, int elem_size = 8) {
  if (elem_size != 4 && elem_size != 8) throw std::invalid_argument("weight manifest: elem_size must be 4 or 8");
  detail::CrcWriter w(os);
  w.write("EFW1", 4);
  w.put<uint32_t>(1);
  w.put<uint8_t>(static_cast<uint8_t>(elem_size));
  w.put<uint32_t>(static_cast<uint32_t>(records.size()));
  for (const auto& r : records) {
    w.put<uint32_t>(static_cast<uint32_t>(r.name.size()));
    w.write(r.name.data(), r.name.size());
    w.put<uint32_t>(static_cast<uint32_t>(r.shape.size()));
    for (int64_t d : r.shape) w.put<int64_t>(d);
    if (static_cast<int64_t>(r.data.size()) != numel_of(r.shape))
      throw std::invalid_argument("weight manifest: record '" + r.name + "' data does not match shape");
    if (elem_size == 4)
      for (double v : r.data) w.put<float>(static_cast<float>(v));
    else
      for (double v : r.data) w.put<double>(v);
  }
  uint32_t crc = w.crc();
  os.write(reinterpret_cast<const char*>(&crc), sizeof crc);
  if (!os) throw std::runtime_error("weight manifest: write failed");
}

inline void write_weights_file(const std::string& path, const std::vector<WeightRecord>& records, int elem_size = 8) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("weight manifest '" + path + "': cannot open for writing");
  write_weights(os, records, elem_size);
}

inline std::vector<WeightRecord> read_weights(std::istream& is, const std::string& path = "<stream>") {
  detail::CrcReader r(is, path);
  char magic[4];
  r.read(magic, 4);
  if (std::string(magic, 4) != "EFW1")
    throw std::runtime_error("weight manifest '" + path + "': bad magic, not a weight manifest");
  auto version = r.get<uint32_t>();
  if (version != 1)
    throw std::runtime_error("weight manifest '" + path + "': unsupported version " + std::to_string(version));
  int elem_size = r.get<uint8_t>();
  if (elem_size != 4 && elem_size != 8)
    throw std::runtime_error("weight manifest '" + path + "': bad element size");
  auto count = r.get<uint32_t>();
  std::vector<WeightRecord> records;
  records.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    WeightRecord rec;
    auto name_len = r.get<uint32_t>();
    if (name_len > (1u << 20)) throw std::runtime_error("weight manifest '" + path + "': implausible name length");
    rec.name.resize(name_len);
    r.read(rec.name.data(), name_len);
    auto ndim = r.get<uint32_t>();
    if (ndim > 8) throw std::runtime_error("weight manifest '" + path + "': implausible rank");
    rec.shape.resize(ndim);
    for (auto& d : rec.shape) {
      d = r.get<int64_t>();
      if (d <= 0) throw std::runtime_error("weight manifest '" + path + "': non-positive dimension");
    }
    int64_t n = numel_of(rec.shape);
    rec.data.resize(static_cast<size_t>(n));
    if (elem_size == 4)
      for (auto& v : rec.data) v = static_cast<double>(r.get<float>());
    else
      for (auto& v : rec.data) v = r.get<double>();
    records.push_back(std::move(rec));
  }
  uint32_t stored_crc = r.crc();
  uint32_t file_crc;
  is.read(reinterpret_cast<char*>(&file_crc), sizeof file_crc);
  if (static_cast<size_t>(is.gcount()) != sizeof file_crc)
    throw std::runtime_error("weight manifest '" + path + "': truncated file");
  if (file_crc != stored_crc)
    throw std::runtime_error("weight manifest '" + path + "': checksum mismatch, file is corrupt");
  return records;
}

inline std::vector<WeightRecord> read_weights_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("weight manifest '" + path + "': cannot open");
  return read_weights(is, path);
}

// Copies records into a module's parameters and buffers (norm running
// statistics) by dotted name. strict mode reports every missing, unexpected,
// and shape-mismatched name at once.
template <typename T>
inline void load_into_module(Module<T>& m, const std::vector<WeightRecord>& records, bool strict = true) {
  std::map<std::string, Tensor<T>*> slots;
  // a Var is a handle onto a shared node, so the tensor address is stable
  for (auto& np : m.named_params()) slots.emplace(np.name, &np.param.mutable_value());
  for (auto& nb : m.named_buffers()) slots.emplace(nb.name, nb.buffer);
  std::vector<std::string> missing, unexpected, mismatched;
  std::map<std::string, const WeightRecord*> by_name;
  for (const auto& r : records) by_name[r.name] = &r;
  for (auto& [name, dst] : slots) {
    auto it = by_name.find(name);
    if (it == by_name.end()) {
      missing.push_back(name);
      continue;
    }
    const auto& rec = *it->second;
    if (rec.shape != dst->shape()) {
      mismatched.push_back(name + " (module " + shape_str(dst->shape()) + ", manifest " + shape_str(rec.shape) + ")");
      continue;
    }
    for (size_t i = 0; i < rec.data.size(); ++i) dst->vec()[i] = static_cast<T>(rec.data[i]);
  }
  for (const auto& [name, rec] : by_name)
    if (!slots.count(name)) unexpected.push_back(name);
  if (strict && (!missing.empty() || !unexpected.empty() || !mismatched.empty())) {
    std::string msg = "weight load failed:";
    auto join = [&](const char* label, const std::vector<std::string>& v) {
      if (v.empty()) return;
      msg += std::string("\n  ") + label + ":";
      for (const auto& s : v) msg += "\n    " + s;
    };
    join("missing in manifest", missing);
    join("unexpected in manifest", unexpected);
    join("shape mismatch", mismatched);
    throw std::runtime_error(msg);
  }
}

template <typename T>
inline std::vector<WeightRecord> records_from_module(const Module<T>& m) {
  std::vector<WeightRecord> out;
  auto& mm = const_cast<Module<T>&>(m);
  for (auto& np : mm.named_params()) {
    WeightRecord r;
    r.name = np.name;
    r.shape = np.param.value().shape();
    r.data.assign(np.param.value().vec().begin(), np.param.value().vec().end());
    out.push_back(std::move(r));
  }
  for (auto& nb : mm.named_buffers()) {
    WeightRecord r;
    r.name = nb.name;
    r.shape = nb.buffer->shape();
    r.data.assign(nb.buffer->vec().begin(), nb.buffer->vec().end());
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace enformer
