#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "wbx/classifier.hpp"
#include "wbx/errors.hpp"
#include "wbx/tensor.hpp"
#include "wbx/unet.hpp"

namespace wbx {

// CRC-32 (IEEE 802.3, reflected, poly 0xEDB88320), same as zlib's crc32.
inline uint32_t crc32(const uint8_t* data, size_t len, uint32_t seed = 0) {
  static const std::array<uint32_t, 256> table = [] {
    std::array<uint32_t, 256> t{};
    for (uint32_t i = 0; i < 256; ++i) {
      uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  uint32_t c = seed ^ 0xFFFFFFFFu;
  for (size_t i = 0; i < len; ++i) c = table[(c ^ data[i]) & 0xFFu] ^ (c >> 8);
  return c ^ 0xFFFFFFFFu;
}

// Trailing scalar section of the checkpoint, in file order.
struct CheckpointScalars {
  float beta_x = 1.0f;
  float beta_y = 1.0f;
  float w_c = 1.0f;
  float sigmoid_threshold = 0.5f;
  float channel_scale = 1.0f;
};

// Named-tensor container; payloads are always 32-bit on disk.
struct Checkpoint {
  static constexpr uint16_t kFormatVersion = 1;
  std::vector<std::pair<std::string, Tensor4<float>>> tensors;
  CheckpointScalars scalars;

  const Tensor4<float>* find(const std::string& name) const {
    for (const auto& [n, t] : tensors)
      if (n == name) return &t;
    return nullptr;
  }
};

namespace detail {

inline void put_u16(std::vector<uint8_t>& out, uint16_t v) {
  out.push_back(static_cast<uint8_t>(v & 0xFF));
  out.push_back(static_cast<uint8_t>(v >> 8));
}
inline void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xFF));
}
inline void put_f32(std::vector<uint8_t>& out, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

struct Reader {
  const uint8_t* p;
  size_t remaining;
  void need(size_t n) const {
    if (n > remaining) throw data_error("checkpoint: truncated file");
  }
  uint16_t u16() {
    need(2);
    const uint16_t v = static_cast<uint16_t>(p[0] | (p[1] << 8));
    p += 2;
    remaining -= 2;
    return v;
  }
  uint32_t u32() {
    need(4);
    const uint32_t v = static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
                       (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
    p += 4;
    remaining -= 4;
    return v;
  }
  float f32() {
    const uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  std::string str(size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(p), n);
    p += n;
    remaining -= n;
    return s;
  }
};

}  // namespace detail

inline std::vector<uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
  std::vector<uint8_t> out;
  out.insert(out.end(), {'W', 'B', 'X', '1'});
  detail::put_u16(out, Checkpoint::kFormatVersion);
  detail::put_u32(out, static_cast<uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    detail::put_u16(out, static_cast<uint16_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    out.push_back(4);  // rank
    detail::put_u32(out, static_cast<uint32_t>(t.n));
    detail::put_u32(out, static_cast<uint32_t>(t.c));
    detail::put_u32(out, static_cast<uint32_t>(t.h));
    detail::put_u32(out, static_cast<uint32_t>(t.w));
    for (const float v : t.data) detail::put_f32(out, v);
  }
  detail::put_f32(out, ckpt.scalars.beta_x);
  detail::put_f32(out, ckpt.scalars.beta_y);
  detail::put_f32(out, ckpt.scalars.w_c);
  detail::put_f32(out, ckpt.scalars.sigmoid_threshold);
  detail::put_f32(out, ckpt.scalars.channel_scale);
  detail::put_u32(out, crc32(out.data(), out.size()));
  return out;
}

inline Checkpoint deserialize_checkpoint(const std::vector<uint8_t>& bytes) {
  if (bytes.size() < 14) throw data_error("checkpoint: truncated file");
  const uint32_t stored_crc = static_cast<uint32_t>(bytes[bytes.size() - 4]) |
                              (static_cast<uint32_t>(bytes[bytes.size() - 3]) << 8) |
                              (static_cast<uint32_t>(bytes[bytes.size() - 2]) << 16) |
                              (static_cast<uint32_t>(bytes[bytes.size() - 1]) << 24);
  if (crc32(bytes.data(), bytes.size() - 4) != stored_crc)
    throw data_error("checkpoint: CRC32 mismatch (corrupt file)");

  detail::Reader r{bytes.data(), bytes.size() - 4};
  if (r.str(4) != "WBX1") throw data_error("checkpoint: bad magic");
  const uint16_t version = r.u16();
  if (version != Checkpoint::kFormatVersion)
    throw data_error("checkpoint: unsupported format version " + std::to_string(version));

  Checkpoint ckpt;
  const uint32_t count = r.u32();
  ckpt.tensors.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    const uint16_t name_len = r.u16();
    std::string name = r.str(name_len);
    const uint8_t rank = static_cast<uint8_t>(r.str(1)[0]);
    std::vector<uint32_t> dims(rank);
    size_t total = 1;
    for (auto& d : dims) {
      d = r.u32();
      total *= d;
    }
    // stored rank-4 throughout; tolerate lower ranks by left-padding with 1s
    uint32_t d4[4] = {1, 1, 1, 1};
    if (rank > 4) throw data_error("checkpoint: unsupported tensor rank in " + name);
    for (int k = 0; k < rank; ++k) d4[4 - rank + k] = dims[k];
    Tensor4<float> t(static_cast<int>(d4[0]), static_cast<int>(d4[1]), static_cast<int>(d4[2]),
                     static_cast<int>(d4[3]));
    for (size_t j = 0; j < total; ++j) t.data[j] = r.f32();
    ckpt.tensors.emplace_back(std::move(name), std::move(t));
  }
  ckpt.scalars.beta_x = r.f32();
  ckpt.scalars.beta_y = r.f32();
  ckpt.scalars.w_c = r.f32();
  ckpt.scalars.sigmoid_threshold = r.f32();
  ckpt.scalars.channel_scale = r.f32();
  if (r.remaining != 0) throw data_error("checkpoint: trailing bytes after scalar section");
  return ckpt;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  const std::vector<uint8_t> bytes = serialize_checkpoint(ckpt);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw data_error("checkpoint: cannot open for write: " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw data_error("checkpoint: write failed: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw data_error("checkpoint: cannot open: " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

// --- model <-> checkpoint bridging ---

template <typename T>
void append_model_tensors(Checkpoint& ckpt, UNetLite<T>& model) {
  for (const auto& nt : model.named_tensors())
    ckpt.tensors.emplace_back(nt.name, cast_tensor<float>(*nt.tensor));
  Tensor4<float> meta(1, 1, 1, 1);
  meta.data[0] = static_cast<float>(model.dropout2d_p);
  ckpt.tensors.emplace_back("arch.dropout2d_p", std::move(meta));
}

template <typename T>
void append_head_tensors(Checkpoint& ckpt, ClassifierHead<T>& head) {
  for (const auto& nt : head.named_tensors())
    ckpt.tensors.emplace_back(nt.name, cast_tensor<float>(*nt.tensor));
}

template <typename T>
void restore_model(const Checkpoint& ckpt, UNetLite<T>& model) {
  for (const auto& nt : model.named_tensors()) {
    const Tensor4<float>* stored = ckpt.find(nt.name);
    if (!stored) throw data_error("checkpoint: missing tensor " + nt.name);
    if (stored->n != nt.tensor->n || stored->c != nt.tensor->c || stored->h != nt.tensor->h ||
        stored->w != nt.tensor->w)
      throw data_error("checkpoint: dims mismatch for " + nt.name + ": file " +
                       stored->dims_str() + " vs model " + nt.tensor->dims_str());
    *nt.tensor = cast_tensor<T>(*stored);
  }
  if (const Tensor4<float>* p = ckpt.find("arch.dropout2d_p")) model.dropout2d_p = p->data[0];
}

template <typename T>
bool restore_head(const Checkpoint& ckpt, ClassifierHead<T>& head) {
  if (!ckpt.find("head.fc1.w")) return false;  // classifier not trained yet
  for (const auto& nt : head.named_tensors()) {
    const Tensor4<float>* stored = ckpt.find(nt.name);
    if (!stored) throw data_error("checkpoint: missing tensor " + nt.name);
    if (stored->n != nt.tensor->n || stored->c != nt.tensor->c || stored->h != nt.tensor->h ||
        stored->w != nt.tensor->w)
      throw data_error("checkpoint: dims mismatch for " + nt.name);
    *nt.tensor = cast_tensor<T>(*stored);
  }
  return true;
}

}  // namespace wbx
