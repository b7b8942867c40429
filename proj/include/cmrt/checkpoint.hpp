#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "cmrt/digest.hpp"
#include "cmrt/error.hpp"
#include "cmrt/tensor.hpp"
#include "json.hpp"

// Container layout (all integers little-endian):
//
//   offset 0   8 bytes   magic "CMRT0001"
//   offset 8   8 bytes   u64 header length H
//   offset 16  H bytes   UTF-8 JSON header
//              zero fill up to the payload base, the next multiple of 64
//   base + o   payloads; each tensor's "offset" o is relative to the base,
//              a multiple of 64, and its "nbytes" = product(shape) * dtype size
//
// The header is {"metadata": {...}, "tensors": [{"name", "dtype", "shape",
// "offset", "nbytes"}, ...]} with tensors in name order. JSON objects are
// serialized with sorted keys, so identical checkpoints give identical bytes.

namespace cmrt::ckpt {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline constexpr char kMagic[8] = {'C', 'M', 'R', 'T', '0', '0', '0', '1'};
inline constexpr std::size_t kAlign = 64;
inline constexpr std::uint64_t kDefaultSizeCap = std::uint64_t{4} << 30;

struct Checkpoint {
  TensorMap params;
  std::string config_digest;
  std::uint64_t step = 0;
  std::string stage_label;
  std::vector<std::uint64_t> seed_record;
  /// Free-form metadata: the model-config sidecar, merge provenance, ...
  nlohmann::json extra = nlohmann::json::object();

  friend bool operator==(const Checkpoint& a, const Checkpoint& b) {
    return a.params == b.params && a.config_digest == b.config_digest && a.step == b.step &&
           a.stage_label == b.stage_label && a.seed_record == b.seed_record && a.extra == b.extra;
  }
};

inline std::size_t align_up(std::size_t n) { return (n + kAlign - 1) / kAlign * kAlign; }

inline std::string encode(const Checkpoint& ck) {
  nlohmann::json tensors = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& [name, t] : ck.params) {
    require(t.data.size() == shape_product(t.shape), "save: tensor '" + name + "' data/shape mismatch",
            ErrorKind::shape);
    const std::size_t nbytes = t.size() * dtype_size(t.dtype);
    tensors.push_back({{"name", name}, {"dtype", dtype_name(t.dtype)}, {"shape", t.shape}, {"offset", offset},
                       {"nbytes", nbytes}});
    offset += align_up(nbytes);
  }
  const nlohmann::json header = {
      {"metadata",
       {{"config_digest", ck.config_digest},
        {"step", ck.step},
        {"stage_label", ck.stage_label},
        {"seed_record", ck.seed_record},
        {"extra", ck.extra}}},
      {"tensors", tensors}};
  const std::string text = header.dump();
  const std::size_t base = align_up(16 + text.size());

  std::string out(base + offset, '\0');
  std::memcpy(out.data(), kMagic, 8);
  const std::uint64_t hlen = text.size();
  std::memcpy(out.data() + 8, &hlen, 8);
  std::memcpy(out.data() + 16, text.data(), text.size());
  std::size_t pos = base;
  for (const auto& [name, t] : ck.params) {
    char* dst = out.data() + pos;
    if (t.dtype == DType::f32) {
      for (std::size_t i = 0; i < t.size(); ++i) {
        const float f = static_cast<float>(t.data[i]);
        std::memcpy(dst + 4 * i, &f, 4);
      }
    } else {
      std::memcpy(dst, t.data.data(), 8 * t.size());
    }
    pos += align_up(t.size() * dtype_size(t.dtype));
  }
  return out;
}

inline void save(const Checkpoint& ck, const std::filesystem::path& path) {
  const std::string bytes = encode(ck);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error(ErrorKind::io, "save: cannot open '" + path.string() + "' for writing");
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  os.flush();
  if (!os) throw Error(ErrorKind::io, "save: write failed for '" + path.string() + "'");
}

namespace detail {

struct Entry {
  std::string name;
  DType dtype;
  std::vector<std::size_t> shape;
  std::uint64_t offset;
  std::uint64_t nbytes;
};

}  // namespace detail

/// Validates the header completely before reading any payload, and never
/// allocates more than the header declares (itself bounded by `size_cap`).
inline Checkpoint load(const std::filesystem::path& path, std::uint64_t size_cap = kDefaultSizeCap) {
  const std::string where = "load '" + path.string() + "': ";
  auto fail = [&](const std::string& why) { return Error(ErrorKind::format, where + why); };

  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorKind::io, where + "cannot open file");
  is.seekg(0, std::ios::end);
  const auto file_size = static_cast<std::uint64_t>(is.tellg());
  is.seekg(0);

  char prefix[16] = {};
  if (file_size < 8 || !is.read(prefix, 8) || std::memcmp(prefix, kMagic, 8) != 0) throw fail("bad magic");
  if (file_size < 16 || !is.read(prefix + 8, 8)) throw fail("truncated header");
  std::uint64_t hlen = 0;
  std::memcpy(&hlen, prefix + 8, 8);
  if (hlen > file_size - 16) throw fail("truncated header");
  if (hlen > size_cap) throw fail("declared header size exceeds cap");
  std::string text(hlen, '\0');
  is.read(text.data(), static_cast<std::streamsize>(hlen));

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw fail(std::string("malformed header: ") + e.what());
  }

  Checkpoint ck;
  std::vector<detail::Entry> entries;
  try {
    const auto& meta = header.at("metadata");
    ck.config_digest = meta.at("config_digest").get<std::string>();
    ck.step = meta.at("step").get<std::uint64_t>();
    ck.stage_label = meta.at("stage_label").get<std::string>();
    ck.seed_record = meta.at("seed_record").get<std::vector<std::uint64_t>>();
    ck.extra = meta.value("extra", nlohmann::json::object());
    for (const auto& t : header.at("tensors")) {
      entries.push_back({t.at("name").get<std::string>(), parse_dtype(t.at("dtype").get<std::string>()),
                         t.at("shape").get<std::vector<std::size_t>>(), t.at("offset").get<std::uint64_t>(),
                         t.at("nbytes").get<std::uint64_t>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw fail(std::string("malformed header: ") + e.what());
  }

  const std::uint64_t base = align_up(16 + hlen);
  std::uint64_t declared = 0;
  for (const auto& e : entries) {
    if (!valid_tensor_name(e.name)) throw fail("invalid tensor name '" + e.name + "'");
    // Guard the shape product against overflow before trusting it.
    std::uint64_t count = 1;
    for (std::size_t d : e.shape) {
      if (d != 0 && count > size_cap / d) throw fail("tensor '" + e.name + "': declared size exceeds cap");
      count *= d;
    }
    if (count * dtype_size(e.dtype) != e.nbytes) {
      throw fail("tensor '" + e.name + "': nbytes " + std::to_string(e.nbytes) + " does not match shape");
    }
    if (e.offset % kAlign != 0) throw fail("tensor '" + e.name + "': offset not 64-byte aligned");
    declared += e.nbytes;
    if (declared > size_cap) throw fail("declared size exceeds cap");
  }

  std::vector<const detail::Entry*> by_offset;
  for (const auto& e : entries) by_offset.push_back(&e);
  std::sort(by_offset.begin(), by_offset.end(), [](auto* a, auto* b) { return a->offset < b->offset; });
  for (std::size_t i = 1; i < by_offset.size(); ++i) {
    const auto* prev = by_offset[i - 1];
    if (prev->offset + prev->nbytes > by_offset[i]->offset) {
      throw fail("overlapping tensors '" + prev->name + "' and '" + by_offset[i]->name + "'");
    }
  }
  for (const auto* e : by_offset) {
    if (base + e->offset + e->nbytes > file_size) throw fail("truncated payload at tensor '" + e->name + "'");
  }

  for (const auto& e : entries) {
    if (ck.params.contains(e.name)) throw fail("duplicate tensor '" + e.name + "'");
    std::vector<char> raw(e.nbytes);
    is.seekg(static_cast<std::streamoff>(base + e.offset));
    if (!is.read(raw.data(), static_cast<std::streamsize>(e.nbytes))) {
      throw fail("truncated payload at tensor '" + e.name + "'");
    }
    Tensor t(e.shape, e.dtype);
    if (e.dtype == DType::f32) {
      for (std::size_t i = 0; i < t.size(); ++i) {
        float f;
        std::memcpy(&f, raw.data() + 4 * i, 4);
        t.data[i] = f;
      }
    } else {
      std::memcpy(t.data.data(), raw.data(), e.nbytes);
    }
    ck.params.set(e.name, std::move(t));
  }
  return ck;
}

}  // namespace cmrt::ckpt
