#pragma once

#include <openssl/evp.h>

#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>

#include "cmrt/tensor.hpp"

namespace cmrt {

/// Incremental SHA-256, hex-encoded on finish.
class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new()) { EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr); }
  ~Sha256() { EVP_MD_CTX_free(ctx_); }
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  Sha256& update(const void* data, std::size_t n) {
    EVP_DigestUpdate(ctx_, data, n);
    return *this;
  }
  Sha256& update(std::string_view s) { return update(s.data(), s.size()); }

  std::string hex() {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx_, md, &len);
    static const char* digits = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
      out.push_back(digits[md[i] >> 4]);
      out.push_back(digits[md[i] & 15]);
    }
    return out;
  }

 private:
  EVP_MD_CTX* ctx_;
};

inline std::string sha256_hex(std::string_view s) { return Sha256().update(s).hex(); }

/// Digest over names, dtypes, shapes and the little-endian payload bytes.
inline std::string digest_tensors(const TensorMap& m) {
  Sha256 h;
  for (const auto& [name, t] : m) {
    h.update(name).update(std::string_view("\0", 1)).update(dtype_name(t.dtype));
    for (std::size_t d : t.shape) {
      const std::uint64_t v = d;
      h.update(&v, sizeof v);
    }
    for (double x : t.data) {
      if (t.dtype == DType::f32) {
        const float f = static_cast<float>(x);
        h.update(&f, sizeof f);
      } else {
        h.update(&x, sizeof x);
      }
    }
  }
  return h.hex();
}

}  // namespace cmrt
