#ifndef METASTAB_UTIL_HPP
#define METASTAB_UTIL_HPP

#include <cstdint>
#include <stdexcept>
#include <string>

namespace metastab {

// Error categories used across modules. Configuration problems (bad presets,
// grids too coarse, malformed files) are config_error; violated model
// assumptions are model_error; numerical failures are solver_error;
// certificate constructions that cannot proceed are construction_error.
struct config_error : std::runtime_error {
  explicit config_error(const std::string& what) : std::runtime_error(what) {}
};
struct model_error : std::runtime_error {
  explicit model_error(const std::string& what) : std::runtime_error(what) {}
};
struct solver_error : std::runtime_error {
  explicit solver_error(const std::string& what) : std::runtime_error(what) {}
};
struct construction_error : std::runtime_error {
  explicit construction_error(const std::string& what) : std::runtime_error(what) {}
};

// FNV-1a content hash; used to stamp reports with the identity of their
// resolved configuration.
inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string content_hash(const std::string& s) {
  static const char* hex = "0123456789abcdef";
  std::uint64_t h = fnv1a(s);
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[i] = hex[h & 0xf];
    h >>= 4;
  }
  return out;
}

}  // namespace metastab

#endif
