#include "rnddpc/rng.hpp"

namespace rnddpc {

std::uint64_t fnv1a(const void* data, std::size_t len, std::uint64_t h) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

std::uint64_t fnv1a(std::string_view s, std::uint64_t h) {
  return fnv1a(s.data(), s.size(), h);
}

std::uint64_t substream_seed(std::uint64_t master, std::string_view name) {
  std::uint64_t h = fnv1a(name);
  h = fnv1a(&master, sizeof(master), h);
  // splitmix64 finalizer to spread low-entropy masters
  h += 0x9e3779b97f4a7c15ULL;
  h = (h ^ (h >> 30)) * 0xbf58476d1ce4e5b9ULL;
  h = (h ^ (h >> 27)) * 0x94d049bb133111ebULL;
  return h ^ (h >> 31);
}

}  // namespace rnddpc
