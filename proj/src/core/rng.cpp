#include "uda/core/rng.hpp"

namespace uda {
namespace {

uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

uint64_t fnv1a(std::string_view s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

uint64_t derive_seed(uint64_t root, std::string_view purpose) { return splitmix64(root ^ splitmix64(fnv1a(purpose))); }

uint64_t derive_seed(uint64_t root, std::string_view purpose, uint64_t index) {
  return splitmix64(derive_seed(root, purpose) + splitmix64(index + 1));
}

}  // namespace uda
