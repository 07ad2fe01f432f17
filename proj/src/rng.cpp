// SPDX-License-Identifier: Apache-2.0

#include "moeskew/rng.hpp"

namespace moeskew {

std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t derive_seed(std::uint64_t base, std::string_view label,
                          std::initializer_list<std::uint64_t> indices) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : label) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::uint64_t s = mix64(base ^ mix64(h));
  for (auto idx : indices) s = mix64(s + 0x9e3779b97f4a7c15ULL + idx);
  return s;
}

}  // namespace moeskew
