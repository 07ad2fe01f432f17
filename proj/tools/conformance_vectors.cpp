// SPDX-License-Identifier: Apache-2.0
//
// Writes the stream-transform conformance vectors: a 1000-token input, its
// global shuffle and vocabulary remap under seed 42, plus raw SplitMix64 and
// derive_seed outputs so another implementation can check each layer.
//
//   conformance_vectors <out.json>

#include <cstdint>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "json.hpp"

#include "moeskew/rng.hpp"
#include "moeskew/workload.hpp"

int main(int argc, char** argv) {
  using namespace moeskew;
  using Json = nlohmann::ordered_json;
  if (argc != 2) {
    std::cerr << "usage: conformance_vectors <out.json>\n";
    return 1;
  }
  constexpr std::uint64_t kSeed = 42;
  constexpr std::int64_t kVocab = 32000;
  constexpr std::size_t kTokens = 1000;
  constexpr std::uint64_t kInputSeed = 7;

  const auto input = mock_stream(kTokens, kVocab, kInputSeed);

  Json j;
  j["format"] = "moeskew.conformance/1";
  j["seed"] = kSeed;
  j["vocab_size"] = kVocab;
  j["input_seed"] = kInputSeed;

  SplitMix64 gen(kSeed);
  std::vector<std::string> raw;
  for (int i = 0; i < 8; ++i) raw.push_back(std::to_string(gen()));
  j["splitmix64_first8"] = raw;
  j["derive_seed"] = Json::array({
      Json{{"base", kSeed}, {"label", "placement"}, {"indices", Json::array()},
           {"value", std::to_string(derive_seed(kSeed, "placement"))}},
      Json{{"base", kSeed}, {"label", "tokens"}, {"indices", {3, 5}},
           {"value", std::to_string(derive_seed(kSeed, "tokens", {3, 5}))}},
  });
  j["input"] = input;
  j["mock"] = mock_stream(kTokens, kVocab, kSeed);
  j["shuffled"] = shuffle_stream(input, kSeed);
  j["remapped"] = remap_vocab(input, kVocab, kSeed);

  std::ofstream out(argv[1]);
  out << j.dump(1) << '\n';
  return out ? 0 : 2;
}
