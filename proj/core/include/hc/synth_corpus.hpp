#pragma once

#include <cstdint>
#include <string>

namespace hc {

// Deterministic English-like filler text: a Zipf-weighted pseudo-word
// vocabulary arranged into sentences and paragraphs. Used for desk-scale
// byte-LM runs so the artifact carries no external data.
std::string synth_corpus(std::size_t approx_bytes, std::uint64_t seed);

void write_synth_corpus(const std::string& path, std::size_t approx_bytes, std::uint64_t seed);

}  // namespace hc
