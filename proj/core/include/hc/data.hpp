#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hc/rng.hpp"

namespace hc {

// Reads a plain-text corpus; throws IoError when unreadable or empty.
std::vector<std::uint8_t> read_corpus_bytes(const std::string& path);

// Byte-level tokenization: one token per byte, vocab 256.
std::vector<std::int32_t> tokenize_bytes(std::span<const std::uint8_t> bytes);

// Non-overlapping supervision windows: window w holds seq_len + 1 token ids
// starting at w * seq_len, so every byte is predicted exactly once.
// Throws IoError when the corpus is shorter than seq_len + 1.
class TokenDataset {
 public:
  TokenDataset(std::span<const std::uint8_t> bytes, std::int64_t seq_len);

  std::int64_t num_windows() const { return num_windows_; }
  std::int64_t window_len() const { return seq_len_ + 1; }
  void fill_window(std::int64_t index, std::span<std::int32_t> out) const;

 private:
  std::vector<std::int32_t> tokens_;
  std::int64_t seq_len_ = 0;
  std::int64_t num_windows_ = 0;
};

// Fixed shuffle by seed; cycles deterministically, reshuffling per epoch.
class BatchSampler {
 public:
  BatchSampler(std::int64_t num_windows, std::uint64_t seed);
  std::int64_t next();

 private:
  void reshuffle();
  std::vector<std::int64_t> order_;
  std::size_t cursor_ = 0;
  Rng rng_;
};

}  // namespace hc
