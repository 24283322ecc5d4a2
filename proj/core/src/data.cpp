#include "hc/data.hpp"

#include <fstream>

#include "hc/errors.hpp"

namespace hc {

std::vector<std::uint8_t> read_corpus_bytes(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("corpus: cannot open '" + path + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)),
                                  std::istreambuf_iterator<char>());
  if (bytes.empty()) throw IoError("corpus: '" + path + "' is empty");
  return bytes;
}

std::vector<std::int32_t> tokenize_bytes(std::span<const std::uint8_t> bytes) {
  std::vector<std::int32_t> tokens(bytes.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) tokens[i] = static_cast<std::int32_t>(bytes[i]);
  return tokens;
}

TokenDataset::TokenDataset(std::span<const std::uint8_t> bytes, std::int64_t seq_len)
    : seq_len_(seq_len) {
  if (seq_len < 1) throw ConfigError("dataset: seq_len must be >= 1");
  tokens_ = tokenize_bytes(bytes);
  const std::int64_t len = static_cast<std::int64_t>(tokens_.size());
  num_windows_ = len < seq_len_ + 1 ? 0 : (len - 1) / seq_len_;
  if (num_windows_ == 0)
    throw IoError("dataset: corpus of " + std::to_string(len) +
                  " bytes is shorter than seq_len + 1 = " + std::to_string(seq_len_ + 1));
}

void TokenDataset::fill_window(std::int64_t index, std::span<std::int32_t> out) const {
  if (index < 0 || index >= num_windows_) throw IndexError("dataset: window index out of range");
  if (static_cast<std::int64_t>(out.size()) != window_len())
    throw ShapeError("dataset: output span must hold seq_len + 1 ids");
  const std::int64_t start = index * seq_len_;
  for (std::int64_t i = 0; i <= seq_len_; ++i)
    out[static_cast<std::size_t>(i)] = tokens_[static_cast<std::size_t>(start + i)];
}

BatchSampler::BatchSampler(std::int64_t num_windows, std::uint64_t seed) : rng_(seed) {
  if (num_windows < 1) throw ConfigError("sampler: need at least one window");
  order_.resize(static_cast<std::size_t>(num_windows));
  for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = static_cast<std::int64_t>(i);
  reshuffle();
}

void BatchSampler::reshuffle() {
  for (std::size_t i = order_.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng_.uniform_index(i));
    std::swap(order_[i - 1], order_[j]);
  }
  cursor_ = 0;
}

std::int64_t BatchSampler::next() {
  if (cursor_ >= order_.size()) reshuffle();
  return order_[cursor_++];
}

}  // namespace hc
