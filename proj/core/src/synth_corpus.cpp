#include "hc/synth_corpus.hpp"

#include <cmath>
#include <fstream>
#include <vector>

#include "hc/errors.hpp"
#include "hc/rng.hpp"

namespace hc {

namespace {

const char* kOnsets[] = {"b",  "br", "c",  "ch", "cl", "d",  "dr", "f",  "fl", "g",
                         "gr", "h",  "j",  "k",  "l",  "m",  "n",  "p",  "pl", "pr",
                         "qu", "r",  "s",  "sh", "sl", "sp", "st", "t",  "th", "tr",
                         "v",  "w",  "wh", "y",  "z",  ""};
const char* kNuclei[] = {"a", "ai", "e", "ea", "ee", "i", "o", "oa", "oo", "ou", "u", "y"};
const char* kCodas[] = {"",   "b",  "ck", "d",  "ft", "g",  "l",  "ld", "m",  "mp",
                        "n",  "nd", "ng", "nt", "p",  "r",  "rd", "rn", "s",  "sh",
                        "st", "t",  "th", "x"};

std::string make_word(Rng& rng) {
  const int syllables = 1 + static_cast<int>(rng.uniform_index(3));
  std::string w;
  for (int s = 0; s < syllables; ++s) {
    w += kOnsets[rng.uniform_index(std::size(kOnsets))];
    w += kNuclei[rng.uniform_index(std::size(kNuclei))];
    if (s + 1 == syllables || rng.uniform() < 0.4) w += kCodas[rng.uniform_index(std::size(kCodas))];
  }
  return w;
}

}  // namespace

std::string synth_corpus(std::size_t approx_bytes, std::uint64_t seed) {
  if (approx_bytes < 16) throw ConfigError("synth_corpus: ask for at least 16 bytes");
  Rng rng(seed);

  // Zipf-weighted vocabulary.
  const std::size_t vocab_size = 2000;
  std::vector<std::string> vocab;
  vocab.reserve(vocab_size);
  for (std::size_t i = 0; i < vocab_size; ++i) vocab.push_back(make_word(rng));
  std::vector<double> cdf(vocab_size);
  double acc = 0.0;
  for (std::size_t i = 0; i < vocab_size; ++i) {
    acc += 1.0 / std::pow(static_cast<double>(i + 1), 1.05);
    cdf[i] = acc;
  }
  for (auto& c : cdf) c /= acc;

  auto draw_word = [&]() -> const std::string& {
    const double u = rng.uniform();
    const auto it = std::lower_bound(cdf.begin(), cdf.end(), u);
    return vocab[static_cast<std::size_t>(it - cdf.begin())];
  };

  std::string text;
  text.reserve(approx_bytes + 256);
  int sentences_in_para = 0;
  int para_target = 3 + static_cast<int>(rng.uniform_index(5));
  while (text.size() < approx_bytes) {
    const int words = 4 + static_cast<int>(rng.uniform_index(11));
    for (int w = 0; w < words; ++w) {
      std::string word = draw_word();
      if (w == 0) word[0] = static_cast<char>(std::toupper(word[0]));
      text += word;
      if (w + 1 < words) {
        if (rng.uniform() < 0.08)
          text += ",";
        text += " ";
      }
    }
    const double u = rng.uniform();
    text += u < 0.85 ? "." : (u < 0.94 ? "?" : "!");
    if (++sentences_in_para >= para_target) {
      text += "\n\n";
      sentences_in_para = 0;
      para_target = 3 + static_cast<int>(rng.uniform_index(5));
    } else {
      text += " ";
    }
  }
  return text;
}

void write_synth_corpus(const std::string& path, std::size_t approx_bytes, std::uint64_t seed) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("synth_corpus: cannot open '" + path + "'");
  os << synth_corpus(approx_bytes, seed);
}

}  // namespace hc
