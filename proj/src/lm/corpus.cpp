#include "flop/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <map>

#include "flop/errors.hpp"

namespace flop {

std::vector<std::uint32_t> decode_utf8(std::string_view text) {
  std::vector<std::uint32_t> out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    const auto b0 = static_cast<unsigned char>(text[i]);
    std::size_t len = 0;
    std::uint32_t cp = 0;
    if (b0 < 0x80) {
      len = 1;
      cp = b0;
    } else if ((b0 & 0xE0) == 0xC0) {
      len = 2;
      cp = b0 & 0x1F;
    } else if ((b0 & 0xF0) == 0xE0) {
      len = 3;
      cp = b0 & 0x0F;
    } else if ((b0 & 0xF8) == 0xF0) {
      len = 4;
      cp = b0 & 0x07;
    }
    bool ok = len > 0 && i + len <= text.size();
    for (std::size_t k = 1; ok && k < len; ++k) {
      const auto b = static_cast<unsigned char>(text[i + k]);
      if ((b & 0xC0) != 0x80) ok = false;
      cp = (cp << 6) | (b & 0x3F);
    }
    if (!ok) {
      out.push_back(0xFFFD);
      ++i;
      continue;
    }
    out.push_back(cp);
    i += len;
  }
  return out;
}

CharCorpus CharCorpus::ingest(const std::filesystem::path& path, SplitFractions fractions, SymbolMode mode) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot read corpus file " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (text.empty()) throw FormatError("corpus file " + path.string() + " is empty");
  return from_text(text, fractions, mode);
}

CharCorpus CharCorpus::from_text(std::string_view text, SplitFractions fractions, SymbolMode mode) {
  if (text.empty()) throw FormatError("corpus is empty");
  if (fractions.train <= 0 || fractions.valid < 0 || fractions.test < 0 ||
      std::fabs(fractions.train + fractions.valid + fractions.test - 1.0) > 1e-9)
    throw FormatError("split fractions must be non-negative and sum to 1");

  std::vector<std::uint32_t> symbols;
  if (mode == SymbolMode::bytes) {
    symbols.reserve(text.size());
    for (char c : text) symbols.push_back(static_cast<unsigned char>(c));
  } else {
    symbols = decode_utf8(text);
  }

  const std::size_t n = symbols.size();
  const auto n_train = static_cast<std::size_t>(std::llround(fractions.train * static_cast<double>(n)));
  const auto n_valid =
      std::min(n - n_train, static_cast<std::size_t>(std::llround(fractions.valid * static_cast<double>(n))));
  if (n_train == 0) throw FormatError("train split is empty");

  CharCorpus corpus;
  corpus.mode_ = mode;
  std::map<std::uint32_t, std::size_t> freq;
  for (std::size_t i = 0; i < n_train; ++i) ++freq[symbols[i]];
  std::vector<std::pair<std::uint32_t, std::size_t>> ranked(freq.begin(), freq.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  for (const auto& [sym, count] : ranked) {
    corpus.ids_.emplace(sym, corpus.symbols_.size());
    corpus.symbols_.push_back(sym);
  }

  auto map_range = [&](std::size_t begin, std::size_t end, std::vector<std::size_t>& dst) {
    dst.reserve(end - begin);
    for (std::size_t i = begin; i < end; ++i) dst.push_back(corpus.id_of(symbols[i]));
  };
  map_range(0, n_train, corpus.train_);
  map_range(n_train, n_train + n_valid, corpus.valid_);
  map_range(n_train + n_valid, n, corpus.test_);
  return corpus;
}

std::size_t CharCorpus::id_of(std::uint32_t symbol) const {
  auto it = ids_.find(symbol);
  return it == ids_.end() ? unknown_id() : it->second;
}

}  // namespace flop
