#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace flop {

enum class SymbolMode { bytes, utf8 };

struct SplitFractions {
  double train = 0.9;
  double valid = 0.05;
  double test = 0.05;
};

/// Character stream split into contiguous train/valid/test segments.
/// Symbol ids are assigned by descending train-split frequency (ties by code
/// point), so id ranges double as frequency clusters. The id one past the last
/// symbol is reserved for symbols never seen in training.
class CharCorpus {
 public:
  static CharCorpus ingest(const std::filesystem::path& path, SplitFractions fractions = {},
                           SymbolMode mode = SymbolMode::bytes);
  static CharCorpus from_text(std::string_view text, SplitFractions fractions = {},
                              SymbolMode mode = SymbolMode::bytes);

  const std::vector<std::size_t>& train() const { return train_; }
  const std::vector<std::size_t>& valid() const { return valid_; }
  const std::vector<std::size_t>& test() const { return test_; }

  /// Distinct symbols seen in the train split.
  std::size_t vocab_size() const { return symbols_.size(); }
  /// Model output width: symbols plus the reserved unknown id.
  std::size_t num_ids() const { return symbols_.size() + 1; }
  std::size_t unknown_id() const { return symbols_.size(); }
  std::uint32_t symbol(std::size_t id) const { return symbols_.at(id); }
  std::size_t id_of(std::uint32_t symbol) const;
  SymbolMode mode() const { return mode_; }

 private:
  SymbolMode mode_ = SymbolMode::bytes;
  std::vector<std::uint32_t> symbols_;
  std::unordered_map<std::uint32_t, std::size_t> ids_;
  std::vector<std::size_t> train_;
  std::vector<std::size_t> valid_;
  std::vector<std::size_t> test_;
};

/// Decodes UTF-8; malformed sequences become U+FFFD.
std::vector<std::uint32_t> decode_utf8(std::string_view text);

}  // namespace flop
