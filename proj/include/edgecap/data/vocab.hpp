#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "edgecap/tensor/ops.hpp"

namespace edgecap::data {

inline constexpr TokenId kPad = 0;
inline constexpr TokenId kBos = 1;
inline constexpr TokenId kEos = 2;
inline constexpr TokenId kUnk = 3;
inline constexpr std::size_t kSpecialCount = 4;

class Vocabulary {
 public:
  // Only the four specials.
  Vocabulary();

  // Words by descending frequency, ties in byte order; words seen fewer
  // than min_freq times are left out (and encode to unk).
  static Vocabulary build(const std::vector<std::string>& captions, std::size_t min_freq = 1);
  static Vocabulary from_words(const std::vector<std::string>& words);

  std::size_t size() const { return words_.size(); }
  TokenId id(const std::string& word) const;
  // Throws LookupError for ids outside the table.
  const std::string& word(TokenId id) const;
  const std::vector<std::string>& words() const { return words_; }

  // bos, tokens, eos.
  std::vector<TokenId> encode(const std::string& caption) const;
  // Space-joined words with specials skipped.
  std::string decode(std::span<const TokenId> ids) const;

  std::string to_json() const;
  static Vocabulary from_json(const std::string& text);
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.words_ == b.words_; }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, TokenId> index_;
};

}  // namespace edgecap::data
