#include "edgecap/data/vocab.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "edgecap/error.hpp"
#include "edgecap/metrics/tokenize.hpp"

namespace edgecap::data {

namespace {
const std::vector<std::string> kSpecialWords = {"<pad>", "<bos>", "<eos>", "<unk>"};
}

Vocabulary::Vocabulary() {
  for (std::size_t i = 0; i < kSpecialWords.size(); ++i) {
    words_.push_back(kSpecialWords[i]);
    index_.emplace(kSpecialWords[i], static_cast<TokenId>(i));
  }
}

Vocabulary Vocabulary::from_words(const std::vector<std::string>& words) {
  Vocabulary v;
  v.words_.insert(v.words_.end(), words.begin(), words.end());
  for (std::size_t i = kSpecialCount; i < v.words_.size(); ++i) {
    if (!v.index_.emplace(v.words_[i], static_cast<TokenId>(i)).second) {
      throw SchemaError("vocabulary: duplicate word '" + v.words_[i] + "'");
    }
  }
  return v;
}

Vocabulary Vocabulary::build(const std::vector<std::string>& captions, std::size_t min_freq) {
  std::map<std::string, std::size_t> counts;
  for (const auto& c : captions) {
    for (auto& w : metrics::tokenize(c)) ++counts[w];
  }
  std::vector<std::pair<std::string, std::size_t>> sorted;
  for (auto& [w, n] : counts) {
    if (n >= min_freq && std::find(kSpecialWords.begin(), kSpecialWords.end(), w) == kSpecialWords.end()) {
      sorted.emplace_back(w, n);
    }
  }
  std::stable_sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> words;
  for (auto& [w, n] : sorted) words.push_back(w);
  return from_words(words);
}

TokenId Vocabulary::id(const std::string& word) const {
  auto it = index_.find(word);
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::word(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= words_.size()) {
    throw LookupError("vocabulary: id " + std::to_string(id) + " out of range");
  }
  return words_[static_cast<std::size_t>(id)];
}

std::vector<TokenId> Vocabulary::encode(const std::string& caption) const {
  std::vector<TokenId> ids{kBos};
  for (const auto& w : metrics::tokenize(caption)) ids.push_back(id(w));
  ids.push_back(kEos);
  return ids;
}

std::string Vocabulary::decode(std::span<const TokenId> ids) const {
  std::string out;
  for (TokenId t : ids) {
    if (t >= 0 && static_cast<std::size_t>(t) < kSpecialCount) continue;
    if (!out.empty()) out.push_back(' ');
    out += word(t);
  }
  return out;
}

std::string Vocabulary::to_json() const {
  nlohmann::json j;
  j["words"] = std::vector<std::string>(words_.begin() + kSpecialCount, words_.end());
  return j.dump(2) + "\n";
}

Vocabulary Vocabulary::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("vocabulary: ") + e.what());
  }
  if (!j.is_object() || !j.contains("words") || !j["words"].is_array()) {
    throw SchemaError("vocabulary: expected an object with a \"words\" array");
  }
  std::vector<std::string> words;
  for (const auto& w : j["words"]) {
    if (!w.is_string()) throw SchemaError("vocabulary: words must be strings");
    words.push_back(w.get<std::string>());
  }
  return from_words(words);
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << to_json();
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

}  // namespace edgecap::data
