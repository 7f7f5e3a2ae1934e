#include "edgecap/metrics/porter.hpp"

#include <string_view>

namespace edgecap::metrics {

namespace {

bool is_consonant(const std::string& w, std::size_t i) {
  switch (w[i]) {
    case 'a': case 'e': case 'i': case 'o': case 'u': return false;
    case 'y': return i == 0 || !is_consonant(w, i - 1);
    default: return true;
  }
}

// m in [C](VC)^m[V] for the first n letters.
int measure(const std::string& w, std::size_t n) {
  int m = 0;
  std::size_t i = 0;
  while (i < n && is_consonant(w, i)) ++i;
  while (i < n) {
    while (i < n && !is_consonant(w, i)) ++i;
    if (i >= n) break;
    while (i < n && is_consonant(w, i)) ++i;
    ++m;
  }
  return m;
}

bool has_vowel(const std::string& w, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    if (!is_consonant(w, i)) return true;
  }
  return false;
}

bool double_consonant(const std::string& w, std::size_t n) {
  return n >= 2 && w[n - 1] == w[n - 2] && is_consonant(w, n - 1);
}

// consonant-vowel-consonant ending, last letter not w, x or y.
bool cvc(const std::string& w, std::size_t n) {
  if (n < 3) return false;
  const char last = w[n - 1];
  return is_consonant(w, n - 3) && !is_consonant(w, n - 2) && is_consonant(w, n - 1) && last != 'w' && last != 'x' &&
         last != 'y';
}

bool ends_with(const std::string& w, std::string_view s) {
  return w.size() >= s.size() && w.compare(w.size() - s.size(), s.size(), s) == 0;
}

struct Rule {
  std::string_view suffix, replacement;
};

// Applies the longest matching rule when the remaining stem has m > min_m.
// Returns true if some suffix matched, whether or not it was replaced.
template <std::size_t N>
bool apply_longest(std::string& w, const Rule (&rules)[N], int min_m) {
  const Rule* best = nullptr;
  for (const Rule& r : rules) {
    if (ends_with(w, r.suffix) && (!best || r.suffix.size() > best->suffix.size())) best = &r;
  }
  if (!best) return false;
  const std::size_t stem = w.size() - best->suffix.size();
  if (measure(w, stem) > min_m) w = w.substr(0, stem) + std::string(best->replacement);
  return true;
}

const Rule kStep2[] = {
    {"ational", "ate"}, {"tional", "tion"}, {"enci", "ence"}, {"anci", "ance"}, {"izer", "ize"},
    {"abli", "able"},   {"alli", "al"},     {"entli", "ent"}, {"eli", "e"},     {"ousli", "ous"},
    {"ization", "ize"}, {"ation", "ate"},   {"ator", "ate"},  {"alism", "al"},  {"iveness", "ive"},
    {"fulness", "ful"}, {"ousness", "ous"}, {"aliti", "al"},  {"iviti", "ive"}, {"biliti", "ble"},
};

const Rule kStep3[] = {
    {"icate", "ic"}, {"ative", ""}, {"alize", "al"}, {"iciti", "ic"}, {"ical", "ic"}, {"ful", ""}, {"ness", ""},
};

const Rule kStep4[] = {
    {"al", ""},   {"ance", ""}, {"ence", ""}, {"er", ""},  {"ic", ""},  {"able", ""}, {"ible", ""},
    {"ant", ""},  {"ement", ""}, {"ment", ""}, {"ent", ""}, {"ou", ""},  {"ism", ""},  {"ate", ""},
    {"iti", ""},  {"ous", ""},  {"ive", ""},  {"ize", ""},
};

void step1a(std::string& w) {
  if (ends_with(w, "sses") || ends_with(w, "ies")) w.resize(w.size() - 2);
  else if (ends_with(w, "ss")) return;
  else if (ends_with(w, "s")) w.pop_back();
}

void step1b(std::string& w) {
  if (ends_with(w, "eed")) {
    if (measure(w, w.size() - 3) > 0) w.pop_back();
    return;
  }
  std::size_t cut = 0;
  if (ends_with(w, "ed") && has_vowel(w, w.size() - 2)) cut = 2;
  else if (ends_with(w, "ing") && has_vowel(w, w.size() - 3)) cut = 3;
  if (cut == 0) return;
  w.resize(w.size() - cut);
  if (ends_with(w, "at") || ends_with(w, "bl") || ends_with(w, "iz")) {
    w.push_back('e');
  } else if (double_consonant(w, w.size()) && !ends_with(w, "l") && !ends_with(w, "s") && !ends_with(w, "z")) {
    w.pop_back();
  } else if (measure(w, w.size()) == 1 && cvc(w, w.size())) {
    w.push_back('e');
  }
}

void step1c(std::string& w) {
  if (ends_with(w, "y") && has_vowel(w, w.size() - 1)) w.back() = 'i';
}

void step4(std::string& w) {
  // "ion" competes with the table by length; it needs s or t before it.
  const Rule* best = nullptr;
  for (const Rule& r : kStep4) {
    if (ends_with(w, r.suffix) && (!best || r.suffix.size() > best->suffix.size())) best = &r;
  }
  if (ends_with(w, "ion") && (!best || best->suffix.size() < 3)) {
    const std::size_t stem = w.size() - 3;
    if (measure(w, stem) > 1 && stem > 0 && (w[stem - 1] == 's' || w[stem - 1] == 't')) w.resize(stem);
    return;
  }
  if (best && measure(w, w.size() - best->suffix.size()) > 1) w.resize(w.size() - best->suffix.size());
}

void step5(std::string& w) {
  if (ends_with(w, "e")) {
    const std::size_t stem = w.size() - 1;
    const int m = measure(w, stem);
    if (m > 1 || (m == 1 && !cvc(w, stem))) w.pop_back();
  }
  if (ends_with(w, "ll") && measure(w, w.size()) > 1) w.pop_back();
}

}  // namespace

std::string porter_stem(const std::string& word) {
  std::string w = word;
  if (w.empty()) return w;
  step1a(w);
  step1b(w);
  step1c(w);
  apply_longest(w, kStep2, 0);
  apply_longest(w, kStep3, 0);
  step4(w);
  step5(w);
  return w;
}

}  // namespace edgecap::metrics
