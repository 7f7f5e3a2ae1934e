#include "edgecap/metrics/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <unordered_map>

#include "edgecap/error.hpp"
#include "edgecap/metrics/porter.hpp"
#include "edgecap/metrics/tokenize.hpp"

namespace edgecap::metrics {

namespace {

using Gram = std::vector<std::string>;
using Counts = std::map<Gram, double>;

Counts ngram_counts(const Tokens& t, std::size_t n) {
  Counts out;
  for (std::size_t i = 0; i + n <= t.size(); ++i) out[Gram(t.begin() + static_cast<std::ptrdiff_t>(i), t.begin() + static_cast<std::ptrdiff_t>(i + n))] += 1;
  return out;
}

void check_corpus(const Corpus& c) {
  if (c.empty()) throw ContractError("metrics: empty corpus");
  for (std::size_t i = 0; i < c.size(); ++i) {
    if (c[i].references.empty()) throw ContractError("metrics: image " + std::to_string(i) + " has no references");
  }
}

std::size_t lcs(const Tokens& a, const Tokens& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

// Memoized search over one-to-one alignments, candidate token by token.
class MeteorAligner {
 public:
  MeteorAligner(const Tokens& c, const Tokens& r) : c_(c), r_(r) {
    if (r.size() > 64) throw ContractError("meteor: references longer than 64 tokens are not supported");
    std::vector<std::string> sc, sr;
    for (const auto& w : c) sc.push_back(porter_stem(w));
    for (const auto& w : r) sr.push_back(porter_stem(w));
    options_.resize(c.size());
    for (std::size_t i = 0; i < c.size(); ++i) {
      for (std::size_t j = 0; j < r.size(); ++j) {
        if (c[i] == r[j]) options_[i].push_back({j, true});
        else if (sc[i] == sr[j]) options_[i].push_back({j, false});
      }
    }
  }

  struct Score {
    int exact = 0, matches = 0, chunks = 0;
    bool better_than(const Score& o) const {
      if (exact != o.exact) return exact > o.exact;
      if (matches != o.matches) return matches > o.matches;
      return chunks < o.chunks;
    }
  };

  Score best() { return solve(0, 0, kNone); }

 private:
  static constexpr std::size_t kNone = ~std::size_t{0};
  struct Option {
    std::size_t j;
    bool exact;
  };

  // prev = reference index matched by candidate i-1, or kNone.
  Score solve(std::size_t i, std::uint64_t used, std::size_t prev) {
    if (i == c_.size()) return {};
    const Key key{i, used, prev};
    if (auto it = memo_.find(key); it != memo_.end()) return it->second;
    Score best = solve(i + 1, used, kNone);
    for (const Option& o : options_[i]) {
      if (used >> o.j & 1) continue;
      Score s = solve(i + 1, used | (std::uint64_t{1} << o.j), o.j);
      s.exact += o.exact;
      s.matches += 1;
      if (!(prev != kNone && o.j == prev + 1)) s.chunks += 1;
      if (s.better_than(best)) best = s;
    }
    memo_.emplace(key, best);
    return best;
  }

  struct Key {
    std::size_t i;
    std::uint64_t used;
    std::size_t prev;
    bool operator==(const Key&) const = default;
  };
  struct KeyHash {
    std::size_t operator()(const Key& k) const {
      return std::hash<std::uint64_t>()(k.used * 0x9E3779B97F4A7C15ull ^ (k.i << 32) ^ k.prev);
    }
  };

  const Tokens& c_;
  const Tokens& r_;
  std::vector<std::vector<Option>> options_;
  std::unordered_map<Key, Score, KeyHash> memo_;
};

double meteor_pair(const Tokens& c, const Tokens& r) {
  if (c.empty() || r.empty()) return 0.0;
  const auto s = MeteorAligner(c, r).best();
  if (s.matches == 0) return 0.0;
  const double m = s.matches;
  const double p = m / static_cast<double>(c.size()), rec = m / static_cast<double>(r.size());
  const double f = p * rec / (0.9 * p + 0.1 * rec);
  const double frag = s.chunks / m;
  return f * (1.0 - 0.5 * frag * frag * frag);
}

}  // namespace

Corpus make_corpus(const std::vector<std::string>& candidates, const std::vector<std::vector<std::string>>& references) {
  if (candidates.size() != references.size()) {
    throw ContractError("metrics: " + std::to_string(candidates.size()) + " candidates but " +
                        std::to_string(references.size()) + " reference sets");
  }
  Corpus c;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    CorpusEntry e{tokenize(candidates[i]), {}};
    for (const auto& r : references[i]) e.references.push_back(tokenize(r));
    c.push_back(std::move(e));
  }
  return c;
}

std::vector<double> bleu_corpus(const Corpus& c, std::size_t max_n) {
  check_corpus(c);
  if (max_n == 0) throw ContractError("bleu: max_n must be positive");
  double cand_len = 0, ref_len = 0;
  for (const auto& e : c) {
    const auto len = static_cast<long>(e.candidate.size());
    long best = -1;
    for (const auto& r : e.references) {
      const auto rl = static_cast<long>(r.size());
      if (best < 0 || std::labs(rl - len) < std::labs(best - len) || (std::labs(rl - len) == std::labs(best - len) && rl < best)) {
        best = rl;
      }
    }
    cand_len += static_cast<double>(len);
    ref_len += static_cast<double>(best);
  }
  std::vector<double> log_p;
  std::vector<double> out;
  bool zero = false;
  for (std::size_t n = 1; n <= max_n; ++n) {
    double hit = 0, total = 0;
    for (const auto& e : c) {
      Counts max_ref;
      for (const auto& r : e.references) {
        for (const auto& [g, k] : ngram_counts(r, n)) max_ref[g] = std::max(max_ref[g], k);
      }
      for (const auto& [g, k] : ngram_counts(e.candidate, n)) {
        total += k;
        auto it = max_ref.find(g);
        if (it != max_ref.end()) hit += std::min(k, it->second);
      }
    }
    zero = zero || hit == 0;
    log_p.push_back(zero ? 0.0 : std::log(hit / total));
    if (zero || cand_len == 0) {
      out.push_back(0.0);
      continue;
    }
    double mean = 0;
    for (double v : log_p) mean += v;
    mean /= static_cast<double>(n);
    const double bp = cand_len > ref_len ? 1.0 : std::exp(1.0 - ref_len / cand_len);
    out.push_back(bp * std::exp(mean));
  }
  return out;
}

double rouge_l_corpus(const Corpus& c) {
  check_corpus(c);
  constexpr double beta2 = 1.2 * 1.2;
  double total = 0;
  for (const auto& e : c) {
    double best = 0;
    for (const auto& r : e.references) {
      const double m = static_cast<double>(lcs(e.candidate, r));
      if (m == 0) continue;
      const double rec = m / static_cast<double>(r.size()), prec = m / static_cast<double>(e.candidate.size());
      best = std::max(best, (1 + beta2) * rec * prec / (rec + beta2 * prec));
    }
    total += best;
  }
  return total / static_cast<double>(c.size());
}

double cider_d_corpus(const Corpus& c) {
  check_corpus(c);
  constexpr double sigma = 6.0;
  // Document frequency over reference sets: each image counts once per n-gram.
  std::map<Gram, double> df;
  for (const auto& e : c) {
    std::set<Gram> seen;
    for (const auto& r : e.references) {
      for (std::size_t n = 1; n <= 4; ++n) {
        for (const auto& [g, k] : ngram_counts(r, n)) seen.insert(g);
      }
    }
    for (const auto& g : seen) df[g] += 1;
  }
  const double log_images = std::log(static_cast<double>(c.size()));
  auto tfidf = [&](const Tokens& t, std::size_t n, double& norm) {
    Counts v = ngram_counts(t, n);
    norm = 0;
    for (auto& [g, k] : v) {
      auto it = df.find(g);
      k *= log_images - std::log(std::max(1.0, it == df.end() ? 0.0 : it->second));
      norm += k * k;
    }
    norm = std::sqrt(norm);
    return v;
  };

  double total = 0;
  for (const auto& e : c) {
    double score = 0;
    for (std::size_t n = 1; n <= 4; ++n) {
      double nc = 0;
      const Counts vc = tfidf(e.candidate, n, nc);
      for (const auto& r : e.references) {
        double nr = 0;
        const Counts vr = tfidf(r, n, nr);
        double dot = 0;
        for (const auto& [g, v] : vc) {
          auto it = vr.find(g);
          if (it != vr.end()) dot += std::min(v, it->second) * it->second;
        }
        const double val = (nc != 0 && nr != 0) ? dot / (nc * nr) : 0.0;
        const double delta = static_cast<double>(e.candidate.size()) - static_cast<double>(r.size());
        score += val * std::exp(-delta * delta / (2 * sigma * sigma));
      }
    }
    total += score / 4.0 / static_cast<double>(e.references.size()) * 10.0;
  }
  return total / static_cast<double>(c.size());
}

double meteor_lite_corpus(const Corpus& c) {
  check_corpus(c);
  double total = 0;
  for (const auto& e : c) {
    double best = 0;
    for (const auto& r : e.references) best = std::max(best, meteor_pair(e.candidate, r));
    total += best;
  }
  return total / static_cast<double>(c.size());
}

const std::array<const char*, 7>& MetricReport::column_names() {
  static const std::array<const char*, 7> names = {"BLEU-1", "BLEU-2", "BLEU-3", "BLEU-4", "METEOR", "ROUGE-L", "CIDEr"};
  return names;
}

MetricReport evaluate_all(const Corpus& c) {
  const auto b = bleu_corpus(c, 4);
  MetricReport r;
  r.bleu1 = b[0];
  r.bleu2 = b[1];
  r.bleu3 = b[2];
  r.bleu4 = b[3];
  r.meteor_lite = meteor_lite_corpus(c);
  r.rouge_l = rouge_l_corpus(c);
  r.cider_d = cider_d_corpus(c);
  return r;
}

}  // namespace edgecap::metrics
