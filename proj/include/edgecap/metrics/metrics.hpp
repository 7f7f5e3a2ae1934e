#pragma once

#include <array>
#include <string>
#include <vector>

namespace edgecap::metrics {

using Tokens = std::vector<std::string>;

struct CorpusEntry {
  Tokens candidate;
  std::vector<Tokens> references;
};
using Corpus = std::vector<CorpusEntry>;

// Tokenizes each candidate and its references.
Corpus make_corpus(const std::vector<std::string>& candidates, const std::vector<std::vector<std::string>>& references);

// Corpus BLEU-1..max_n without smoothing. r sums, per image, the reference
// length closest to the candidate (shorter on ties).
std::vector<double> bleu_corpus(const Corpus& c, std::size_t max_n = 4);
// Mean over images of the best per-reference LCS F-measure (beta 1.2).
double rouge_l_corpus(const Corpus& c);
// CIDEr-D: n = 1..4, IDF from the references, clipped TF-IDF cosine with a
// Gaussian length penalty (sigma 6), times 10.
double cider_d_corpus(const Corpus& c);
// Exact then Porter-stem matching; the alignment maximizes exact matches,
// then total matches, then minimizes chunks. Best reference per image.
double meteor_lite_corpus(const Corpus& c);

struct MetricReport {
  double bleu1 = 0, bleu2 = 0, bleu3 = 0, bleu4 = 0;
  double meteor_lite = 0, rouge_l = 0, cider_d = 0;

  // Table column order: BLEU-1..4, METEOR, ROUGE-L, CIDEr.
  std::array<double, 7> columns() const { return {bleu1, bleu2, bleu3, bleu4, meteor_lite, rouge_l, cider_d}; }
  static const std::array<const char*, 7>& column_names();
  friend bool operator==(const MetricReport&, const MetricReport&) = default;
};

// ContractError for an empty corpus or an image without references.
MetricReport evaluate_all(const Corpus& c);

}  // namespace edgecap::metrics
