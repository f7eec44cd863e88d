#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "specens/ngram.hpp"
#include "specens/tokenizer.hpp"

namespace specens {

// Cross-vocabulary ensemble over token strings. Each model contributes the
// probability it assigns to a byte string under its own tokenizer; the
// ensemble averages those aligned values over the union of all supports.

struct AlignedSource {
  const SubwordTokenizer* tokenizer = nullptr;
  const SparseDist* dist = nullptr;
};

struct EnsembleDist {
  // Union support, keyed by token string. std::map keeps iteration (and
  // therefore tie handling) deterministic.
  std::map<std::string, double> averaged;
  // Per-model aligned probabilities for each support string, model order
  // matching the build_ensemble input; averaged is their arithmetic mean.
  std::map<std::string, std::vector<double>> per_model;
  // Filled in by sharpen(): a copy of averaged when the trigger does not
  // fire, boosted candidate scores otherwise. Not renormalized; consumed
  // only by select_token.
  std::optional<std::map<std::string, double>> sharpened_scores;
};

struct SharpeningConfig {
  bool enabled = true;
  // Sharpening fires only when no averaged probability reaches this value.
  double smoothness_threshold = 0.5;
  // Drafter-dist tokens need this much averaged mass to become candidates.
  double prefix_min_prob = 0.1;
};

struct SelectedToken {
  std::string token;
  double value = 0.0;
};

// Probability `dist` assigns to the byte string `token`: a verbatim entry
// wins; otherwise the first sub-token of the model's own encoding of `token`
// stands in, if that sub-token is an entry; otherwise zero.
double aligned_prob(const SubwordTokenizer& tokenizer, const SparseDist& dist,
                    const std::string& token);

// The entry string that aligned_prob would read for `token`, when any.
std::optional<std::string> aligned_entry(const SubwordTokenizer& tokenizer,
                                         const SparseDist& dist,
                                         const std::string& token);

// Average the aligned probabilities over the union support of all sources.
// Throws InvalidConfig when no sources are given.
EnsembleDist build_ensemble(const std::vector<AlignedSource>& sources);

// Populate sharpened_scores. When the maximum averaged probability is below
// the smoothness threshold, every candidate (a drafter-dist token whose
// averaged probability exceeds prefix_min_prob) gains the averaged mass of
// its strict extensions in the support; everything else keeps its averaged
// value. Returns true when that boost actually moved some score.
bool sharpen(EnsembleDist& dist, const SparseDist& drafter_dist,
             const SharpeningConfig& config);

// Argmax over sharpened scores when present, else over averaged values.
// Ties break toward the lexicographically smallest token string.
SelectedToken select_token(const EnsembleDist& dist);

}  // namespace specens
