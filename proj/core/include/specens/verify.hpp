#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "specens/align.hpp"
#include "specens/ngram.hpp"
#include "specens/tokenizer.hpp"

namespace specens {

// Chunk verification. The drafter proposes a chunk of tokens; every verifier
// retokenizes the committed text plus the draft once, pulls all of its
// distributions in a single chunked call, and each draft position is either
// skipped (kept as drafted) or becomes the one ensembled position.

enum class Verdict {
  SkipOovShadow,   // predecessor boundary invisible to some verifier
  SkipConsensus,   // every verifier ranks the draft token at its own top
  SkipAvgProb,     // mean aligned probability above one half, guarded
  Ensemble,        // replace via the union-support ensemble
};

const char* verdict_name(Verdict verdict);

struct VerifierInput {
  const SubwordTokenizer* tokenizer = nullptr;
  const NgramModel* model = nullptr;
};

// True when `byte_offset` is not a token boundary of the verifier's
// tokenization, i.e. the verifier sees the position mid-token. Offset zero
// (nothing decoded yet) counts as a boundary for everyone.
bool is_oov_like(std::size_t byte_offset, const BoundarySet& verifier_bounds);

// Same check for drafter token j; throws InvalidPosition when j is out of
// range. Both boundary sets must describe the same decoded text.
bool is_oov_like(const BoundarySet& drafter_bounds,
                 const BoundarySet& verifier_bounds, std::size_t j);

// Every verifier assigns the draft token its own maximum entry probability,
// either verbatim or through the first-subtoken stand-in (prefix rule).
bool consensus_skip(const std::string& draft_token,
                    const std::vector<AlignedSource>& verifier_sources);

// Mean aligned probability over all models strictly above one half. Throws
// InvalidConfig on an empty list.
bool avg_prob_skip(const std::vector<double>& aligned_probs);

// No model gives more probability than its own aligned value for `token` to
// an entry that could contend with `token` in the union-support ensemble:
// prefixes of it, extensions of it, and extensions of any stand-in entry
// used during alignment. Keeps the average-probability skip sound.
bool extension_claim_guard(const std::string& token,
                           const std::vector<AlignedSource>& sources);

struct PositionReport {
  std::size_t position = 0;  // index within the draft
  Verdict verdict = Verdict::SkipConsensus;
  bool shadowed = false;
  double mean_prob = 0.0;        // zero when never computed (shadow skip)
  std::vector<double> aligned;   // drafter first, then verifiers in order
};

struct VerifyOutcome {
  // Draft tokens kept unchanged. Equals the draft length when no position
  // was ensembled; otherwise the ensembled position index.
  std::size_t accept_len = 0;
  bool ensembled = false;
  std::size_t ensemble_position = 0;
  std::optional<EnsembleDist> ensemble;
  std::optional<SelectedToken> selected;
  bool sharpened = false;  // sharpening fired and moved some score
  std::vector<PositionReport> reports;  // examined positions, in order
};

VerifyOutcome verify_chunk(const SubwordTokenizer& drafter_tokenizer,
                           std::string_view committed_text,
                           const std::vector<std::string>& draft_tokens,
                           const std::vector<SparseDist>& drafter_dists,
                           const std::vector<VerifierInput>& verifiers,
                           const SharpeningConfig& sharpening,
                           std::size_t top_k);

}  // namespace specens
