#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "specens/align.hpp"
#include "specens/kv_cache.hpp"
#include "specens/ngram.hpp"
#include "specens/tokenizer.hpp"
#include "specens/verify.hpp"

namespace specens {

enum class Mode { Single, EveryToken, Threshold, Safe };

const char* mode_name(Mode mode);
Mode mode_from_name(std::string_view name);  // InvalidConfig on unknown

struct ModelSpec {
  std::shared_ptr<const SubwordTokenizer> tokenizer;
  std::shared_ptr<const NgramModel> model;
};

struct EnsembleSetup {
  std::vector<ModelSpec> models;
  std::size_t drafter_index = 0;  // all other models act as verifiers
  std::size_t chunk_len = 5;
  std::size_t top_k = 8;
  std::size_t max_new_tokens = 2048;
  double threshold = 0.5;  // Threshold mode: ensemble when drafter max below
  SharpeningConfig sharpening;
  // Sharpening normally applies only to chunked verification; this opt-in
  // extends it to the every-token and threshold ensembling paths.
  bool sharpen_baselines = false;
};

struct TraceEvent {
  enum class Kind { Generate, Skip, Ensemble, CachePrune };
  Kind kind = Kind::Generate;

  std::size_t step = 0;           // commit units emitted before this event
  std::size_t committed_len = 0;  // committed bytes (prompt included)

  // Generate: tokens drafted in this burst (1 outside chunked mode).
  std::size_t n_ids = 0;
  std::vector<std::string> draft_tokens;

  // Skip / Ensemble: position within the current draft and the verdict.
  std::size_t position = 0;
  std::string verdict;
  std::string token;      // token committed by this event
  std::string old_token;  // Ensemble: the drafted token that was replaced
  bool sharpened = false;
  double mean_prob = 0.0;
  double drafter_top_prob = 0.0;
  std::size_t chunk_start_len = 0;  // committed bytes when the draft began

  // CachePrune
  std::size_t model_index = 0;
  std::size_t dropped = 0;
  std::size_t kept = 0;
};

struct ModelCallCounts {
  std::size_t autoregressive = 0;
  std::size_t chunked = 0;
};

struct DecodeTrace {
  Mode mode = Mode::Single;
  std::string prompt;
  std::string committed_text;  // prompt plus everything generated
  std::string output_text;     // committed_text minus the prompt
  std::vector<TraceEvent> events;

  std::size_t tokens_emitted = 0;  // commit units; replacements count once
  std::size_t ensemble_ops = 0;
  std::size_t skip_consensus = 0;
  std::size_t skip_avg_prob = 0;
  std::size_t skip_oov_shadow = 0;
  std::vector<ModelCallCounts> forward_calls;     // per model
  std::vector<std::size_t> cache_generations;     // final prune counters
  double wall_ms = 0.0;
  bool stopped_on_eos = false;
};

// 100 * ensemble_ops / tokens_emitted; throws InvalidTrace when no tokens
// were emitted.
double et_ratio(const DecodeTrace& trace);

// Run one decode in the given mode. Validates the setup (non-empty model
// list, drafter index in range, chunk_len >= 1, max_new_tokens >= 1,
// top_k >= 1) and throws InvalidConfig on violations. Decoding is greedy and
// fully deterministic; after every commit each model's simulated cache
// decodes exactly to the committed text (InternalInvariantViolation
// otherwise).
DecodeTrace decode(const EnsembleSetup& setup, Mode mode,
                   std::string_view prompt);

}  // namespace specens
