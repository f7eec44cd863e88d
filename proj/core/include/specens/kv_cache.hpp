#pragma once

#include <cstddef>
#include <vector>

#include "specens/tokenizer.hpp"

namespace specens {

struct PruneReport {
  std::size_t kept = 0;
  std::size_t dropped = 0;
};

// Stand-in for a per-model KV cache: the token ids the model is currently
// conditioned on. Syncing against committed text re-encodes canonically and
// drops only the stale suffix, like prefix-preserving cache reuse.
class SimulatedKvCache {
 public:
  const std::vector<TokenId>& ids() const { return ids_; }
  std::size_t size() const { return ids_.size(); }
  std::size_t generation_counter() const { return generation_counter_; }

  void append(TokenId id) { ids_.push_back(id); }
  void append(std::span<const TokenId> ids);
  // Drop everything past the first `kept` ids.
  PruneReport truncate(std::size_t kept);
  // Re-encode `text` with `tok`, keep the longest shared id prefix, replace
  // the rest. Bumps the generation counter only when ids were dropped.
  PruneReport sync(const SubwordTokenizer& tok, std::string_view text);

 private:
  std::vector<TokenId> ids_;
  std::size_t generation_counter_ = 0;
};

}  // namespace specens
