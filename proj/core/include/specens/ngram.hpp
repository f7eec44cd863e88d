#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "specens/tokenizer.hpp"

namespace specens {

// Sparse next-token distribution. Entries are the top-k tokens sorted by
// probability descending, token string ascending on ties. mass_truncated is
// the probability left out by the cut, clamped at zero.
struct DistEntry {
  std::string token;
  double prob = 0.0;
};

struct SparseDist {
  std::vector<DistEntry> entries;
  double mass_truncated = 0.0;

  // Probability recorded for an exact token string, zero when absent.
  double prob_of(const std::string& token) const;
  // Largest entry probability, zero for an empty dist.
  double top_prob() const;
};

// Count-based n-gram model with additive smoothing over the tokenizer's
// vocabulary. Token ids are those of the owning tokenizer; the start-of-text
// and end-of-text specials participate as ordinary tokens.
class NgramModel {
 public:
  static NgramModel train(std::shared_ptr<const SubwordTokenizer> tokenizer,
                          std::string_view corpus, std::size_t order,
                          double alpha);

  // Predictive distribution after `context` (only the last order-1 ids
  // matter; shorter contexts are padded with start-of-text on the left).
  SparseDist next_dist(std::span<const TokenId> context,
                       std::size_t top_k) const;

  // result[i] == next_dist(prefix ++ draft[0..i)) for i in [0, |draft|].
  // One call covers a whole draft so a verifier never needs per-token
  // autoregressive queries; metrics count it as a single forward invocation.
  std::vector<SparseDist> forward_dists(std::span<const TokenId> prefix_ids,
                                        std::span<const TokenId> draft_ids,
                                        std::size_t top_k) const;

  std::size_t order() const { return order_; }
  double alpha() const { return alpha_; }
  const std::shared_ptr<const SubwordTokenizer>& tokenizer() const {
    return tokenizer_;
  }

  // Path of the tokenizer artifact this model was trained against; carried
  // in the model artifact for provenance, not resolved at load time.
  const std::string& tokenizer_file() const { return tokenizer_file_; }
  void set_tokenizer_file(std::string path) {
    tokenizer_file_ = std::move(path);
  }

  std::string to_json() const;
  static NgramModel parse_json(
      const std::string& text,
      std::shared_ptr<const SubwordTokenizer> tokenizer);
  static NgramModel load_file(
      const std::string& path,
      std::shared_ptr<const SubwordTokenizer> tokenizer);
  void save_file(const std::string& path) const;

 private:
  NgramModel(std::shared_ptr<const SubwordTokenizer> tokenizer,
             std::size_t order, double alpha);

  struct ContextCounts {
    std::unordered_map<TokenId, std::size_t> by_token;
    std::size_t total = 0;
  };

  std::vector<TokenId> clip_context(std::span<const TokenId> context) const;
  void observe(std::span<const TokenId> stream);

  std::shared_ptr<const SubwordTokenizer> tokenizer_;
  std::size_t order_;
  double alpha_;
  std::string tokenizer_file_;
  // Keyed by the (order-1)-id context packed into a byte string.
  std::unordered_map<std::string, ContextCounts> counts_;
};

}  // namespace specens
