#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace specens {

using TokenId = std::uint32_t;

// Byte offsets of token ends within the decoded text of an id sequence.
// offsets[i] is the byte length of decode(ids[0..=i]); the last offset
// equals total_len. Offsets are strictly increasing because every token
// decodes to at least one byte.
struct BoundarySet {
  std::vector<std::size_t> offsets;
  std::size_t total_len = 0;

  bool contains(std::size_t byte_offset) const;
};

// Byte-level BPE tokenizer. The base alphabet is all 256 byte values, so
// encode() never fails and decode(encode(s)) == s for arbitrary byte
// strings. No pretokenization: merges may cross whitespace and punctuation.
//
// Vocabulary layout is fixed: ids 0..255 are the raw bytes, 256/257 are the
// BOS/EOS markers, and each merge appends one id after that, in merge order.
class SubwordTokenizer {
 public:
  static constexpr std::size_t kBaseAlphabetSize = 256;
  static constexpr std::size_t kNumSpecials = 2;

  // Learns merges from `corpus` by greedy most-frequent-pair merging until
  // the vocabulary reaches `target_vocab_size` or no adjacent pair occurs at
  // least twice. Frequency ties are broken by the lexicographically smaller
  // merged string, then by the smaller left operand. Pairs whose merged
  // string is already a vocabulary entry are never picked, so every merge
  // introduces exactly one new token.
  //
  // Throws InvalidCorpus for an empty corpus and InvalidConfig when
  // target_vocab_size is below the base alphabet plus specials.
  static SubwordTokenizer train(std::string_view corpus,
                                std::size_t target_vocab_size);

  // Builds a tokenizer from an explicit merge list (operands given as byte
  // strings). Mostly useful for tests and for loading artifacts. Throws
  // InvalidConfig if an operand is unknown at the time its merge appears or
  // if a merge would recreate an existing token string.
  static SubwordTokenizer from_merges(
      const std::vector<std::pair<std::string, std::string>>& merges);

  // JSON artifact round trip. Byte strings are serialized as arrays of byte
  // values so the files stay valid JSON for arbitrary corpora.
  static SubwordTokenizer load_file(const std::string& path);
  static SubwordTokenizer parse_json(const std::string& text);
  void save_file(const std::string& path) const;
  std::string to_json() const;

  std::vector<TokenId> encode(std::string_view text) const;
  std::string decode(std::span<const TokenId> ids) const;
  BoundarySet boundaries(std::span<const TokenId> ids) const;

  std::size_t vocab_size() const { return vocab_.size(); }
  std::size_t merge_count() const { return merges_.size(); }
  const std::vector<std::pair<TokenId, TokenId>>& merges() const {
    return merges_;
  }

  const std::string& token_string(TokenId id) const;
  std::optional<TokenId> token_id(std::string_view token) const;

  TokenId bos_id() const { return kBaseAlphabetSize; }
  TokenId eos_id() const { return kBaseAlphabetSize + 1; }
  const std::string& bos_string() const;
  const std::string& eos_string() const;

  // Ids ordered by their token string; used to resolve lexicographic ties
  // without materializing all strings repeatedly.
  const std::vector<TokenId>& ids_by_string() const;

 private:
  SubwordTokenizer();

  TokenId add_merge(TokenId left, TokenId right);

  std::vector<std::string> vocab_;                      // id -> bytes
  std::unordered_map<std::string, TokenId> lookup_;     // bytes -> id
  std::vector<std::pair<TokenId, TokenId>> merges_;     // in training order
  // (left, right) -> rank; rank doubles as index into merges_.
  std::unordered_map<std::uint64_t, std::uint32_t> merge_rank_;
  mutable std::vector<TokenId> ids_by_string_;          // lazily built
};

}  // namespace specens
