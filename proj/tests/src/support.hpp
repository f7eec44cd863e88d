#pragma once

// Shared fixtures and independent reference implementations ("oracles") the
// tests compare the library against. Oracles favor obviousness over speed
// and deliberately avoid the library's own code paths.

#include <algorithm>
#include <map>
#include <memory>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "specens/align.hpp"
#include "specens/ngram.hpp"
#include "specens/tokenizer.hpp"

namespace testsupport {

using specens::SparseDist;
using specens::SubwordTokenizer;
using specens::TokenId;

// Reference encoder: replay the merge list in training order, each merge
// applied exhaustively left to right, starting from raw bytes.
inline std::vector<TokenId> naive_encode(const SubwordTokenizer& tok,
                                         std::string_view text) {
  std::vector<TokenId> ids;
  for (unsigned char b : text) {
    ids.push_back(b);
  }
  const auto& merges = tok.merges();
  for (std::size_t rank = 0; rank < merges.size(); ++rank) {
    const TokenId merged =
        static_cast<TokenId>(SubwordTokenizer::kBaseAlphabetSize +
                             SubwordTokenizer::kNumSpecials + rank);
    std::vector<TokenId> next;
    next.reserve(ids.size());
    for (std::size_t i = 0; i < ids.size();) {
      if (i + 1 < ids.size() && ids[i] == merges[rank].first &&
          ids[i + 1] == merges[rank].second) {
        next.push_back(merged);
        i += 2;
      } else {
        next.push_back(ids[i]);
        i += 1;
      }
    }
    ids = std::move(next);
  }
  return ids;
}

// Reference aligned probability, written independently of align.cpp.
inline double oracle_aligned_prob(const SubwordTokenizer& tok,
                                  const SparseDist& dist,
                                  const std::string& s) {
  for (const auto& e : dist.entries) {
    if (e.token == s) {
      return e.prob;
    }
  }
  if (s.empty()) {
    return 0.0;
  }
  const auto ids = tok.encode(s);
  const std::string& first = tok.token_string(ids.front());
  if (first == s) {
    return 0.0;  // verbatim case already failed above
  }
  for (const auto& e : dist.entries) {
    if (e.token == first) {
      return e.prob;
    }
  }
  return 0.0;
}

// Reference union-support average and its argmax (lexicographic smallest on
// ties), mirroring how a full ensemble step would pick a token.
inline std::map<std::string, double> oracle_ensemble(
    const std::vector<specens::AlignedSource>& sources) {
  std::set<std::string> support;
  for (const auto& src : sources) {
    for (const auto& e : src.dist->entries) {
      support.insert(e.token);
    }
  }
  std::map<std::string, double> avg;
  for (const auto& s : support) {
    double sum = 0.0;
    for (const auto& src : sources) {
      sum += oracle_aligned_prob(*src.tokenizer, *src.dist, s);
    }
    avg[s] = sum / static_cast<double>(sources.size());
  }
  return avg;
}

inline std::string oracle_argmax(const std::map<std::string, double>& avg) {
  std::string best;
  double best_p = -1.0;
  for (const auto& [token, p] : avg) {
    if (p > best_p) {
      best = token;
      best_p = p;
    }
  }
  return best;
}

// Reference mid-token check: a drafter boundary is fine iff some verifier
// token prefix decodes to exactly the same byte length.
inline bool oracle_is_oov_like(const SubwordTokenizer& verifier_tok,
                               const std::vector<TokenId>& verifier_ids,
                               std::size_t byte_offset) {
  if (byte_offset == 0) {
    return false;
  }
  std::string decoded;
  for (TokenId id : verifier_ids) {
    decoded += verifier_tok.token_string(id);
    if (decoded.size() == byte_offset) {
      return false;
    }
    if (decoded.size() > byte_offset) {
      return true;
    }
  }
  return true;
}

// The "Incorrect" pair: one tokenizer splits the word into three pieces, the
// other has it whole.
inline SubwordTokenizer make_split_incorrect_tokenizer() {
  return SubwordTokenizer::from_merges({
      {"I", "n"},
      {"In", "c"},
      {"o", "r"},
      {"or", "r"},
      {"e", "c"},
      {"ec", "t"},
  });
}

inline SubwordTokenizer make_whole_incorrect_tokenizer() {
  return SubwordTokenizer::from_merges({
      {"I", "n"},
      {"In", "c"},
      {"o", "r"},
      {"or", "r"},
      {"e", "c"},
      {"ec", "t"},
      {"Inc", "orr"},
      {"Incorr", "ect"},
  });
}

inline SubwordTokenizer make_byte_tokenizer() {
  return SubwordTokenizer::from_merges({});
}

inline std::shared_ptr<const SubwordTokenizer> shared_tok(
    SubwordTokenizer tok) {
  return std::make_shared<const SubwordTokenizer>(std::move(tok));
}

// Random text over a small alphabet, word-ish so trained tokenizers share
// some structure but disagree on details.
inline std::string random_text(std::mt19937& rng, std::size_t length,
                               std::string_view alphabet = "abcd ") {
  std::uniform_int_distribution<std::size_t> pick(0, alphabet.size() - 1);
  std::string out;
  out.reserve(length);
  for (std::size_t i = 0; i < length; ++i) {
    out.push_back(alphabet[pick(rng)]);
  }
  return out;
}

inline SparseDist make_dist(
    std::vector<std::pair<std::string, double>> entries) {
  SparseDist dist;
  double sum = 0.0;
  for (auto& [token, p] : entries) {
    dist.entries.push_back({std::move(token), p});
    sum += p;
  }
  std::stable_sort(dist.entries.begin(), dist.entries.end(),
                   [](const auto& a, const auto& b) {
                     if (a.prob != b.prob) {
                       return a.prob > b.prob;
                     }
                     return a.token < b.token;
                   });
  dist.mass_truncated = std::max(0.0, 1.0 - sum);
  return dist;
}

}  // namespace testsupport
