#include "specens/tokenizer.hpp"

#include <algorithm>
#include <fstream>
#include <queue>
#include <sstream>

#include "json.hpp"

#include "specens/errors.hpp"

namespace specens {

namespace {

constexpr const char* kBosMarker = "<bos>";
constexpr const char* kEosMarker = "<eos>";

std::uint64_t pair_key(TokenId left, TokenId right) {
  return (static_cast<std::uint64_t>(left) << 32) | right;
}

}  // namespace

bool BoundarySet::contains(std::size_t byte_offset) const {
  return std::binary_search(offsets.begin(), offsets.end(), byte_offset);
}

SubwordTokenizer::SubwordTokenizer() {
  vocab_.reserve(kBaseAlphabetSize + kNumSpecials);
  for (unsigned b = 0; b < kBaseAlphabetSize; ++b) {
    vocab_.emplace_back(1, static_cast<char>(static_cast<unsigned char>(b)));
  }
  vocab_.emplace_back(kBosMarker);
  vocab_.emplace_back(kEosMarker);
  for (TokenId id = 0; id < vocab_.size(); ++id) {
    lookup_.emplace(vocab_[id], id);
  }
}

const std::string& SubwordTokenizer::bos_string() const {
  return vocab_[bos_id()];
}

const std::string& SubwordTokenizer::eos_string() const {
  return vocab_[eos_id()];
}

TokenId SubwordTokenizer::add_merge(TokenId left, TokenId right) {
  const std::string merged = vocab_[left] + vocab_[right];
  if (lookup_.count(merged) != 0) {
    throw InvalidConfig("merge recreates existing token: " + merged);
  }
  const TokenId id = static_cast<TokenId>(vocab_.size());
  merge_rank_.emplace(pair_key(left, right),
                      static_cast<std::uint32_t>(merges_.size()));
  merges_.emplace_back(left, right);
  vocab_.push_back(merged);
  lookup_.emplace(merged, id);
  ids_by_string_.clear();
  return id;
}

SubwordTokenizer SubwordTokenizer::train(std::string_view corpus,
                                         std::size_t target_vocab_size) {
  if (corpus.empty()) {
    throw InvalidCorpus("training corpus is empty");
  }
  SubwordTokenizer tok;
  if (target_vocab_size < kBaseAlphabetSize) {
    throw InvalidConfig("target vocab size below the byte alphabet");
  }

  std::vector<TokenId> stream;
  stream.reserve(corpus.size());
  for (unsigned char b : corpus) {
    stream.push_back(b);
  }

  std::unordered_map<std::uint64_t, std::size_t> pair_counts;
  while (tok.vocab_size() < target_vocab_size) {
    pair_counts.clear();
    for (std::size_t i = 0; i + 1 < stream.size(); ++i) {
      ++pair_counts[pair_key(stream[i], stream[i + 1])];
    }

    bool found = false;
    std::size_t best_count = 1;  // require at least two occurrences
    TokenId best_left = 0, best_right = 0;
    std::string best_merged, best_left_str;
    for (const auto& [key, count] : pair_counts) {
      if (count < 2 || count < best_count) {
        continue;
      }
      const TokenId left = static_cast<TokenId>(key >> 32);
      const TokenId right = static_cast<TokenId>(key & 0xffffffffu);
      std::string merged = tok.vocab_[left] + tok.vocab_[right];
      if (tok.lookup_.count(merged) != 0) {
        continue;  // would not grow the vocabulary
      }
      if (found && count == best_count) {
        if (merged > best_merged) {
          continue;
        }
        if (merged == best_merged && tok.vocab_[left] >= best_left_str) {
          continue;
        }
      }
      found = true;
      best_count = count;
      best_left = left;
      best_right = right;
      best_merged = std::move(merged);
      best_left_str = tok.vocab_[left];
    }
    if (!found) {
      break;
    }

    const TokenId merged_id = tok.add_merge(best_left, best_right);
    std::size_t out = 0;
    for (std::size_t i = 0; i < stream.size();) {
      if (i + 1 < stream.size() && stream[i] == best_left &&
          stream[i + 1] == best_right) {
        stream[out++] = merged_id;
        i += 2;
      } else {
        stream[out++] = stream[i];
        i += 1;
      }
    }
    stream.resize(out);
  }
  return tok;
}

SubwordTokenizer SubwordTokenizer::from_merges(
    const std::vector<std::pair<std::string, std::string>>& merges) {
  SubwordTokenizer tok;
  for (const auto& [left, right] : merges) {
    const auto left_id = tok.token_id(left);
    const auto right_id = tok.token_id(right);
    if (!left_id || !right_id) {
      throw InvalidConfig("merge operand is not a known token");
    }
    tok.add_merge(*left_id, *right_id);
  }
  return tok;
}

std::vector<TokenId> SubwordTokenizer::encode(std::string_view text) const {
  std::vector<TokenId> ids;
  if (text.empty()) {
    return ids;
  }

  // Doubly linked list over byte positions; merges collapse nodes in place.
  const std::size_t n = text.size();
  std::vector<TokenId> node_id(n);
  std::vector<std::size_t> prev(n), next(n);
  std::vector<char> alive(n, 1);
  for (std::size_t i = 0; i < n; ++i) {
    node_id[i] = static_cast<unsigned char>(text[i]);
    prev[i] = i == 0 ? n : i - 1;
    next[i] = i + 1;
  }

  using Cand = std::pair<std::uint32_t, std::size_t>;  // (rank, position)
  std::priority_queue<Cand, std::vector<Cand>, std::greater<Cand>> agenda;
  auto push_pair = [&](std::size_t pos) {
    if (pos >= n || !alive[pos] || next[pos] >= n) {
      return;
    }
    const auto it =
        merge_rank_.find(pair_key(node_id[pos], node_id[next[pos]]));
    if (it != merge_rank_.end()) {
      agenda.emplace(it->second, pos);
    }
  };
  for (std::size_t i = 0; i + 1 < n; ++i) {
    push_pair(i);
  }

  // Lowest rank first, leftmost first within a rank. Equivalent to applying
  // the merge list in training order with exhaustive left-to-right passes.
  while (!agenda.empty()) {
    const auto [rank, pos] = agenda.top();
    agenda.pop();
    if (!alive[pos] || next[pos] >= n) {
      continue;
    }
    const auto it =
        merge_rank_.find(pair_key(node_id[pos], node_id[next[pos]]));
    if (it == merge_rank_.end() || it->second != rank) {
      continue;  // stale entry
    }
    const std::size_t right = next[pos];
    node_id[pos] =
        static_cast<TokenId>(kBaseAlphabetSize + kNumSpecials + rank);
    alive[right] = 0;
    next[pos] = next[right];
    if (next[pos] < n) {
      prev[next[pos]] = pos;
    }
    if (prev[pos] < n) {
      push_pair(prev[pos]);
    }
    push_pair(pos);
  }

  for (std::size_t i = 0; i < n; i = next[i]) {
    ids.push_back(node_id[i]);
  }
  return ids;
}

std::string SubwordTokenizer::decode(std::span<const TokenId> ids) const {
  std::string out;
  for (TokenId id : ids) {
    out += token_string(id);
  }
  return out;
}

BoundarySet SubwordTokenizer::boundaries(std::span<const TokenId> ids) const {
  BoundarySet bounds;
  bounds.offsets.reserve(ids.size());
  std::size_t cum = 0;
  for (TokenId id : ids) {
    cum += token_string(id).size();
    bounds.offsets.push_back(cum);
  }
  bounds.total_len = cum;
  return bounds;
}

const std::string& SubwordTokenizer::token_string(TokenId id) const {
  if (id >= vocab_.size()) {
    throw UnknownToken("token id " + std::to_string(id) +
                       " outside vocabulary of size " +
                       std::to_string(vocab_.size()));
  }
  return vocab_[id];
}

std::optional<TokenId> SubwordTokenizer::token_id(
    std::string_view token) const {
  const auto it = lookup_.find(std::string(token));
  if (it == lookup_.end()) {
    return std::nullopt;
  }
  return it->second;
}

const std::vector<TokenId>& SubwordTokenizer::ids_by_string() const {
  if (ids_by_string_.size() != vocab_.size()) {
    ids_by_string_.resize(vocab_.size());
    for (TokenId id = 0; id < vocab_.size(); ++id) {
      ids_by_string_[id] = id;
    }
    std::sort(ids_by_string_.begin(), ids_by_string_.end(),
              [&](TokenId a, TokenId b) { return vocab_[a] < vocab_[b]; });
  }
  return ids_by_string_;
}

namespace {

nlohmann::json bytes_to_json(const std::string& s) {
  nlohmann::json arr = nlohmann::json::array();
  for (unsigned char c : s) {
    arr.push_back(static_cast<int>(c));
  }
  return arr;
}

std::string bytes_from_json(const nlohmann::json& arr) {
  if (!arr.is_array()) {
    throw InvalidConfig("byte string field is not an array");
  }
  std::string out;
  out.reserve(arr.size());
  for (const auto& v : arr) {
    if (!v.is_number_unsigned() || v.get<unsigned>() > 255) {
      throw InvalidConfig("byte value out of range in artifact");
    }
    out.push_back(static_cast<char>(v.get<unsigned>()));
  }
  return out;
}

}  // namespace

std::string SubwordTokenizer::to_json() const {
  nlohmann::json j;
  j["version"] = 1;
  nlohmann::json alphabet = nlohmann::json::array();
  for (unsigned b = 0; b < kBaseAlphabetSize; ++b) {
    alphabet.push_back(b);
  }
  j["base_alphabet"] = std::move(alphabet);
  nlohmann::json merges = nlohmann::json::array();
  for (const auto& [left, right] : merges_) {
    merges.push_back({bytes_to_json(vocab_[left]), bytes_to_json(vocab_[right])});
  }
  j["merges"] = std::move(merges);
  j["specials"] = {{"bos_id", bos_id()}, {"eos_id", eos_id()}};
  return j.dump(2) + "\n";
}

SubwordTokenizer SubwordTokenizer::parse_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidConfig(std::string("tokenizer artifact is not valid JSON: ") +
                        e.what());
  }
  if (!j.is_object() || !j.contains("version") || !j.contains("merges") ||
      !j.contains("base_alphabet") || !j.contains("specials")) {
    throw InvalidConfig("tokenizer artifact missing required fields");
  }
  if (j["version"].get<int>() != 1) {
    throw InvalidConfig("unsupported tokenizer artifact version");
  }
  if (!j["base_alphabet"].is_array() ||
      j["base_alphabet"].size() != kBaseAlphabetSize) {
    throw InvalidConfig("tokenizer artifact base alphabet must cover bytes");
  }
  std::vector<std::pair<std::string, std::string>> merges;
  for (const auto& m : j["merges"]) {
    if (!m.is_array() || m.size() != 2) {
      throw InvalidConfig("malformed merge entry in tokenizer artifact");
    }
    merges.emplace_back(bytes_from_json(m[0]), bytes_from_json(m[1]));
  }
  SubwordTokenizer tok = from_merges(merges);
  const auto& specials = j["specials"];
  if (!specials.is_object() ||
      specials.value("bos_id", TokenId{0}) != tok.bos_id() ||
      specials.value("eos_id", TokenId{0}) != tok.eos_id()) {
    throw InvalidConfig("tokenizer artifact specials do not match layout");
  }
  return tok;
}

SubwordTokenizer SubwordTokenizer::load_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw InvalidConfig("cannot open tokenizer artifact: " + path);
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_json(buf.str());
}

void SubwordTokenizer::save_file(const std::string& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw InvalidConfig("cannot write tokenizer artifact: " + path);
  }
  out << to_json();
}

}  // namespace specens
