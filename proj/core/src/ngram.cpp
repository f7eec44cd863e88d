#include "specens/ngram.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "specens/errors.hpp"

namespace specens {

double SparseDist::prob_of(const std::string& token) const {
  for (const auto& e : entries) {
    if (e.token == token) {
      return e.prob;
    }
  }
  return 0.0;
}

double SparseDist::top_prob() const {
  return entries.empty() ? 0.0 : entries.front().prob;
}

namespace {

std::string pack_context(std::span<const TokenId> ids) {
  std::string key;
  key.reserve(ids.size() * 4);
  for (TokenId id : ids) {
    key.push_back(static_cast<char>(id & 0xff));
    key.push_back(static_cast<char>((id >> 8) & 0xff));
    key.push_back(static_cast<char>((id >> 16) & 0xff));
    key.push_back(static_cast<char>((id >> 24) & 0xff));
  }
  return key;
}

std::vector<TokenId> unpack_context(const std::string& key) {
  std::vector<TokenId> ids(key.size() / 4);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    ids[i] = static_cast<TokenId>(static_cast<unsigned char>(key[4 * i])) |
             static_cast<TokenId>(static_cast<unsigned char>(key[4 * i + 1]))
                 << 8 |
             static_cast<TokenId>(static_cast<unsigned char>(key[4 * i + 2]))
                 << 16 |
             static_cast<TokenId>(static_cast<unsigned char>(key[4 * i + 3]))
                 << 24;
  }
  return ids;
}

}  // namespace

NgramModel::NgramModel(std::shared_ptr<const SubwordTokenizer> tokenizer,
                       std::size_t order, double alpha)
    : tokenizer_(std::move(tokenizer)), order_(order), alpha_(alpha) {
  if (!tokenizer_) {
    throw InvalidConfig("model requires a tokenizer");
  }
  if (order_ < 1) {
    throw InvalidConfig("n-gram order must be at least 1");
  }
  if (!(alpha_ > 0.0)) {
    throw InvalidConfig("smoothing alpha must be positive");
  }
}

NgramModel NgramModel::train(std::shared_ptr<const SubwordTokenizer> tokenizer,
                             std::string_view corpus, std::size_t order,
                             double alpha) {
  if (corpus.empty()) {
    throw InvalidCorpus("training corpus is empty");
  }
  NgramModel model(std::move(tokenizer), order, alpha);
  const auto& tok = *model.tokenizer_;
  std::vector<TokenId> stream(order - 1, tok.bos_id());
  const auto body = tok.encode(corpus);
  stream.insert(stream.end(), body.begin(), body.end());
  stream.push_back(tok.eos_id());
  model.observe(stream);
  return model;
}

void NgramModel::observe(std::span<const TokenId> stream) {
  const std::size_t ctx_len = order_ - 1;
  for (std::size_t i = ctx_len; i < stream.size(); ++i) {
    auto& ctx = counts_[pack_context(stream.subspan(i - ctx_len, ctx_len))];
    ++ctx.by_token[stream[i]];
    ++ctx.total;
  }
}

std::vector<TokenId> NgramModel::clip_context(
    std::span<const TokenId> context) const {
  const std::size_t ctx_len = order_ - 1;
  std::vector<TokenId> out;
  out.reserve(ctx_len);
  if (context.size() >= ctx_len) {
    const auto tail = context.subspan(context.size() - ctx_len);
    out.assign(tail.begin(), tail.end());
  } else {
    out.assign(ctx_len - context.size(), tokenizer_->bos_id());
    out.insert(out.end(), context.begin(), context.end());
  }
  return out;
}

SparseDist NgramModel::next_dist(std::span<const TokenId> context,
                                 std::size_t top_k) const {
  if (top_k < 1) {
    throw InvalidConfig("top_k must be at least 1");
  }
  const std::size_t vocab = tokenizer_->vocab_size();
  const ContextCounts* ctx = nullptr;
  const auto it = counts_.find(pack_context(clip_context(context)));
  if (it != counts_.end()) {
    ctx = &it->second;
  }
  const std::size_t total = ctx ? ctx->total : 0;
  const double denom = static_cast<double>(total) + alpha_ * vocab;

  // Seen tokens first: count descending, token string ascending, which is
  // exactly probability order since the denominator is shared.
  struct Seen {
    const std::string* token;
    std::size_t count;
  };
  std::vector<Seen> seen;
  if (ctx) {
    seen.reserve(ctx->by_token.size());
    for (const auto& [id, count] : ctx->by_token) {
      seen.push_back({&tokenizer_->token_string(id), count});
    }
    std::sort(seen.begin(), seen.end(), [](const Seen& a, const Seen& b) {
      if (a.count != b.count) {
        return a.count > b.count;
      }
      return *a.token < *b.token;
    });
  }

  SparseDist dist;
  dist.entries.reserve(std::min(top_k, vocab));
  double covered = 0.0;
  for (const auto& s : seen) {
    if (dist.entries.size() == top_k) {
      break;
    }
    const double p = (static_cast<double>(s.count) + alpha_) / denom;
    dist.entries.push_back({*s.token, p});
    covered += p;
  }
  if (dist.entries.size() < top_k) {
    // Unseen tokens all share the smoothing floor; break ties by string.
    const double floor_p = alpha_ / denom;
    std::unordered_map<std::string_view, bool> seen_set;
    seen_set.reserve(seen.size());
    for (const auto& s : seen) {
      seen_set.emplace(*s.token, true);
    }
    for (TokenId id : tokenizer_->ids_by_string()) {
      if (dist.entries.size() == top_k) {
        break;
      }
      const auto& token = tokenizer_->token_string(id);
      if (seen_set.count(token) != 0) {
        continue;
      }
      dist.entries.push_back({token, floor_p});
      covered += floor_p;
    }
  }
  dist.mass_truncated = std::max(0.0, 1.0 - covered);
  return dist;
}

std::vector<SparseDist> NgramModel::forward_dists(
    std::span<const TokenId> prefix_ids, std::span<const TokenId> draft_ids,
    std::size_t top_k) const {
  std::vector<SparseDist> out;
  out.reserve(draft_ids.size() + 1);
  std::vector<TokenId> context(prefix_ids.begin(), prefix_ids.end());
  out.push_back(next_dist(context, top_k));
  for (TokenId id : draft_ids) {
    context.push_back(id);
    out.push_back(next_dist(context, top_k));
  }
  return out;
}

std::string NgramModel::to_json() const {
  nlohmann::json j;
  j["version"] = 1;
  j["tokenizer_file"] = tokenizer_file_;
  j["order"] = order_;
  j["alpha"] = alpha_;

  struct Row {
    std::vector<TokenId> ctx;
    TokenId token;
    std::size_t count;
  };
  std::vector<Row> rows;
  for (const auto& [key, ctx] : counts_) {
    const auto ids = unpack_context(key);
    for (const auto& [token, count] : ctx.by_token) {
      rows.push_back({ids, token, count});
    }
  }
  std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
    if (a.ctx != b.ctx) {
      return a.ctx < b.ctx;
    }
    return a.token < b.token;
  });

  nlohmann::json counts = nlohmann::json::array();
  for (const auto& row : rows) {
    counts.push_back({row.ctx, row.token, row.count});
  }
  j["counts"] = std::move(counts);
  return j.dump() + "\n";
}

NgramModel NgramModel::parse_json(
    const std::string& text,
    std::shared_ptr<const SubwordTokenizer> tokenizer) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidConfig(std::string("model artifact is not valid JSON: ") +
                        e.what());
  }
  if (!j.is_object() || !j.contains("version") || !j.contains("order") ||
      !j.contains("alpha") || !j.contains("counts")) {
    throw InvalidConfig("model artifact missing required fields");
  }
  if (j["version"].get<int>() != 1) {
    throw InvalidConfig("unsupported model artifact version");
  }
  NgramModel model(std::move(tokenizer), j["order"].get<std::size_t>(),
                   j["alpha"].get<double>());
  model.tokenizer_file_ = j.value("tokenizer_file", std::string());
  const std::size_t vocab = model.tokenizer_->vocab_size();
  const std::size_t ctx_len = model.order_ - 1;
  for (const auto& row : j["counts"]) {
    if (!row.is_array() || row.size() != 3 || !row[0].is_array()) {
      throw InvalidConfig("malformed count row in model artifact");
    }
    std::vector<TokenId> ctx;
    for (const auto& v : row[0]) {
      ctx.push_back(v.get<TokenId>());
    }
    const TokenId token = row[1].get<TokenId>();
    const std::size_t count = row[2].get<std::size_t>();
    if (ctx.size() != ctx_len || token >= vocab ||
        std::any_of(ctx.begin(), ctx.end(),
                    [&](TokenId id) { return id >= vocab; })) {
      throw InvalidConfig("count row inconsistent with tokenizer vocabulary");
    }
    if (count == 0) {
      throw InvalidConfig("zero count row in model artifact");
    }
    auto& bucket = model.counts_[pack_context(ctx)];
    bucket.by_token[token] += count;
    bucket.total += count;
  }
  return model;
}

NgramModel NgramModel::load_file(
    const std::string& path,
    std::shared_ptr<const SubwordTokenizer> tokenizer) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw InvalidConfig("cannot open model artifact: " + path);
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_json(buf.str(), std::move(tokenizer));
}

void NgramModel::save_file(const std::string& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw InvalidConfig("cannot write model artifact: " + path);
  }
  out << to_json();
}

}  // namespace specens
