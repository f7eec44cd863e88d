#include "specens/align.hpp"

#include <algorithm>

#include "specens/errors.hpp"

namespace specens {

namespace {

bool has_entry(const SparseDist& dist, const std::string& token) {
  return std::any_of(dist.entries.begin(), dist.entries.end(),
                     [&](const DistEntry& e) { return e.token == token; });
}

bool starts_with(const std::string& s, const std::string& prefix) {
  return s.size() >= prefix.size() &&
         s.compare(0, prefix.size(), prefix) == 0;
}

}  // namespace

std::optional<std::string> aligned_entry(const SubwordTokenizer& tokenizer,
                                         const SparseDist& dist,
                                         const std::string& token) {
  if (has_entry(dist, token)) {
    return token;
  }
  if (token.empty()) {
    return std::nullopt;
  }
  const auto ids = tokenizer.encode(token);
  const auto& first = tokenizer.token_string(ids.front());
  if (first != token && has_entry(dist, first)) {
    return first;
  }
  return std::nullopt;
}

double aligned_prob(const SubwordTokenizer& tokenizer, const SparseDist& dist,
                    const std::string& token) {
  const auto entry = aligned_entry(tokenizer, dist, token);
  return entry ? dist.prob_of(*entry) : 0.0;
}

EnsembleDist build_ensemble(const std::vector<AlignedSource>& sources) {
  if (sources.empty()) {
    throw InvalidConfig("ensemble requires at least one distribution");
  }
  EnsembleDist out;
  for (const auto& source : sources) {
    for (const auto& e : source.dist->entries) {
      out.per_model.try_emplace(e.token);
    }
  }
  if (out.per_model.empty()) {
    throw InvalidConfig("ensemble support is empty");
  }
  for (auto& [token, probs] : out.per_model) {
    probs.reserve(sources.size());
    double sum = 0.0;
    for (const auto& source : sources) {
      const double p = aligned_prob(*source.tokenizer, *source.dist, token);
      probs.push_back(p);
      sum += p;
    }
    out.averaged[token] = sum / static_cast<double>(sources.size());
  }
  return out;
}

bool sharpen(EnsembleDist& dist, const SparseDist& drafter_dist,
             const SharpeningConfig& config) {
  dist.sharpened_scores = dist.averaged;
  double max_avg = 0.0;
  for (const auto& [token, p] : dist.averaged) {
    max_avg = std::max(max_avg, p);
  }
  if (max_avg >= config.smoothness_threshold) {
    return false;
  }
  bool moved = false;
  auto& scores = *dist.sharpened_scores;
  for (const auto& entry : drafter_dist.entries) {
    const auto it = dist.averaged.find(entry.token);
    if (it == dist.averaged.end() || it->second <= config.prefix_min_prob) {
      continue;
    }
    double gain = 0.0;
    for (const auto& [other, p] : dist.averaged) {
      if (other != entry.token && starts_with(other, entry.token)) {
        gain += p;
      }
    }
    if (gain > 0.0) {
      scores[entry.token] = it->second + gain;
      moved = true;
    }
  }
  return moved;
}

SelectedToken select_token(const EnsembleDist& dist) {
  const auto& scores =
      dist.sharpened_scores ? *dist.sharpened_scores : dist.averaged;
  if (scores.empty()) {
    throw InvalidConfig("cannot select from an empty ensemble");
  }
  SelectedToken best{scores.begin()->first, scores.begin()->second};
  for (const auto& [token, value] : scores) {
    if (value > best.value) {
      best = {token, value};
    }
  }
  return best;
}

}  // namespace specens
