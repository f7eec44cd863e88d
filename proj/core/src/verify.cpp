#include "specens/verify.hpp"

#include <algorithm>
#include <set>

#include "specens/errors.hpp"

namespace specens {

const char* verdict_name(Verdict verdict) {
  switch (verdict) {
    case Verdict::SkipOovShadow:
      return "skip_oov_shadow";
    case Verdict::SkipConsensus:
      return "skip_consensus";
    case Verdict::SkipAvgProb:
      return "skip_avg_prob";
    case Verdict::Ensemble:
      return "ensemble";
  }
  return "unknown";
}

bool is_oov_like(std::size_t byte_offset,
                 const BoundarySet& verifier_bounds) {
  if (byte_offset == 0) {
    return false;
  }
  return !verifier_bounds.contains(byte_offset);
}

bool is_oov_like(const BoundarySet& drafter_bounds,
                 const BoundarySet& verifier_bounds, std::size_t j) {
  if (j >= drafter_bounds.offsets.size()) {
    throw InvalidPosition("token position " + std::to_string(j) +
                          " outside a draft of " +
                          std::to_string(drafter_bounds.offsets.size()) +
                          " tokens");
  }
  return is_oov_like(drafter_bounds.offsets[j], verifier_bounds);
}

bool consensus_skip(const std::string& draft_token,
                    const std::vector<AlignedSource>& verifier_sources) {
  for (const auto& source : verifier_sources) {
    const double aligned =
        aligned_prob(*source.tokenizer, *source.dist, draft_token);
    if (aligned != source.dist->top_prob() || aligned == 0.0) {
      return false;
    }
  }
  return true;
}

bool avg_prob_skip(const std::vector<double>& aligned_probs) {
  if (aligned_probs.empty()) {
    throw InvalidConfig("average-probability check needs at least one model");
  }
  double sum = 0.0;
  for (double p : aligned_probs) {
    sum += p;
  }
  return sum / static_cast<double>(aligned_probs.size()) > 0.5;
}

namespace {

bool is_prefix(const std::string& prefix, const std::string& s) {
  return s.size() >= prefix.size() &&
         s.compare(0, prefix.size(), prefix) == 0;
}

}  // namespace

bool extension_claim_guard(const std::string& token,
                           const std::vector<AlignedSource>& sources) {
  // Stand-in entries used when aligning `token`, per model and pooled.
  std::vector<std::optional<std::string>> stand_ins;
  std::set<std::string> pooled;
  stand_ins.reserve(sources.size());
  for (const auto& source : sources) {
    auto entry = aligned_entry(*source.tokenizer, *source.dist, token);
    if (entry) {
      pooled.insert(*entry);
    }
    stand_ins.push_back(std::move(entry));
  }
  for (std::size_t m = 0; m < sources.size(); ++m) {
    const auto& dist = *sources[m].dist;
    const double own =
        stand_ins[m] ? dist.prob_of(*stand_ins[m]) : 0.0;
    for (const auto& e : dist.entries) {
      bool claimable = is_prefix(e.token, token) || is_prefix(token, e.token);
      if (!claimable) {
        for (const auto& s : pooled) {
          if (e.token.size() > s.size() && is_prefix(s, e.token)) {
            claimable = true;
            break;
          }
        }
      }
      if (claimable && e.prob > own) {
        return false;
      }
    }
  }
  return true;
}

namespace {

// One verifier's retokenization of committed+draft plus its chunked
// distributions, with the bookkeeping to map a byte offset to the
// distribution conditioned on exactly the tokens before that offset.
struct VerifierView {
  const SubwordTokenizer* tokenizer = nullptr;
  BoundarySet bounds;
  std::vector<SparseDist> dists;  // dists[i]: after prefix + i draft tokens
  std::size_t prefix_count = 0;

  const SparseDist& dist_at(std::size_t byte_offset) const {
    const auto& off = bounds.offsets;
    const std::size_t covered =
        std::upper_bound(off.begin(), off.end(), byte_offset) - off.begin();
    if (covered < prefix_count || covered - prefix_count >= dists.size()) {
      throw InternalInvariantViolation(
          "verifier distribution index out of range");
    }
    return dists[covered - prefix_count];
  }
};

}  // namespace

VerifyOutcome verify_chunk(const SubwordTokenizer& drafter_tokenizer,
                           std::string_view committed_text,
                           const std::vector<std::string>& draft_tokens,
                           const std::vector<SparseDist>& drafter_dists,
                           const std::vector<VerifierInput>& verifiers,
                           const SharpeningConfig& sharpening,
                           std::size_t top_k) {
  if (draft_tokens.size() != drafter_dists.size()) {
    throw InternalInvariantViolation(
        "draft tokens and drafter distributions disagree in length");
  }
  VerifyOutcome outcome;
  if (draft_tokens.empty()) {
    return outcome;
  }

  std::string full_text(committed_text);
  for (const auto& t : draft_tokens) {
    full_text += t;
  }

  // Byte offset where each draft token starts; offset of token 0 doubles as
  // the carried-over boundary of the last committed token.
  std::vector<std::size_t> starts(draft_tokens.size());
  std::size_t cursor = committed_text.size();
  for (std::size_t j = 0; j < draft_tokens.size(); ++j) {
    starts[j] = cursor;
    cursor += draft_tokens[j].size();
  }

  std::vector<VerifierView> views;
  views.reserve(verifiers.size());
  for (const auto& v : verifiers) {
    VerifierView view;
    view.tokenizer = v.tokenizer;
    const auto ids = v.tokenizer->encode(full_text);
    view.bounds = v.tokenizer->boundaries(ids);
    const auto& off = view.bounds.offsets;
    view.prefix_count =
        std::upper_bound(off.begin(), off.end(), committed_text.size()) -
        off.begin();
    const std::span<const TokenId> all(ids);
    view.dists = v.model->forward_dists(all.subspan(0, view.prefix_count),
                                        all.subspan(view.prefix_count), top_k);
    views.push_back(std::move(view));
  }

  for (std::size_t j = 0; j < draft_tokens.size(); ++j) {
    PositionReport report;
    report.position = j;
    report.shadowed =
        std::any_of(views.begin(), views.end(), [&](const VerifierView& v) {
          return is_oov_like(starts[j], v.bounds);
        });
    if (report.shadowed) {
      report.verdict = Verdict::SkipOovShadow;
      outcome.reports.push_back(std::move(report));
      continue;
    }

    std::vector<AlignedSource> sources;
    sources.reserve(1 + views.size());
    sources.push_back({&drafter_tokenizer, &drafter_dists[j]});
    for (const auto& view : views) {
      sources.push_back({view.tokenizer, &view.dist_at(starts[j])});
    }
    for (const auto& source : sources) {
      report.aligned.push_back(
          aligned_prob(*source.tokenizer, *source.dist, draft_tokens[j]));
    }
    double sum = 0.0;
    for (double p : report.aligned) {
      sum += p;
    }
    report.mean_prob = sum / static_cast<double>(report.aligned.size());

    const std::vector<AlignedSource> verifier_sources(sources.begin() + 1,
                                                      sources.end());
    if (consensus_skip(draft_tokens[j], verifier_sources)) {
      report.verdict = Verdict::SkipConsensus;
      outcome.reports.push_back(std::move(report));
      continue;
    }
    if (avg_prob_skip(report.aligned) &&
        extension_claim_guard(draft_tokens[j], sources)) {
      report.verdict = Verdict::SkipAvgProb;
      outcome.reports.push_back(std::move(report));
      continue;
    }

    report.verdict = Verdict::Ensemble;
    outcome.reports.push_back(std::move(report));
    outcome.ensembled = true;
    outcome.ensemble_position = j;
    outcome.ensemble = build_ensemble(sources);
    if (sharpening.enabled) {
      outcome.sharpened = sharpen(*outcome.ensemble, drafter_dists[j],
                                  sharpening);
    }
    outcome.selected = select_token(*outcome.ensemble);
    break;
  }

  outcome.accept_len =
      outcome.ensembled ? outcome.ensemble_position : draft_tokens.size();
  return outcome;
}

}  // namespace specens
