#include "specens/kv_cache.hpp"

namespace specens {

void SimulatedKvCache::append(std::span<const TokenId> ids) {
  ids_.insert(ids_.end(), ids.begin(), ids.end());
}

PruneReport SimulatedKvCache::truncate(std::size_t kept) {
  PruneReport report;
  report.kept = kept < ids_.size() ? kept : ids_.size();
  report.dropped = ids_.size() - report.kept;
  ids_.resize(report.kept);
  if (report.dropped > 0) {
    ++generation_counter_;
  }
  return report;
}

PruneReport SimulatedKvCache::sync(const SubwordTokenizer& tok,
                                   std::string_view text) {
  const auto target = tok.encode(text);
  std::size_t kept = 0;
  while (kept < ids_.size() && kept < target.size() &&
         ids_[kept] == target[kept]) {
    ++kept;
  }
  PruneReport report{kept, ids_.size() - kept};
  ids_.assign(target.begin(), target.end());
  if (report.dropped > 0) {
    ++generation_counter_;
  }
  return report;
}

}  // namespace specens
