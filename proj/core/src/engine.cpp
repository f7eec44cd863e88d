#include "specens/engine.hpp"

#include <algorithm>
#include <chrono>

#include "specens/errors.hpp"

namespace specens {

const char* mode_name(Mode mode) {
  switch (mode) {
    case Mode::Single:
      return "single";
    case Mode::EveryToken:
      return "every_token";
    case Mode::Threshold:
      return "threshold";
    case Mode::Safe:
      return "safe";
  }
  return "unknown";
}

Mode mode_from_name(std::string_view name) {
  if (name == "single") {
    return Mode::Single;
  }
  if (name == "every_token") {
    return Mode::EveryToken;
  }
  if (name == "threshold") {
    return Mode::Threshold;
  }
  if (name == "safe") {
    return Mode::Safe;
  }
  throw InvalidConfig("unknown decode mode: " + std::string(name));
}

double et_ratio(const DecodeTrace& trace) {
  if (trace.tokens_emitted == 0) {
    throw InvalidTrace("ensemble ratio undefined for an empty generation");
  }
  return 100.0 * static_cast<double>(trace.ensemble_ops) /
         static_cast<double>(trace.tokens_emitted);
}

namespace {

bool contains_eos_marker(const std::string& token, const std::string& eos) {
  return token.find(eos) != std::string::npos;
}

// Single-owner state for one decode run.
class Runner {
 public:
  Runner(const EnsembleSetup& setup, Mode mode, std::string_view prompt)
      : setup_(setup) {
    trace_.mode = mode;
    trace_.prompt = std::string(prompt);
    trace_.committed_text = trace_.prompt;
    trace_.forward_calls.resize(setup.models.size());
    caches_.resize(setup.models.size());
    for (std::size_t i = 0; i < setup.models.size(); ++i) {
      caches_[i].sync(*setup.models[i].tokenizer, trace_.committed_text);
    }
  }

  DecodeTrace run() {
    const auto start = std::chrono::steady_clock::now();
    switch (trace_.mode) {
      case Mode::Single:
        run_single();
        break;
      case Mode::EveryToken:
        run_every_token();
        break;
      case Mode::Threshold:
        run_threshold();
        break;
      case Mode::Safe:
        run_safe();
        break;
    }
    const auto end = std::chrono::steady_clock::now();
    trace_.wall_ms =
        std::chrono::duration<double, std::milli>(end - start).count();
    trace_.output_text = trace_.committed_text.substr(trace_.prompt.size());
    trace_.cache_generations.clear();
    for (const auto& cache : caches_) {
      trace_.cache_generations.push_back(cache.generation_counter());
    }
    return std::move(trace_);
  }

 private:
  const ModelSpec& model(std::size_t i) const { return setup_.models[i]; }
  std::size_t drafter() const { return setup_.drafter_index; }
  const std::string& eos() const {
    return model(drafter()).tokenizer->eos_string();
  }

  TraceEvent base_event(TraceEvent::Kind kind) const {
    TraceEvent ev;
    ev.kind = kind;
    ev.step = trace_.tokens_emitted;
    ev.committed_len = trace_.committed_text.size();
    return ev;
  }

  void record_prune(std::size_t model_index, const PruneReport& report) {
    if (report.dropped == 0) {
      return;
    }
    TraceEvent ev = base_event(TraceEvent::Kind::CachePrune);
    ev.model_index = model_index;
    ev.dropped = report.dropped;
    ev.kept = report.kept;
    trace_.events.push_back(std::move(ev));
  }

  void sync_model(std::size_t i) {
    record_prune(i, caches_[i].sync(*model(i).tokenizer,
                                    trace_.committed_text));
  }

  void sync_verifiers() {
    for (std::size_t i = 0; i < setup_.models.size(); ++i) {
      if (i != drafter()) {
        sync_model(i);
      }
    }
  }

  void check_caches() const {
    for (std::size_t i = 0; i < setup_.models.size(); ++i) {
      const auto& tok = *model(i).tokenizer;
      std::string decoded;
      decoded.reserve(trace_.committed_text.size());
      for (TokenId id : caches_[i].ids()) {
        decoded += tok.token_string(id);
      }
      if (decoded != trace_.committed_text) {
        throw InternalInvariantViolation(
            "cache for model " + std::to_string(i) +
            " no longer decodes to the committed text");
      }
    }
  }

  SparseDist drafter_next() {
    ++trace_.forward_calls[drafter()].autoregressive;
    return model(drafter()).model->next_dist(caches_[drafter()].ids(),
                                             setup_.top_k);
  }

  // Ensemble over all models' current-cache distributions, used by the
  // every-token and threshold paths. drafter_dist is that model's slot.
  SelectedToken baseline_ensemble(const SparseDist& drafter_dist,
                                  EnsembleDist& out) {
    std::vector<SparseDist> dists(setup_.models.size());
    std::vector<AlignedSource> sources(setup_.models.size());
    for (std::size_t i = 0; i < setup_.models.size(); ++i) {
      if (i == drafter()) {
        sources[i] = {model(i).tokenizer.get(), &drafter_dist};
        continue;
      }
      ++trace_.forward_calls[i].autoregressive;
      dists[i] = model(i).model->next_dist(caches_[i].ids(), setup_.top_k);
      sources[i] = {model(i).tokenizer.get(), &dists[i]};
    }
    out = build_ensemble(sources);
    if (setup_.sharpen_baselines && setup_.sharpening.enabled) {
      sharpen(out, drafter_dist, setup_.sharpening);
    }
    return select_token(out);
  }

  void run_single() {
    while (trace_.tokens_emitted < setup_.max_new_tokens) {
      const SparseDist dist = drafter_next();
      const std::string token = dist.entries.front().token;
      if (token == eos()) {
        trace_.stopped_on_eos = true;
        break;
      }
      TraceEvent ev = base_event(TraceEvent::Kind::Generate);
      ev.n_ids = 1;
      ev.token = token;
      ev.drafter_top_prob = dist.top_prob();
      trace_.committed_text += token;
      ev.committed_len = trace_.committed_text.size();
      trace_.events.push_back(std::move(ev));
      ++trace_.tokens_emitted;
      caches_[drafter()].append(
          *model(drafter()).tokenizer->token_id(token));
      sync_verifiers();
      check_caches();
      if (contains_eos_marker(token, eos())) {
        trace_.stopped_on_eos = true;
        break;
      }
    }
  }

  void run_every_token() {
    while (trace_.tokens_emitted < setup_.max_new_tokens) {
      const SparseDist drafter_dist = drafter_next();
      EnsembleDist ens;
      const SelectedToken sel = baseline_ensemble(drafter_dist, ens);
      if (sel.token == eos()) {
        trace_.stopped_on_eos = true;
        break;
      }
      TraceEvent ev = base_event(TraceEvent::Kind::Ensemble);
      ev.chunk_start_len = trace_.committed_text.size();
      ev.verdict = verdict_name(Verdict::Ensemble);
      ev.token = sel.token;
      ev.mean_prob = ens.averaged.at(sel.token);
      ev.drafter_top_prob = drafter_dist.top_prob();
      ev.sharpened =
          ens.sharpened_scores && *ens.sharpened_scores != ens.averaged;
      trace_.committed_text += sel.token;
      ev.committed_len = trace_.committed_text.size();
      trace_.events.push_back(std::move(ev));
      ++trace_.tokens_emitted;
      ++trace_.ensemble_ops;
      for (std::size_t i = 0; i < setup_.models.size(); ++i) {
        sync_model(i);
      }
      check_caches();
      if (contains_eos_marker(sel.token, eos())) {
        trace_.stopped_on_eos = true;
        break;
      }
    }
  }

  void run_threshold() {
    while (trace_.tokens_emitted < setup_.max_new_tokens) {
      const SparseDist drafter_dist = drafter_next();
      const double top = drafter_dist.top_prob();
      if (top >= setup_.threshold) {
        const std::string token = drafter_dist.entries.front().token;
        if (token == eos()) {
          trace_.stopped_on_eos = true;
          break;
        }
        TraceEvent ev = base_event(TraceEvent::Kind::Generate);
        ev.n_ids = 1;
        ev.token = token;
        ev.drafter_top_prob = top;
        trace_.committed_text += token;
        ev.committed_len = trace_.committed_text.size();
        trace_.events.push_back(std::move(ev));
        ++trace_.tokens_emitted;
        caches_[drafter()].append(
            *model(drafter()).tokenizer->token_id(token));
        sync_verifiers();
        check_caches();
        if (contains_eos_marker(token, eos())) {
          trace_.stopped_on_eos = true;
          break;
        }
        continue;
      }

      EnsembleDist ens;
      const SelectedToken sel = baseline_ensemble(drafter_dist, ens);
      if (sel.token == eos()) {
        trace_.stopped_on_eos = true;
        break;
      }
      TraceEvent ev = base_event(TraceEvent::Kind::Ensemble);
      ev.chunk_start_len = trace_.committed_text.size();
      ev.verdict = verdict_name(Verdict::Ensemble);
      ev.token = sel.token;
      ev.old_token = drafter_dist.entries.front().token;
      ev.mean_prob = ens.averaged.at(sel.token);
      ev.drafter_top_prob = top;
      ev.sharpened =
          ens.sharpened_scores && *ens.sharpened_scores != ens.averaged;
      trace_.committed_text += sel.token;
      ev.committed_len = trace_.committed_text.size();
      trace_.events.push_back(std::move(ev));
      ++trace_.tokens_emitted;
      ++trace_.ensemble_ops;
      for (std::size_t i = 0; i < setup_.models.size(); ++i) {
        sync_model(i);
      }
      check_caches();
      if (contains_eos_marker(sel.token, eos())) {
        trace_.stopped_on_eos = true;
        break;
      }
    }
  }

  void run_safe() {
    const auto& drafter_tok = *model(drafter()).tokenizer;
    std::vector<VerifierInput> verifiers;
    for (std::size_t i = 0; i < setup_.models.size(); ++i) {
      if (i != drafter()) {
        verifiers.push_back(
            {model(i).tokenizer.get(), model(i).model.get()});
      }
    }

    while (trace_.tokens_emitted < setup_.max_new_tokens) {
      const std::size_t chunk_start_len = trace_.committed_text.size();
      const std::size_t base_cache_len = caches_[drafter()].size();
      const std::size_t draft_limit = std::min(
          setup_.chunk_len, setup_.max_new_tokens - trace_.tokens_emitted);

      std::vector<std::string> draft;
      std::vector<SparseDist> dists;
      bool pending_eos = false;
      while (draft.size() < draft_limit) {
        SparseDist dist = drafter_next();
        const std::string token = dist.entries.front().token;
        if (token == eos()) {
          pending_eos = true;
          break;
        }
        caches_[drafter()].append(*drafter_tok.token_id(token));
        draft.push_back(token);
        dists.push_back(std::move(dist));
      }
      if (draft.empty()) {
        if (pending_eos) {
          trace_.stopped_on_eos = true;
        }
        break;
      }

      TraceEvent gen = base_event(TraceEvent::Kind::Generate);
      gen.n_ids = draft.size();
      gen.draft_tokens = draft;
      gen.chunk_start_len = chunk_start_len;
      trace_.events.push_back(std::move(gen));

      const VerifyOutcome outcome =
          verify_chunk(drafter_tok, trace_.committed_text, draft, dists,
                       verifiers, setup_.sharpening, setup_.top_k);
      for (std::size_t i = 0; i < setup_.models.size(); ++i) {
        if (i != drafter()) {
          ++trace_.forward_calls[i].chunked;
        }
      }

      bool marker_stop = false;
      std::size_t committed_positions = 0;
      for (const auto& report : outcome.reports) {
        if (report.verdict == Verdict::Ensemble) {
          break;
        }
        const std::string& token = draft[report.position];
        TraceEvent ev = base_event(TraceEvent::Kind::Skip);
        ev.position = report.position;
        ev.verdict = verdict_name(report.verdict);
        ev.token = token;
        ev.mean_prob = report.mean_prob;
        ev.drafter_top_prob = dists[report.position].top_prob();
        ev.chunk_start_len = chunk_start_len;
        trace_.committed_text += token;
        ev.committed_len = trace_.committed_text.size();
        trace_.events.push_back(std::move(ev));
        ++trace_.tokens_emitted;
        ++committed_positions;
        switch (report.verdict) {
          case Verdict::SkipOovShadow:
            ++trace_.skip_oov_shadow;
            break;
          case Verdict::SkipConsensus:
            ++trace_.skip_consensus;
            break;
          default:
            ++trace_.skip_avg_prob;
            break;
        }
        if (contains_eos_marker(token, eos())) {
          marker_stop = true;
          break;
        }
      }

      bool eos_stop = false;
      if (marker_stop || committed_positions < outcome.accept_len ||
          !outcome.ensembled) {
        // Whole chunk (or the prefix up to a terminal token) stands; drop
        // any drafted ids past what was committed.
        record_prune(drafter(),
                     caches_[drafter()].truncate(base_cache_len +
                                                 committed_positions));
        if (!marker_stop && pending_eos) {
          eos_stop = true;
        }
      } else {
        // Replace the failing position with the ensembled token.
        record_prune(drafter(), caches_[drafter()].truncate(
                                    base_cache_len + outcome.accept_len));
        const std::string& selected = outcome.selected->token;
        if (selected == eos()) {
          eos_stop = true;
        } else {
          TraceEvent ev = base_event(TraceEvent::Kind::Ensemble);
          ev.position = outcome.ensemble_position;
          ev.verdict = verdict_name(Verdict::Ensemble);
          ev.token = selected;
          ev.old_token = draft[outcome.ensemble_position];
          ev.sharpened = outcome.sharpened;
          ev.mean_prob = outcome.ensemble->averaged.at(selected);
          ev.drafter_top_prob =
              dists[outcome.ensemble_position].top_prob();
          ev.chunk_start_len = chunk_start_len;
          ev.draft_tokens = draft;
          trace_.committed_text += selected;
          ev.committed_len = trace_.committed_text.size();
          trace_.events.push_back(std::move(ev));
          ++trace_.tokens_emitted;
          ++trace_.ensemble_ops;
          caches_[drafter()].append(drafter_tok.encode(selected));
          if (contains_eos_marker(selected, eos())) {
            marker_stop = true;
          }
        }
      }

      sync_verifiers();
      check_caches();
      if (eos_stop || marker_stop) {
        trace_.stopped_on_eos = true;
        break;
      }
    }
  }

  const EnsembleSetup& setup_;
  DecodeTrace trace_;
  std::vector<SimulatedKvCache> caches_;
};

void validate(const EnsembleSetup& setup) {
  if (setup.models.empty()) {
    throw InvalidConfig("at least one model is required");
  }
  if (setup.drafter_index >= setup.models.size()) {
    throw InvalidConfig("drafter index outside the model list");
  }
  if (setup.chunk_len < 1) {
    throw InvalidConfig("chunk length must be at least 1");
  }
  if (setup.max_new_tokens < 1) {
    throw InvalidConfig("max_new_tokens must be at least 1");
  }
  if (setup.top_k < 1) {
    throw InvalidConfig("top_k must be at least 1");
  }
  for (const auto& spec : setup.models) {
    if (!spec.tokenizer || !spec.model) {
      throw InvalidConfig("model entry is missing a tokenizer or model");
    }
    if (spec.model->tokenizer().get() != spec.tokenizer.get()) {
      throw InvalidConfig("model was trained against a different tokenizer");
    }
  }
}

}  // namespace

DecodeTrace decode(const EnsembleSetup& setup, Mode mode,
                   std::string_view prompt) {
  validate(setup);
  Runner runner(setup, mode, prompt);
  return runner.run();
}

}  // namespace specens
