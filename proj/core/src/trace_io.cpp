#include "specens/trace_io.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "json.hpp"

#include "specens/errors.hpp"

namespace specens {

namespace {

nlohmann::json byte_array(const std::string& s) {
  nlohmann::json arr = nlohmann::json::array();
  for (unsigned char c : s) {
    arr.push_back(static_cast<int>(c));
  }
  return arr;
}

// Lossy display form; the *_bytes fields are authoritative.
std::string printable(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  for (unsigned char c : s) {
    out.push_back(c >= 0x20 && c < 0x7f ? static_cast<char>(c) : '.');
  }
  return out;
}

const char* kind_name(TraceEvent::Kind kind) {
  switch (kind) {
    case TraceEvent::Kind::Generate:
      return "generate";
    case TraceEvent::Kind::Skip:
      return "skip";
    case TraceEvent::Kind::Ensemble:
      return "ensemble";
    case TraceEvent::Kind::CachePrune:
      return "cache_prune";
  }
  return "unknown";
}

std::string fixed6(double value) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", value);
  return buf;
}

double safe_et_percent(const DecodeTrace& trace) {
  return trace.tokens_emitted == 0 ? 0.0 : et_ratio(trace);
}

}  // namespace

std::string trace_to_jsonl(const DecodeTrace& trace, bool include_timings) {
  std::string out;

  nlohmann::json meta;
  meta["type"] = "meta";
  meta["mode"] = mode_name(trace.mode);
  meta["prompt"] = printable(trace.prompt);
  meta["prompt_bytes"] = byte_array(trace.prompt);
  out += meta.dump();
  out += '\n';

  for (const auto& ev : trace.events) {
    nlohmann::json j;
    j["type"] = "event";
    j["kind"] = kind_name(ev.kind);
    j["step"] = ev.step;
    j["committed_len"] = ev.committed_len;
    switch (ev.kind) {
      case TraceEvent::Kind::Generate:
        j["n_ids"] = ev.n_ids;
        if (!ev.draft_tokens.empty()) {
          nlohmann::json toks = nlohmann::json::array();
          nlohmann::json bytes = nlohmann::json::array();
          for (const auto& t : ev.draft_tokens) {
            toks.push_back(printable(t));
            bytes.push_back(byte_array(t));
          }
          j["draft_tokens"] = std::move(toks);
          j["draft_token_bytes"] = std::move(bytes);
          j["chunk_start_len"] = ev.chunk_start_len;
        } else {
          j["token"] = printable(ev.token);
          j["token_bytes"] = byte_array(ev.token);
          j["drafter_top_prob"] = ev.drafter_top_prob;
        }
        break;
      case TraceEvent::Kind::Skip:
        j["position"] = ev.position;
        j["verdict"] = ev.verdict;
        j["token"] = printable(ev.token);
        j["token_bytes"] = byte_array(ev.token);
        j["mean_prob"] = ev.mean_prob;
        j["drafter_top_prob"] = ev.drafter_top_prob;
        j["chunk_start_len"] = ev.chunk_start_len;
        break;
      case TraceEvent::Kind::Ensemble:
        j["position"] = ev.position;
        j["token"] = printable(ev.token);
        j["token_bytes"] = byte_array(ev.token);
        if (!ev.old_token.empty()) {
          j["old_token"] = printable(ev.old_token);
          j["old_token_bytes"] = byte_array(ev.old_token);
        }
        if (!ev.draft_tokens.empty()) {
          nlohmann::json bytes = nlohmann::json::array();
          for (const auto& t : ev.draft_tokens) {
            bytes.push_back(byte_array(t));
          }
          j["draft_token_bytes"] = std::move(bytes);
        }
        j["sharpened"] = ev.sharpened;
        j["mean_prob"] = ev.mean_prob;
        j["drafter_top_prob"] = ev.drafter_top_prob;
        j["chunk_start_len"] = ev.chunk_start_len;
        break;
      case TraceEvent::Kind::CachePrune:
        j["model_index"] = ev.model_index;
        j["dropped"] = ev.dropped;
        j["kept"] = ev.kept;
        break;
    }
    out += j.dump();
    out += '\n';
  }

  nlohmann::json summary;
  summary["type"] = "summary";
  summary["mode"] = mode_name(trace.mode);
  summary["tokens"] = trace.tokens_emitted;
  summary["ensemble_ops"] = trace.ensemble_ops;
  summary["et_percent"] = safe_et_percent(trace);
  summary["skip_consensus"] = trace.skip_consensus;
  summary["skip_avg_prob"] = trace.skip_avg_prob;
  summary["skip_oov_shadow"] = trace.skip_oov_shadow;
  nlohmann::json calls = nlohmann::json::array();
  for (const auto& c : trace.forward_calls) {
    calls.push_back(
        {{"autoregressive", c.autoregressive}, {"chunked", c.chunked}});
  }
  summary["forward_calls"] = std::move(calls);
  summary["cache_generations"] = trace.cache_generations;
  summary["stopped_on_eos"] = trace.stopped_on_eos;
  summary["output"] = printable(trace.output_text);
  summary["output_bytes"] = byte_array(trace.output_text);
  summary["wall_ms"] = include_timings ? trace.wall_ms : 0.0;
  out += summary.dump();
  out += '\n';
  return out;
}

void write_text_file(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) {
      throw InvalidConfig("cannot write output file: " + path);
    }
    out << content;
    if (!out) {
      throw InvalidConfig("failed while writing output file: " + path);
    }
  }
  std::filesystem::rename(tmp, path);
}

std::string summary_to_csv(const std::vector<SummaryRow>& rows,
                           bool include_timings) {
  std::string out =
      "prompt_idx,mode,tokens,ensemble_ops,et_percent,skip_consensus,"
      "skip_avg_prob,skip_oov_shadow,ar_calls,chunked_calls,cache_prunes,"
      "output_bytes,stopped_on_eos,wall_ms\n";
  for (const auto& row : rows) {
    const DecodeTrace& t = *row.trace;
    std::size_t ar = 0, chunked = 0;
    for (const auto& c : t.forward_calls) {
      ar += c.autoregressive;
      chunked += c.chunked;
    }
    std::size_t prunes = 0;
    for (const auto& ev : t.events) {
      if (ev.kind == TraceEvent::Kind::CachePrune) {
        ++prunes;
      }
    }
    out += std::to_string(row.prompt_index);
    out += ',';
    out += mode_name(t.mode);
    out += ',';
    out += std::to_string(t.tokens_emitted);
    out += ',';
    out += std::to_string(t.ensemble_ops);
    out += ',';
    out += fixed6(safe_et_percent(t));
    out += ',';
    out += std::to_string(t.skip_consensus);
    out += ',';
    out += std::to_string(t.skip_avg_prob);
    out += ',';
    out += std::to_string(t.skip_oov_shadow);
    out += ',';
    out += std::to_string(ar);
    out += ',';
    out += std::to_string(chunked);
    out += ',';
    out += std::to_string(prunes);
    out += ',';
    out += std::to_string(t.output_text.size());
    out += ',';
    out += t.stopped_on_eos ? '1' : '0';
    out += ',';
    out += fixed6(include_timings ? t.wall_ms : 0.0);
    out += '\n';
  }
  return out;
}

double pair_agreement(const SubwordTokenizer& a, const SubwordTokenizer& b,
                      const std::vector<std::string>& words) {
  if (words.empty()) {
    throw InvalidConfig("agreement needs a non-empty word list");
  }
  std::size_t matches = 0;
  for (const auto& word : words) {
    const auto ids_a = a.encode(word);
    const auto ids_b = b.encode(word);
    if (a.boundaries(ids_a).offsets == b.boundaries(ids_b).offsets) {
      ++matches;
    }
  }
  return 100.0 * static_cast<double>(matches) /
         static_cast<double>(words.size());
}

std::string agreement_to_csv(
    const std::vector<std::string>& labels,
    const std::vector<const SubwordTokenizer*>& tokenizers,
    const std::vector<std::string>& words) {
  if (labels.size() != tokenizers.size()) {
    throw InvalidConfig("agreement labels and tokenizers disagree in length");
  }
  if (tokenizers.size() < 2) {
    throw InvalidConfig("agreement needs at least two tokenizers");
  }
  std::string out = "tokenizer";
  for (const auto& label : labels) {
    out += ',';
    out += label;
  }
  out += '\n';
  for (std::size_t i = 0; i < tokenizers.size(); ++i) {
    out += labels[i];
    for (std::size_t j = 0; j < tokenizers.size(); ++j) {
      out += ',';
      out += fixed6(pair_agreement(*tokenizers[i], *tokenizers[j], words));
    }
    out += '\n';
  }
  return out;
}

}  // namespace specens
