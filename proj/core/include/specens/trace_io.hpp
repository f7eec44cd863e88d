#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "specens/engine.hpp"

namespace specens {

// Serialization of decode traces and run metrics. Token payloads are raw
// bytes, so every string field is mirrored as a byte array next to a lossy
// printable form; replaying a trace must use the byte arrays.

// One JSON object per line: a meta line, each event, then a summary record.
// Wall time is zeroed unless include_timings is set so repeated runs stay
// byte-identical.
std::string trace_to_jsonl(const DecodeTrace& trace, bool include_timings);

void write_text_file(const std::string& path, const std::string& content);

// One CSV row per (prompt, mode), prompts identified by index.
struct SummaryRow {
  std::size_t prompt_index = 0;
  const DecodeTrace* trace = nullptr;
};

std::string summary_to_csv(const std::vector<SummaryRow>& rows,
                           bool include_timings);

// Full pairwise agreement matrix: percentage of words two tokenizers split
// into identical token-string sequences.
double pair_agreement(const SubwordTokenizer& a, const SubwordTokenizer& b,
                      const std::vector<std::string>& words);

std::string agreement_to_csv(
    const std::vector<std::string>& labels,
    const std::vector<const SubwordTokenizer*>& tokenizers,
    const std::vector<std::string>& words);

}  // namespace specens
