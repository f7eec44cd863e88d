#include <doctest.h>

#include <memory>
#include <string>
#include <vector>

#include "specens/engine.hpp"
#include "specens/errors.hpp"
#include "support.hpp"

using specens::decode;
using specens::DecodeTrace;
using specens::EnsembleSetup;
using specens::et_ratio;
using specens::Mode;
using specens::ModelSpec;
using specens::NgramModel;
using specens::SubwordTokenizer;
using specens::TraceEvent;

namespace {

ModelSpec trained_spec(const std::string& corpus, std::size_t vocab,
                       std::size_t order, double alpha) {
  auto tok = testsupport::shared_tok(SubwordTokenizer::train(corpus, vocab));
  auto model = std::make_shared<const NgramModel>(
      NgramModel::train(tok, corpus, order, alpha));
  return {tok, model};
}

const std::string kCorpusA =
    "the cat sat on the mat. the cat sat on the mat. the dog sat on the log. "
    "the cat ran to the dog. the dog ran to the mat. ";
const std::string kCorpusB =
    "a dog ran over the hill. the cat sat on a mat. the dog and the cat ran. "
    "the mat on the hill. a cat and a dog sat. ";
const std::string kCorpusC =
    "the hill and the log. a cat sat. the dog ran on the hill. the cat and "
    "the dog sat on the log. the mat and the log. ";

EnsembleSetup hetero_setup(std::size_t max_new = 48) {
  EnsembleSetup setup;
  setup.models.push_back(trained_spec(kCorpusA, 300, 3, 0.05));
  setup.models.push_back(trained_spec(kCorpusB, 280, 2, 0.05));
  setup.models.push_back(trained_spec(kCorpusC, 290, 3, 0.05));
  setup.max_new_tokens = max_new;
  return setup;
}

std::size_t count_events(const DecodeTrace& trace, TraceEvent::Kind kind) {
  std::size_t n = 0;
  for (const auto& e : trace.events) {
    if (e.kind == kind) {
      ++n;
    }
  }
  return n;
}

}  // namespace

TEST_CASE("setup validation rejects malformed configurations") {
  EnsembleSetup empty;
  CHECK_THROWS_AS(decode(empty, Mode::Single, "x"), specens::InvalidConfig);

  auto setup = hetero_setup();
  setup.drafter_index = 3;
  CHECK_THROWS_AS(decode(setup, Mode::Single, "x"), specens::InvalidConfig);

  setup = hetero_setup();
  setup.chunk_len = 0;
  CHECK_THROWS_AS(decode(setup, Mode::Safe, "x"), specens::InvalidConfig);

  setup = hetero_setup();
  setup.max_new_tokens = 0;
  CHECK_THROWS_AS(decode(setup, Mode::Single, "x"), specens::InvalidConfig);

  setup = hetero_setup();
  setup.top_k = 0;
  CHECK_THROWS_AS(decode(setup, Mode::Single, "x"), specens::InvalidConfig);

  // A model bound to a different tokenizer object is a wiring bug.
  setup = hetero_setup();
  setup.models[0].tokenizer = setup.models[1].tokenizer;
  CHECK_THROWS_AS(decode(setup, Mode::Single, "x"), specens::InvalidConfig);
}

TEST_CASE("mode names round-trip and unknown names are rejected") {
  for (Mode m : {Mode::Single, Mode::EveryToken, Mode::Threshold, Mode::Safe}) {
    CHECK(specens::mode_from_name(specens::mode_name(m)) == m);
  }
  CHECK_THROWS_AS(specens::mode_from_name("turbo"), specens::InvalidConfig);
}

TEST_CASE("single-model decoding is deterministic and ensemble-free") {
  auto setup = hetero_setup(32);
  auto a = decode(setup, Mode::Single, "the cat");
  auto b = decode(setup, Mode::Single, "the cat");

  CHECK(a.committed_text == b.committed_text);
  CHECK(a.events.size() == b.events.size());
  CHECK(a.committed_text == "the cat" + a.output_text);
  CHECK(a.ensemble_ops == 0);
  CHECK(et_ratio(a) == 0.0);
  CHECK(a.tokens_emitted <= 32);
  CHECK(a.tokens_emitted > 0);

  // Only the drafter consults its model; verifiers just track the text.
  REQUIRE(a.forward_calls.size() == 3);
  CHECK(a.forward_calls[0].autoregressive >= a.tokens_emitted);
  CHECK(a.forward_calls[1].autoregressive == 0);
  CHECK(a.forward_calls[2].autoregressive == 0);
  CHECK(a.forward_calls[1].chunked == 0);
}

TEST_CASE("an exact end-of-text proposal stops without committing") {
  auto spec = trained_spec("xy.", 259, 2, 0.001);
  EnsembleSetup setup;
  setup.models.push_back(spec);
  setup.max_new_tokens = 10;

  for (Mode m : {Mode::Single, Mode::EveryToken, Mode::Threshold, Mode::Safe}) {
    auto trace = decode(setup, m, "x");
    CHECK(trace.stopped_on_eos);
    CHECK(trace.output_text == "y.");
    CHECK(trace.tokens_emitted == 2);
  }
}

TEST_CASE("a committed token containing the end marker stops generation") {
  auto tok = testsupport::shared_tok(SubwordTokenizer::from_merges(
      {{"a", "<"}, {"a<", "e"}, {"a<e", "o"}, {"a<eo", "s"}, {"a<eos", ">"}}));
  const std::string corpus = "qa<eos>qa<eos>qa<eos>q";
  auto model = std::make_shared<const NgramModel>(
      NgramModel::train(tok, corpus, 2, 0.001));
  EnsembleSetup setup;
  setup.models.push_back({tok, model});
  setup.max_new_tokens = 10;

  auto trace = decode(setup, Mode::Single, "q");
  CHECK(trace.stopped_on_eos);
  CHECK(trace.tokens_emitted == 1);
  CHECK(trace.output_text == "a<eos>");
}

TEST_CASE("identical models collapse every strategy onto the same text") {
  auto spec = trained_spec(
      "abcabcabcabcabcabcabcabc", 262, 3, 0.01);
  EnsembleSetup setup;
  setup.models = {spec, spec, spec};
  setup.max_new_tokens = 12;

  auto single = decode(setup, Mode::Single, "abcabc");
  auto every = decode(setup, Mode::EveryToken, "abcabc");
  auto safe = decode(setup, Mode::Safe, "abcabc");

  CHECK(single.committed_text == every.committed_text);
  CHECK(single.committed_text == safe.committed_text);
  CHECK(single.tokens_emitted == every.tokens_emitted);
  CHECK(single.tokens_emitted == safe.tokens_emitted);

  CHECK(et_ratio(single) == 0.0);
  CHECK(et_ratio(every) == 100.0);
  CHECK(et_ratio(safe) == 0.0);
  CHECK(safe.skip_consensus == safe.tokens_emitted);
  CHECK(safe.ensemble_ops == 0);
  CHECK(every.ensemble_ops == every.tokens_emitted);
}

TEST_CASE("chunked verification never queries verifiers autoregressively") {
  auto setup = hetero_setup(40);
  auto safe = decode(setup, Mode::Safe, "the cat sat");
  auto every = decode(setup, Mode::EveryToken, "the cat sat");

  REQUIRE(safe.forward_calls.size() == 3);
  CHECK(safe.forward_calls[1].autoregressive == 0);
  CHECK(safe.forward_calls[2].autoregressive == 0);
  CHECK(safe.forward_calls[1].chunked > 0);
  CHECK(safe.forward_calls[2].chunked > 0);
  CHECK(safe.forward_calls[0].autoregressive > 0);

  CHECK(safe.ensemble_ops <= every.ensemble_ops);
  CHECK(every.ensemble_ops == every.tokens_emitted);
  CHECK(safe.ensemble_ops + safe.skip_consensus + safe.skip_avg_prob +
            safe.skip_oov_shadow ==
        safe.tokens_emitted);
}

TEST_CASE("every chunk replacement first rolls the drafter cache back") {
  auto setup = hetero_setup(48);
  auto trace = decode(setup, Mode::Safe, "the dog");

  std::size_t ensembles = 0;
  for (std::size_t i = 0; i < trace.events.size(); ++i) {
    const auto& e = trace.events[i];
    if (e.kind != TraceEvent::Kind::Ensemble) {
      continue;
    }
    ++ensembles;
    REQUIRE(i > 0);
    bool pruned = false;
    for (std::size_t back = i; back-- > 0;) {
      const auto& p = trace.events[back];
      if (p.kind == TraceEvent::Kind::CachePrune &&
          p.model_index == setup.drafter_index) {
        CHECK(p.dropped >= 1);
        pruned = true;
        break;
      }
      if (p.kind == TraceEvent::Kind::Ensemble) {
        break;
      }
    }
    CHECK(pruned);
  }
  CHECK(ensembles == trace.ensemble_ops);
  CHECK(ensembles > 0);
}

TEST_CASE("prune counters in the trace match the recorded prune events") {
  auto setup = hetero_setup(40);
  for (Mode m : {Mode::Single, Mode::EveryToken, Mode::Threshold, Mode::Safe}) {
    auto trace = decode(setup, m, "the cat ran");
    REQUIRE(trace.cache_generations.size() == 3);
    std::vector<std::size_t> per_model(3, 0);
    for (const auto& e : trace.events) {
      if (e.kind == TraceEvent::Kind::CachePrune) {
        CHECK(e.dropped > 0);
        per_model[e.model_index] += 1;
      }
    }
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(per_model[i] == trace.cache_generations[i]);
    }
  }
}

TEST_CASE("threshold decisions are reproducible from the trace") {
  auto setup = hetero_setup(40);
  setup.threshold = 0.5;
  auto trace = decode(setup, Mode::Threshold, "the cat sat on");

  std::size_t recomputed = 0;
  for (const auto& e : trace.events) {
    if (e.kind == TraceEvent::Kind::Ensemble) {
      CHECK(e.drafter_top_prob < setup.threshold);
      ++recomputed;
    } else if (e.kind == TraceEvent::Kind::Generate) {
      CHECK(e.drafter_top_prob >= setup.threshold);
    }
  }
  CHECK(recomputed == trace.ensemble_ops);
}

TEST_CASE("extreme thresholds reduce to the pure strategies") {
  auto setup = hetero_setup(24);

  setup.threshold = 0.0;
  auto lazy = decode(setup, Mode::Threshold, "the cat");
  auto single = decode(setup, Mode::Single, "the cat");
  CHECK(lazy.committed_text == single.committed_text);
  CHECK(lazy.ensemble_ops == 0);

  setup.threshold = 1.0;
  auto eager = decode(setup, Mode::Threshold, "the cat");
  auto every = decode(setup, Mode::EveryToken, "the cat");
  CHECK(eager.committed_text == every.committed_text);
  CHECK(et_ratio(eager) == 100.0);
}

TEST_CASE("all modes decode deterministically on heterogeneous models") {
  auto setup = hetero_setup(32);
  for (Mode m : {Mode::Single, Mode::EveryToken, Mode::Threshold, Mode::Safe}) {
    auto a = decode(setup, m, "the dog ran");
    auto b = decode(setup, m, "the dog ran");
    CHECK(a.committed_text == b.committed_text);
    CHECK(a.events.size() == b.events.size());
    CHECK(a.ensemble_ops == b.ensemble_ops);
    CHECK(a.tokens_emitted == b.tokens_emitted);
    CHECK(a.tokens_emitted <= 32);
    CHECK(count_events(a, TraceEvent::Kind::Ensemble) == a.ensemble_ops);
  }
}

TEST_CASE("an empty prompt decodes from the start-of-text context") {
  auto setup = hetero_setup(8);
  auto trace = decode(setup, Mode::Safe, "");
  CHECK(trace.committed_text == trace.output_text);
  CHECK(trace.tokens_emitted > 0);
}

TEST_CASE("throughput ratio arithmetic") {
  DecodeTrace trace;
  trace.tokens_emitted = 60;
  trace.ensemble_ops = 3;
  CHECK(et_ratio(trace) == doctest::Approx(5.0).epsilon(1e-12));

  DecodeTrace empty;
  CHECK_THROWS_AS(et_ratio(empty), specens::InvalidTrace);
}
