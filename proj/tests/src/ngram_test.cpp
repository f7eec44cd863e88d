#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "specens/errors.hpp"
#include "specens/ngram.hpp"
#include "support.hpp"

using specens::NgramModel;
using specens::SparseDist;
using specens::TokenId;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

bool same_dist(const SparseDist& a, const SparseDist& b) {
  if (a.entries.size() != b.entries.size()) {
    return false;
  }
  for (std::size_t i = 0; i < a.entries.size(); ++i) {
    if (a.entries[i].token != b.entries[i].token ||
        a.entries[i].prob != b.entries[i].prob) {
      return false;
    }
  }
  return a.mass_truncated == b.mass_truncated;
}

}  // namespace

TEST_CASE("bigram counts on a tiny corpus match hand arithmetic") {
  auto tok = testsupport::shared_tok(testsupport::make_byte_tokenizer());
  auto model = NgramModel::train(tok, "a b a b a", 2, 0.1);

  // After 'a' the stream continues with ' ' twice and end-of-text once, so
  // the context total is 3 over a 258-token vocabulary.
  const double denom = 3.0 + 0.1 * 258.0;
  std::vector<TokenId> ctx{static_cast<TokenId>('a')};
  auto dist = model.next_dist(ctx, 4);

  REQUIRE(dist.entries.size() == 4);
  CHECK(dist.entries[0].token == " ");
  CHECK(dist.entries[0].prob == doctest::Approx((2.0 + 0.1) / denom)
                                    .epsilon(1e-12));
  CHECK(dist.entries[1].token == "<eos>");
  CHECK(dist.entries[1].prob == doctest::Approx((1.0 + 0.1) / denom)
                                    .epsilon(1e-12));
  // Unseen tokens fill the tail in lexicographic string order at the floor.
  CHECK(dist.entries[2].token == std::string(1, '\x00'));
  CHECK(dist.entries[3].token == std::string(1, '\x01'));
  CHECK(dist.entries[2].prob == doctest::Approx(0.1 / denom).epsilon(1e-12));

  CHECK(dist.top_prob() == dist.entries[0].prob);
  CHECK(dist.prob_of("b") == 0.0);
}

TEST_CASE("an empty prefix is padded with beginning-of-text") {
  auto tok = testsupport::shared_tok(testsupport::make_byte_tokenizer());
  auto model = NgramModel::train(tok, "a b a b a", 2, 0.1);
  auto dist = model.next_dist({}, 1);
  REQUIRE(dist.entries.size() == 1);
  CHECK(dist.entries[0].token == "a");
}

TEST_CASE("only the last order-1 tokens of the prefix matter") {
  auto tok = testsupport::shared_tok(testsupport::make_byte_tokenizer());
  auto model = NgramModel::train(tok, "abababa", 2, 0.5);
  std::vector<TokenId> long_prefix = tok->encode("bbbba");
  std::vector<TokenId> short_prefix = tok->encode("a");
  CHECK(same_dist(model.next_dist(long_prefix, 8),
                  model.next_dist(short_prefix, 8)));
  CHECK(model.next_dist(long_prefix, 1).entries[0].token == "b");
}

TEST_CASE("huge smoothing flattens the distribution toward uniform") {
  auto tok = testsupport::shared_tok(testsupport::make_byte_tokenizer());
  auto model = NgramModel::train(tok, "aaaaaaaraaaa", 2, 1e6);
  auto dist = model.next_dist(tok->encode("a"), 258);
  const double uniform = 1.0 / 258.0;
  for (const auto& e : dist.entries) {
    CHECK(std::abs(e.prob - uniform) < 1e-3);
  }
}

TEST_CASE("full-width distributions carry no truncated mass") {
  auto tok = testsupport::shared_tok(testsupport::make_byte_tokenizer());
  auto model = NgramModel::train(tok, "mississippi river", 3, 0.2);
  auto dist = model.next_dist(tok->encode("is"), tok->vocab_size());
  CHECK(dist.mass_truncated == doctest::Approx(0.0).epsilon(1e-9));
  double sum = 0.0;
  for (const auto& e : dist.entries) {
    sum += e.prob;
  }
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("truncated mass plus entries always accounts for everything") {
  auto tok = testsupport::shared_tok(testsupport::make_byte_tokenizer());
  auto model = NgramModel::train(tok, "the cat sat on the mat", 2, 0.3);
  for (std::size_t k : {1u, 2u, 8u, 100u}) {
    auto dist = model.next_dist(tok->encode("t"), k);
    double sum = dist.mass_truncated;
    for (const auto& e : dist.entries) {
      sum += e.prob;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(dist.mass_truncated >= 0.0);
  }
}

TEST_CASE("chunked scoring equals one-step scoring at every offset") {
  std::mt19937 rng(21);
  auto tok = testsupport::shared_tok(
      specens::SubwordTokenizer::train(testsupport::random_text(rng, 500),
                                       280));
  auto model = NgramModel::train(
      tok, testsupport::random_text(rng, 800), 3, 0.15);

  std::uniform_int_distribution<std::size_t> len(0, 6);
  for (int trial = 0; trial < 1000; ++trial) {
    auto prefix = tok->encode(testsupport::random_text(rng, len(rng) + 1));
    auto draft = tok->encode(testsupport::random_text(rng, len(rng) + 1));
    auto chunked = model.forward_dists(prefix, draft, 8);
    REQUIRE(chunked.size() == draft.size() + 1);
    std::vector<TokenId> ctx(prefix.begin(), prefix.end());
    for (std::size_t i = 0; i < chunked.size(); ++i) {
      CHECK(same_dist(chunked[i], model.next_dist(ctx, 8)));
      if (i < draft.size()) {
        ctx.push_back(draft[i]);
      }
    }
  }
}

TEST_CASE("model artifacts round-trip bytes and behavior") {
  auto dir = std::filesystem::temp_directory_path() / "specens_ngram_test";
  std::filesystem::create_directories(dir);

  auto tok = testsupport::shared_tok(
      specens::SubwordTokenizer::train("banana bandana banana band", 290));
  auto model = NgramModel::train(tok, "banana bandana banana band", 3, 0.2);
  model.set_tokenizer_file("tok.json");

  auto path = (dir / "model.json").string();
  model.save_file(path);
  tok->save_file((dir / "tok.json").string());
  auto back = NgramModel::load_file(path, tok);

  CHECK(back.order() == 3);
  CHECK(back.alpha() == 0.2);
  CHECK(back.tokenizer_file() == "tok.json");

  std::mt19937 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    auto ctx = tok->encode(testsupport::random_text(rng, 5, "band "));
    CHECK(same_dist(model.next_dist(ctx, 12), back.next_dist(ctx, 12)));
  }

  back.save_file((dir / "model2.json").string());
  CHECK(slurp(dir / "model.json") == slurp(dir / "model2.json"));
}

TEST_CASE("bad training and query inputs are rejected") {
  auto tok = testsupport::shared_tok(testsupport::make_byte_tokenizer());
  CHECK_THROWS_AS(NgramModel::train(tok, "", 2, 0.1),
                  specens::InvalidCorpus);
  CHECK_THROWS_AS(NgramModel::train(tok, "ab", 0, 0.1),
                  specens::InvalidConfig);
  CHECK_THROWS_AS(NgramModel::train(tok, "ab", 2, 0.0),
                  specens::InvalidConfig);
  CHECK_THROWS_AS(NgramModel::train(nullptr, "ab", 2, 0.1),
                  specens::InvalidConfig);

  auto model = NgramModel::train(tok, "ab", 2, 0.1);
  CHECK_THROWS_AS(model.next_dist({}, 0), specens::InvalidConfig);
}
