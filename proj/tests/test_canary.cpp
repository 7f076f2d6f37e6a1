#include "privlm/canary.hpp"
#include "privlm/error.hpp"

#include "support.hpp"

#include <doctest.h>

#include <map>
#include <numeric>
#include <set>

using namespace privlm;
using privlm::testing::TempDir;

namespace {

AuthorRegistry registry(std::size_t n) {
  AuthorRegistry r;
  for (std::size_t a = 0; a < n; ++a) r.add("user" + std::to_string(a));
  return r;
}

Vocabulary vocab_of(std::size_t regular) {
  std::vector<std::string> tokens = {"<pad>", "<unk>", "<bos>", "<eos>"};
  for (std::size_t k = 0; k < regular; ++k) tokens.push_back("w" + std::to_string(k));
  return Vocabulary::from_tokens(tokens);
}

}  // namespace

TEST_CASE("avocado schedule: 195 copies per user, 19,500 for 100 users") {
  const auto plan = generate_canaries(vocab_of(2000), registry(100), avocado_schedule(), 3);
  const auto s = avocado_schedule();
  CHECK(std::accumulate(s.begin(), s.end(), std::size_t{0}) == 195);
  CHECK(plan.canaries.size() == 1400);
  CHECK(plan.total_copies() == 19500);
  std::map<AuthorId, std::size_t> per_user;
  for (const auto& c : plan.canaries) per_user[c.author] += c.repetitions;
  CHECK(per_user.size() == 100);
  for (const auto& [a, n] : per_user) CHECK(n == 195);
}

TEST_CASE("reddit schedule: 5 canaries and 34 copies per user") {
  const auto plan = generate_canaries(vocab_of(500), registry(10), reddit_schedule(), 3);
  std::map<AuthorId, std::size_t> count, copies;
  for (const auto& c : plan.canaries) {
    count[c.author] += 1;
    copies[c.author] += c.repetitions;
  }
  CHECK(count.size() == 10);
  for (std::size_t a = 0; a < 10; ++a) {
    CHECK(count[static_cast<AuthorId>(a)] == 5);
    CHECK(copies[static_cast<AuthorId>(a)] == 34);
  }
  CHECK(plan.total_copies() == 340);
}

TEST_CASE("generate_canaries preconditions") {
  CHECK_THROWS_AS(generate_canaries(vocab_of(100), registry(2), {}, 1), InvalidArgument);
  CHECK_THROWS_AS(generate_canaries(vocab_of(4), registry(2), {1}, 1), InvalidArgument);
  CHECK_NOTHROW(generate_canaries(vocab_of(5), registry(2), {1}, 1));
}

TEST_CASE("canary tokens are regular, unique and reproducible") {
  const auto v = vocab_of(50);
  const auto plan = generate_canaries(v, registry(20), {1, 2, 5, 10, 20}, 11);
  std::set<std::vector<TokenId>> seen;
  for (const auto& c : plan.canaries) {
    CHECK(c.tokens.size() == kCanaryLength);
    for (auto t : c.tokens) {
      CHECK(t >= special::kCount);
      CHECK(t < static_cast<TokenId>(v.size()));
    }
    seen.insert(c.tokens);
  }
  CHECK(seen.size() == plan.canaries.size());
  CHECK(plan == generate_canaries(v, registry(20), {1, 2, 5, 10, 20}, 11));
  CHECK_FALSE(plan == generate_canaries(v, registry(20), {1, 2, 5, 10, 20}, 12));
}

TEST_CASE("canary tokens are close to uniform over the regular vocabulary") {
  const auto v = vocab_of(10);
  const auto plan = generate_canaries(v, registry(400), {1, 2, 3, 4, 5}, 5);
  std::vector<double> freq(v.size());
  for (const auto& c : plan.canaries) {
    for (auto t : c.tokens) freq[static_cast<std::size_t>(t)] += 1;
  }
  const double expected = 400.0 * 5 * 5 / 10.0;
  for (std::size_t t = special::kCount; t < v.size(); ++t) {
    CHECK(std::abs(freq[t] - expected) < 0.1 * expected);
  }
}

TEST_CASE("inject adds exactly the scheduled copies") {
  const auto corpus = privlm::testing::toy_corpus(4, 10, 40);
  const auto plan = generate_canaries(corpus.vocab, corpus.authors, {1, 3, 50}, 2);
  const auto out = inject(corpus, plan);
  CHECK(out.train_indices().size() == corpus.train_indices().size() + plan.total_copies());
  CHECK(out.test_indices() == corpus.test_indices());
  for (std::size_t i = 0; i < corpus.samples.size(); ++i) CHECK(out.samples[i] == corpus.samples[i]);
  for (const auto& c : plan.canaries) {
    std::size_t n = 0;
    for (const auto& s : out.samples) {
      if (s.split == Split::kTrain && s.tokens == c.tokens && s.author == c.author) {
        CHECK(s.canary);
        ++n;
      }
    }
    CHECK(n == c.repetitions);
  }
  CHECK(out.utility_train_indices() == corpus.utility_train_indices());
}

TEST_CASE("inject rejects foreign authors and tokens") {
  const auto corpus = privlm::testing::toy_corpus(2, 5, 20);
  CanaryPlan plan;
  plan.schedule = {1};
  plan.canaries = {Canary{5, {4, 5, 6, 7, 8}, 1}};
  CHECK_THROWS_AS(inject(corpus, plan), InvalidArgument);
  plan.canaries = {Canary{0, {4, 5, 6, 7, 1000}, 1}};
  CHECK_THROWS_AS(inject(corpus, plan), InvalidArgument);
  plan.canaries = {Canary{0, {4, 5, special::kEos, 7, 8}, 1}};
  CHECK_THROWS_AS(inject(corpus, plan), InvalidArgument);
}

namespace {

// Context-free model: every position predicts softmax(bias).
LanguageModel bias_model(const std::vector<double>& bias) {
  LanguageModel m(LmDims{bias.size(), 2, 2});
  auto b = m.view(m.output_bias_slot());
  for (std::size_t v = 0; v < bias.size(); ++v) b(static_cast<Eigen::Index>(v), 0) = bias[v];
  return m;
}

Corpus corpus_with(const std::vector<Sample>& samples, std::size_t authors, std::size_t vocab) {
  Corpus c;
  std::vector<std::string> tokens = {"<pad>", "<unk>", "<bos>", "<eos>"};
  for (std::size_t k = special::kCount; k < vocab; ++k) tokens.push_back("w" + std::to_string(k));
  c.vocab = Vocabulary::from_tokens(tokens);
  for (std::size_t a = 0; a < authors; ++a) c.authors.add("u" + std::to_string(a));
  c.samples = samples;
  return c;
}

}  // namespace

TEST_CASE("select_real_canaries picks the highest-perplexity training sample") {
  const auto model = bias_model({0, 0, 0, 0, 3.0, 0.0});
  const auto corpus = corpus_with({{0, {4, 4}, Split::kTrain, false},
                                   {0, {5, 5}, Split::kTrain, false},
                                   {0, {5, 5, 5}, Split::kTest, false},
                                   {1, {4, 5}, Split::kTrain, false},
                                   {1, {4, 4}, Split::kTrain, false}},
                                  2, 6);
  const auto real = select_real_canaries(model, corpus);
  REQUIRE(real.size() == 2);
  CHECK(real[0].author == 0);
  CHECK(real[0].sample_index == 1);
  CHECK(real[0].tokens == std::vector<TokenId>{5, 5});
  CHECK(real[1].sample_index == 3);
  CHECK(real[0].perplexity > real[1].perplexity);
}

TEST_CASE("select_real_canaries breaks ties by lowest index and ignores canaries") {
  const auto model = bias_model(std::vector<double>(8, 0.0));
  const auto corpus = corpus_with({{0, {7, 7}, Split::kTrain, true},
                                   {0, {4, 5}, Split::kTrain, false},
                                   {0, {6, 7}, Split::kTrain, false},
                                   {1, {5, 4}, Split::kTrain, false},
                                   {1, {7, 6}, Split::kTrain, false},
                                   {2, {4, 4}, Split::kTest, false}},
                                  3, 8);
  const auto real = select_real_canaries(model, corpus);
  REQUIRE(real.size() == 2);
  CHECK(real[0].sample_index == 1);
  CHECK(real[1].sample_index == 3);
  CHECK(real[0].perplexity == doctest::Approx(8.0));
}

TEST_CASE("select_real_canaries returns one sample per author") {
  const auto corpus = privlm::testing::toy_corpus(6, 8, 30);
  const auto model = LanguageModel::initialized(LmDims{corpus.vocab.size(), 8, 8}, 0.1, 3);
  const auto real = select_real_canaries(model, corpus);
  CHECK(real.size() == 6);
  for (std::size_t a = 0; a < real.size(); ++a) {
    CHECK(real[a].author == static_cast<AuthorId>(a));
    CHECK(corpus.samples[real[a].sample_index].split == Split::kTrain);
  }
}

TEST_CASE("plan JSON round trip") {
  TempDir dir("plan");
  const auto corpus = privlm::testing::toy_corpus(3, 5, 30);
  const auto plan = generate_canaries(corpus.vocab, corpus.authors, {1, 2}, 9);
  save_plan(plan, corpus.vocab, dir.path / "plan.json");
  CHECK(load_plan(dir.path / "plan.json") == plan);
  const auto j = plan_to_json(plan, corpus.vocab);
  CHECK(j.at("canaries").at(0).at("surface").size() == kCanaryLength);
  CHECK(j.at("vocab_hash").get<std::uint64_t>() == corpus.vocab.hash());
  CHECK_THROWS_AS(load_plan(dir.path / "absent.json"), FileNotFound);
  CHECK_THROWS_AS(plan_from_json(nlohmann::json{{"format", "other"}}), ParseError);
}
