#include "privlm/canary.hpp"

#include "privlm/error.hpp"
#include "privlm/log.hpp"

#include <fstream>
#include <numeric>
#include <set>

namespace privlm {

std::size_t CanaryPlan::total_copies() const {
  std::size_t total = 0;
  for (const auto& c : canaries) total += c.repetitions;
  return total;
}

std::vector<std::size_t> avocado_schedule() {
  return {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 20, 30, 40, 50};
}

std::vector<std::size_t> reddit_schedule() { return {1, 2, 5, 6, 20}; }

CanaryPlan generate_canaries(const Vocabulary& vocab, const AuthorRegistry& authors,
                             const std::vector<std::size_t>& schedule, std::uint64_t seed,
                             std::size_t length) {
  require(!schedule.empty(), "generate_canaries: empty schedule");
  require(length >= 1, "generate_canaries: canary length must be >= 1");
  require(vocab.regular_size() >= length,
          "generate_canaries: vocabulary needs at least " + std::to_string(length) +
              " non-special tokens");
  for (auto r : schedule) require(r >= 1, "generate_canaries: repetition counts must be >= 1");

  CanaryPlan plan;
  plan.schedule = schedule;
  plan.seed = seed;
  auto rng = make_rng(seed, "canaries");
  std::set<std::vector<TokenId>> seen;
  const auto regular = static_cast<std::uint64_t>(vocab.regular_size());
  for (std::size_t a = 0; a < authors.size(); ++a) {
    for (auto reps : schedule) {
      std::vector<TokenId> tokens(length);
      do {
        for (auto& t : tokens) {
          t = static_cast<TokenId>(special::kCount + uniform_index(rng, regular));
        }
      } while (!seen.insert(tokens).second);
      plan.canaries.push_back(Canary{static_cast<AuthorId>(a), tokens, reps});
    }
  }
  return plan;
}

Corpus inject(const Corpus& corpus, const CanaryPlan& plan) {
  Corpus out = corpus;
  const auto v = static_cast<TokenId>(corpus.vocab.size());
  for (const auto& c : plan.canaries) {
    require(c.author >= 0 && static_cast<std::size_t>(c.author) < corpus.num_authors(),
            "inject: canary author " + std::to_string(c.author) + " is not in the corpus");
    for (TokenId t : c.tokens) {
      require(t >= special::kCount && t < v, "inject: canary token incompatible with vocabulary");
    }
    for (std::size_t k = 0; k < c.repetitions; ++k) {
      out.samples.push_back(Sample{c.author, c.tokens, Split::kTrain, true});
    }
  }
  return out;
}

std::vector<RealCanary> select_real_canaries(const LanguageModel& model, const Corpus& corpus) {
  const auto indices = corpus.utility_train_indices();
  std::vector<std::span<const TokenId>> rows;
  rows.reserve(indices.size());
  for (auto i : indices) rows.emplace_back(corpus.samples[i].tokens);
  const auto scores = score_sequences(model, rows, true);

  std::vector<std::optional<RealCanary>> best(corpus.num_authors());
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const auto& s = corpus.samples[indices[k]];
    const double ppl =
        std::exp(-scores[k].log_prob / static_cast<double>(scores[k].predicted));
    auto& slot = best[static_cast<std::size_t>(s.author)];
    if (!slot || ppl > slot->perplexity) {
      slot = RealCanary{s.author, indices[k], s.tokens, ppl};
    }
  }
  std::vector<RealCanary> out;
  for (std::size_t a = 0; a < best.size(); ++a) {
    if (best[a]) {
      out.push_back(*best[a]);
    } else {
      log_warning("select_real_canaries: author " + corpus.authors.name(static_cast<AuthorId>(a)) +
                  " has no training samples; skipped");
    }
  }
  return out;
}

nlohmann::json plan_to_json(const CanaryPlan& plan, const Vocabulary& vocab) {
  nlohmann::json canaries = nlohmann::json::array();
  for (const auto& c : plan.canaries) {
    std::vector<std::string> surface;
    for (TokenId t : c.tokens) surface.push_back(vocab.token(t));
    canaries.push_back({{"author", c.author},
                        {"tokens", c.tokens},
                        {"surface", surface},
                        {"repetitions", c.repetitions}});
  }
  return {{"format", "privlm-canary-plan"},
          {"version", 1},
          {"schedule", plan.schedule},
          {"seed", plan.seed},
          {"vocab_hash", vocab.hash()},
          {"canaries", std::move(canaries)}};
}

CanaryPlan plan_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "privlm-canary-plan") throw ParseError("not a canary plan");
  CanaryPlan plan;
  plan.schedule = j.at("schedule").get<std::vector<std::size_t>>();
  plan.seed = j.at("seed").get<std::uint64_t>();
  for (const auto& c : j.at("canaries")) {
    plan.canaries.push_back(Canary{c.at("author").get<AuthorId>(),
                                   c.at("tokens").get<std::vector<TokenId>>(),
                                   c.at("repetitions").get<std::size_t>()});
  }
  return plan;
}

void save_plan(const CanaryPlan& plan, const Vocabulary& vocab, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << plan_to_json(plan, vocab).dump(2) << '\n';
}

CanaryPlan load_plan(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FileNotFound(path.string());
  return plan_from_json(nlohmann::json::parse(in));
}

}  // namespace privlm
