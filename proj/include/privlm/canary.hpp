#pragma once

#include "privlm/corpus.hpp"
#include "privlm/model.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <vector>

namespace privlm {

inline constexpr std::size_t kCanaryLength = 5;

struct Canary {
  AuthorId author = 0;
  std::vector<TokenId> tokens;
  std::size_t repetitions = 0;

  friend bool operator==(const Canary&, const Canary&) = default;
};

struct CanaryPlan {
  std::vector<std::size_t> schedule;
  std::vector<Canary> canaries;
  std::uint64_t seed = 0;

  std::size_t total_copies() const;
  bool empty() const { return canaries.empty(); }

  friend bool operator==(const CanaryPlan&, const CanaryPlan&) = default;
};

// 14 canaries per user: 1..10, 20, 30, 40, 50 repetitions.
std::vector<std::size_t> avocado_schedule();
// 5 canaries per user: 1, 2, 5, 6, 20 repetitions.
std::vector<std::size_t> reddit_schedule();

// One canary per (author, schedule entry); tokens uniform over regular ids
// and unique across the whole plan.
CanaryPlan generate_canaries(const Vocabulary& vocab, const AuthorRegistry& authors,
                             const std::vector<std::size_t>& schedule, std::uint64_t seed,
                             std::size_t length = kCanaryLength);

// Appends `repetitions` training copies of each canary, flagged as canaries.
Corpus inject(const Corpus& corpus, const CanaryPlan& plan);

struct RealCanary {
  AuthorId author = 0;
  std::size_t sample_index = 0;
  std::vector<TokenId> tokens;
  double perplexity = 0.0;

  friend bool operator==(const RealCanary&, const RealCanary&) = default;
};

// Per author, the non-canary training sample with the highest per-token
// perplexity under `model` (ties: lowest sample index).
std::vector<RealCanary> select_real_canaries(const LanguageModel& model, const Corpus& corpus);

nlohmann::json plan_to_json(const CanaryPlan& plan, const Vocabulary& vocab);
CanaryPlan plan_from_json(const nlohmann::json& j);
void save_plan(const CanaryPlan& plan, const Vocabulary& vocab, const std::filesystem::path& path);
CanaryPlan load_plan(const std::filesystem::path& path);

}  // namespace privlm
