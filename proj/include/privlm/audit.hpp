#pragma once

#include "privlm/canary.hpp"
#include "privlm/corpus.hpp"
#include "privlm/model.hpp"

#include <json.hpp>

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace privlm {

enum class Estimator { kEmpirical, kSkewNormal };
std::string to_string(Estimator estimator);
Estimator parse_estimator(const std::string& name);

enum class CanaryKind { kSynthetic, kReal };
std::string to_string(CanaryKind kind);

inline constexpr std::size_t kMinEmpiricalSamples = 100;
inline constexpr std::size_t kMinSkewNormalSamples = 1000;
inline constexpr std::size_t kDefaultSampleSize = 10000;

// Log-perplexity of a sequence: -sum log Pr(w_i | <bos>, w_<i), natural log,
// <eos> not scored. Lower means the model finds the sequence more likely.
double log_perplexity(const LanguageModel& model, std::span<const TokenId> tokens);

// Log-perplexities of S sequences of `length` tokens drawn uniformly from the
// non-special vocabulary. Sorted ascending; deterministic given seed.
struct ReferenceSample {
  std::vector<double> log_ppl;
  std::size_t length = 0;
  std::size_t effective_vocab = 0;
  double log2_space = 0.0;  // log2 |R| = length * log2(effective_vocab)
  std::uint64_t seed = 0;

  std::size_t size() const { return log_ppl.size(); }
  // #{samples with log-ppl <= x}
  std::size_t count_at_or_below(double x) const;
};

ReferenceSample reference_sample(const LanguageModel& model, std::size_t length,
                                 std::size_t sample_size, std::uint64_t seed);

struct ExposureEstimate {
  std::vector<TokenId> tokens;
  double log_perplexity = 0.0;
  double estimated_rank = 1.0;  // in [1, |R|]
  double space_size = 1.0;      // |R|
  double exposure = 0.0;        // log2|R| - log2(rank)
  Estimator estimator = Estimator::kEmpirical;
  std::size_t sample_size = 0;

  double rank_fraction() const { return estimated_rank / space_size; }
};

// Estimators over a precomputed reference sample. The skew-normal estimator
// falls back to the empirical one (with a warning) on degenerate variance.
ExposureEstimate exposure_empirical(double canary_log_ppl, const ReferenceSample& ref);
ExposureEstimate exposure_skew_normal(double canary_log_ppl, const ReferenceSample& ref);

// Convenience forms that draw the reference sample themselves.
ExposureEstimate exposure_empirical(const LanguageModel& model, std::span<const TokenId> canary,
                                    std::size_t sample_size, std::uint64_t seed);
ExposureEstimate exposure_skew_normal(const LanguageModel& model, std::span<const TokenId> canary,
                                      std::size_t sample_size, std::uint64_t seed);

// Method-of-moments skew-normal fit. Sample skewness is clamped inside the
// attainable range before solving for the shape.
struct SkewNormalFit {
  double location = 0.0;
  double scale = 1.0;
  double shape = 0.0;

  double cdf(double x) const;
};

inline constexpr double kMaxSkewness = 0.9952;
SkewNormalFit fit_skew_normal(std::span<const double> values);

// --- tab attack ------------------------------------------------------------

struct AttackTarget {
  AuthorId author = 0;
  std::vector<TokenId> tokens;
  std::size_t repetitions = 1;
  CanaryKind kind = CanaryKind::kSynthetic;

  friend bool operator==(const AttackTarget&, const AttackTarget&) = default;
};

struct AttackOutcome {
  AttackTarget target;
  std::vector<TokenId> reconstruction;
  bool success = false;

  friend bool operator==(const AttackOutcome&, const AttackOutcome&) = default;
};

struct TabAttackReport {
  std::vector<AttackOutcome> outcomes;
  // Partition of the targets: synthetic canaries by repetition count
  // ("1", "20", ...), real canaries in one bucket ("real").
  std::map<std::string, double> accuracy_by_bucket;
  std::map<std::string, double> accuracy_by_kind;

  static std::string bucket_of(const AttackTarget& target);
  nlohmann::json to_json() const;

  friend bool operator==(const TabAttackReport&, const TabAttackReport&) = default;
};

// Greedy decoding from each target's first token for (length - 1) tokens;
// success iff the continuation matches exactly.
TabAttackReport tab_attack(const LanguageModel& model, const std::vector<AttackTarget>& targets);

std::vector<AttackTarget> attack_targets(const CanaryPlan& plan);
std::vector<AttackTarget> attack_targets(const std::vector<RealCanary>& real);

// --- disparate impact ------------------------------------------------------

struct UserDrop {
  AuthorId author = 0;
  std::size_t train_samples = 0;
  double mitigated_perplexity = 0.0;
  double baseline_perplexity = 0.0;
  double drop = 0.0;  // mitigated - baseline

  friend bool operator==(const UserDrop&, const UserDrop&) = default;
};

struct DisparateImpactReport {
  std::vector<UserDrop> per_user;  // ordered by author id
  std::vector<AuthorId> top_k;     // most training samples
  std::vector<AuthorId> bottom_k;  // fewest training samples
  double top_k_mean = 0.0;
  double bottom_k_mean = 0.0;
  double gap = 0.0;

  nlohmann::json to_json() const;

  friend bool operator==(const DisparateImpactReport&, const DisparateImpactReport&) = default;
};

// Per-user perplexity pools the user's non-canary test samples. Users are
// ranked by non-canary training count (ties: lower id first for top-k,
// higher id first for bottom-k). Requires 1 <= k <= users/2.
DisparateImpactReport disparate_impact(const LanguageModel& mitigated,
                                       const LanguageModel& baseline, const Corpus& corpus,
                                       std::size_t k);

// --- full audit ------------------------------------------------------------

struct AuditConfig {
  std::size_t sample_size = kDefaultSampleSize;
  std::size_t k = 5;
  Estimator estimator = Estimator::kSkewNormal;  // fills rank/exposure
  bool real_canaries = true;
  std::uint64_t seed = 1;

  void validate() const;
};

struct CanaryAudit {
  AuthorId author = 0;
  std::size_t repetitions = 0;
  CanaryKind kind = CanaryKind::kSynthetic;
  std::vector<TokenId> tokens;
  double log_ppl = 0.0;
  ExposureEstimate empirical;
  std::optional<ExposureEstimate> skew_normal;  // absent when S < 1000

  const ExposureEstimate& pick(Estimator estimator) const;
};

struct AuditReport {
  std::string model_id;
  Estimator estimator = Estimator::kSkewNormal;
  std::size_t sample_size = 0;
  std::uint64_t seed = 0;
  double log2_space = 0.0;
  std::vector<CanaryAudit> per_canary;
  std::optional<TabAttackReport> tab;
  DisparateImpactReport disparate;

  // Mean exposure per repetition count, averaged over users.
  std::map<std::size_t, double> mean_exposure_by_repetition(Estimator estimator) const;
  std::map<std::size_t, double> mean_exposure_by_repetition() const {
    return mean_exposure_by_repetition(estimator);
  }
  // Mean exposure over canaries with repetitions >= min_repetitions.
  double mean_exposure(std::size_t min_repetitions, Estimator estimator) const;

  nlohmann::json to_json() const;
  static AuditReport from_json(const nlohmann::json& j);
  // One row per canary: model_id,author,repetitions,kind,log_ppl,rank,exposure,
  // exposure_empirical,exposure_skew_normal
  std::string to_csv() const;
};

// `corpus` must already contain the injected canaries. Real canaries are
// selected with the baseline model so every audited regime is attacked on
// the same sequences.
AuditReport audit_run(const Checkpoint& model, const CanaryPlan& plan, const Corpus& corpus,
                      const Checkpoint& baseline, const AuditConfig& config,
                      const std::string& model_id);

}  // namespace privlm
