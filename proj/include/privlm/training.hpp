#pragma once

#include "privlm/canary.hpp"
#include "privlm/corpus.hpp"
#include "privlm/model.hpp"
#include "privlm/optim.hpp"

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace privlm {

enum class Regime { kUnmitigated, kAdversarial, kTriplet, kDpsgd };

std::string to_string(Regime regime);
Regime parse_regime(const std::string& name);

struct ModelConfig {
  std::size_t embed_dim = 64;
  std::size_t hidden_dim = 64;
  std::size_t disc_hidden_dim = 128;
  double init_scale = 0.1;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct TrainConfig {
  Regime regime = Regime::kUnmitigated;
  double lambda = 1.0;
  double learning_rate = 1e-3;
  std::size_t batch_size = 20;
  std::size_t seq_len = 64;
  std::optional<double> target_test_perplexity;
  std::size_t max_epochs = 10;
  double p_same = 0.5;
  std::optional<double> clip_norm;         // dpsgd only
  std::optional<double> noise_multiplier;  // dpsgd only
  std::size_t disc_steps_per_lm_step = 1;
  std::optional<double> disc_learning_rate;  // defaults to learning_rate
  std::uint64_t seed = 1;  // model init; data order and noise derive from it
  // Extra test-perplexity checks every N batches inside an epoch (0 = epoch
  // end only); lets the stopping rule land closer to a perplexity tier.
  std::size_t eval_every_batches = 0;
  ModelConfig model;

  // Throws InvalidArgument naming the offending field.
  void validate() const;
  std::uint64_t hash() const;
  nlohmann::json to_json() const;
};

struct StepLosses {
  double ce = 0.0;
  double privacy = 0.0;
  double disc = 0.0;
  double disc_accuracy = 0.0;
};

// --- gradients (exposed for finite-difference checks) ----------------------

// Mean next-token cross entropy on the batch.
double lm_loss_and_grad(const LanguageModel& model, const Batch& batch, Vec* grad);

// L_CE + lambda * adv privacy loss with the discriminator frozen.
double adversarial_lm_loss_and_grad(const LanguageModel& model, const Discriminator& disc,
                                    const Batch& batch, double lambda, Vec* grad,
                                    StepLosses* parts = nullptr);

// Discriminator cross entropy on fixed hidden states.
double disc_loss_and_grad(const Discriminator& disc, const Mat& h_x,
                          std::span<const AuthorId> labels, Vec* grad);

// L_CE(base) + lambda * triplet loss; both batches pass through the model.
double triplet_loss_and_grad(const LanguageModel& model, const Batch& base, const Batch& aux,
                             double lambda, Vec* grad, StepLosses* parts = nullptr);

// Per-row gradients g_i with (1/B) sum_i g_i equal to the batch gradient of
// lm_loss_and_grad.
std::vector<Vec> per_sample_gradients(const LanguageModel& model, const Batch& batch,
                                     double* batch_loss = nullptr);

// --- single updates --------------------------------------------------------

StepLosses unmitigated_step(LanguageModel& model, Adam& opt, const Batch& batch);

// Discriminator first (disc_steps_per_lm_step updates on detached h_x), then
// one LM update against the refreshed, frozen discriminator.
StepLosses adversarial_step(LanguageModel& model, Discriminator& disc, Adam& lm_opt,
                            Adam& disc_opt, const Batch& batch, const TrainConfig& config);

StepLosses triplet_step(LanguageModel& model, Adam& opt, const Batch& base, const Batch& aux,
                        const TrainConfig& config);

struct DpGradient {
  Vec noisy;                        // what the optimizer receives
  Vec clipped_mean;                 // before noise
  std::vector<double> raw_norms;    // per-sample, before clipping
  std::vector<double> clipped_norms;
  double loss = 0.0;  // batch cross entropy before the update
};

DpGradient dp_gradient(const LanguageModel& model, const Batch& batch, double clip_norm,
                       double noise_multiplier, Rng& rng);

DpGradient dpsgd_step(LanguageModel& model, Adam& opt, const Batch& batch, double clip_norm,
                      double noise_multiplier, Rng& rng);

// --- loop ------------------------------------------------------------------

enum class StopReason { kTargetReached, kMaxEpochs };
std::string to_string(StopReason reason);

struct EpochRecord {
  std::size_t epoch = 0;
  std::size_t batches = 0;  // batches consumed within this epoch when recorded
  std::uint64_t step = 0;   // cumulative LM updates
  double train_perplexity = 0.0;
  double test_perplexity = 0.0;
  double ce_loss = 0.0;
  double privacy_loss = 0.0;
  double disc_loss = 0.0;
  double disc_accuracy = 0.0;
  double max_clipped_norm = 0.0;
  double seconds = 0.0;  // wall clock; excluded from equality

  bool same_numbers(const EpochRecord& o) const;
};

struct TrainLog {
  Regime regime = Regime::kUnmitigated;
  std::vector<EpochRecord> records;
  StopReason stop = StopReason::kMaxEpochs;
  std::uint64_t steps = 0;
  std::optional<double> clip_norm;
  std::optional<double> noise_multiplier;

  const EpochRecord& final_record() const { return records.back(); }

  // (epoch, split, perplexity, privacy_loss, disc_acc, seconds)
  std::string to_csv() const;
  nlohmann::json to_json(bool include_timing = true) const;

  friend bool operator==(const TrainLog& a, const TrainLog& b);
};

struct TrainResult {
  LanguageModel model;
  std::optional<Discriminator> disc;
  TrainLog log;
};

TrainResult train(const Corpus& corpus, const CanaryPlan& plan, const TrainConfig& config);

}  // namespace privlm
