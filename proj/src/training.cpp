#include "privlm/training.hpp"

#include "privlm/error.hpp"
#include "privlm/log.hpp"
#include "privlm/losses.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace privlm {

std::string to_string(Regime regime) {
  switch (regime) {
    case Regime::kUnmitigated: return "unmitigated";
    case Regime::kAdversarial: return "adversarial";
    case Regime::kTriplet: return "triplet";
    case Regime::kDpsgd: return "dpsgd";
  }
  return "unknown";
}

Regime parse_regime(const std::string& name) {
  if (name == "unmitigated") return Regime::kUnmitigated;
  if (name == "adversarial") return Regime::kAdversarial;
  if (name == "triplet") return Regime::kTriplet;
  if (name == "dpsgd") return Regime::kDpsgd;
  throw InvalidArgument("unknown regime '" + name +
                        "' (expected unmitigated, adversarial, triplet or dpsgd)");
}

std::string to_string(StopReason reason) {
  return reason == StopReason::kTargetReached ? "target_ppl_reached" : "max_epochs";
}

// ---------------------------------------------------------------------------
// TrainConfig

void TrainConfig::validate() const {
  const std::string p = "train." + to_string(regime) + ".";
  require(lambda >= 0.0 && std::isfinite(lambda), p + "lambda: must be a finite value >= 0");
  require(learning_rate > 0.0, p + "learning_rate: must be > 0");
  require(batch_size >= 1, p + "batch_size: must be >= 1");
  require(seq_len >= 2, p + "seq_len: must be >= 2");
  require(max_epochs >= 1, p + "max_epochs: must be >= 1");
  require(p_same >= 0.0 && p_same <= 1.0, p + "p_same: must be in [0, 1]");
  require(disc_steps_per_lm_step >= 1, p + "disc_steps_per_lm_step: must be >= 1");
  require(!disc_learning_rate || *disc_learning_rate > 0.0,
          p + "disc_learning_rate: must be > 0");
  require(!target_test_perplexity || *target_test_perplexity > 0.0,
          p + "target_test_perplexity: must be > 0");
  require(model.embed_dim > 0 && model.hidden_dim > 0 && model.disc_hidden_dim > 0,
          "model: dimensions must be positive");
  require(model.init_scale >= 0.0, "model.init_scale: must be >= 0");
  if (regime == Regime::kDpsgd) {
    require(clip_norm.has_value(), p + "clip_norm: required for the dpsgd regime");
    require(noise_multiplier.has_value(), p + "noise_multiplier: required for the dpsgd regime");
    require(*clip_norm > 0.0, p + "clip_norm: must be > 0");
    require(*noise_multiplier >= 0.0, p + "noise_multiplier: must be >= 0");
  } else {
    require(!clip_norm, p + "clip_norm: only valid for the dpsgd regime");
    require(!noise_multiplier, p + "noise_multiplier: only valid for the dpsgd regime");
  }
}

nlohmann::json TrainConfig::to_json() const {
  nlohmann::json j = {{"regime", to_string(regime)},
                      {"lambda", lambda},
                      {"learning_rate", learning_rate},
                      {"batch_size", batch_size},
                      {"seq_len", seq_len},
                      {"target_test_perplexity", nullptr},
                      {"max_epochs", max_epochs},
                      {"p_same", p_same},
                      {"clip_norm", nullptr},
                      {"noise_multiplier", nullptr},
                      {"disc_steps_per_lm_step", disc_steps_per_lm_step},
                      {"seed", seed},
                      {"eval_every_batches", eval_every_batches},
                      {"model",
                       {{"embed_dim", model.embed_dim},
                        {"hidden_dim", model.hidden_dim},
                        {"disc_hidden_dim", model.disc_hidden_dim},
                        {"init_scale", model.init_scale}}}};
  if (target_test_perplexity) j["target_test_perplexity"] = *target_test_perplexity;
  if (clip_norm) j["clip_norm"] = *clip_norm;
  if (noise_multiplier) j["noise_multiplier"] = *noise_multiplier;
  if (disc_learning_rate) j["disc_learning_rate"] = *disc_learning_rate;
  return j;
}

std::uint64_t TrainConfig::hash() const { return fnv1a(to_json().dump()); }

// ---------------------------------------------------------------------------
// Gradients

namespace {

struct CeForward {
  LmForward fwd;
  LossGrad ce;
};

CeForward ce_forward(const LanguageModel& model, const Batch& batch) {
  const std::size_t steps = batch.tokens.max_length();
  CeForward out{lm_forward(model, batch.tokens, steps), {}};
  out.ce = lm_ce_loss(out.fwd.logits, next_token_targets(batch.tokens, steps));
  return out;
}

double adversarial_from_forward(const LanguageModel& model, const Discriminator& disc,
                                const Batch& batch, const CeForward& cf, double lambda, Vec* grad,
                                StepLosses* parts) {
  const auto dfwd = discriminator_forward(disc, cf.fwd.last_hidden);
  const auto priv = adv_privacy_loss(dfwd.probs);
  if (grad != nullptr) {
    const Mat d_hx = lambda * discriminator_backward(disc, dfwd, priv.grad, nullptr);
    lm_backward(model, batch.tokens, cf.fwd, cf.ce.grad, d_hx, *grad);
  }
  if (parts != nullptr) {
    parts->ce = cf.ce.value;
    parts->privacy = priv.value;
  }
  return cf.ce.value + lambda * priv.value;
}

std::vector<bool> same_author_flags(const Batch& base, const Batch& aux) {
  require(base.tokens.rows == aux.tokens.rows && base.tokens.cols == aux.tokens.cols,
          "triplet: base and auxiliary batches must have the same shape");
  std::vector<bool> flags(base.row_authors.size());
  for (std::size_t r = 0; r < flags.size(); ++r) flags[r] = base.row_authors[r] == aux.row_authors[r];
  return flags;
}

}  // namespace

double lm_loss_and_grad(const LanguageModel& model, const Batch& batch, Vec* grad) {
  const auto cf = ce_forward(model, batch);
  if (grad != nullptr) lm_backward(model, batch.tokens, cf.fwd, cf.ce.grad, Mat(), *grad);
  return cf.ce.value;
}

double adversarial_lm_loss_and_grad(const LanguageModel& model, const Discriminator& disc,
                                    const Batch& batch, double lambda, Vec* grad,
                                    StepLosses* parts) {
  return adversarial_from_forward(model, disc, batch, ce_forward(model, batch), lambda, grad,
                                  parts);
}

double disc_loss_and_grad(const Discriminator& disc, const Mat& h_x,
                          std::span<const AuthorId> labels, Vec* grad) {
  const auto dfwd = discriminator_forward(disc, h_x);
  const auto loss = disc_loss(dfwd.probs, labels);
  if (grad != nullptr) discriminator_backward(disc, dfwd, loss.grad, grad);
  return loss.value;
}

double triplet_loss_and_grad(const LanguageModel& model, const Batch& base, const Batch& aux,
                             double lambda, Vec* grad, StepLosses* parts) {
  const auto flags = same_author_flags(base, aux);
  const auto cf = ce_forward(model, base);
  const auto aux_fwd = lm_forward(model, aux.tokens, aux.tokens.max_length());
  const auto tl = triplet_privacy_loss(cf.fwd.last_hidden, aux_fwd.last_hidden, flags);
  if (grad != nullptr) {
    lm_backward(model, base.tokens, cf.fwd, cf.ce.grad, lambda * tl.grad_base, *grad);
    if (lambda != 0.0) lm_backward(model, aux.tokens, aux_fwd, Mat(), lambda * tl.grad_aux, *grad);
  }
  if (parts != nullptr) {
    parts->ce = cf.ce.value;
    parts->privacy = tl.value;
  }
  return cf.ce.value + lambda * tl.value;
}

std::vector<Vec> per_sample_gradients(const LanguageModel& model, const Batch& batch,
                                     double* batch_loss) {
  const auto& tm = batch.tokens;
  const std::size_t steps = tm.max_length();
  const auto all_targets = next_token_targets(tm, steps);
  std::size_t total = 0;
  for (TokenId t : all_targets) total += t != special::kPad ? 1 : 0;
  require(total > 0, "per_sample_gradients: batch has no predicted tokens");
  const double rows = static_cast<double>(tm.rows);

  std::vector<Vec> grads;
  grads.reserve(tm.rows);
  double loss = 0.0;
  for (std::size_t r = 0; r < tm.rows; ++r) {
    TokenMatrix one(1, tm.cols);
    std::copy(tm.data.begin() + static_cast<std::ptrdiff_t>(r * tm.cols),
              tm.data.begin() + static_cast<std::ptrdiff_t>((r + 1) * tm.cols), one.data.begin());
    const std::size_t len = one.length(0);
    const auto fwd = lm_forward(model, one, len);
    const auto targets = next_token_targets(one, len);
    std::size_t mine = 0;
    for (TokenId t : targets) mine += t != special::kPad ? 1 : 0;
    Vec g = Vec::Zero(model.params().size());
    if (mine > 0) {
      auto ce = lm_ce_loss(fwd.logits, targets);
      loss += ce.value * static_cast<double>(mine) / static_cast<double>(total);
      // Rescale the row's mean loss to its share of the batch token mean,
      // times B so that the average of the rows reproduces the batch gradient.
      ce.grad *= rows * static_cast<double>(mine) / static_cast<double>(total);
      lm_backward(model, one, fwd, ce.grad, Mat(), g);
    }
    grads.push_back(std::move(g));
  }
  if (batch_loss != nullptr) *batch_loss = loss;
  return grads;
}

// ---------------------------------------------------------------------------
// Steps

StepLosses unmitigated_step(LanguageModel& model, Adam& opt, const Batch& batch) {
  Vec grad = Vec::Zero(model.params().size());
  StepLosses out;
  out.ce = lm_loss_and_grad(model, batch, &grad);
  opt.step(model.params(), grad);
  return out;
}

StepLosses adversarial_step(LanguageModel& model, Discriminator& disc, Adam& lm_opt,
                            Adam& disc_opt, const Batch& batch, const TrainConfig& config) {
  require(disc.dims().authors >= 2, "adversarial_step: need at least 2 authors");
  const auto cf = ce_forward(model, batch);
  const Mat& h_x = cf.fwd.last_hidden;  // detached: no gradient reaches the LM here

  StepLosses out;
  for (std::size_t k = 0; k < config.disc_steps_per_lm_step; ++k) {
    Vec dgrad = Vec::Zero(disc.params().size());
    const auto dfwd = discriminator_forward(disc, h_x);
    const auto loss = disc_loss(dfwd.probs, batch.row_authors);
    discriminator_backward(disc, dfwd, loss.grad, &dgrad);
    out.disc = loss.value;
    out.disc_accuracy = argmax_accuracy(dfwd.probs, batch.row_authors);
    disc_opt.step(disc.params(), dgrad);
  }

  Vec grad = Vec::Zero(model.params().size());
  StepLosses parts;
  adversarial_from_forward(model, disc, batch, cf, config.lambda, &grad, &parts);
  lm_opt.step(model.params(), grad);
  out.ce = parts.ce;
  out.privacy = parts.privacy;
  return out;
}

StepLosses triplet_step(LanguageModel& model, Adam& opt, const Batch& base, const Batch& aux,
                        const TrainConfig& config) {
  Vec grad = Vec::Zero(model.params().size());
  StepLosses out;
  triplet_loss_and_grad(model, base, aux, config.lambda, &grad, &out);
  opt.step(model.params(), grad);
  return out;
}

DpGradient dp_gradient(const LanguageModel& model, const Batch& batch, double clip_norm,
                       double noise_multiplier, Rng& rng) {
  require(clip_norm > 0.0, "dpsgd: clip norm must be > 0");
  require(noise_multiplier >= 0.0, "dpsgd: noise multiplier must be >= 0");
  DpGradient out;
  auto grads = per_sample_gradients(model, batch, &out.loss);
  const double rows = static_cast<double>(grads.size());

  out.clipped_mean = Vec::Zero(model.params().size());
  for (auto& g : grads) {
    const double norm = g.norm();
    out.raw_norms.push_back(norm);
    if (norm > clip_norm) g *= clip_norm / norm;
    out.clipped_norms.push_back(g.norm());
    out.clipped_mean += g;
  }
  out.clipped_mean /= rows;
  out.noisy = out.clipped_mean;
  if (noise_multiplier > 0.0) {
    const double stddev = noise_multiplier * clip_norm / rows;
    for (Eigen::Index i = 0; i < out.noisy.size(); ++i) out.noisy[i] += stddev * standard_normal(rng);
  }
  return out;
}

DpGradient dpsgd_step(LanguageModel& model, Adam& opt, const Batch& batch, double clip_norm,
                      double noise_multiplier, Rng& rng) {
  auto g = dp_gradient(model, batch, clip_norm, noise_multiplier, rng);
  opt.step(model.params(), g.noisy);
  return g;
}

// ---------------------------------------------------------------------------
// TrainLog

bool EpochRecord::same_numbers(const EpochRecord& o) const {
  return epoch == o.epoch && batches == o.batches && step == o.step &&
         train_perplexity == o.train_perplexity && test_perplexity == o.test_perplexity &&
         ce_loss == o.ce_loss && privacy_loss == o.privacy_loss && disc_loss == o.disc_loss &&
         disc_accuracy == o.disc_accuracy && max_clipped_norm == o.max_clipped_norm;
}

bool operator==(const TrainLog& a, const TrainLog& b) {
  if (a.regime != b.regime || a.stop != b.stop || a.steps != b.steps ||
      a.records.size() != b.records.size() || a.clip_norm != b.clip_norm ||
      a.noise_multiplier != b.noise_multiplier) {
    return false;
  }
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    if (!a.records[i].same_numbers(b.records[i])) return false;
  }
  return true;
}

std::string TrainLog::to_csv() const {
  std::ostringstream out;
  out << "epoch,split,perplexity,privacy_loss,disc_acc,seconds\n";
  char line[256];
  for (const auto& r : records) {
    for (const char* split : {"train", "test"}) {
      const double ppl = std::string(split) == "train" ? r.train_perplexity : r.test_perplexity;
      std::snprintf(line, sizeof line, "%zu,%s,%.10g,%.10g,%.10g,%.3f\n", r.epoch, split, ppl,
                    r.privacy_loss, r.disc_accuracy, r.seconds);
      out << line;
    }
  }
  return out.str();
}

nlohmann::json TrainLog::to_json(bool include_timing) const {
  nlohmann::json records_json = nlohmann::json::array();
  for (const auto& r : records) {
    nlohmann::json j = {{"epoch", r.epoch},
                        {"batches", r.batches},
                        {"step", r.step},
                        {"train_perplexity", r.train_perplexity},
                        {"test_perplexity", r.test_perplexity},
                        {"ce_loss", r.ce_loss},
                        {"privacy_loss", r.privacy_loss},
                        {"disc_loss", r.disc_loss},
                        {"disc_accuracy", r.disc_accuracy},
                        {"max_clipped_norm", r.max_clipped_norm}};
    if (include_timing) j["seconds"] = r.seconds;
    records_json.push_back(std::move(j));
  }
  nlohmann::json j = {{"regime", to_string(regime)},
                      {"stopping_reason", to_string(stop)},
                      {"steps", steps},
                      {"records", std::move(records_json)}};
  if (clip_norm) j["clip_norm"] = *clip_norm;
  if (noise_multiplier) j["noise_multiplier"] = *noise_multiplier;
  return j;
}

// ---------------------------------------------------------------------------
// Loop

TrainResult train(const Corpus& corpus, const CanaryPlan& plan, const TrainConfig& config) {
  config.validate();
  corpus.validate();
  std::size_t injected = 0;
  for (const auto& s : corpus.samples) injected += s.canary ? 1 : 0;
  require(injected == plan.total_copies(),
          "train: corpus holds " + std::to_string(injected) + " canary samples but the plan has " +
              std::to_string(plan.total_copies()));
  const std::size_t authors = corpus.num_authors();
  if (config.regime == Regime::kAdversarial) {
    require(authors >= 2, "train: adversarial regime needs at least 2 authors");
  }
  const auto test_idx = corpus.test_indices();
  const auto train_idx = corpus.utility_train_indices();
  require(!test_idx.empty(), "train: corpus has no test samples");
  require(!train_idx.empty(), "train: corpus has no training samples");

  const LmDims dims{corpus.vocab.size(), config.model.embed_dim, config.model.hidden_dim};
  TrainResult result{LanguageModel::initialized(dims, config.model.init_scale, config.seed),
                     std::nullopt,
                     {}};
  auto& model = result.model;
  if (config.regime == Regime::kAdversarial) {
    result.disc = Discriminator::initialized(
        DiscDims{config.model.hidden_dim, config.model.disc_hidden_dim, authors},
        config.model.init_scale, config.seed);
  }
  Adam lm_opt(config.learning_rate);
  Adam disc_opt(config.disc_learning_rate.value_or(config.learning_rate));
  auto aux_rng = make_rng(config.seed, "aux-batches");
  auto noise_rng = make_rng(config.seed, "dp-noise");

  auto& log = result.log;
  log.regime = config.regime;
  log.clip_norm = config.clip_norm;
  log.noise_multiplier = config.noise_multiplier;

  using Clock = std::chrono::steady_clock;
  bool done = false;
  for (std::size_t epoch = 1; epoch <= config.max_epochs && !done; ++epoch) {
    const auto start = Clock::now();
    const auto batches = user_batches(corpus, config.batch_size, config.seq_len,
                                      derive_seed(config.seed, "epoch" + std::to_string(epoch)));
    EpochRecord rec;
    rec.epoch = epoch;
    double ce_sum = 0.0, priv_sum = 0.0, disc_sum = 0.0, acc_sum = 0.0;

    auto finish_record = [&](std::size_t consumed) {
      const double n = static_cast<double>(consumed);
      rec.batches = consumed;
      rec.step = log.steps;
      rec.ce_loss = ce_sum / n;
      rec.privacy_loss = priv_sum / n;
      rec.disc_loss = disc_sum / n;
      rec.disc_accuracy = acc_sum / n;
      rec.train_perplexity = perplexity(model, corpus, train_idx);
      rec.seconds = std::chrono::duration<double>(Clock::now() - start).count();
      log.records.push_back(rec);
    };

    for (std::size_t k = 0; k < batches.size(); ++k) {
      const auto& batch = batches[k];
      StepLosses losses;
      switch (config.regime) {
        case Regime::kUnmitigated:
          losses = unmitigated_step(model, lm_opt, batch);
          break;
        case Regime::kAdversarial:
          losses = adversarial_step(model, *result.disc, lm_opt, disc_opt, batch, config);
          break;
        case Regime::kTriplet: {
          const auto aux = sample_auxiliary_batch(corpus, batch, config.p_same, aux_rng);
          losses = triplet_step(model, lm_opt, batch, aux, config);
          break;
        }
        case Regime::kDpsgd: {
          const auto g = dpsgd_step(model, lm_opt, batch, *config.clip_norm,
                                    *config.noise_multiplier, noise_rng);
          for (double n : g.clipped_norms) rec.max_clipped_norm = std::max(rec.max_clipped_norm, n);
          losses.ce = g.loss;
          break;
        }
      }
      ++log.steps;
      ce_sum += losses.ce;
      priv_sum += losses.privacy;
      disc_sum += losses.disc;
      acc_sum += losses.disc_accuracy;

      const bool epoch_end = k + 1 == batches.size();
      const bool probe = config.eval_every_batches > 0 && (k + 1) % config.eval_every_batches == 0;
      if (epoch_end || (probe && config.target_test_perplexity)) {
        rec.test_perplexity = perplexity(model, corpus, test_idx);
        const bool reached =
            config.target_test_perplexity && rec.test_perplexity <= *config.target_test_perplexity;
        if (reached || epoch_end) {
          finish_record(k + 1);
          if (reached) {
            log.stop = StopReason::kTargetReached;
            done = true;
          }
          break;
        }
      }
    }
  }
  if (!done) log.stop = StopReason::kMaxEpochs;
  return result;
}

}  // namespace privlm
