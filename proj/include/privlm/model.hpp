#pragma once

#include "privlm/corpus.hpp"
#include "privlm/params.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

namespace privlm {

// Activations are stored column-major with one column per (position, row)
// pair: column index = position * batch + row. Probability outputs such as
// p_d are therefore (classes x batch); each column is one distribution.

struct LmDims {
  std::size_t vocab = 0;
  std::size_t embed = 64;
  std::size_t hidden = 64;

  friend bool operator==(const LmDims&, const LmDims&) = default;
};

struct LstmSlots {
  ParamSlot wx;  // 4H x in, gate blocks ordered input, forget, cell, output
  ParamSlot wh;  // 4H x H
  ParamSlot b;   // 4H x 1
};

// Embedding, two stacked LSTM layers and a softmax output projection.
class LanguageModel {
 public:
  static constexpr std::size_t kLayers = 2;

  explicit LanguageModel(LmDims dims);  // all weights zero

  // Uniform(-scale, scale) initialisation.
  static LanguageModel initialized(LmDims dims, double scale, std::uint64_t seed);

  const LmDims& dims() const { return dims_; }
  const ParamLayout& layout() const { return layout_; }
  Vec& params() { return params_; }
  const Vec& params() const { return params_; }

  const ParamSlot& embedding_slot() const { return embedding_; }  // E x V
  const LstmSlots& lstm_slots(std::size_t layer) const { return lstm_[layer]; }
  const ParamSlot& output_weight_slot() const { return out_w_; }  // V x H
  const ParamSlot& output_bias_slot() const { return out_b_; }    // V x 1

  MatMap view(const ParamSlot& slot) { return slot.view(params_); }
  ConstMatMap view(const ParamSlot& slot) const { return slot.view(params_); }

 private:
  LmDims dims_;
  ParamLayout layout_;
  ParamSlot embedding_;
  std::array<LstmSlots, kLayers> lstm_;
  ParamSlot out_w_;
  ParamSlot out_b_;
  Vec params_;
};

struct LstmLayerCache {
  Mat input;      // in x (T*B)
  Mat gates;      // 4H x (T*B), post-activation
  Mat cell;       // H x (T*B)
  Mat cell_tanh;  // H x (T*B)
  Mat hidden;     // H x (T*B)
};

struct LmForward {
  std::size_t batch = 0;
  std::size_t steps = 0;
  std::array<LstmLayerCache, LanguageModel::kLayers> layers;
  Mat logits;                      // V x (T*B)
  Mat last_hidden;                 // H x B: top layer after each row's last word (h_x)
  std::vector<std::size_t> last_position;

  auto logit_column(std::size_t row, std::size_t position) const {
    return logits.col(static_cast<Eigen::Index>(position * batch + row));
  }
};

// Runs the first `horizon` positions (all when 0). Positions past a row's
// length only see pads and never influence earlier positions.
LmForward lm_forward(const LanguageModel& model, const TokenMatrix& tokens,
                     std::size_t horizon = 0);

// Accumulates parameter gradients into `grad` (same layout as params()).
// `dlogits` may be empty (no next-token loss); `d_last_hidden` may be empty.
void lm_backward(const LanguageModel& model, const TokenMatrix& tokens, const LmForward& fwd,
                 const Mat& dlogits, const Mat& d_last_hidden, Vec& grad);

struct DiscDims {
  std::size_t input = 64;
  std::size_t width = 128;
  std::size_t authors = 2;

  friend bool operator==(const DiscDims&, const DiscDims&) = default;
};

// Two fully connected layers (tanh hidden activation) followed by a softmax
// over authors.
class Discriminator {
 public:
  explicit Discriminator(DiscDims dims);
  static Discriminator initialized(DiscDims dims, double scale, std::uint64_t seed);

  const DiscDims& dims() const { return dims_; }
  const ParamLayout& layout() const { return layout_; }
  Vec& params() { return params_; }
  const Vec& params() const { return params_; }

  const ParamSlot& w1() const { return w1_; }  // width x input
  const ParamSlot& b1() const { return b1_; }
  const ParamSlot& w2() const { return w2_; }  // authors x width
  const ParamSlot& b2() const { return b2_; }

  ConstMatMap view(const ParamSlot& slot) const { return slot.view(params_); }
  MatMap view(const ParamSlot& slot) { return slot.view(params_); }

 private:
  DiscDims dims_;
  ParamLayout layout_;
  ParamSlot w1_, b1_, w2_, b2_;
  Vec params_;
};

struct DiscForward {
  Mat input;   // H x B
  Mat hidden;  // width x B
  Mat logits;  // M x B
  Mat probs;   // M x B, p_d
};

DiscForward discriminator_forward(const Discriminator& disc, const Mat& h_x);

// Returns d(loss)/d(h_x). Parameter gradients are accumulated into `grad`
// when it is non-null.
Mat discriminator_backward(const Discriminator& disc, const DiscForward& fwd, const Mat& dlogits,
                           Vec* grad);

Mat column_softmax(const Mat& logits);

struct SequenceScore {
  double log_prob = 0.0;  // natural log
  std::size_t predicted = 0;
};

// Scores each sequence framed as <bos> w1..wn (plus <eos> as a predicted
// target when include_eos). Evaluated in length-sorted chunks; the result is
// in input order and independent of chunking.
std::vector<SequenceScore> score_sequences(const LanguageModel& model,
                                           const std::vector<std::span<const TokenId>>& seqs,
                                           bool include_eos);

// sum_i log Pr(x_i | <bos>, x_1..x_{i-1}).
double sequence_log_prob(const LanguageModel& model, std::span<const TokenId> tokens);

// exp(-total log prob / total predicted tokens), with <eos> predicted.
double perplexity(const LanguageModel& model, const std::vector<std::span<const TokenId>>& samples);
double perplexity(const LanguageModel& model, const Corpus& corpus,
                  const std::vector<std::size_t>& sample_indices);

// Appends n_tokens argmax predictions (ties: lowest id) to the prefix.
std::vector<TokenId> greedy_continue(const LanguageModel& model, std::span<const TokenId> prefix,
                                     std::size_t n_tokens);

struct Checkpoint {
  LanguageModel lm{LmDims{}};
  std::optional<Discriminator> disc;
  std::uint64_t vocab_hash = 0;
  std::uint64_t config_hash = 0;
  std::uint64_t step = 0;
  std::string regime;
};

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace privlm
