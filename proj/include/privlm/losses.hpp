#pragma once

#include "privlm/corpus.hpp"
#include "privlm/params.hpp"

#include <span>
#include <vector>

namespace privlm {

// Log-clamp applied to discriminator probabilities inside the privacy loss.
inline constexpr double kProbabilityFloor = 1e-12;

struct LossGrad {
  double value = 0.0;
  Mat grad;  // gradient w.r.t. the pre-softmax logits (or the inputs, see each function)
};

// Target for column (t, b) is tokens(b, t + 1); <pad> (or running off the
// end) masks the position out.
std::vector<TokenId> next_token_targets(const TokenMatrix& tokens, std::size_t steps);

// Mean negative log-likelihood over unmasked columns; grad is w.r.t. logits.
LossGrad lm_ce_loss(const Mat& logits, std::span<const TokenId> targets);

// Batch mean of -(1/M) sum_c log max(p_c, floor). Columns of `probs` are the
// discriminator's author distributions; grad is w.r.t. the discriminator logits.
LossGrad adv_privacy_loss(const Mat& probs);

// Batch mean of -log p_d[label]; grad is w.r.t. the discriminator logits.
LossGrad disc_loss(const Mat& probs, std::span<const AuthorId> labels);

struct TripletLoss {
  double value = 0.0;
  double unnormalized = 0.0;  // sum over rows before dividing by the batch size
  Mat grad_base;              // d value / d h_base
  Mat grad_aux;               // d value / d h_aux
};

// (1/B) [ sum_{different author} |h_j - a_j|^2 - sum_{same author} |h_i - a_i|^2 ].
TripletLoss triplet_privacy_loss(const Mat& h_base, const Mat& h_aux,
                                 const std::vector<bool>& same_author);

// Fraction of columns whose argmax equals the label.
double argmax_accuracy(const Mat& probs, std::span<const AuthorId> labels);

}  // namespace privlm
