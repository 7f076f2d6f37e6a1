#include "privlm/losses.hpp"

#include "privlm/error.hpp"

#include <cmath>

namespace privlm {

using Eigen::Index;

std::vector<TokenId> next_token_targets(const TokenMatrix& tokens, std::size_t steps) {
  std::vector<TokenId> targets(steps * tokens.rows, special::kPad);
  for (std::size_t t = 0; t < steps; ++t) {
    if (t + 1 >= tokens.cols) break;
    for (std::size_t r = 0; r < tokens.rows; ++r) targets[t * tokens.rows + r] = tokens.at(r, t + 1);
  }
  return targets;
}

LossGrad lm_ce_loss(const Mat& logits, std::span<const TokenId> targets) {
  require(static_cast<Index>(targets.size()) == logits.cols(),
          "lm_ce_loss: one target per logit column required");
  std::size_t count = 0;
  for (TokenId t : targets) {
    if (t != special::kPad) ++count;
  }
  require(count > 0, "lm_ce_loss: every position is padding");

  LossGrad out;
  out.grad = Mat::Zero(logits.rows(), logits.cols());
  const double inv = 1.0 / static_cast<double>(count);
  double total = 0.0;
  for (Index c = 0; c < logits.cols(); ++c) {
    const TokenId target = targets[static_cast<std::size_t>(c)];
    if (target == special::kPad) continue;
    require(target >= 0 && target < logits.rows(), "lm_ce_loss: target out of range");
    const auto col = logits.col(c);
    const double mx = col.maxCoeff();
    auto g = out.grad.col(c);
    g = (col.array() - mx).exp().matrix();
    const double sum = g.sum();
    total += std::log(sum) + mx - col[target];
    g *= inv / sum;
    g[target] -= inv;
  }
  out.value = total * inv;
  return out;
}

namespace {

void check_distributions(const Mat& probs, const char* who) {
  require(probs.cols() > 0 && probs.rows() > 0, std::string(who) + ": empty input");
  for (Index c = 0; c < probs.cols(); ++c) {
    require(std::abs(probs.col(c).sum() - 1.0) <= 1e-4 && probs.col(c).minCoeff() >= 0.0,
            std::string(who) + ": column " + std::to_string(c) + " is not a probability vector");
  }
}

}  // namespace

LossGrad adv_privacy_loss(const Mat& probs) {
  check_distributions(probs, "adv_privacy_loss");
  const Index m = probs.rows();
  const double batch = static_cast<double>(probs.cols());
  LossGrad out;
  out.grad.resize(m, probs.cols());
  double total = 0.0;
  for (Index c = 0; c < probs.cols(); ++c) {
    double row = 0.0;
    Index unclamped = 0;
    for (Index k = 0; k < m; ++k) {
      const double p = probs(k, c);
      if (p >= kProbabilityFloor) {
        row -= std::log(p);
        ++unclamped;
      } else {
        row -= std::log(kProbabilityFloor);
      }
    }
    total += row / static_cast<double>(m);
    // d/dz_j of -(1/M) sum_{c unclamped} log p_c
    for (Index k = 0; k < m; ++k) {
      const double p = probs(k, c);
      const double own = p >= kProbabilityFloor ? 1.0 : 0.0;
      out.grad(k, c) = (static_cast<double>(unclamped) * p - own) / (static_cast<double>(m) * batch);
    }
  }
  out.value = total / batch;
  return out;
}

LossGrad disc_loss(const Mat& probs, std::span<const AuthorId> labels) {
  require(static_cast<Index>(labels.size()) == probs.cols(), "disc_loss: one label per column");
  LossGrad out;
  out.grad = probs;
  const double batch = static_cast<double>(probs.cols());
  double total = 0.0;
  for (Index c = 0; c < probs.cols(); ++c) {
    const AuthorId y = labels[static_cast<std::size_t>(c)];
    require(y >= 0 && y < probs.rows(),
            "disc_loss: label " + std::to_string(y) + " outside [0, " +
                std::to_string(probs.rows()) + ")");
    total -= std::log(std::max(probs(y, c), kProbabilityFloor));
    out.grad(y, c) -= 1.0;
  }
  out.grad /= batch;
  out.value = total / batch;
  return out;
}

TripletLoss triplet_privacy_loss(const Mat& h_base, const Mat& h_aux,
                                 const std::vector<bool>& same_author) {
  require(h_base.rows() == h_aux.rows() && h_base.cols() == h_aux.cols(),
          "triplet_privacy_loss: shape mismatch between base and auxiliary states");
  require(static_cast<Index>(same_author.size()) == h_base.cols(),
          "triplet_privacy_loss: one same-author flag per row required");
  require(h_base.cols() > 0, "triplet_privacy_loss: empty batch");

  const double batch = static_cast<double>(h_base.cols());
  TripletLoss out;
  const Mat diff = h_base - h_aux;
  out.grad_base.resize(diff.rows(), diff.cols());
  for (Index c = 0; c < diff.cols(); ++c) {
    const double sign = same_author[static_cast<std::size_t>(c)] ? -1.0 : 1.0;
    out.unnormalized += sign * diff.col(c).squaredNorm();
    out.grad_base.col(c) = (2.0 * sign / batch) * diff.col(c);
  }
  out.grad_aux = -out.grad_base;
  out.value = out.unnormalized / batch;
  return out;
}

double argmax_accuracy(const Mat& probs, std::span<const AuthorId> labels) {
  require(static_cast<Index>(labels.size()) == probs.cols(), "argmax_accuracy: label count");
  std::size_t hits = 0;
  for (Index c = 0; c < probs.cols(); ++c) {
    Index best = 0;
    probs.col(c).maxCoeff(&best);
    if (best == labels[static_cast<std::size_t>(c)]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(probs.cols());
}

}  // namespace privlm
