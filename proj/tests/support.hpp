#pragma once

#include "privlm/corpus.hpp"
#include "privlm/model.hpp"

#include <cmath>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace privlm::testing {

// Central finite difference of f around x along every coordinate in
// `coords`; returns max relative error against `analytic`.
inline double fd_max_rel_error(Vec& x, const Vec& analytic, const std::function<double()>& f,
                               const std::vector<Eigen::Index>& coords, double h = 1e-5) {
  double worst = 0.0;
  for (auto i : coords) {
    const double saved = x[i];
    x[i] = saved + h;
    const double up = f();
    x[i] = saved - h;
    const double down = f();
    x[i] = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double scale = std::max({std::abs(numeric), std::abs(analytic[i]), 1e-6});
    worst = std::max(worst, std::abs(numeric - analytic[i]) / scale);
  }
  return worst;
}

inline std::vector<Eigen::Index> sample_coords(Eigen::Index n, std::size_t count, Rng& rng) {
  std::vector<Eigen::Index> out;
  for (std::size_t k = 0; k < count; ++k) {
    out.push_back(static_cast<Eigen::Index>(uniform_index(rng, static_cast<std::uint64_t>(n))));
  }
  return out;
}

inline Mat random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng, double scale = 1.0) {
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * (2.0 * uniform01(rng) - 1.0);
  return m;
}

// Random probability columns (M x B) from a softmax of random logits.
inline Mat random_probs(Eigen::Index m, Eigen::Index b, Rng& rng, double spread = 3.0) {
  return column_softmax(random_matrix(m, b, rng, spread));
}

// Small hand-built corpus: `authors` authors, each with `per_author` samples
// over a vocabulary of `regular` regular tokens.
inline Corpus toy_corpus(std::size_t authors, std::size_t per_author, std::size_t regular,
                         std::uint64_t seed = 1) {
  SyntheticCorpusConfig c;
  c.n_authors = authors;
  c.samples_per_author = per_author;
  c.vocab_size = regular + special::kCount;
  c.seq_len_range = {3, 6};
  c.seed = seed;
  return generate_synthetic_corpus(c);
}

// LSTM language model wired so that the greedy continuation of token t is
// next[t] (tokens without an entry go to <eos>). One-hot embeddings,
// saturated input/output gates and a closed forget gate make each layer's
// hidden state approximately tanh(1) * onehot(current token).
inline LanguageModel markov_model(std::size_t vocab, const std::map<TokenId, TokenId>& next,
                                  double strength = 40.0) {
  LmDims dims{vocab, vocab, vocab};
  LanguageModel m(dims);
  const auto n = static_cast<Eigen::Index>(vocab);
  m.view(m.embedding_slot()).setIdentity();
  for (std::size_t l = 0; l < LanguageModel::kLayers; ++l) {
    const auto& s = m.lstm_slots(l);
    auto wx = m.view(s.wx);
    auto b = m.view(s.b);
    const double gain = l == 0 ? 20.0 : 20.0 / std::tanh(1.0);
    wx.block(2 * n, 0, n, n) = gain * Mat::Identity(n, n);  // cell candidate
    b.block(0, 0, n, 1).setConstant(20.0);                   // input gate open
    b.block(n, 0, n, 1).setConstant(-20.0);                  // forget gate closed
    b.block(3 * n, 0, n, 1).setConstant(20.0);               // output gate open
  }
  auto out = m.view(m.output_weight_slot());
  for (TokenId t = 0; t < static_cast<TokenId>(vocab); ++t) {
    auto it = next.find(t);
    const TokenId target = it == next.end() ? special::kEos : it->second;
    out(target, t) = strength;
  }
  return m;
}

// Plain-loop reference of the model's next-token log-probabilities for one
// framed sequence (<bos> w1..wn); row t holds log Pr(. | prefix up to t).
inline std::vector<std::vector<double>> reference_log_probs(const LanguageModel& m,
                                                            const std::vector<TokenId>& framed) {
  const auto& d = m.dims();
  const std::size_t V = d.vocab, E = d.embed, H = d.hidden;
  const auto emb = m.view(m.embedding_slot());
  std::vector<std::vector<double>> h(2, std::vector<double>(H, 0.0));
  std::vector<std::vector<double>> c(2, std::vector<double>(H, 0.0));
  auto sigmoid = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
  std::vector<std::vector<double>> out;
  for (TokenId tok : framed) {
    std::vector<double> x(E);
    for (std::size_t e = 0; e < E; ++e) x[e] = emb(static_cast<Eigen::Index>(e), tok);
    for (std::size_t l = 0; l < 2; ++l) {
      const auto& s = m.lstm_slots(l);
      const auto wx = m.view(s.wx);
      const auto wh = m.view(s.wh);
      const auto b = m.view(s.b);
      std::vector<double> z(4 * H);
      for (std::size_t r = 0; r < 4 * H; ++r) {
        double acc = b(static_cast<Eigen::Index>(r), 0);
        for (std::size_t k = 0; k < x.size(); ++k) acc += wx(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) * x[k];
        for (std::size_t k = 0; k < H; ++k) acc += wh(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) * h[l][k];
        z[r] = acc;
      }
      std::vector<double> hn(H);
      for (std::size_t k = 0; k < H; ++k) {
        const double i = sigmoid(z[k]);
        const double f = sigmoid(z[H + k]);
        const double g = std::tanh(z[2 * H + k]);
        const double o = sigmoid(z[3 * H + k]);
        c[l][k] = f * c[l][k] + i * g;
        hn[k] = o * std::tanh(c[l][k]);
      }
      h[l] = hn;
      x = hn;
    }
    const auto w = m.view(m.output_weight_slot());
    const auto ob = m.view(m.output_bias_slot());
    std::vector<double> logits(V);
    double mx = -1e300;
    for (std::size_t v = 0; v < V; ++v) {
      double acc = ob(static_cast<Eigen::Index>(v), 0);
      for (std::size_t k = 0; k < H; ++k) acc += w(static_cast<Eigen::Index>(v), static_cast<Eigen::Index>(k)) * x[k];
      logits[v] = acc;
      mx = std::max(mx, acc);
    }
    double z = 0.0;
    for (double v : logits) z += std::exp(v - mx);
    for (double& v : logits) v = v - mx - std::log(z);
    out.push_back(logits);
  }
  return out;
}

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& name) {
    path = std::filesystem::temp_directory_path() / ("privlm_test_" + name);
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

}  // namespace privlm::testing
