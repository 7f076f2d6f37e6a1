#include "privlm/model.hpp"

#include "privlm/error.hpp"
#include "privlm/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

namespace privlm {

namespace {

using Eigen::Index;

inline Index idx(std::size_t v) { return static_cast<Index>(v); }

void fill_uniform(Vec& v, double scale, std::uint64_t seed) {
  auto rng = make_rng(seed, "init");
  for (Index i = 0; i < v.size(); ++i) v[i] = (2.0 * uniform01(rng) - 1.0) * scale;
}

template <class Derived>
auto sigmoid(const Eigen::ArrayBase<Derived>& x) {
  return 1.0 / (1.0 + (-x).exp());
}

void check_tokens(const TokenMatrix& tokens, std::size_t vocab) {
  require(tokens.rows > 0 && tokens.cols > 0, "lm_forward: empty token matrix");
  for (TokenId t : tokens.data) {
    require(t >= 0 && static_cast<std::size_t>(t) < vocab,
            "lm_forward: token id " + std::to_string(t) + " outside vocabulary of size " +
                std::to_string(vocab));
  }
}

void lstm_forward(ConstMatMap wx, ConstMatMap wh, ConstMatMap b, std::size_t batch,
                  std::size_t steps, LstmLayerCache& c) {
  const Index h = wh.cols();
  const Index bsz = idx(batch);
  c.gates.noalias() = wx * c.input;
  c.gates.colwise() += b.col(0);
  c.cell.resize(h, c.input.cols());
  c.cell_tanh.resize(h, c.input.cols());
  c.hidden.resize(h, c.input.cols());

  Mat h_prev = Mat::Zero(h, bsz);
  Mat c_prev = Mat::Zero(h, bsz);
  for (std::size_t t = 0; t < steps; ++t) {
    const Index col = idx(t) * bsz;
    auto g = c.gates.middleCols(col, bsz);
    g.noalias() += wh * h_prev;
    g.topRows(h) = sigmoid(g.topRows(h).array()).matrix();
    g.middleRows(h, h) = sigmoid(g.middleRows(h, h).array()).matrix();
    g.middleRows(2 * h, h) = g.middleRows(2 * h, h).array().tanh().matrix();
    g.bottomRows(h) = sigmoid(g.bottomRows(h).array()).matrix();

    auto cell = c.cell.middleCols(col, bsz);
    cell = (g.middleRows(h, h).array() * c_prev.array() +
            g.topRows(h).array() * g.middleRows(2 * h, h).array())
               .matrix();
    auto ct = c.cell_tanh.middleCols(col, bsz);
    ct = cell.array().tanh().matrix();
    auto hid = c.hidden.middleCols(col, bsz);
    hid = (g.bottomRows(h).array() * ct.array()).matrix();
    h_prev = hid;
    c_prev = cell;
  }
}

// d_hidden: H x (T*B) gradient on the layer's outputs. Returns d_input.
Mat lstm_backward(ConstMatMap wx, ConstMatMap wh, std::size_t batch, std::size_t steps,
                  const LstmLayerCache& c, const Mat& d_hidden, MatMap gwx, MatMap gwh,
                  MatMap gb) {
  const Index h = wh.cols();
  const Index bsz = idx(batch);
  Mat d_gates(4 * h, c.gates.cols());
  Mat dh_next = Mat::Zero(h, bsz);
  Mat dc_next = Mat::Zero(h, bsz);
  Mat dh(h, bsz), dc(h, bsz);

  for (std::size_t tt = steps; tt-- > 0;) {
    const Index col = idx(tt) * bsz;
    const auto g = c.gates.middleCols(col, bsz);
    const auto i_g = g.topRows(h).array();
    const auto f_g = g.middleRows(h, h).array();
    const auto c_g = g.middleRows(2 * h, h).array();
    const auto o_g = g.bottomRows(h).array();
    const auto ct = c.cell_tanh.middleCols(col, bsz).array();

    dh = d_hidden.middleCols(col, bsz) + dh_next;
    dc = (dh.array() * o_g * (1.0 - ct.square()) + dc_next.array()).matrix();

    auto dg = d_gates.middleCols(col, bsz);
    if (tt > 0) {
      dg.middleRows(h, h) =
          (dc.array() * c.cell.middleCols(col - bsz, bsz).array() * f_g * (1.0 - f_g)).matrix();
    } else {
      dg.middleRows(h, h).setZero();
    }
    dg.topRows(h) = (dc.array() * c_g * i_g * (1.0 - i_g)).matrix();
    dg.middleRows(2 * h, h) = (dc.array() * i_g * (1.0 - c_g.square())).matrix();
    dg.bottomRows(h) = (dh.array() * ct * o_g * (1.0 - o_g)).matrix();

    dc_next = (dc.array() * f_g).matrix();
    dh_next.noalias() = wh.transpose() * dg;
  }

  gwx.noalias() += d_gates * c.input.transpose();
  gb.col(0) += d_gates.rowwise().sum();
  if (steps > 1) {
    const Index n = idx(steps - 1) * bsz;
    gwh.noalias() += d_gates.rightCols(n) * c.hidden.leftCols(n).transpose();
  }
  return wx.transpose() * d_gates;
}

}  // namespace

// ---------------------------------------------------------------------------
// LanguageModel

LanguageModel::LanguageModel(LmDims dims) : dims_(dims) {
  const auto v = idx(dims.vocab), e = idx(dims.embed), h = idx(dims.hidden);
  embedding_ = layout_.add("embedding", e, v);
  for (std::size_t l = 0; l < kLayers; ++l) {
    const auto in = l == 0 ? e : h;
    const std::string p = "lstm" + std::to_string(l);
    lstm_[l] = LstmSlots{layout_.add(p + ".wx", 4 * h, in), layout_.add(p + ".wh", 4 * h, h),
                         layout_.add(p + ".b", 4 * h, 1)};
  }
  out_w_ = layout_.add("output.w", v, h);
  out_b_ = layout_.add("output.b", v, 1);
  params_ = Vec::Zero(layout_.total());
}

LanguageModel LanguageModel::initialized(LmDims dims, double scale, std::uint64_t seed) {
  require(dims.vocab > special::kCount && dims.embed > 0 && dims.hidden > 0,
          "LanguageModel: invalid dimensions");
  LanguageModel m(dims);
  fill_uniform(m.params_, scale, derive_seed(seed, "lm"));
  return m;
}

LmForward lm_forward(const LanguageModel& model, const TokenMatrix& tokens, std::size_t horizon) {
  const auto& dims = model.dims();
  check_tokens(tokens, dims.vocab);
  const std::size_t steps = horizon == 0 ? tokens.cols : std::min(horizon, tokens.cols);
  const std::size_t batch = tokens.rows;

  LmForward fwd;
  fwd.batch = batch;
  fwd.steps = steps;

  const auto emb = model.view(model.embedding_slot());
  auto& l0 = fwd.layers[0];
  l0.input.resize(idx(dims.embed), idx(steps * batch));
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t r = 0; r < batch; ++r) {
      l0.input.col(idx(t * batch + r)) = emb.col(tokens.at(r, t));
    }
  }
  for (std::size_t l = 0; l < LanguageModel::kLayers; ++l) {
    const auto& s = model.lstm_slots(l);
    if (l > 0) fwd.layers[l].input = fwd.layers[l - 1].hidden;
    lstm_forward(model.view(s.wx), model.view(s.wh), model.view(s.b), batch, steps, fwd.layers[l]);
  }

  const auto& top = fwd.layers.back().hidden;
  fwd.logits.noalias() = model.view(model.output_weight_slot()) * top;
  fwd.logits.colwise() += model.view(model.output_bias_slot()).col(0);

  fwd.last_hidden.resize(idx(dims.hidden), idx(batch));
  fwd.last_position.resize(batch);
  for (std::size_t r = 0; r < batch; ++r) {
    const std::size_t len = std::min(tokens.length(r), steps);
    require(len > 0, "lm_forward: row " + std::to_string(r) + " is empty");
    // The state after the last word; a trailing <eos> input only feeds the
    // (masked) prediction past the end of the sample.
    const std::size_t pos =
        len >= 2 && tokens.at(r, len - 1) == special::kEos ? len - 2 : len - 1;
    fwd.last_position[r] = pos;
    fwd.last_hidden.col(idx(r)) = top.col(idx(pos * batch + r));
  }
  return fwd;
}

void lm_backward(const LanguageModel& model, const TokenMatrix& tokens, const LmForward& fwd,
                 const Mat& dlogits, const Mat& d_last_hidden, Vec& grad) {
  require(grad.size() == model.params().size(), "lm_backward: gradient size mismatch");
  const auto& dims = model.dims();
  const auto& top = fwd.layers.back().hidden;

  Mat d_hidden = Mat::Zero(idx(dims.hidden), top.cols());
  if (dlogits.size() > 0) {
    require(dlogits.rows() == fwd.logits.rows() && dlogits.cols() == fwd.logits.cols(),
            "lm_backward: dlogits shape mismatch");
    model.output_weight_slot().view(grad).noalias() += dlogits * top.transpose();
    model.output_bias_slot().view(grad).col(0) += dlogits.rowwise().sum();
    d_hidden.noalias() = model.view(model.output_weight_slot()).transpose() * dlogits;
  }
  if (d_last_hidden.size() > 0) {
    require(d_last_hidden.rows() == idx(dims.hidden) && d_last_hidden.cols() == idx(fwd.batch),
            "lm_backward: d_last_hidden shape mismatch");
    for (std::size_t r = 0; r < fwd.batch; ++r) {
      d_hidden.col(idx(fwd.last_position[r] * fwd.batch + r)) += d_last_hidden.col(idx(r));
    }
  }

  for (std::size_t l = LanguageModel::kLayers; l-- > 0;) {
    const auto& s = model.lstm_slots(l);
    d_hidden = lstm_backward(model.view(s.wx), model.view(s.wh), fwd.batch, fwd.steps,
                             fwd.layers[l], d_hidden, s.wx.view(grad), s.wh.view(grad),
                             s.b.view(grad));
  }

  auto gemb = model.embedding_slot().view(grad);
  for (std::size_t t = 0; t < fwd.steps; ++t) {
    for (std::size_t r = 0; r < fwd.batch; ++r) {
      gemb.col(tokens.at(r, t)) += d_hidden.col(idx(t * fwd.batch + r));
    }
  }
}

// ---------------------------------------------------------------------------
// Discriminator

Discriminator::Discriminator(DiscDims dims) : dims_(dims) {
  w1_ = layout_.add("disc.w1", idx(dims.width), idx(dims.input));
  b1_ = layout_.add("disc.b1", idx(dims.width), 1);
  w2_ = layout_.add("disc.w2", idx(dims.authors), idx(dims.width));
  b2_ = layout_.add("disc.b2", idx(dims.authors), 1);
  params_ = Vec::Zero(layout_.total());
}

Discriminator Discriminator::initialized(DiscDims dims, double scale, std::uint64_t seed) {
  require(dims.input > 0 && dims.width > 0 && dims.authors >= 1,
          "Discriminator: invalid dimensions");
  Discriminator d(dims);
  fill_uniform(d.params_, scale, derive_seed(seed, "disc"));
  return d;
}

Mat column_softmax(const Mat& logits) {
  Mat out = logits;
  for (Index c = 0; c < out.cols(); ++c) {
    auto col = out.col(c);
    col.array() -= col.maxCoeff();
    col = col.array().exp().matrix();
    col /= col.sum();
  }
  return out;
}

DiscForward discriminator_forward(const Discriminator& disc, const Mat& h_x) {
  require(h_x.rows() == idx(disc.dims().input),
          "discriminator_forward: input width " + std::to_string(h_x.rows()) + " != " +
              std::to_string(disc.dims().input));
  DiscForward f;
  f.input = h_x;
  f.hidden.noalias() = disc.view(disc.w1()) * h_x;
  f.hidden.colwise() += disc.view(disc.b1()).col(0);
  f.hidden = f.hidden.array().tanh().matrix();
  f.logits.noalias() = disc.view(disc.w2()) * f.hidden;
  f.logits.colwise() += disc.view(disc.b2()).col(0);
  f.probs = column_softmax(f.logits);
  return f;
}

Mat discriminator_backward(const Discriminator& disc, const DiscForward& fwd, const Mat& dlogits,
                           Vec* grad) {
  const Mat d_hidden_act = disc.view(disc.w2()).transpose() * dlogits;
  const Mat d_hidden_pre =
      (d_hidden_act.array() * (1.0 - fwd.hidden.array().square())).matrix();
  if (grad != nullptr) {
    require(grad->size() == disc.params().size(), "discriminator_backward: gradient size mismatch");
    disc.w2().view(*grad).noalias() += dlogits * fwd.hidden.transpose();
    disc.b2().view(*grad).col(0) += dlogits.rowwise().sum();
    disc.w1().view(*grad).noalias() += d_hidden_pre * fwd.input.transpose();
    disc.b1().view(*grad).col(0) += d_hidden_pre.rowwise().sum();
  }
  return disc.view(disc.w1()).transpose() * d_hidden_pre;
}

// ---------------------------------------------------------------------------
// Scoring and decoding

std::vector<SequenceScore> score_sequences(const LanguageModel& model,
                                           const std::vector<std::span<const TokenId>>& seqs,
                                           bool include_eos) {
  constexpr std::size_t kChunk = 64;
  std::vector<SequenceScore> scores(seqs.size());
  std::vector<std::size_t> order(seqs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return seqs[a].size() < seqs[b].size(); });

  for (std::size_t start = 0; start < order.size(); start += kChunk) {
    const std::size_t end = std::min(order.size(), start + kChunk);
    std::vector<std::span<const TokenId>> rows;
    std::size_t longest = 0;
    for (std::size_t k = start; k < end; ++k) {
      require(!seqs[order[k]].empty(), "score_sequences: empty sequence");
      rows.push_back(seqs[order[k]]);
      longest = std::max(longest, seqs[order[k]].size());
    }
    const TokenMatrix tm = frame_rows(rows, longest + 2);
    const auto fwd = lm_forward(model, tm, longest + 1);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const std::size_t n = rows[r].size() + (include_eos ? 1 : 0);
      double lp = 0.0;
      for (std::size_t t = 0; t < n; ++t) {
        const auto col = fwd.logit_column(r, t);
        const double mx = col.maxCoeff();
        const double lse = mx + std::log((col.array() - mx).exp().sum());
        lp += col[tm.at(r, t + 1)] - lse;
      }
      scores[order[start + r]] = SequenceScore{lp, n};
    }
  }
  return scores;
}

double sequence_log_prob(const LanguageModel& model, std::span<const TokenId> tokens) {
  require(!tokens.empty(), "sequence_log_prob: empty sequence");
  return score_sequences(model, {tokens}, false).front().log_prob;
}

double perplexity(const LanguageModel& model, const std::vector<std::span<const TokenId>>& samples) {
  require(!samples.empty(), "perplexity: no samples");
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& s : score_sequences(model, samples, true)) {
    total += s.log_prob;
    count += s.predicted;
  }
  return std::exp(-total / static_cast<double>(count));
}

double perplexity(const LanguageModel& model, const Corpus& corpus,
                  const std::vector<std::size_t>& sample_indices) {
  std::vector<std::span<const TokenId>> rows;
  rows.reserve(sample_indices.size());
  for (auto i : sample_indices) rows.emplace_back(corpus.samples.at(i).tokens);
  return perplexity(model, rows);
}

std::vector<TokenId> greedy_continue(const LanguageModel& model, std::span<const TokenId> prefix,
                                     std::size_t n_tokens) {
  require(n_tokens >= 1, "greedy_continue: n_tokens must be >= 1");
  std::vector<TokenId> seq(prefix.begin(), prefix.end());
  for (std::size_t k = 0; k < n_tokens; ++k) {
    TokenMatrix tm(1, seq.size() + 1);
    tm.at(0, 0) = special::kBos;
    for (std::size_t i = 0; i < seq.size(); ++i) tm.at(0, i + 1) = seq[i];
    const auto fwd = lm_forward(model, tm);
    const auto col = fwd.logit_column(0, seq.size());
    Index best = 0;
    for (Index v = 1; v < col.size(); ++v) {
      if (col[v] > col[best]) best = v;  // strict: lowest id wins ties
    }
    seq.push_back(static_cast<TokenId>(best));
  }
  return seq;
}

// ---------------------------------------------------------------------------
// Checkpoints: magic, u32 version, u64 header length, JSON header, raw doubles.

namespace {

constexpr char kMagic[8] = {'P', 'R', 'V', 'L', 'M', 'C', 'K', 'P'};
constexpr std::uint32_t kCheckpointVersion = 1;

void write_vec(std::ofstream& out, const Vec& v) {
  out.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
}

void read_vec(std::ifstream& in, Vec& v) {
  in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
  if (!in) throw ParseError("truncated checkpoint payload");
}

}  // namespace

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  nlohmann::json header = {
      {"lm", {{"vocab", ck.lm.dims().vocab}, {"embed", ck.lm.dims().embed},
              {"hidden", ck.lm.dims().hidden}}},
      {"vocab_hash", ck.vocab_hash},
      {"config_hash", ck.config_hash},
      {"step", ck.step},
      {"regime", ck.regime}};
  if (ck.disc) {
    header["disc"] = {{"input", ck.disc->dims().input},
                      {"width", ck.disc->dims().width},
                      {"authors", ck.disc->dims().authors}};
  }
  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(kMagic, sizeof kMagic);
  out.write(reinterpret_cast<const char*>(&kCheckpointVersion), sizeof kCheckpointVersion);
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  write_vec(out, ck.lm.params());
  if (ck.disc) write_vec(out, ck.disc->params());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileNotFound(path.string());
  char magic[sizeof kMagic];
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  in.read(magic, sizeof magic);
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw ParseError("not a privlm checkpoint: " + path.string());
  }
  if (version != kCheckpointVersion) {
    throw ParseError("unsupported checkpoint version " + std::to_string(version));
  }
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  const auto header = nlohmann::json::parse(text);

  Checkpoint ck;
  const auto& lm = header.at("lm");
  ck.lm = LanguageModel(LmDims{lm.at("vocab").get<std::size_t>(), lm.at("embed").get<std::size_t>(),
                               lm.at("hidden").get<std::size_t>()});
  read_vec(in, ck.lm.params());
  if (header.contains("disc")) {
    const auto& d = header.at("disc");
    ck.disc = Discriminator(DiscDims{d.at("input").get<std::size_t>(),
                                     d.at("width").get<std::size_t>(),
                                     d.at("authors").get<std::size_t>()});
    read_vec(in, ck.disc->params());
  }
  ck.vocab_hash = header.at("vocab_hash").get<std::uint64_t>();
  ck.config_hash = header.at("config_hash").get<std::uint64_t>();
  ck.step = header.at("step").get<std::uint64_t>();
  ck.regime = header.value("regime", "");
  return ck;
}

}  // namespace privlm
