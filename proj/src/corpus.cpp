#include "privlm/corpus.hpp"

#include "privlm/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace privlm {

namespace {

const std::vector<std::string> kSpecialTokens = {"<pad>", "<unk>", "<bos>", "<eos>"};

constexpr int kCorpusFormatVersion = 1;

}  // namespace

// ---------------------------------------------------------------------------
// Vocabulary

Vocabulary::Vocabulary() : id_to_token_(kSpecialTokens) {
  for (std::size_t i = 0; i < id_to_token_.size(); ++i) {
    token_to_id_.emplace(id_to_token_[i], static_cast<TokenId>(i));
  }
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> id_to_token) {
  require(id_to_token.size() >= special::kCount, "vocabulary must hold the special tokens");
  for (std::size_t i = 0; i < kSpecialTokens.size(); ++i) {
    require(id_to_token[i] == kSpecialTokens[i], "special token ids are fixed");
  }
  Vocabulary v;
  v.token_to_id_.clear();
  v.id_to_token_ = std::move(id_to_token);
  for (std::size_t i = 0; i < v.id_to_token_.size(); ++i) {
    const bool inserted =
        v.token_to_id_.emplace(v.id_to_token_[i], static_cast<TokenId>(i)).second;
    require(inserted, "duplicate vocabulary token: " + v.id_to_token_[i]);
  }
  return v;
}

Vocabulary Vocabulary::from_counts(const std::map<std::string, std::int64_t>& counts,
                                   std::size_t max_regular) {
  std::vector<std::pair<std::string, std::int64_t>> ranked;
  ranked.reserve(counts.size());
  for (const auto& [token, count] : counts) {
    if (std::find(kSpecialTokens.begin(), kSpecialTokens.end(), token) != kSpecialTokens.end()) {
      continue;
    }
    ranked.emplace_back(token, count);
  }
  // std::map iteration is already lexicographic, so a stable sort by count
  // gives the tie rule for free.
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  if (ranked.size() > max_regular) ranked.resize(max_regular);

  std::vector<std::string> tokens = kSpecialTokens;
  for (auto& [token, count] : ranked) tokens.push_back(std::move(token));
  return from_tokens(std::move(tokens));
}

TokenId Vocabulary::id(const std::string& token) const {
  const auto it = token_to_id_.find(token);
  return it == token_to_id_.end() ? special::kUnk : it->second;
}

const std::string& Vocabulary::token(TokenId id) const {
  require(id >= 0 && static_cast<std::size_t>(id) < id_to_token_.size(),
          "token id out of range: " + std::to_string(id));
  return id_to_token_[static_cast<std::size_t>(id)];
}

std::uint64_t Vocabulary::hash() const {
  std::uint64_t h = fnv1a("privlm-vocab");
  for (const auto& token : id_to_token_) {
    h = fnv1a(token, h);
    h = fnv1a(std::string_view("\0", 1), h);
  }
  return h;
}

Vocabulary build_vocab(const std::vector<std::vector<std::string>>& token_streams,
                       std::size_t max_vocab) {
  std::map<std::string, std::int64_t> counts;
  for (const auto& stream : token_streams) {
    for (const auto& token : stream) ++counts[token];
  }
  require(!counts.empty(), "build_vocab: no tokens observed");
  return Vocabulary::from_counts(counts, max_vocab);
}

// ---------------------------------------------------------------------------
// Authors, corpus

AuthorId AuthorRegistry::add(const std::string& name) {
  if (auto found = find(name)) return *found;
  const auto id = static_cast<AuthorId>(names_.size());
  names_.push_back(name);
  index_.emplace(name, id);
  return id;
}

std::optional<AuthorId> AuthorRegistry::find(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::vector<std::size_t> Corpus::train_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].split == Split::kTrain) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> Corpus::test_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].split == Split::kTest && !samples[i].canary) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> Corpus::utility_train_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].split == Split::kTrain && !samples[i].canary) out.push_back(i);
  }
  return out;
}

std::vector<std::vector<std::size_t>> Corpus::train_indices_by_author() const {
  std::vector<std::vector<std::size_t>> out(num_authors());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].split == Split::kTrain) {
      out[static_cast<std::size_t>(samples[i].author)].push_back(i);
    }
  }
  return out;
}

std::vector<std::size_t> Corpus::train_counts_by_author(bool include_canaries) const {
  std::vector<std::size_t> out(num_authors(), 0);
  for (const auto& s : samples) {
    if (s.split == Split::kTrain && (include_canaries || !s.canary)) {
      ++out[static_cast<std::size_t>(s.author)];
    }
  }
  return out;
}

void Corpus::validate() const {
  const auto v = static_cast<TokenId>(vocab.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    require(s.author >= 0 && static_cast<std::size_t>(s.author) < num_authors(),
            "sample " + std::to_string(i) + ": unregistered author");
    require(!s.tokens.empty(), "sample " + std::to_string(i) + ": empty token sequence");
    for (TokenId t : s.tokens) {
      require(t >= 0 && t < v, "sample " + std::to_string(i) + ": token id out of range");
    }
  }
}

// ---------------------------------------------------------------------------
// Framing and batches

std::size_t TokenMatrix::length(std::size_t r) const {
  std::size_t n = 0;
  while (n < cols && at(r, n) != special::kPad) ++n;
  return n;
}

std::size_t TokenMatrix::max_length() const {
  std::size_t best = 0;
  for (std::size_t r = 0; r < rows; ++r) best = std::max(best, length(r));
  return best;
}

std::vector<TokenId> frame(std::span<const TokenId> words, std::size_t seq_len) {
  std::vector<TokenId> out;
  out.reserve(words.size() + 2);
  out.push_back(special::kBos);
  out.insert(out.end(), words.begin(), words.end());
  out.push_back(special::kEos);
  if (out.size() > seq_len) out.resize(seq_len);
  return out;
}

TokenMatrix frame_rows(const std::vector<std::span<const TokenId>>& rows, std::size_t seq_len) {
  require(seq_len >= 2, "seq_len must be at least 2");
  TokenMatrix m(rows.size(), seq_len);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto framed = frame(rows[r], seq_len);
    std::copy(framed.begin(), framed.end(), m.data.begin() + static_cast<std::ptrdiff_t>(r * seq_len));
  }
  return m;
}

Batch make_batch(const Corpus& corpus, std::vector<std::size_t> sample_indices,
                 std::size_t seq_len) {
  require(!sample_indices.empty(), "make_batch: no samples");
  Batch b;
  std::vector<std::span<const TokenId>> rows;
  rows.reserve(sample_indices.size());
  for (std::size_t idx : sample_indices) {
    const auto& s = corpus.samples.at(idx);
    rows.emplace_back(s.tokens);
    b.row_authors.push_back(s.author);
  }
  b.tokens = frame_rows(rows, seq_len);
  b.author = b.row_authors.front();
  b.sample_indices = std::move(sample_indices);
  return b;
}

// ---------------------------------------------------------------------------
// Synthetic corpus

namespace {

std::size_t draw_categorical(const std::vector<double>& cumulative, Rng& rng) {
  const double u = uniform01(rng) * cumulative.back();
  const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
  return std::min(static_cast<std::size_t>(it - cumulative.begin()), cumulative.size() - 1);
}

std::string type_name(std::size_t k, std::size_t n_types) {
  const int width = static_cast<int>(std::to_string(n_types - 1).size());
  char buf[32];
  std::snprintf(buf, sizeof buf, "w%0*zu", width, k);
  return buf;
}

}  // namespace

void assign_split(std::vector<Sample>& samples, std::size_t n_authors, std::uint64_t seed) {
  std::vector<std::vector<std::size_t>> by_author(n_authors);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    by_author.at(static_cast<std::size_t>(samples[i].author)).push_back(i);
  }
  auto rng = make_rng(seed, "split");
  for (auto& idx : by_author) {
    for (auto i : idx) samples[i].split = Split::kTrain;
    shuffle(idx.begin(), idx.end(), rng);
    const std::size_t n_test = idx.size() / 5;
    for (std::size_t k = 0; k < n_test; ++k) samples[idx[k]].split = Split::kTest;
  }
}

Corpus generate_synthetic_corpus(const SyntheticCorpusConfig& config) {
  require(config.n_authors >= 2, "generate_synthetic_corpus: need at least 2 authors");
  require(config.vocab_size >= 16, "generate_synthetic_corpus: vocab_size must be >= 16");
  const auto [min_len, max_len] = config.seq_len_range;
  require(min_len >= 1 && min_len <= max_len, "generate_synthetic_corpus: bad seq_len_range");
  require(config.author_concentration > 0.0, "author_concentration must be positive");

  std::vector<std::size_t> counts = config.samples_by_author;
  if (counts.empty()) counts.assign(config.n_authors, config.samples_per_author);
  require(counts.size() == config.n_authors, "samples_by_author needs one entry per author");
  for (auto c : counts) require(c >= 2, "generate_synthetic_corpus: need >= 2 samples per author");

  const std::size_t n_types = config.vocab_size - special::kCount;
  std::vector<double> base(n_types);
  for (std::size_t k = 0; k < n_types; ++k) {
    base[k] = std::pow(static_cast<double>(k + 1), -config.zipf_exponent);
  }

  require(config.transition_weight >= 0.0 && config.transition_weight <= 1.0,
          "transition_weight must be in [0, 1]");
  require(config.transition_weight == 0.0 || config.successors >= 1,
          "successors must be >= 1 when transition_weight > 0");

  auto rng = make_rng(config.seed, "synthetic-corpus");
  std::gamma_distribution<double> gamma(config.author_concentration, 1.0);

  // Shared successor lists: entry j of type k's list has weight 2^-j.
  std::vector<std::vector<std::size_t>> next;
  std::vector<double> next_cumulative;
  if (config.transition_weight > 0.0) {
    auto grammar_rng = make_rng(config.seed, "synthetic-grammar");
    std::vector<double> base_cumulative(n_types);
    std::partial_sum(base.begin(), base.end(), base_cumulative.begin());
    next.assign(n_types, std::vector<std::size_t>(config.successors));
    for (auto& list : next) {
      for (auto& t : list) t = draw_categorical(base_cumulative, grammar_rng);
    }
    double acc = 0.0;
    for (std::size_t j = 0; j < config.successors; ++j) {
      acc += std::exp2(-static_cast<double>(j));
      next_cumulative.push_back(acc);
    }
  }

  Corpus corpus;
  std::vector<std::vector<std::size_t>> type_seqs;
  for (std::size_t a = 0; a < config.n_authors; ++a) {
    corpus.authors.add("author" + std::to_string(a));
    std::vector<double> cumulative(n_types);
    double acc = 0.0;
    for (std::size_t k = 0; k < n_types; ++k) {
      acc += base[k] * gamma(rng);
      cumulative[k] = acc;
    }
    for (std::size_t s = 0; s < counts[a]; ++s) {
      const std::size_t len = min_len + uniform_index(rng, max_len - min_len + 1);
      std::vector<std::size_t> seq(len);
      for (std::size_t i = 0; i < len; ++i) {
        if (i > 0 && !next.empty() && uniform01(rng) < config.transition_weight) {
          seq[i] = next[seq[i - 1]][draw_categorical(next_cumulative, rng)];
        } else {
          seq[i] = draw_categorical(cumulative, rng);
        }
      }
      type_seqs.push_back(std::move(seq));
      Sample sample;
      sample.author = static_cast<AuthorId>(a);
      corpus.samples.push_back(std::move(sample));
    }
  }
  assign_split(corpus.samples, config.n_authors, config.seed);

  std::map<std::string, std::int64_t> type_counts;
  std::vector<std::string> names(n_types);
  for (std::size_t k = 0; k < n_types; ++k) {
    names[k] = type_name(k, n_types);
    type_counts[names[k]] = 0;
  }
  for (std::size_t i = 0; i < type_seqs.size(); ++i) {
    if (corpus.samples[i].split != Split::kTrain) continue;
    for (auto t : type_seqs[i]) ++type_counts[names[t]];
  }
  corpus.vocab = Vocabulary::from_counts(type_counts, n_types);
  for (std::size_t i = 0; i < type_seqs.size(); ++i) {
    auto& tokens = corpus.samples[i].tokens;
    tokens.reserve(type_seqs[i].size());
    for (auto t : type_seqs[i]) tokens.push_back(corpus.vocab.id(names[t]));
  }
  return corpus;
}

Corpus generate_synthetic_corpus(std::size_t n_authors, std::size_t samples_per_author,
                                 std::size_t vocab_size,
                                 std::pair<std::size_t, std::size_t> seq_len_range,
                                 std::uint64_t seed) {
  require(n_authors > 0 && samples_per_author > 0,
          "generate_synthetic_corpus: zero authors or samples");
  SyntheticCorpusConfig config;
  config.n_authors = n_authors;
  config.samples_per_author = samples_per_author;
  config.vocab_size = vocab_size;
  config.seq_len_range = seq_len_range;
  config.seed = seed;
  return generate_synthetic_corpus(config);
}

// ---------------------------------------------------------------------------
// JSONL ingestion

Corpus ingest_jsonl(const std::filesystem::path& path, std::size_t max_vocab,
                    std::uint64_t split_seed) {
  std::ifstream in(path);
  if (!in) throw FileNotFound(path.string());

  Corpus corpus;
  std::vector<std::vector<std::string>> texts;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json record;
    try {
      record = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(line_no, std::string("invalid JSON: ") + e.what());
    }
    if (!record.is_object()) throw ParseError(line_no, "record is not an object");
    for (const char* key : {"author", "text"}) {
      if (!record.contains(key) || !record[key].is_string()) {
        throw ParseError(line_no, std::string("missing string field \"") + key + "\"");
      }
    }
    std::istringstream words(record["text"].get<std::string>());
    std::vector<std::string> tokens{std::istream_iterator<std::string>(words),
                                    std::istream_iterator<std::string>()};
    if (tokens.empty()) throw ParseError(line_no, "\"text\" has no tokens");

    Sample sample;
    sample.author = corpus.authors.add(record["author"].get<std::string>());
    corpus.samples.push_back(std::move(sample));
    texts.push_back(std::move(tokens));
  }
  require(!corpus.samples.empty(), "ingest_jsonl: no records in " + path.string());

  assign_split(corpus.samples, corpus.num_authors(), split_seed);
  std::vector<std::vector<std::string>> train_streams;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    if (corpus.samples[i].split == Split::kTrain) train_streams.push_back(texts[i]);
  }
  corpus.vocab = build_vocab(train_streams, max_vocab);
  for (std::size_t i = 0; i < texts.size(); ++i) {
    for (const auto& token : texts[i]) corpus.samples[i].tokens.push_back(corpus.vocab.id(token));
  }
  return corpus;
}

// ---------------------------------------------------------------------------
// Batching

std::vector<Batch> user_batches(const Corpus& corpus, std::size_t batch_size,
                                std::size_t seq_len, std::uint64_t seed) {
  require(batch_size >= 1, "user_batches: batch_size must be >= 1");
  auto rng = make_rng(seed, "user-batches");
  std::vector<Batch> batches;
  for (auto& indices : corpus.train_indices_by_author()) {
    shuffle(indices.begin(), indices.end(), rng);
    for (std::size_t start = 0; start < indices.size(); start += batch_size) {
      const std::size_t end = std::min(indices.size(), start + batch_size);
      batches.push_back(make_batch(
          corpus,
          std::vector<std::size_t>(indices.begin() + static_cast<std::ptrdiff_t>(start),
                                   indices.begin() + static_cast<std::ptrdiff_t>(end)),
          seq_len));
    }
  }
  shuffle(batches.begin(), batches.end(), rng);
  return batches;
}

Batch sample_auxiliary_batch(const Corpus& corpus, const Batch& base_batch, double p_same,
                             Rng& rng) {
  require(p_same >= 0.0 && p_same <= 1.0, "p_same must be a probability");
  const auto by_author = corpus.train_indices_by_author();
  std::vector<AuthorId> others;
  for (std::size_t a = 0; a < by_author.size(); ++a) {
    if (static_cast<AuthorId>(a) != base_batch.author && !by_author[a].empty()) {
      others.push_back(static_cast<AuthorId>(a));
    }
  }
  require(p_same >= 1.0 || !others.empty(),
          "sample_auxiliary_batch: need a second author with training data when p_same < 1");

  const bool same = uniform01(rng) < p_same;
  const AuthorId author = same ? base_batch.author : others[uniform_index(rng, others.size())];
  const auto& pool = by_author[static_cast<std::size_t>(author)];
  require(!pool.empty(), "sample_auxiliary_batch: author has no training samples");

  const std::size_t rows = base_batch.tokens.rows;
  std::vector<std::size_t> chosen;
  chosen.reserve(rows);
  std::vector<std::size_t> perm = pool;
  while (chosen.size() < rows) {
    shuffle(perm.begin(), perm.end(), rng);
    for (std::size_t k = 0; k < perm.size() && chosen.size() < rows; ++k) chosen.push_back(perm[k]);
  }
  return make_batch(corpus, std::move(chosen), base_batch.tokens.cols);
}

double naive_bayes_author_accuracy(const Corpus& corpus) {
  const std::size_t m = corpus.num_authors();
  const std::size_t v = corpus.vocab.size();
  std::vector<std::vector<double>> counts(m, std::vector<double>(v, 1.0));
  std::vector<double> totals(m, static_cast<double>(v));
  std::vector<double> priors(m, 0.0);
  for (std::size_t i : corpus.utility_train_indices()) {
    const auto& s = corpus.samples[i];
    const auto a = static_cast<std::size_t>(s.author);
    priors[a] += 1.0;
    for (TokenId t : s.tokens) {
      counts[a][static_cast<std::size_t>(t)] += 1.0;
      totals[a] += 1.0;
    }
  }
  const auto test = corpus.test_indices();
  require(!test.empty(), "naive_bayes_author_accuracy: empty test split");
  std::size_t correct = 0;
  for (std::size_t i : test) {
    const auto& s = corpus.samples[i];
    double best = -std::numeric_limits<double>::infinity();
    std::size_t best_a = 0;
    for (std::size_t a = 0; a < m; ++a) {
      double score = std::log(priors[a] + 1.0);
      for (TokenId t : s.tokens) score += std::log(counts[a][static_cast<std::size_t>(t)] / totals[a]);
      if (score > best) {
        best = score;
        best_a = a;
      }
    }
    if (best_a == static_cast<std::size_t>(s.author)) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

// ---------------------------------------------------------------------------
// Cache

nlohmann::json corpus_to_json(const Corpus& corpus) {
  nlohmann::json samples = nlohmann::json::array();
  for (const auto& s : corpus.samples) {
    samples.push_back({{"author", s.author},
                       {"tokens", s.tokens},
                       {"split", s.split == Split::kTrain ? "train" : "test"},
                       {"canary", s.canary}});
  }
  return {{"format", "privlm-corpus"},
          {"version", kCorpusFormatVersion},
          {"vocab", corpus.vocab.tokens()},
          {"authors", corpus.authors.names()},
          {"samples", std::move(samples)}};
}

Corpus corpus_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "privlm-corpus") throw ParseError("not a privlm corpus file");
  if (j.value("version", 0) != kCorpusFormatVersion) {
    throw ParseError("unsupported corpus version " + j.value("version", nlohmann::json()).dump());
  }
  Corpus corpus;
  corpus.vocab = Vocabulary::from_tokens(j.at("vocab").get<std::vector<std::string>>());
  for (const auto& name : j.at("authors")) corpus.authors.add(name.get<std::string>());
  for (const auto& js : j.at("samples")) {
    Sample s;
    s.author = js.at("author").get<AuthorId>();
    s.tokens = js.at("tokens").get<std::vector<TokenId>>();
    s.split = js.at("split").get<std::string>() == "train" ? Split::kTrain : Split::kTest;
    s.canary = js.at("canary").get<bool>();
    corpus.samples.push_back(std::move(s));
  }
  corpus.validate();
  return corpus;
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << corpus_to_json(corpus).dump() << '\n';
}

Corpus load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FileNotFound(path.string());
  return corpus_from_json(nlohmann::json::parse(in));
}

}  // namespace privlm
