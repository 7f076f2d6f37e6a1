#include "privlm/audit.hpp"

#include "privlm/error.hpp"
#include "privlm/log.hpp"

#include <boost/math/distributions/skew_normal.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

namespace privlm {

std::string to_string(Estimator estimator) {
  return estimator == Estimator::kEmpirical ? "empirical" : "skew_normal";
}

Estimator parse_estimator(const std::string& name) {
  if (name == "empirical") return Estimator::kEmpirical;
  if (name == "skew_normal") return Estimator::kSkewNormal;
  throw InvalidArgument("unknown estimator '" + name + "' (expected empirical or skew_normal)");
}

std::string to_string(CanaryKind kind) {
  return kind == CanaryKind::kSynthetic ? "synthetic" : "real";
}

namespace {

CanaryKind parse_kind(const std::string& name) {
  if (name == "synthetic") return CanaryKind::kSynthetic;
  if (name == "real") return CanaryKind::kReal;
  throw ParseError("unknown canary kind '" + name + "'");
}

}  // namespace

double log_perplexity(const LanguageModel& model, std::span<const TokenId> tokens) {
  return -sequence_log_prob(model, tokens);
}

std::size_t ReferenceSample::count_at_or_below(double x) const {
  return static_cast<std::size_t>(std::upper_bound(log_ppl.begin(), log_ppl.end(), x) -
                                  log_ppl.begin());
}

ReferenceSample reference_sample(const LanguageModel& model, std::size_t length,
                                 std::size_t sample_size, std::uint64_t seed) {
  require(length >= 1, "reference_sample: length must be >= 1");
  require(sample_size >= 1, "reference_sample: sample size must be >= 1");
  const std::size_t v = model.dims().vocab;
  require(v > special::kCount, "reference_sample: model has no regular tokens");

  ReferenceSample ref;
  ref.length = length;
  ref.effective_vocab = v - special::kCount;
  ref.log2_space = static_cast<double>(length) * std::log2(static_cast<double>(ref.effective_vocab));
  ref.seed = seed;

  auto rng = make_rng(seed, "exposure-reference");
  std::vector<std::vector<TokenId>> seqs(sample_size, std::vector<TokenId>(length));
  for (auto& s : seqs) {
    for (auto& t : s) t = static_cast<TokenId>(special::kCount + uniform_index(rng, ref.effective_vocab));
  }
  std::vector<std::span<const TokenId>> views(seqs.begin(), seqs.end());
  const auto scores = score_sequences(model, views, false);
  ref.log_ppl.reserve(sample_size);
  for (const auto& s : scores) ref.log_ppl.push_back(-s.log_prob);
  std::sort(ref.log_ppl.begin(), ref.log_ppl.end());
  return ref;
}

ExposureEstimate exposure_empirical(double canary_log_ppl, const ReferenceSample& ref) {
  require(ref.size() >= kMinEmpiricalSamples,
          "exposure_empirical: sample size must be >= " + std::to_string(kMinEmpiricalSamples));
  const double s = static_cast<double>(ref.size());
  const double below = static_cast<double>(ref.count_at_or_below(canary_log_ppl));
  ExposureEstimate e;
  e.log_perplexity = canary_log_ppl;
  e.space_size = std::exp2(ref.log2_space);
  e.estimator = Estimator::kEmpirical;
  e.sample_size = ref.size();
  // log2|R| - log2((1 + below) |R| / (S + 1))
  e.exposure = std::clamp(std::log2(s + 1.0) - std::log2(1.0 + below), 0.0, ref.log2_space);
  e.estimated_rank = std::exp2(ref.log2_space - e.exposure);
  return e;
}

double SkewNormalFit::cdf(double x) const {
  boost::math::skew_normal_distribution<double> dist(location, scale, shape);
  return boost::math::cdf(dist, x);
}

SkewNormalFit fit_skew_normal(std::span<const double> values) {
  require(values.size() >= 3, "fit_skew_normal: need at least 3 values");
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double m2 = 0.0;
  double m3 = 0.0;
  for (double v : values) {
    const double d = v - mean;
    m2 += d * d;
    m3 += d * d * d;
  }
  m2 /= n;
  m3 /= n;
  require(m2 > 0.0, "fit_skew_normal: zero variance");
  const double gamma = std::clamp(m3 / std::pow(m2, 1.5), -kMaxSkewness, kMaxSkewness);

  constexpr double pi = std::numbers::pi;
  const double t = std::pow(std::abs(gamma), 2.0 / 3.0);
  const double delta_sq = (pi / 2.0) * t / (t + std::pow((4.0 - pi) / 2.0, 2.0 / 3.0));
  const double delta = std::copysign(std::sqrt(delta_sq), gamma);

  SkewNormalFit fit;
  fit.shape = delta / std::sqrt(1.0 - delta_sq);
  fit.scale = std::sqrt(m2 / (1.0 - 2.0 * delta_sq / pi));
  fit.location = mean - fit.scale * delta * std::sqrt(2.0 / pi);
  return fit;
}

ExposureEstimate exposure_skew_normal(double canary_log_ppl, const ReferenceSample& ref) {
  require(ref.size() >= kMinSkewNormalSamples,
          "exposure_skew_normal: sample size must be >= " + std::to_string(kMinSkewNormalSamples));
  const double lo = ref.log_ppl.front();
  const double hi = ref.log_ppl.back();
  if (!(hi - lo > 1e-12 * std::max(1.0, std::abs(lo)))) {
    log_warning("exposure_skew_normal: degenerate sample variance; using the empirical estimator");
    return exposure_empirical(canary_log_ppl, ref);
  }
  const auto fit = fit_skew_normal(ref.log_ppl);
  const double cdf = fit.cdf(canary_log_ppl);

  ExposureEstimate e;
  e.log_perplexity = canary_log_ppl;
  e.space_size = std::exp2(ref.log2_space);
  e.estimator = Estimator::kSkewNormal;
  e.sample_size = ref.size();
  e.exposure = cdf > 0.0 ? std::clamp(-std::log2(cdf), 0.0, ref.log2_space) : ref.log2_space;
  e.estimated_rank = std::exp2(ref.log2_space - e.exposure);
  return e;
}

ExposureEstimate exposure_empirical(const LanguageModel& model, std::span<const TokenId> canary,
                                    std::size_t sample_size, std::uint64_t seed) {
  require(sample_size >= kMinEmpiricalSamples,
          "exposure_empirical: sample size must be >= " + std::to_string(kMinEmpiricalSamples));
  const auto ref = reference_sample(model, canary.size(), sample_size, seed);
  auto e = exposure_empirical(log_perplexity(model, canary), ref);
  e.tokens.assign(canary.begin(), canary.end());
  return e;
}

ExposureEstimate exposure_skew_normal(const LanguageModel& model, std::span<const TokenId> canary,
                                      std::size_t sample_size, std::uint64_t seed) {
  require(sample_size >= kMinSkewNormalSamples,
          "exposure_skew_normal: sample size must be >= " + std::to_string(kMinSkewNormalSamples));
  const auto ref = reference_sample(model, canary.size(), sample_size, seed);
  auto e = exposure_skew_normal(log_perplexity(model, canary), ref);
  e.tokens.assign(canary.begin(), canary.end());
  return e;
}

// --- tab attack ------------------------------------------------------------

std::string TabAttackReport::bucket_of(const AttackTarget& target) {
  return target.kind == CanaryKind::kReal ? "real" : std::to_string(target.repetitions);
}

TabAttackReport tab_attack(const LanguageModel& model, const std::vector<AttackTarget>& targets) {
  require(!targets.empty(), "tab_attack: empty canary list");
  TabAttackReport report;
  std::map<std::string, std::pair<std::size_t, std::size_t>> buckets;  // hits, total
  std::map<std::string, std::pair<std::size_t, std::size_t>> kinds;
  for (const auto& t : targets) {
    require(t.tokens.size() >= 2, "tab_attack: canary length must be >= 2");
    AttackOutcome o;
    o.target = t;
    o.reconstruction = greedy_continue(model, std::span<const TokenId>(t.tokens).first(1),
                                       t.tokens.size() - 1);
    o.success = o.reconstruction == t.tokens;
    auto& b = buckets[TabAttackReport::bucket_of(t)];
    auto& k = kinds[to_string(t.kind)];
    b.first += o.success;
    b.second += 1;
    k.first += o.success;
    k.second += 1;
    report.outcomes.push_back(std::move(o));
  }
  for (const auto& [name, c] : buckets) {
    report.accuracy_by_bucket[name] = static_cast<double>(c.first) / static_cast<double>(c.second);
  }
  for (const auto& [name, c] : kinds) {
    report.accuracy_by_kind[name] = static_cast<double>(c.first) / static_cast<double>(c.second);
  }
  return report;
}

std::vector<AttackTarget> attack_targets(const CanaryPlan& plan) {
  std::vector<AttackTarget> out;
  for (const auto& c : plan.canaries) {
    out.push_back(AttackTarget{c.author, c.tokens, c.repetitions, CanaryKind::kSynthetic});
  }
  return out;
}

std::vector<AttackTarget> attack_targets(const std::vector<RealCanary>& real) {
  std::vector<AttackTarget> out;
  for (const auto& c : real) {
    if (c.tokens.size() < 2) continue;
    out.push_back(AttackTarget{c.author, c.tokens, 1, CanaryKind::kReal});
  }
  return out;
}

nlohmann::json TabAttackReport::to_json() const {
  nlohmann::json outs = nlohmann::json::array();
  for (const auto& o : outcomes) {
    outs.push_back({{"author", o.target.author},
                    {"repetitions", o.target.repetitions},
                    {"kind", to_string(o.target.kind)},
                    {"tokens", o.target.tokens},
                    {"reconstruction", o.reconstruction},
                    {"success", o.success}});
  }
  return {{"by_bucket", accuracy_by_bucket}, {"by_kind", accuracy_by_kind}, {"outcomes", outs}};
}

// --- disparate impact ------------------------------------------------------

DisparateImpactReport disparate_impact(const LanguageModel& mitigated,
                                       const LanguageModel& baseline, const Corpus& corpus,
                                       std::size_t k) {
  require(k >= 1, "disparate_impact: k must be >= 1");
  require(mitigated.dims().vocab == baseline.dims().vocab &&
              mitigated.dims().vocab == corpus.vocab.size(),
          "disparate_impact: models and corpus must share a vocabulary");

  const auto train_counts = corpus.train_counts_by_author(false);
  std::vector<std::vector<std::size_t>> test_by_author(corpus.num_authors());
  for (auto i : corpus.test_indices()) {
    test_by_author[static_cast<std::size_t>(corpus.samples[i].author)].push_back(i);
  }

  DisparateImpactReport report;
  for (std::size_t a = 0; a < corpus.num_authors(); ++a) {
    if (test_by_author[a].empty()) {
      log_warning("disparate_impact: user " + corpus.authors.name(static_cast<AuthorId>(a)) +
                  " has no test samples; excluded");
      continue;
    }
    UserDrop u;
    u.author = static_cast<AuthorId>(a);
    u.train_samples = train_counts[a];
    u.mitigated_perplexity = perplexity(mitigated, corpus, test_by_author[a]);
    u.baseline_perplexity = perplexity(baseline, corpus, test_by_author[a]);
    u.drop = u.mitigated_perplexity - u.baseline_perplexity;
    report.per_user.push_back(u);
  }
  require(2 * k <= report.per_user.size(),
          "disparate_impact: k = " + std::to_string(k) + " exceeds half of the " +
              std::to_string(report.per_user.size()) + " users with test samples");

  std::vector<std::size_t> order(report.per_user.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
    return report.per_user[x].train_samples > report.per_user[y].train_samples;
  });
  double top = 0.0;
  double bottom = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    const auto& t = report.per_user[order[i]];
    // bottom-k walks from the end; among equal counts this takes higher ids
    const auto& b = report.per_user[order[order.size() - 1 - i]];
    report.top_k.push_back(t.author);
    report.bottom_k.push_back(b.author);
    top += t.drop;
    bottom += b.drop;
  }
  report.top_k_mean = top / static_cast<double>(k);
  report.bottom_k_mean = bottom / static_cast<double>(k);
  report.gap = std::abs(report.bottom_k_mean - report.top_k_mean);
  return report;
}

nlohmann::json DisparateImpactReport::to_json() const {
  nlohmann::json users = nlohmann::json::array();
  for (const auto& u : per_user) {
    users.push_back({{"author", u.author},
                     {"train_samples", u.train_samples},
                     {"mitigated_perplexity", u.mitigated_perplexity},
                     {"baseline_perplexity", u.baseline_perplexity},
                     {"drop", u.drop}});
  }
  return {{"per_user", users},     {"top_k", top_k},
          {"bottom_k", bottom_k},  {"top_k_mean", top_k_mean},
          {"bottom_k_mean", bottom_k_mean}, {"gap", gap}};
}

// --- full audit ------------------------------------------------------------

void AuditConfig::validate() const {
  if (sample_size < kMinEmpiricalSamples) {
    throw InvalidArgument("audit.sample_size: must be >= " + std::to_string(kMinEmpiricalSamples));
  }
  if (estimator == Estimator::kSkewNormal && sample_size < kMinSkewNormalSamples) {
    throw InvalidArgument("audit.sample_size: the skew_normal estimator needs >= " +
                          std::to_string(kMinSkewNormalSamples));
  }
  if (k < 1) throw InvalidArgument("audit.k: must be >= 1");
}

const ExposureEstimate& CanaryAudit::pick(Estimator estimator) const {
  if (estimator == Estimator::kSkewNormal) {
    require(skew_normal.has_value(), "no skew-normal estimate for this canary");
    return *skew_normal;
  }
  return empirical;
}

std::map<std::size_t, double> AuditReport::mean_exposure_by_repetition(Estimator est) const {
  std::map<std::size_t, std::pair<double, std::size_t>> acc;
  for (const auto& c : per_canary) {
    auto& a = acc[c.repetitions];
    a.first += c.pick(est).exposure;
    a.second += 1;
  }
  std::map<std::size_t, double> out;
  for (const auto& [reps, a] : acc) out[reps] = a.first / static_cast<double>(a.second);
  return out;
}

double AuditReport::mean_exposure(std::size_t min_repetitions, Estimator est) const {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& c : per_canary) {
    if (c.repetitions < min_repetitions) continue;
    sum += c.pick(est).exposure;
    ++n;
  }
  require(n > 0, "mean_exposure: no canaries with >= " + std::to_string(min_repetitions) +
                     " repetitions");
  return sum / static_cast<double>(n);
}

namespace {

nlohmann::json estimate_json(const ExposureEstimate& e) {
  return {{"rank", e.estimated_rank}, {"exposure", e.exposure}};
}

ExposureEstimate estimate_from_json(const nlohmann::json& j, Estimator est, const CanaryAudit& c,
                                    const AuditReport& r) {
  ExposureEstimate e;
  e.tokens = c.tokens;
  e.log_perplexity = c.log_ppl;
  e.estimated_rank = j.at("rank").get<double>();
  e.exposure = j.at("exposure").get<double>();
  e.space_size = std::exp2(r.log2_space);
  e.estimator = est;
  e.sample_size = r.sample_size;
  return e;
}

}  // namespace

nlohmann::json AuditReport::to_json() const {
  nlohmann::json canaries = nlohmann::json::array();
  for (const auto& c : per_canary) {
    const auto& main = c.pick(estimator);
    nlohmann::json row = {{"author", c.author},
                          {"repetitions", c.repetitions},
                          {"kind", to_string(c.kind)},
                          {"tokens", c.tokens},
                          {"log_ppl", c.log_ppl},
                          {"rank", main.estimated_rank},
                          {"exposure", main.exposure},
                          {"empirical", estimate_json(c.empirical)}};
    if (c.skew_normal) row["skew_normal"] = estimate_json(*c.skew_normal);
    canaries.push_back(std::move(row));
  }
  nlohmann::json by_rep = nlohmann::json::object();
  if (!per_canary.empty()) {
    for (const auto& [reps, v] : mean_exposure_by_repetition()) by_rep[std::to_string(reps)] = v;
  }
  nlohmann::json j = {{"model_id", model_id},
                      {"estimator", to_string(estimator)},
                      {"sample_size", sample_size},
                      {"seed", seed},
                      {"log2_space", log2_space},
                      {"per_canary", canaries},
                      {"mean_exposure_by_repetition", by_rep},
                      {"disparate", disparate.to_json()}};
  j["tab"] = tab ? tab->to_json() : nlohmann::json(nullptr);
  return j;
}

AuditReport AuditReport::from_json(const nlohmann::json& j) {
  AuditReport r;
  r.model_id = j.at("model_id").get<std::string>();
  r.estimator = parse_estimator(j.at("estimator").get<std::string>());
  r.sample_size = j.at("sample_size").get<std::size_t>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.log2_space = j.at("log2_space").get<double>();
  for (const auto& row : j.at("per_canary")) {
    CanaryAudit c;
    c.author = row.at("author").get<AuthorId>();
    c.repetitions = row.at("repetitions").get<std::size_t>();
    c.kind = parse_kind(row.at("kind").get<std::string>());
    c.tokens = row.at("tokens").get<std::vector<TokenId>>();
    c.log_ppl = row.at("log_ppl").get<double>();
    c.empirical = estimate_from_json(row.at("empirical"), Estimator::kEmpirical, c, r);
    if (row.contains("skew_normal")) {
      c.skew_normal = estimate_from_json(row.at("skew_normal"), Estimator::kSkewNormal, c, r);
    }
    r.per_canary.push_back(std::move(c));
  }
  if (!j.at("tab").is_null()) {
    TabAttackReport t;
    const auto& tj = j.at("tab");
    t.accuracy_by_bucket = tj.at("by_bucket").get<std::map<std::string, double>>();
    t.accuracy_by_kind = tj.at("by_kind").get<std::map<std::string, double>>();
    for (const auto& o : tj.at("outcomes")) {
      AttackOutcome out;
      out.target.author = o.at("author").get<AuthorId>();
      out.target.repetitions = o.at("repetitions").get<std::size_t>();
      out.target.kind = parse_kind(o.at("kind").get<std::string>());
      out.target.tokens = o.at("tokens").get<std::vector<TokenId>>();
      out.reconstruction = o.at("reconstruction").get<std::vector<TokenId>>();
      out.success = o.at("success").get<bool>();
      t.outcomes.push_back(std::move(out));
    }
    r.tab = std::move(t);
  }
  const auto& dj = j.at("disparate");
  for (const auto& u : dj.at("per_user")) {
    r.disparate.per_user.push_back(UserDrop{u.at("author").get<AuthorId>(),
                                            u.at("train_samples").get<std::size_t>(),
                                            u.at("mitigated_perplexity").get<double>(),
                                            u.at("baseline_perplexity").get<double>(),
                                            u.at("drop").get<double>()});
  }
  r.disparate.top_k = dj.at("top_k").get<std::vector<AuthorId>>();
  r.disparate.bottom_k = dj.at("bottom_k").get<std::vector<AuthorId>>();
  r.disparate.top_k_mean = dj.at("top_k_mean").get<double>();
  r.disparate.bottom_k_mean = dj.at("bottom_k_mean").get<double>();
  r.disparate.gap = dj.at("gap").get<double>();
  return r;
}

std::string AuditReport::to_csv() const {
  std::ostringstream out;
  out.precision(17);
  out << "model_id,author,repetitions,kind,log_ppl,rank,exposure,exposure_empirical,"
         "exposure_skew_normal\n";
  for (const auto& c : per_canary) {
    const auto& main = c.pick(estimator);
    out << model_id << ',' << c.author << ',' << c.repetitions << ',' << to_string(c.kind) << ','
        << c.log_ppl << ',' << main.estimated_rank << ',' << main.exposure << ','
        << c.empirical.exposure << ',';
    if (c.skew_normal) out << c.skew_normal->exposure;
    out << '\n';
  }
  return out.str();
}

AuditReport audit_run(const Checkpoint& model, const CanaryPlan& plan, const Corpus& corpus,
                      const Checkpoint& baseline, const AuditConfig& config,
                      const std::string& model_id) {
  config.validate();
  const auto vocab_hash = corpus.vocab.hash();
  if (model.vocab_hash != vocab_hash) {
    throw InvalidArgument("audit_run: model vocabulary hash does not match the corpus");
  }
  if (baseline.vocab_hash != vocab_hash) {
    throw InvalidArgument("audit_run: baseline vocabulary hash does not match the corpus");
  }
  const auto v = static_cast<TokenId>(corpus.vocab.size());
  for (const auto& c : plan.canaries) {
    for (TokenId t : c.tokens) {
      if (t < special::kCount || t >= v) {
        throw InvalidArgument("audit_run: canary plan does not match the corpus vocabulary");
      }
    }
  }

  AuditReport report;
  report.model_id = model_id;
  report.estimator = config.estimator;
  report.sample_size = config.sample_size;
  report.seed = config.seed;

  if (!plan.empty()) {
    // One reference sample per (model, canary length), shared by all canaries.
    std::map<std::size_t, ReferenceSample> refs;
    std::vector<std::span<const TokenId>> views;
    for (const auto& c : plan.canaries) views.emplace_back(c.tokens);
    const auto scores = score_sequences(model.lm, views, false);
    for (std::size_t i = 0; i < plan.canaries.size(); ++i) {
      const auto& c = plan.canaries[i];
      auto it = refs.find(c.tokens.size());
      if (it == refs.end()) {
        it = refs.emplace(c.tokens.size(), reference_sample(model.lm, c.tokens.size(),
                                                            config.sample_size, config.seed))
                 .first;
      }
      CanaryAudit a;
      a.author = c.author;
      a.repetitions = c.repetitions;
      a.tokens = c.tokens;
      a.log_ppl = -scores[i].log_prob;
      a.empirical = exposure_empirical(a.log_ppl, it->second);
      a.empirical.tokens = c.tokens;
      if (config.sample_size >= kMinSkewNormalSamples) {
        a.skew_normal = exposure_skew_normal(a.log_ppl, it->second);
        a.skew_normal->tokens = c.tokens;
      }
      report.log2_space = it->second.log2_space;
      report.per_canary.push_back(std::move(a));
    }

    auto targets = attack_targets(plan);
    if (config.real_canaries) {
      const auto real = attack_targets(select_real_canaries(baseline.lm, corpus));
      targets.insert(targets.end(), real.begin(), real.end());
    }
    report.tab = tab_attack(model.lm, targets);
  }

  report.disparate = disparate_impact(model.lm, baseline.lm, corpus, config.k);
  return report;
}

}  // namespace privlm
