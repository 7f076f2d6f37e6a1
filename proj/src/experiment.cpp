#include "privlm/experiment.hpp"

#include "privlm/error.hpp"
#include "privlm/log.hpp"
#include "privlm/plot.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <future>
#include <map>
#include <set>
#include <sstream>

namespace privlm {

namespace fs = std::filesystem;
namespace pt = boost::property_tree;

const TrainConfig& ExperimentSpec::regime(Regime r) const {
  for (const auto& c : regimes) {
    if (c.regime == r) return c;
  }
  throw InvalidArgument("experiment has no " + to_string(r) + " regime");
}

bool ExperimentSpec::has_regime(Regime r) const {
  return std::any_of(regimes.begin(), regimes.end(),
                     [r](const TrainConfig& c) { return c.regime == r; });
}

void ExperimentSpec::validate() const {
  require(!regimes.empty(), "experiment.regimes: at least one regime is required");
  require(regimes.front().regime == Regime::kUnmitigated,
          "experiment.regimes: the unmitigated baseline must be trained");
  std::set<Regime> seen;
  for (const auto& c : regimes) {
    require(seen.insert(c.regime).second,
            "experiment.regimes: " + to_string(c.regime) + " listed twice");
    c.validate();
    require(c.target_test_perplexity == target_test_perplexity,
            "train." + to_string(c.regime) +
                ".target_test_perplexity: all regimes must share the [train] target");
  }
  require(perplexity_tolerance > 0.0, "experiment.perplexity_tolerance: must be > 0");
  for (auto r : canary_schedule) require(r >= 1, "canaries.schedule: entries must be >= 1");
  require(canary_length >= 2, "canaries.length: must be >= 2");
  if (corpus.is_synthetic()) {
    const auto& s = corpus.synthetic;
    require(s.n_authors >= 2, "corpus.n_authors: must be >= 2");
    require(s.samples_by_author.empty() || s.samples_by_author.size() == s.n_authors,
            "corpus.samples_by_author: needs one entry per author");
    require(s.vocab_size >= 16, "corpus.vocab_size: must be >= 16");
    require(s.seq_len_range.first >= 1 && s.seq_len_range.first <= s.seq_len_range.second,
            "corpus.min_len/max_len: need 1 <= min_len <= max_len");
    require(s.transition_weight >= 0.0 && s.transition_weight <= 1.0,
            "corpus.transition_weight: must be in [0, 1]");
  } else {
    require(corpus.max_vocab >= 1, "corpus.max_vocab: must be >= 1");
  }
  audit.validate();
  require(!out_dir.empty(), "experiment.out: output directory is required");
}

nlohmann::json ExperimentSpec::to_json() const {
  nlohmann::json regs = nlohmann::json::array();
  for (const auto& c : regimes) regs.push_back(c.to_json());
  nlohmann::json corp;
  if (corpus.is_synthetic()) {
    const auto& s = corpus.synthetic;
    corp = {{"source", "synthetic"},
            {"n_authors", s.n_authors},
            {"samples_per_author", s.samples_per_author},
            {"samples_by_author", s.samples_by_author},
            {"vocab_size", s.vocab_size},
            {"min_len", s.seq_len_range.first},
            {"max_len", s.seq_len_range.second},
            {"zipf_exponent", s.zipf_exponent},
            {"author_concentration", s.author_concentration},
            {"transition_weight", s.transition_weight},
            {"successors", s.successors},
            {"seed", s.seed}};
  } else {
    corp = {{"source", corpus.jsonl.string()},
            {"max_vocab", corpus.max_vocab},
            {"split_seed", corpus.split_seed}};
  }
  return {{"name", name},
          {"seed", seed},
          {"corpus", corp},
          {"canaries",
           {{"schedule", canary_schedule}, {"seed", canary_seed}, {"length", canary_length}}},
          {"target_test_perplexity",
           target_test_perplexity ? nlohmann::json(*target_test_perplexity) : nlohmann::json()},
          {"perplexity_tolerance", perplexity_tolerance},
          {"regimes", regs},
          {"audit",
           {{"sample_size", audit.sample_size},
            {"k", audit.k},
            {"estimator", to_string(audit.estimator)},
            {"real_canaries", audit.real_canaries},
            {"seed", audit.seed}}}};
}

// ---------------------------------------------------------------------------
// spec parsing

namespace {

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

// Reads typed values out of one INI section and rejects unknown keys.
class Section {
 public:
  Section(std::string name, const pt::ptree* tree) : name_(std::move(name)), tree_(tree) {}

  bool present() const { return tree_ != nullptr; }

  std::optional<std::string> raw(const std::string& key) {
    used_.insert(key);
    if (tree_ == nullptr) return std::nullopt;
    auto it = tree_->find(key);
    if (it == tree_->not_found()) return std::nullopt;
    return trim(it->second.data());
  }

  std::optional<double> real(const std::string& key) {
    auto v = raw(key);
    if (!v) return std::nullopt;
    try {
      std::size_t pos = 0;
      const double d = std::stod(*v, &pos);
      if (pos == v->size()) return d;
    } catch (const std::exception&) {
    }
    throw InvalidArgument(field(key) + ": expected a number, got '" + *v + "'");
  }

  std::optional<std::uint64_t> integer(const std::string& key) {
    auto v = raw(key);
    if (!v) return std::nullopt;
    try {
      std::size_t pos = 0;
      if (!v->empty() && (*v)[0] != '-') {
        const auto n = std::stoull(*v, &pos);
        if (pos == v->size()) return n;
      }
    } catch (const std::exception&) {
    }
    throw InvalidArgument(field(key) + ": expected a non-negative integer, got '" + *v + "'");
  }

  std::optional<bool> boolean(const std::string& key) {
    auto v = raw(key);
    if (!v) return std::nullopt;
    if (*v == "true" || *v == "1" || *v == "yes") return true;
    if (*v == "false" || *v == "0" || *v == "no") return false;
    throw InvalidArgument(field(key) + ": expected true or false, got '" + *v + "'");
  }

  std::optional<std::vector<std::size_t>> integers(const std::string& key) {
    auto v = raw(key);
    if (!v) return std::nullopt;
    std::vector<std::size_t> out;
    for (const auto& item : split_list(*v)) {
      try {
        std::size_t pos = 0;
        if (item[0] != '-') {
          out.push_back(std::stoull(item, &pos));
          if (pos == item.size()) continue;
        }
      } catch (const std::exception&) {
      }
      throw InvalidArgument(field(key) + ": expected a comma-separated list of integers");
    }
    return out;
  }

  void reject_unknown() const {
    if (tree_ == nullptr) return;
    for (const auto& [key, value] : *tree_) {
      if (!used_.count(key)) throw InvalidArgument(field(key) + ": unknown key");
    }
  }

  std::string field(const std::string& key) const { return name_ + "." + key; }

 private:
  std::string name_;
  const pt::ptree* tree_;
  std::set<std::string> used_;
};

template <typename T, typename U>
void assign(T& target, const std::optional<U>& value) {
  if (value) target = static_cast<T>(*value);
}

// Keys accepted in [train] and [train.<regime>].
void read_train(Section& s, TrainConfig& c) {
  assign(c.lambda, s.real("lambda"));
  assign(c.learning_rate, s.real("learning_rate"));
  assign(c.batch_size, s.integer("batch_size"));
  assign(c.seq_len, s.integer("seq_len"));
  if (auto t = s.real("target_test_perplexity")) c.target_test_perplexity = *t;
  assign(c.max_epochs, s.integer("max_epochs"));
  assign(c.p_same, s.real("p_same"));
  if (auto v = s.real("clip_norm")) c.clip_norm = *v;
  if (auto v = s.real("noise_multiplier")) c.noise_multiplier = *v;
  assign(c.disc_steps_per_lm_step, s.integer("disc_steps_per_lm_step"));
  if (auto v = s.real("disc_learning_rate")) c.disc_learning_rate = *v;
  assign(c.seed, s.integer("seed"));
  assign(c.eval_every_batches, s.integer("eval_every_batches"));
}

}  // namespace

ExperimentSpec parse_spec(const std::string& text, const fs::path& base_dir,
                          std::optional<std::uint64_t> seed_override) {
  pt::ptree tree;
  try {
    std::istringstream in(text);
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ParseError(e.line(), e.message());
  }

  std::map<std::string, const pt::ptree*> sections;
  for (const auto& [name, child] : tree) {
    if (child.empty() && !child.data().empty()) {
      throw InvalidArgument(name + ": key outside of any section");
    }
    sections[name] = &child;
  }
  auto section = [&](const std::string& name) {
    auto it = sections.find(name);
    return Section(name, it == sections.end() ? nullptr : it->second);
  };
  std::set<std::string> known = {"experiment", "corpus", "canaries", "model", "train", "audit"};
  for (const auto& [name, child] : sections) {
    if (known.count(name) || name.rfind("train.", 0) == 0) continue;
    throw InvalidArgument(name + ": unknown section");
  }

  ExperimentSpec spec;
  auto exp = section("experiment");
  if (auto v = exp.raw("name")) spec.name = *v;
  assign(spec.seed, exp.integer("seed"));
  if (seed_override) spec.seed = *seed_override;
  if (auto v = exp.raw("out")) spec.out_dir = base_dir / *v;
  assign(spec.perplexity_tolerance, exp.real("perplexity_tolerance"));
  std::vector<Regime> regimes;
  if (auto v = exp.raw("regimes")) {
    for (const auto& r : split_list(*v)) {
      try {
        regimes.push_back(parse_regime(r));
      } catch (const InvalidArgument& e) {
        throw InvalidArgument(std::string("experiment.regimes: ") + e.what());
      }
    }
  } else {
    regimes.push_back(Regime::kUnmitigated);
    for (const auto& [name, child] : sections) {
      if (name.rfind("train.", 0) != 0) continue;
      const auto r = name.substr(6);
      try {
        if (parse_regime(r) != Regime::kUnmitigated) regimes.push_back(parse_regime(r));
      } catch (const InvalidArgument&) {
      }
    }
  }
  exp.reject_unknown();

  // Component seeds: explicit value unless overridden, else derived.
  auto component_seed = [&](Section& s, const std::string& stream) {
    const auto explicit_seed = s.integer("seed");
    if (explicit_seed && !seed_override) return *explicit_seed;
    return derive_seed(spec.seed, stream);
  };

  auto corp = section("corpus");
  const auto source = corp.raw("source").value_or("synthetic");
  auto& syn = spec.corpus.synthetic;
  assign(syn.n_authors, corp.integer("n_authors"));
  assign(syn.samples_per_author, corp.integer("samples_per_author"));
  if (auto v = corp.integers("samples_by_author")) syn.samples_by_author = *v;
  assign(syn.vocab_size, corp.integer("vocab_size"));
  assign(syn.seq_len_range.first, corp.integer("min_len"));
  assign(syn.seq_len_range.second, corp.integer("max_len"));
  assign(syn.zipf_exponent, corp.real("zipf_exponent"));
  assign(syn.author_concentration, corp.real("author_concentration"));
  assign(syn.transition_weight, corp.real("transition_weight"));
  assign(syn.successors, corp.integer("successors"));
  assign(spec.corpus.max_vocab, corp.integer("max_vocab"));
  syn.seed = component_seed(corp, "corpus");
  if (source != "synthetic") {
    spec.corpus.jsonl = base_dir / source;
    spec.corpus.split_seed = syn.seed;
  }
  corp.reject_unknown();

  auto can = section("canaries");
  if (auto v = can.integers("schedule")) spec.canary_schedule = *v;
  assign(spec.canary_length, can.integer("length"));
  spec.canary_seed = component_seed(can, "canaries");
  can.reject_unknown();

  ModelConfig model;
  auto mod = section("model");
  assign(model.embed_dim, mod.integer("embed_dim"));
  assign(model.hidden_dim, mod.integer("hidden_dim"));
  assign(model.disc_hidden_dim, mod.integer("disc_hidden_dim"));
  assign(model.init_scale, mod.real("init_scale"));
  mod.reject_unknown();

  TrainConfig shared;
  shared.model = model;
  auto tr = section("train");
  read_train(tr, shared);
  shared.seed = component_seed(tr, "train");
  tr.reject_unknown();
  require(!shared.clip_norm && !shared.noise_multiplier,
          "train.clip_norm/noise_multiplier: set these in [train.dpsgd]");
  spec.target_test_perplexity = shared.target_test_perplexity;

  for (auto r : regimes) {
    TrainConfig c = shared;
    c.regime = r;
    auto s = section("train." + to_string(r));
    read_train(s, c);
    if (seed_override) c.seed = shared.seed;
    s.reject_unknown();
    spec.regimes.push_back(c);
  }
  for (const auto& [name, child] : sections) {
    if (name.rfind("train.", 0) != 0) continue;
    const auto r = parse_regime(name.substr(6));
    if (std::find(regimes.begin(), regimes.end(), r) == regimes.end()) {
      log_warning("section [" + name + "] ignored: regime not listed in experiment.regimes");
    }
  }
  std::stable_sort(spec.regimes.begin(), spec.regimes.end(),
                   [](const TrainConfig& a, const TrainConfig& b) {
                     return a.regime == Regime::kUnmitigated && b.regime != Regime::kUnmitigated;
                   });

  auto aud = section("audit");
  assign(spec.audit.sample_size, aud.integer("sample_size"));
  assign(spec.audit.k, aud.integer("k"));
  if (auto v = aud.raw("estimator")) {
    try {
      spec.audit.estimator = parse_estimator(*v);
    } catch (const InvalidArgument& e) {
      throw InvalidArgument(std::string("audit.estimator: ") + e.what());
    }
  }
  assign(spec.audit.real_canaries, aud.boolean("real_canaries"));
  spec.audit.seed = component_seed(aud, "audit");
  aud.reject_unknown();

  spec.validate();
  return spec;
}

ExperimentSpec load_spec(const fs::path& path, std::optional<std::uint64_t> seed_override) {
  std::ifstream in(path);
  if (!in) throw FileNotFound(path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_spec(text.str(), path.parent_path(), seed_override);
}

std::size_t workers_from_env() {
  const char* v = std::getenv("PRIVLM_WORKERS");
  if (v == nullptr || *v == '\0') return 1;
  try {
    const auto n = std::stoul(v);
    if (n >= 1) return n;
  } catch (const std::exception&) {
  }
  log_warning("PRIVLM_WORKERS must be a positive integer; using 1");
  return 1;
}

// ---------------------------------------------------------------------------
// run

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FileNotFound(path.string());
  return nlohmann::json::parse(in);
}

fs::path checkpoint_path(const fs::path& dir, Regime r) {
  return dir / ("model_" + to_string(r) + ".ckpt");
}

fs::path audit_path(const fs::path& dir, Regime r) {
  return dir / ("audit_" + to_string(r) + ".json");
}

Corpus build_corpus(const CorpusSource& source) {
  if (source.is_synthetic()) return generate_synthetic_corpus(source.synthetic);
  return ingest_jsonl(source.jsonl, source.max_vocab, source.split_seed);
}

}  // namespace

nlohmann::json make_summary(const ExperimentSpec& spec, const std::vector<TrainLog>& logs,
                            const std::vector<std::optional<AuditReport>>& audits) {
  nlohmann::json regimes = nlohmann::json::array();
  std::vector<std::string> unmatched;
  for (std::size_t i = 0; i < logs.size(); ++i) {
    const auto& log = logs[i];
    const auto& last = log.final_record();
    nlohmann::json row = {{"regime", to_string(log.regime)},
                          {"train_perplexity", last.train_perplexity},
                          {"test_perplexity", last.test_perplexity},
                          {"epochs", last.epoch},
                          {"steps", log.steps},
                          {"stop", to_string(log.stop)}};
    if (spec.target_test_perplexity) {
      const double rel =
          std::abs(last.test_perplexity - *spec.target_test_perplexity) /
          *spec.target_test_perplexity;
      row["relative_perplexity_gap"] = rel;
      row["matched"] = rel <= spec.perplexity_tolerance;
      if (rel > spec.perplexity_tolerance) unmatched.push_back(to_string(log.regime));
    }
    if (i < audits.size() && audits[i]) {
      const auto& a = *audits[i];
      nlohmann::json exposure = nlohmann::json::object();
      if (!a.per_canary.empty()) {
        for (const auto& [reps, v] : a.mean_exposure_by_repetition()) {
          exposure[std::to_string(reps)] = v;
        }
      }
      row["mean_exposure_by_repetition"] = exposure;
      row["tab_accuracy"] = a.tab ? nlohmann::json(a.tab->accuracy_by_bucket)
                                  : nlohmann::json::object();
      row["disparate_gap"] = a.disparate.gap;
      row["disparate_top_k_mean"] = a.disparate.top_k_mean;
      row["disparate_bottom_k_mean"] = a.disparate.bottom_k_mean;
    }
    regimes.push_back(std::move(row));
  }
  return {{"name", spec.name},
          {"seed", spec.seed},
          {"target_test_perplexity",
           spec.target_test_perplexity ? nlohmann::json(*spec.target_test_perplexity)
                                       : nlohmann::json()},
          {"perplexity_tolerance", spec.perplexity_tolerance},
          {"estimator", to_string(spec.audit.estimator)},
          {"regimes", regimes},
          {"unmatched_regimes", unmatched}};
}

RunResult cmd_run(const ExperimentSpec& spec_in, const RunOptions& options) {
  ExperimentSpec spec = spec_in;
  if (!options.only.empty()) {
    std::vector<TrainConfig> kept;
    for (const auto& c : spec.regimes) {
      const bool wanted = std::find(options.only.begin(), options.only.end(), c.regime) !=
                          options.only.end();
      // The baseline is always needed for auditing.
      if (wanted || c.regime == Regime::kUnmitigated) kept.push_back(c);
    }
    for (auto r : options.only) {
      require(spec.has_regime(r), "--regime: " + to_string(r) + " is not in the spec");
    }
    spec.regimes = kept;
  }
  spec.validate();

  const fs::path dir = spec.out_dir;
  fs::create_directories(dir);
  std::string stage = "setup";
  std::string stage_regime;
  try {
    write_text(dir / "spec.json", spec.to_json().dump(2) + "\n");

    stage = "corpus";
    const Corpus base = build_corpus(spec.corpus);
    CanaryPlan plan;
    if (!spec.canary_schedule.empty()) {
      plan = generate_canaries(base.vocab, base.authors, spec.canary_schedule, spec.canary_seed,
                               spec.canary_length);
    }
    const Corpus corpus = inject(base, plan);
    save_corpus(corpus, dir / "corpus.json");
    save_plan(plan, corpus.vocab, dir / "plan.json");

    stage = "train";
    const std::size_t n = spec.regimes.size();
    std::vector<std::optional<TrainResult>> results(n);
    const std::size_t workers = std::max<std::size_t>(1, options.workers);
    for (std::size_t start = 0; start < n; start += workers) {
      std::vector<std::future<TrainResult>> jobs;
      for (std::size_t i = start; i < std::min(n, start + workers); ++i) {
        jobs.push_back(std::async(workers > 1 ? std::launch::async : std::launch::deferred,
                                  [&, i] { return train(corpus, plan, spec.regimes[i]); }));
      }
      for (std::size_t j = 0; j < jobs.size(); ++j) {
        const auto& cfg = spec.regimes[start + j];
        stage_regime = to_string(cfg.regime);
        log_info("training " + stage_regime);
        results[start + j] = jobs[j].get();
        const auto& r = *results[start + j];
        Checkpoint ck;
        ck.lm = r.model;
        ck.disc = r.disc;
        ck.vocab_hash = corpus.vocab.hash();
        ck.config_hash = cfg.hash();
        ck.step = r.log.steps;
        ck.regime = stage_regime;
        save_checkpoint(ck, checkpoint_path(dir, cfg.regime));
        write_text(dir / ("trainlog_" + stage_regime + ".csv"), r.log.to_csv());
        write_text(dir / ("trainlog_" + stage_regime + ".json"), r.log.to_json().dump(2) + "\n");
      }
    }

    stage = "audit";
    Checkpoint baseline;
    baseline.lm = results.front()->model;
    baseline.vocab_hash = corpus.vocab.hash();
    std::vector<std::optional<AuditReport>> audits(n);
    std::vector<TrainLog> logs;
    for (std::size_t i = 0; i < n; ++i) {
      const auto& cfg = spec.regimes[i];
      stage_regime = to_string(cfg.regime);
      log_info("auditing " + stage_regime);
      Checkpoint ck;
      ck.lm = results[i]->model;
      ck.vocab_hash = corpus.vocab.hash();
      audits[i] = audit_run(ck, plan, corpus, baseline, spec.audit, stage_regime);
      write_text(audit_path(dir, cfg.regime), audits[i]->to_json().dump(2) + "\n");
      write_text(dir / ("audit_" + stage_regime + ".csv"), audits[i]->to_csv());
      logs.push_back(results[i]->log);
    }
    stage_regime.clear();

    stage = "report";
    RunResult out;
    out.out_dir = dir;
    out.summary = make_summary(spec, logs, audits);
    write_text(dir / "summary.json", out.summary.dump(2) + "\n");
    for (const auto& name : out.summary["unmatched_regimes"]) {
      char pct[32];
      std::snprintf(pct, sizeof pct, "%g%%", spec.perplexity_tolerance * 100.0);
      log_warning("regime " + name.get<std::string>() + " ended more than " + pct +
                  " away from the target test perplexity; exposure comparisons are unmatched");
    }
    cmd_report(dir);
    fs::remove(dir / "error.json");
    return out;
  } catch (const std::exception& e) {
    nlohmann::json manifest = {{"stage", stage}, {"error", e.what()}};
    if (!stage_regime.empty()) manifest["regime"] = stage_regime;
    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
      files.push_back(entry.path().filename().string());
    }
    std::sort(files.begin(), files.end());
    manifest["partial_artifacts"] = files;
    write_text(dir / "error.json", manifest.dump(2) + "\n");
    throw;
  }
}

AuditReport cmd_audit(const AuditPaths& paths, const AuditConfig& config) {
  for (const auto& p : {paths.checkpoint, paths.plan, paths.corpus, paths.baseline}) {
    if (!fs::exists(p)) throw FileNotFound(p.string());
  }
  const auto model = load_checkpoint(paths.checkpoint);
  const auto baseline = load_checkpoint(paths.baseline);
  const auto plan = load_plan(paths.plan);
  const auto corpus = load_corpus(paths.corpus);
  const auto plan_json = read_json(paths.plan);
  if (plan_json.contains("vocab_hash") &&
      plan_json["vocab_hash"].get<std::uint64_t>() != corpus.vocab.hash()) {
    throw InvalidArgument("cmd_audit: canary plan vocabulary hash does not match the corpus");
  }
  const std::string id = model.regime.empty() ? paths.checkpoint.stem().string() : model.regime;
  auto report = audit_run(model, plan, corpus, baseline, config, id);
  if (!paths.out_dir.empty()) {
    fs::create_directories(paths.out_dir);
    write_text(paths.out_dir / ("audit_" + id + ".json"), report.to_json().dump(2) + "\n");
    write_text(paths.out_dir / ("audit_" + id + ".csv"), report.to_csv());
  }
  return report;
}

// ---------------------------------------------------------------------------
// report

std::vector<fs::path> cmd_report(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw FileNotFound(dir.string());
  if (fs::is_empty(dir)) throw InvalidArgument("cmd_report: " + dir.string() + " is empty");

  std::vector<std::string> regimes = {"unmitigated", "adversarial", "triplet", "dpsgd"};
  std::optional<nlohmann::json> summary;
  if (fs::exists(dir / "summary.json")) {
    summary = read_json(dir / "summary.json");
    regimes.clear();
    for (const auto& r : (*summary)["regimes"]) regimes.push_back(r["regime"].get<std::string>());
  }

  std::map<std::string, AuditReport> audits;
  for (const auto& r : regimes) {
    const auto path = dir / ("audit_" + r + ".json");
    if (fs::exists(path)) {
      audits.emplace(r, AuditReport::from_json(read_json(path)));
    } else if (summary) {
      log_warning("cmd_report: missing " + path.filename().string() + "; series omitted");
    }
  }
  if (audits.empty()) {
    throw InvalidArgument("cmd_report: no audit reports in " + dir.string());
  }

  std::vector<fs::path> written;
  auto emit = [&](const std::string& name, const std::string& text) {
    write_text(dir / name, text);
    written.push_back(dir / name);
  };

  std::vector<LineSeries> exposure;
  std::set<std::string> bucket_set;
  for (const auto& r : regimes) {
    auto it = audits.find(r);
    if (it == audits.end()) continue;
    const auto& a = it->second;
    if (!a.per_canary.empty()) {
      LineSeries s{r, {}, {}};
      for (const auto& [reps, v] : a.mean_exposure_by_repetition()) {
        s.x.push_back(static_cast<double>(reps));
        s.y.push_back(v);
      }
      exposure.push_back(std::move(s));
    }
    if (a.tab) {
      for (const auto& [b, v] : a.tab->accuracy_by_bucket) bucket_set.insert(b);
    }
  }
  emit("exposure.svg", line_chart_svg("Exposure vs. canary repetitions", "repetitions",
                                      "mean exposure (bits)", exposure));

  // numeric buckets in numeric order, "real" last
  std::vector<std::string> buckets(bucket_set.begin(), bucket_set.end());
  std::sort(buckets.begin(), buckets.end(), [](const std::string& a, const std::string& b) {
    const bool an = a != "real";
    const bool bn = b != "real";
    if (an != bn) return an;
    if (!an) return false;
    return std::stoul(a) < std::stoul(b);
  });
  std::vector<BarSeries> tab;
  for (const auto& r : regimes) {
    auto it = audits.find(r);
    if (it == audits.end() || !it->second.tab) continue;
    BarSeries s{r, {}};
    for (const auto& b : buckets) {
      auto f = it->second.tab->accuracy_by_bucket.find(b);
      s.values.push_back(f == it->second.tab->accuracy_by_bucket.end() ? std::nan("")
                                                                         : f->second);
    }
    tab.push_back(std::move(s));
  }
  emit("tab_accuracy.svg", bar_chart_svg("Tab attack accuracy", "accuracy", buckets, tab));

  std::vector<BarSeries> disparate;
  std::vector<std::string> groups;
  BarSeries top{"top-k users", {}};
  BarSeries bottom{"bottom-k users", {}};
  for (const auto& r : regimes) {
    auto it = audits.find(r);
    if (it == audits.end()) continue;
    groups.push_back(r);
    top.values.push_back(it->second.disparate.top_k_mean);
    bottom.values.push_back(it->second.disparate.bottom_k_mean);
  }
  emit("disparate.svg", bar_chart_svg("Utility drop vs. unmitigated", "perplexity drop", groups,
                                      {top, bottom}));

  std::ostringstream md;
  md.precision(4);
  md << "# Experiment report\n\n";
  if (summary) {
    md << "Experiment `" << (*summary)["name"].get<std::string>() << "`, seed "
       << (*summary)["seed"] << ".\n\n";
    md << "| regime | train ppl | test ppl | epochs | stop | matched |\n";
    md << "|---|---|---|---|---|---|\n";
    for (const auto& r : (*summary)["regimes"]) {
      md << "| " << r["regime"].get<std::string>() << " | " << r["train_perplexity"].get<double>()
         << " | " << r["test_perplexity"].get<double>() << " | " << r["epochs"] << " | "
         << r["stop"].get<std::string>() << " | "
         << (r.contains("matched") ? (r["matched"].get<bool>() ? "yes" : "**no**") : "n/a")
         << " |\n";
    }
    md << '\n';
  }
  md << "## Mean exposure by repetitions\n\n";
  std::set<std::size_t> reps;
  for (const auto& [r, a] : audits) {
    if (a.per_canary.empty()) continue;
    for (const auto& [k, v] : a.mean_exposure_by_repetition()) reps.insert(k);
  }
  md << "| regime |";
  for (auto k : reps) md << ' ' << k << " |";
  md << "\n|---|";
  for (std::size_t i = 0; i < reps.size(); ++i) md << "---|";
  md << '\n';
  for (const auto& r : regimes) {
    auto it = audits.find(r);
    if (it == audits.end() || it->second.per_canary.empty()) continue;
    const auto m = it->second.mean_exposure_by_repetition();
    md << "| " << r << " |";
    for (auto k : reps) md << ' ' << m.at(k) << " |";
    md << '\n';
  }
  md << "\n## Tab attack accuracy\n\n| regime |";
  for (const auto& b : buckets) md << ' ' << b << " |";
  md << "\n|---|";
  for (std::size_t i = 0; i < buckets.size(); ++i) md << "---|";
  md << '\n';
  for (const auto& s : tab) {
    md << "| " << s.name << " |";
    for (double v : s.values) {
      if (std::isnan(v)) {
        md << " - |";
      } else {
        md << ' ' << v << " |";
      }
    }
    md << '\n';
  }
  md << "\n## Disparate impact\n\n| regime | top-k drop | bottom-k drop | gap |\n|---|---|---|---|\n";
  for (const auto& r : regimes) {
    auto it = audits.find(r);
    if (it == audits.end()) continue;
    const auto& d = it->second.disparate;
    md << "| " << r << " | " << d.top_k_mean << " | " << d.bottom_k_mean << " | " << d.gap
       << " |\n";
  }
  md << "\nCharts: exposure.svg, tab_accuracy.svg, disparate.svg\n";
  emit("report.md", md.str());
  return written;
}

}  // namespace privlm
