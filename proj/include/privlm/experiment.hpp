#pragma once

#include "privlm/audit.hpp"
#include "privlm/canary.hpp"
#include "privlm/corpus.hpp"
#include "privlm/training.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace privlm {

struct CorpusSource {
  // Empty means synthetic.
  std::filesystem::path jsonl;
  std::size_t max_vocab = 40000;
  std::uint64_t split_seed = 0;
  SyntheticCorpusConfig synthetic;

  bool is_synthetic() const { return jsonl.empty(); }
};

// One experiment: a corpus and canary plan shared by every regime, each regime
// trained to the same test-perplexity target and audited against the
// unmitigated baseline.
struct ExperimentSpec {
  std::string name = "experiment";
  std::uint64_t seed = 1;
  CorpusSource corpus;
  std::vector<std::size_t> canary_schedule = {1, 2, 5, 10, 20};
  std::uint64_t canary_seed = 0;
  std::size_t canary_length = kCanaryLength;
  std::vector<TrainConfig> regimes;  // unmitigated first
  std::optional<double> target_test_perplexity;
  double perplexity_tolerance = 0.10;
  AuditConfig audit;
  std::filesystem::path out_dir;

  const TrainConfig& regime(Regime r) const;
  bool has_regime(Regime r) const;

  // Throws InvalidArgument naming the offending field.
  void validate() const;
  nlohmann::json to_json() const;
};

// INI text with sections [experiment], [corpus], [canaries], [model], [train]
// (defaults for every regime), [train.<regime>] and [audit]. Relative paths
// resolve against `base_dir`. Component seeds not given explicitly derive
// from [experiment] seed; `seed_override` replaces the experiment seed and
// every component seed.
ExperimentSpec parse_spec(const std::string& text, const std::filesystem::path& base_dir = {},
                          std::optional<std::uint64_t> seed_override = std::nullopt);
ExperimentSpec load_spec(const std::filesystem::path& path,
                         std::optional<std::uint64_t> seed_override = std::nullopt);

struct RunOptions {
  std::vector<Regime> only;  // empty: all regimes in the spec
  std::size_t workers = 1;   // regimes trained concurrently
};

// Reads PRIVLM_WORKERS (default 1).
std::size_t workers_from_env();

struct RunResult {
  std::filesystem::path out_dir;
  nlohmann::json summary;
};

// Builds the corpus and plan once, trains each regime, audits each against
// the unmitigated baseline and writes all artifacts plus a report. On
// failure an error manifest (error.json) is written next to the partial
// artifacts and the exception is rethrown.
RunResult cmd_run(const ExperimentSpec& spec, const RunOptions& options = {});

struct AuditPaths {
  std::filesystem::path checkpoint;
  std::filesystem::path plan;
  std::filesystem::path corpus;
  std::filesystem::path baseline;
  std::filesystem::path out_dir;
};

AuditReport cmd_audit(const AuditPaths& paths, const AuditConfig& config);

// Regenerates charts (SVG) and report.md from the JSON artifacts in `dir`.
// Returns the files written.
std::vector<std::filesystem::path> cmd_report(const std::filesystem::path& dir);

// Per-regime summary table; deterministic (no timing).
nlohmann::json make_summary(const ExperimentSpec& spec, const std::vector<TrainLog>& logs,
                            const std::vector<std::optional<AuditReport>>& audits);

}  // namespace privlm
