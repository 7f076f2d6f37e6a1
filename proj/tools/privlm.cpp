// privlm: run experiments, re-audit checkpoints, regenerate reports.

#include "privlm/error.hpp"
#include "privlm/experiment.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

int fail(const std::string& what, int code) {
  std::cerr << "privlm: " << what << '\n';
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Privacy-regularized language model experiments"};
  app.require_subcommand(1);

  auto* run = app.add_subcommand("run", "Train every regime in a spec, audit, and report");
  std::string spec_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed_override;
  std::vector<std::string> regimes;
  run->add_option("--spec", spec_path, "Experiment spec (INI)")->required();
  run->add_option("--out", out_dir, "Output directory (overrides experiment.out)");
  run->add_option("--seed-override", seed_override, "Replace every seed in the spec");
  run->add_option("--regime", regimes, "Only train these regimes (baseline always runs)");

  auto* audit = app.add_subcommand("audit", "Audit a checkpoint against a baseline");
  privlm::AuditPaths paths;
  privlm::AuditConfig audit_config;
  std::string estimator = "skew_normal";
  bool no_real = false;
  audit->add_option("--checkpoint", paths.checkpoint)->required();
  audit->add_option("--plan", paths.plan)->required();
  audit->add_option("--corpus", paths.corpus)->required();
  audit->add_option("--baseline", paths.baseline)->required();
  audit->add_option("--out", paths.out_dir, "Directory for audit_<id>.json/.csv");
  audit->add_option("--sample-size", audit_config.sample_size, "Reference sequences per estimate");
  audit->add_option("--k", audit_config.k, "Users per disparate-impact group");
  audit->add_option("--seed", audit_config.seed);
  audit->add_option("--estimator", estimator)->check(CLI::IsMember({"empirical", "skew_normal"}));
  audit->add_flag("--no-real-canaries", no_real);

  auto* report = app.add_subcommand("report", "Regenerate charts and report.md");
  std::string report_dir;
  report->add_option("--dir", report_dir, "Experiment directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*run) {
      auto spec = privlm::load_spec(spec_path, seed_override);
      if (!out_dir.empty()) spec.out_dir = out_dir;
      privlm::RunOptions options;
      for (const auto& r : regimes) options.only.push_back(privlm::parse_regime(r));
      options.workers = privlm::workers_from_env();
      const auto result = privlm::cmd_run(spec, options);
      std::cout << result.summary.dump(2) << '\n';
    } else if (*audit) {
      audit_config.estimator = privlm::parse_estimator(estimator);
      audit_config.real_canaries = !no_real;
      const auto r = privlm::cmd_audit(paths, audit_config);
      std::cout << r.to_json().dump(2) << '\n';
    } else if (*report) {
      for (const auto& p : privlm::cmd_report(report_dir)) std::cout << p.string() << '\n';
    }
  } catch (const privlm::InvalidArgument& e) {
    return fail(e.what(), 2);
  } catch (const privlm::ParseError& e) {
    return fail(e.what(), 2);
  } catch (const privlm::FileNotFound& e) {
    return fail(e.what(), 3);
  } catch (const std::exception& e) {
    return fail(e.what(), 1);
  }
  return 0;
}
