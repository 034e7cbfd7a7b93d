// psplug: experiment driver for the personalization plug-in.
//
// Commands run the pipeline end to end: build-profiles -> make-pairs ->
// train -> generate / evaluate -> sweep-alpha -> judge, plus synthetic-data
// to emit the bundled seeded corpus. Every command takes --config <file>
// (JSON; unknown keys rejected) with a few flag overrides.
//
// Exit codes: 0 success, 1 usage/config error, 2 data error,
// 3 external-service failure.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "psplug/config.hpp"
#include "psplug/http_transport.hpp"
#include "psplug/pipeline.hpp"

namespace {

struct CommonFlags {
  std::string config_path;
  std::optional<std::string> task;
  std::optional<std::string> style;
  std::optional<double> alpha;
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
  cmd->add_option("--config", flags.config_path, "run configuration file (JSON)")
      ->required();
  cmd->add_option("--task", flags.task, "override config task");
  cmd->add_option("--style", flags.style, "override config style");
  cmd->add_option("--alpha", flags.alpha, "override personalization strength");
}

psplug::RunConfig load_config(const CommonFlags& flags) {
  psplug::RunConfig cfg = psplug::load_run_config(flags.config_path);
  if (flags.task) cfg.task = psplug::parse_task(*flags.task);
  if (flags.style) cfg.style = psplug::parse_style(*flags.style);
  if (flags.alpha) {
    if (*flags.alpha < 0.0) throw psplug::UsageError("--alpha must be non-negative");
    cfg.alpha = *flags.alpha;
  }
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"psplug — personalized prefix plug-in for a frozen language model"};
  app.require_subcommand(1);
  int rc = 0;

  CommonFlags profiles_flags;
  bool force = false;
  CLI::App* profiles_cmd =
      app.add_subcommand("build-profiles", "summarize user histories and cache embeddings");
  add_common(profiles_cmd, profiles_flags);
  profiles_cmd->add_flag("--force", force, "rebuild cached profiles");
  profiles_cmd->callback([&] {
    const auto result = psplug::cmd_build_profiles(load_config(profiles_flags), force);
    std::cout << "profiles: built " << result.built << ", skipped " << result.skipped
              << ", rebuilt " << result.rebuilt << "\n";
  });

  CommonFlags pairs_flags;
  CLI::App* pairs_cmd =
      app.add_subcommand("make-pairs", "sample negatives and write the preference-pair dataset");
  add_common(pairs_cmd, pairs_flags);
  pairs_cmd->callback([&] {
    const auto result = psplug::cmd_make_pairs(load_config(pairs_flags));
    std::cout << "pairs: wrote " << result.written << " (dropped " << result.dropped << ") to "
              << result.path.string() << "\n";
  });

  CommonFlags train_flags;
  CLI::App* train_cmd = app.add_subcommand("train", "fit the plug-in on the pair dataset");
  add_common(train_cmd, train_flags);
  train_cmd->callback([&] {
    const auto result = psplug::cmd_train(load_config(train_flags));
    std::cout << result.report.to_text();
    std::cout << "checkpoint: " << result.checkpoint.string() << "\n";
    if (!result.report_path.empty()) {
      std::cout << "report: " << result.report_path.string() << "\n";
    }
  });

  CommonFlags generate_flags;
  CLI::App* generate_cmd =
      app.add_subcommand("generate", "decode with the personalized prefix");
  add_common(generate_cmd, generate_flags);
  generate_cmd->callback([&] {
    const auto result = psplug::cmd_generate(load_config(generate_flags));
    std::cout << "generated " << result.count << " outputs to "
              << result.outputs_path.string() << "\n";
  });

  CommonFlags evaluate_flags;
  std::string method = "psplug";
  CLI::App* evaluate_cmd = app.add_subcommand("evaluate", "score a method against the golds");
  add_common(evaluate_cmd, evaluate_flags);
  evaluate_cmd->add_option("--method", method, "psplug | zero | rag")->required();
  evaluate_cmd->callback([&] {
    const auto result = psplug::cmd_evaluate(load_config(evaluate_flags), method);
    for (const auto& [name, values] : result.report.per_example) {
      std::cout << name << " " << result.report.mean(name) << "\n";
    }
    std::cout << "metrics: " << result.report_path.string() << "\n";
  });

  CommonFlags sweep_flags;
  std::vector<double> alphas;
  CLI::App* sweep_cmd =
      app.add_subcommand("sweep-alpha", "evaluate across personalization strengths");
  add_common(sweep_cmd, sweep_flags);
  sweep_cmd->add_option("--alphas", alphas, "alpha values to sweep")->required();
  sweep_cmd->callback([&] {
    const auto result = psplug::cmd_sweep_alpha(load_config(sweep_flags), alphas);
    std::cout << "sweep table: " << result.table_path.string() << "\n";
  });

  CommonFlags judge_flags;
  CLI::App* judge_cmd =
      app.add_subcommand("judge", "score generations with the rubric judge");
  add_common(judge_cmd, judge_flags);
  judge_cmd->callback([&] {
    const psplug::RunConfig cfg = load_config(judge_flags);
    psplug::HttpChatTransport transport;  // PSPLUG_JUDGE_URL / PSPLUG_JUDGE_KEY
    const auto result = psplug::cmd_judge(cfg, transport);
    std::cout << result.report.to_text();
    std::cout << "verdicts: " << result.verdicts_path.string() << "\n";
    if (result.report.failed_count > 0) rc = 3;
  });

  CommonFlags synth_flags;
  psplug::SyntheticSpec synth_spec;
  CLI::App* synth_cmd =
      app.add_subcommand("synthetic-data", "emit the bundled seeded persona corpus");
  add_common(synth_cmd, synth_flags);
  synth_cmd->add_option("--users", synth_spec.n_users, "number of synthetic users");
  synth_cmd->add_option("--items-per-user", synth_spec.items_per_user, "examples per user");
  synth_cmd->add_option("--data-seed", synth_spec.seed, "corpus generation seed");
  synth_cmd->callback([&] {
    const auto result = psplug::cmd_synthetic_data(load_config(synth_flags), synth_spec);
    std::cout << "synthetic corpus: " << result.users << " users, " << result.examples
              << " examples in " << result.data_dir.string() << " (markers: "
              << result.marker_path.string() << ")\n";
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const psplug::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return rc;
}
