// provtrace: command-line driver for the detection pipeline.
//
//   provtrace <command> --config <path> [--seed N] [--out DIR]
//
// Exit status: 0 success, 1 other failure, 2 configuration or usage error,
// 3 missing prerequisite artifact.

#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "provtrace/ingest.hpp"
#include "provtrace/pipeline/audit.hpp"
#include "provtrace/pipeline/config.hpp"
#include "provtrace/pipeline/runner.hpp"
#include "provtrace/synth.hpp"

namespace pt = provtrace;
namespace pl = provtrace::pipeline;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;

  pl::PipelineConfig load() const {
    auto c = config.empty() ? pl::PipelineConfig{} : pl::load_config(config);
    if (seed) c.seed = *seed;
    if (out) c.out = *out;
    c.finalize();
    c.validate();
    return c;
  }
};

void add_common(CLI::App* cmd, Common& common, bool config_required = true) {
  auto* opt = cmd->add_option("--config", common.config, "pipeline config (INI)");
  if (config_required) opt->required();
  cmd->add_option("--seed", common.seed, "override run.seed");
  cmd->add_option("--out", common.out, "override run.out");
}

std::pair<std::size_t, std::size_t> parse_k_range(const std::string& text) {
  const auto colon = text.find(':');
  try {
    if (colon == std::string::npos) {
      const auto k = std::stoul(text);
      return {k, k};
    }
    return {std::stoul(text.substr(0, colon)), std::stoul(text.substr(colon + 1))};
  } catch (const std::logic_error&) {
    throw pt::ConfigError("--sweep-k expects K or KMIN:KMAX, got '" + text + "'");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Provenance-graph intrusion detection pipeline"};
  app.set_version_flag("--version", std::string(pl::tool_version));
  app.require_subcommand(1);
  Common common;

  struct StageCmd {
    const char* name;
    const char* help;
    void (pl::Runner::*fn)();
  };
  const StageCmd stages[] = {
      {"ingest", "load the dataset and assign the train/validation/test split", &pl::Runner::ingest},
      {"reduce", "causality-preserving reduction", &pl::Runner::reduce},
      {"walk", "random-walk corpus over training graphs", &pl::Runner::walk},
      {"embed", "train skip-gram node embeddings", &pl::Runner::embed},
      {"seq", "build per-graph feature sequences", &pl::Runner::seq},
      {"train", "train the transformer autoencoder", &pl::Runner::train},
      {"fit", "cluster training features and calibrate the threshold", &pl::Runner::fit},
      {"score", "score test graphs", &pl::Runner::score},
      {"report", "precision/recall report", &pl::Runner::report},
      {"run", "every stage from ingest to report", &pl::Runner::run_all},
  };
  std::vector<std::pair<CLI::App*, void (pl::Runner::*)()>> stage_cmds;
  for (const auto& s : stages) {
    auto* cmd = app.add_subcommand(s.name, s.help);
    add_common(cmd, common);
    stage_cmds.emplace_back(cmd, s.fn);
  }

  auto* eval = app.add_subcommand("eval", "five-fold cross-validation");
  add_common(eval, common);
  std::optional<std::string> sweep_k;
  eval->add_option("--sweep-k", sweep_k, "sweep K over KMIN:KMAX instead of using detect.k");

  auto* audit = app.add_subcommand("audit", "check that no attack graph reached training or validation");
  add_common(audit, common);

  auto* synth = app.add_subcommand("synth", "write a synthetic dataset as JSONL");
  add_common(synth, common, false);
  std::string scenario;
  std::size_t count = 0;
  synth->add_option("--scenario", scenario, "scenario spec (JSON); default: the built-in benchmark");
  synth->add_option("--count", count, "graphs to generate from --scenario");

  auto* stats = app.add_subcommand("stats", "per-graph statistics as JSON lines");
  add_common(stats, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    for (auto& [cmd, fn] : stage_cmds)
      if (cmd->parsed()) {
        pl::Runner runner(common.load(), std::cerr);
        (runner.*fn)();
        return 0;
      }

    if (eval->parsed()) {
      pl::Runner runner(common.load(), std::cerr);
      if (sweep_k) {
        const auto [lo, hi] = parse_k_range(*sweep_k);
        for (const auto& row : runner.sweep(lo, hi)) {
          std::cout << row.k << ',';
          if (row.mean_auc_pr) std::cout << *row.mean_auc_pr;
          std::cout << '\n';
        }
      } else {
        const auto report = runner.eval();
        std::cout << pl::to_json(report).dump(2) << '\n';
      }
      return 0;
    }

    if (audit->parsed()) {
      const auto c = common.load();
      const auto report = pl::audit_one_class(c.out);
      std::cout << pl::to_json(report).dump(2) << '\n';
      if (report.artifacts == 0)
        throw pt::PrerequisiteError("nothing to audit in " + c.out + ": run eval or ingest first");
      return report.passed() ? 0 : 1;
    }

    if (synth->parsed()) {
      const auto c = common.load();
      std::vector<pt::ProvenanceGraph> graphs;
      if (scenario.empty()) {
        graphs = pt::synth::default_benchmark(c.stage_seed("synth"));
      } else {
        auto spec = nlohmann::json::parse(pl::read_file(scenario)).get<pt::synth::ScenarioSpec>();
        if (common.seed) spec.seed = *common.seed;
        graphs = pt::synth::generate(spec, count);
      }
      const auto path = pl::fs::path(c.out) / "synthetic.jsonl";
      pl::write_file(path, pt::emit_jsonl(graphs));
      std::cerr << "synth: wrote " << graphs.size() << " graphs to " << path.string() << "\n";
      return 0;
    }

    if (stats->parsed()) {
      for (const auto& g : pl::load_dataset(common.load())) {
        auto j = nlohmann::json(pt::graph_stats(g));
        j["graph_id"] = g.id();
        std::cout << j.dump() << '\n';
      }
      return 0;
    }
  } catch (const pt::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const pt::PrerequisiteError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: malformed JSON: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
