#include <gtest/gtest.h>

#include <set>
#include <sstream>

#include "provtrace/pipeline/audit.hpp"
#include "provtrace/pipeline/runner.hpp"
#include "support/small_run.hpp"

using namespace provtrace;
using namespace provtrace::pipeline;
namespace fs = std::filesystem;

namespace {

std::vector<ProvenanceGraph> labeled(std::size_t benign, std::size_t attack) {
  std::vector<ProvenanceGraph> graphs;
  for (std::size_t i = 0; i < benign + attack; ++i) {
    ProvenanceGraph g("g" + std::to_string(i), i < benign ? Label::benign : Label::attack);
    g.add_node("a", "P");
    graphs.push_back(std::move(g));
  }
  return graphs;
}

std::set<std::size_t> as_set(const Indices& v) { return {v.begin(), v.end()}; }

std::size_t intersection(const Indices& a, const Indices& b) {
  const auto sa = as_set(a);
  return static_cast<std::size_t>(std::count_if(b.begin(), b.end(), [&](auto i) { return sa.count(i) > 0; }));
}

template <class F>
std::string error_message(F&& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Config, Defaults) {
  const auto c = parse_config("");
  EXPECT_EQ(c.format, DataFormat::synthetic);
  EXPECT_EQ(c.folds, 5u);
  EXPECT_TRUE(c.reduce);
  EXPECT_EQ(c.threshold.kind, detect::ThresholdPolicy::Kind::max);
  EXPECT_EQ(c.model.input_dim, c.skipgram.dim);
}

TEST(Config, SectionsAndProfiles) {
  const auto c = parse_config(
      "[data]\nformat = streamspot\npath = all.tsv\nattack_graphs = 300-399, 412\n"
      "[model]\nprofile = bench\nheads = 2\n[detect]\nthreshold = percentile:95\n[run]\nseed = 9\n");
  EXPECT_EQ(c.format, DataFormat::streamspot);
  ASSERT_EQ(c.attack_graphs.size(), 2u);
  EXPECT_TRUE(c.attack_graphs[0].contains(350));
  EXPECT_FALSE(c.attack_graphs[0].contains(400));
  EXPECT_TRUE(c.attack_graphs[1].contains(412));
  EXPECT_EQ(c.model.layers, 1u);
  EXPECT_EQ(c.model.heads, 2u);
  EXPECT_EQ(c.threshold.percentile, 95.0);
  EXPECT_EQ(c.walk.seed, derive_seed(9, "walk"));
  EXPECT_NE(c.walk.seed, c.train.seed);
}

TEST(Config, RejectsBadInput) {
  EXPECT_THROW(parse_config("[data]\ncolour = blue\n"), ConfigError);
  EXPECT_THROW(parse_config("[nonsense]\nx = 1\n"), ConfigError);
  EXPECT_THROW(parse_config("[split]\nfolds = many\n"), ConfigError);
  EXPECT_THROW(parse_config("[split]\nfolds = -3\n"), ConfigError);
  EXPECT_THROW(parse_config("[split]\nfolds = 1\n"), ConfigError);
  EXPECT_THROW(parse_config("[data]\nformat = jsonl\n"), ConfigError);
  EXPECT_THROW(parse_config("[model]\nprofile = huge\n"), ConfigError);
  EXPECT_THROW(parse_config("[walk]\nstrategy = biased\n"), ConfigError);
  EXPECT_THROW(parse_config("[detect]\nsweep_min = 9\nsweep_max = 4\n"), ConfigError);
  EXPECT_THROW(parse_config("[data]\nattack_graphs = 9-3\n"), ConfigError);
  EXPECT_THROW(parse_config("[data\n"), ConfigError);
}

TEST(Config, RelativeDataPathFollowsConfigFile) {
  const auto dir = oracles::scratch_dir("config-path");
  write_file(dir / "sub" / "c.ini", "[data]\nformat = jsonl\npath = ../graphs.jsonl\n");
  EXPECT_EQ(load_config(dir / "sub" / "c.ini").data_path, (dir / "graphs.jsonl").string());
  EXPECT_THROW(load_config(dir / "missing.ini"), ConfigError);
}

TEST(Config, SnapshotIgnoresOutputDirAndJobs) {
  auto a = parse_config("[run]\nout = x\njobs = 1\n");
  auto b = parse_config("[run]\nout = y\njobs = 4\n");
  EXPECT_EQ(to_json(a), to_json(b));
  EXPECT_NE(to_json(a), to_json(parse_config("[run]\nseed = 1\n")));
}

TEST(Folds, TenBenignGiveTwoPerFold) {
  const auto graphs = labeled(10, 3);
  const auto plans = make_folds(graphs, 5, 0.1, 42);
  ASSERT_EQ(plans.size(), 5u);
  std::multiset<std::size_t> tested;
  for (const auto& p : plans) {
    for (auto i : p.split.test)
      if (graphs[i].label() == Label::benign) tested.insert(i);
    EXPECT_EQ(std::count_if(p.split.test.begin(), p.split.test.end(),
                            [&](auto i) { return graphs[i].label() == Label::benign; }),
              2);
    for (std::size_t a = 10; a < 13; ++a) EXPECT_TRUE(as_set(p.split.test).count(a)) << "fold " << p.fold;
    EXPECT_EQ(intersection(p.split.train, p.split.test), 0u);
    EXPECT_EQ(intersection(p.split.validation, p.split.test), 0u);
    EXPECT_EQ(intersection(p.split.train, p.split.validation), 0u);
    EXPECT_EQ(p.split.validation.size(), 1u);
    EXPECT_EQ(p.split.train.size(), 7u);
  }
  // Every benign graph is tested exactly once.
  for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(tested.count(i), 1u);
}

TEST(Folds, TooFewBenignGraphs) {
  EXPECT_THROW(make_folds(labeled(4, 2), 5, 0.1, 1), ContractError);
  EXPECT_NO_THROW(make_folds(labeled(10, 0), 5, 0.1, 1));
}

TEST(Folds, DeterministicPerSeed) {
  const auto graphs = labeled(20, 2);
  const auto a = make_folds(graphs, 5, 0.1, 7), b = make_folds(graphs, 5, 0.1, 7);
  for (std::size_t f = 0; f < 5; ++f) EXPECT_EQ(a[f].split.test, b[f].split.test);
}

TEST(Holdout, AttacksOnlyInTest) {
  const auto graphs = labeled(20, 4);
  const auto s = holdout_split(graphs, 0.25, 0.1, 5);
  EXPECT_EQ(s.test.size(), 5u + 4u);
  EXPECT_EQ(s.validation.size(), 2u);
  EXPECT_EQ(s.train.size(), 13u);
  for (auto i : s.train) EXPECT_EQ(graphs[i].label(), Label::benign);
  for (auto i : s.validation) EXPECT_EQ(graphs[i].label(), Label::benign);
}

TEST(CrossValidation, OracleScorerGivesPerfectArea) {
  const auto graphs = labeled(10, 3);
  const auto plans = make_folds(graphs, 5, 0.1, 3);
  std::size_t calls = 0;
  const auto report = cross_validate(graphs, plans, [&](const FoldPlan& p) {
    ++calls;
    FoldScores s{{}, 0.5};
    for (auto i : p.split.test) s.scores.push_back(graphs[i].label() == Label::attack ? 1.0 : 0.0);
    return s;
  });
  EXPECT_EQ(calls, 5u);
  ASSERT_TRUE(report.mean_auc_pr);
  EXPECT_EQ(*report.mean_auc_pr, 1.0);
  for (const auto& f : report.folds) {
    EXPECT_EQ(f.confusion.tp, 3u);
    EXPECT_EQ(f.confusion.fp, 0u);
  }
}

TEST(CrossValidation, TrainingRefusesAttackGraphs) {
  const auto graphs = labeled(6, 1);
  const Split bad{{0, 1, 6}, {2}, {3}};
  const auto c = parse_config("");
  StageCounters counters;
  EXPECT_THROW(compute_fold(graphs, bad, c, counters), ContractError);
}

TEST(Runner, ScoreWithoutModelNamesTheMissingStage) {
  const auto dir = oracles::scratch_dir("prereq");
  std::ostringstream log;
  Runner r(oracles::small_config(oracles::write_small_corpus(dir), dir / "out"), log);
  EXPECT_THROW(r.score(), PrerequisiteError);
  EXPECT_NE(error_message([&] { r.score(); }).find("run train first"), std::string::npos);
  EXPECT_NE(error_message([&] { r.walk(); }).find("run reduce first"), std::string::npos);
}

TEST(Runner, FullRunThenEverythingCached) {
  const auto dir = oracles::scratch_dir("run");
  const auto data = oracles::write_small_corpus(dir);
  std::ostringstream log;
  {
    Runner r(oracles::small_config(data, dir / "out"), log);
    r.run_all();
    for (const char* f : {"graphs.jsonl", "split.json", "reduced.jsonl", "walks.txt", "embedding.json",
                          "sequences.jsonl", "model.ckpt", "loss.csv", "clusters.json", "scores.json",
                          "report.json", "pr_curve.csv", "manifest.json"})
      EXPECT_TRUE(fs::exists(dir / "out" / f)) << f;
    EXPECT_EQ(r.counters().train, 1u);
  }
  const auto reduced = sha256_file(dir / "out" / "reduced.jsonl");
  Runner again(oracles::small_config(data, dir / "out"), log);
  again.run_all();
  for (const auto& [stage, n] : again.counters().snapshot()) EXPECT_EQ(n, 0u) << stage;
  EXPECT_EQ(sha256_file(dir / "out" / "reduced.jsonl"), reduced);

  // A damaged artifact forces its stage, and only the stages after it, to rerun.
  write_file(dir / "out" / "clusters.json", "{}");
  Runner repair(oracles::small_config(data, dir / "out"), log);
  repair.run_all();
  EXPECT_EQ(repair.counters().fit, 1u);
  EXPECT_EQ(repair.counters().train, 0u);
}

TEST(Runner, ReductionIsIdempotent) {
  const auto dir = oracles::scratch_dir("idempotent");
  const auto graphs = parse_jsonl(read_file(oracles::write_small_corpus(dir, 8, 2)));
  const auto once = reduce_all(graphs);
  const auto twice = reduce_all(once);
  EXPECT_EQ(sha256_hex(emit_jsonl(once, {.reduction_fields = true})),
            sha256_hex(emit_jsonl(twice, {.reduction_fields = true})));
}

TEST(Runner, ManifestIndependentOfOutputDir) {
  const auto dir = oracles::scratch_dir("manifest");
  const auto data = oracles::write_small_corpus(dir, 12, 2);
  std::ostringstream log;
  for (const char* out : {"a", "b"}) {
    auto c = oracles::small_config(data, dir / out);
    Runner(c, log).run_all();
  }
  EXPECT_EQ(read_file(dir / "a" / "manifest.json"), read_file(dir / "b" / "manifest.json"));
  const auto m = nlohmann::json::parse(read_file(dir / "a" / "manifest.json"));
  EXPECT_FALSE(m.at("config").at("run").contains("out"));
  EXPECT_EQ(m.at("version"), std::string(tool_version));
  EXPECT_EQ(m.at("stages").at("train").at("artifacts").at("model.ckpt"),
            sha256_file(dir / "a" / "model.ckpt"));
}

TEST(Runner, EvalSweepAndAudit) {
  const auto dir = oracles::scratch_dir("eval");
  const auto data = oracles::write_small_corpus(dir);
  std::ostringstream log;
  const auto c = oracles::small_config(data, dir / "out");
  {
    Runner r(c, log);
    const auto report = r.eval();
    ASSERT_EQ(report.folds.size(), 5u);
    for (const auto& f : report.folds) {
      ASSERT_TRUE(f.auc_pr);
      EXPECT_GE(*f.auc_pr, 0.0);
      EXPECT_LE(*f.auc_pr, 1.0);
      EXPECT_EQ(f.confusion.tp + f.confusion.fn, 5u);  // every attack in every fold
    }
    EXPECT_EQ(r.counters().train, 5u);
    EXPECT_EQ(r.counters().embed, 5u);
  }
  {
    Runner r(c, log);
    const auto rows = r.sweep(2, 2);
    ASSERT_EQ(rows.size(), 1u);
    EXPECT_EQ(rows[0].k, 2u);
    EXPECT_EQ(rows[0].fold_auc.size(), 5u);
    EXPECT_EQ(r.counters().train, 0u);
    EXPECT_EQ(r.counters().embed, 0u);
  }
  {
    Runner r(c, log);
    const auto rows = r.sweep(2, 11);
    ASSERT_EQ(rows.size(), 10u);
    for (const auto& row : rows) {
      ASSERT_TRUE(row.mean_auc_pr);
      EXPECT_GE(*row.mean_auc_pr, 0.0);
      EXPECT_LE(*row.mean_auc_pr, 1.0);
    }
    EXPECT_EQ(r.counters().train, 0u);
    EXPECT_EQ(r.counters().fit, 50u);
    EXPECT_THROW(r.sweep(1, 3), ConfigError);
  }
  EXPECT_TRUE(fs::exists(dir / "out" / "eval" / "sweep_k.csv"));

  const auto audit = audit_one_class(dir / "out");
  EXPECT_TRUE(audit.passed()) << nlohmann::json(to_json(audit)).dump();
  EXPECT_EQ(audit.folds, 5u);

  // Smuggle an attack graph into a recorded training split.
  auto folds = nlohmann::json::parse(read_file(dir / "out" / "eval" / "folds.json"));
  folds[0]["train"].push_back(folds[0]["test"].back());
  write_file(dir / "out" / "eval" / "folds.json", folds.dump());
  EXPECT_FALSE(audit_one_class(dir / "out").passed());
}

TEST(Runner, ParallelFoldsMatchSerial) {
  const auto dir = oracles::scratch_dir("jobs");
  const auto data = oracles::write_small_corpus(dir, 15, 3);
  std::ostringstream log;
  auto serial = oracles::small_config(data, dir / "serial");
  auto parallel = oracles::small_config(data, dir / "parallel");
  parallel.jobs = 3;
  const auto a = Runner(serial, log).eval();
  const auto b = Runner(parallel, log).eval();
  EXPECT_EQ(a.mean_auc_pr, b.mean_auc_pr);
  EXPECT_EQ(read_file(dir / "serial" / "manifest.json"), read_file(dir / "parallel" / "manifest.json"));
}

TEST(Audit, EmptyDirectoryHasNothingToAudit) {
  EXPECT_FALSE(audit_one_class(oracles::scratch_dir("audit-empty")).passed());
}
