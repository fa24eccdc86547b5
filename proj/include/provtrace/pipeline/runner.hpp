#pragma once

// Disk-backed pipeline. Single-run artifacts live directly in the output
// directory; cross-validation artifacts live under <out>/eval/.
//
//   ingest  -> graphs.jsonl, split.json
//   reduce  -> reduced.jsonl
//   walk    -> walks.txt                (training graphs only)
//   embed   -> embedding.json
//   seq     -> sequences.jsonl
//   train   -> model.ckpt, loss.csv     (training graphs only)
//   fit     -> clusters.json            (fit on training, calibrated on validation)
//   score   -> scores.json              (test graphs)
//   report  -> report.json, pr_curve.csv
//
// A stage whose inputs and settings are unchanged since it last ran, and whose
// outputs are intact, is skipped.

#include <future>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "provtrace/pipeline/config.hpp"
#include "provtrace/pipeline/core.hpp"
#include "provtrace/pipeline/crossval.hpp"
#include "provtrace/pipeline/manifest.hpp"

namespace provtrace::pipeline {

struct SweepRow {
  std::size_t k = 0;
  std::vector<std::optional<double>> fold_auc;
  std::optional<double> mean_auc_pr;
};

inline nlohmann::json split_to_json(const std::vector<ProvenanceGraph>& graphs, const Split& s) {
  auto ids = [&](const Indices& idx) {
    std::vector<std::string> out;
    for (auto i : idx) out.push_back(graphs[i].id());
    return out;
  };
  return {{"train", ids(s.train)}, {"validation", ids(s.validation)}, {"test", ids(s.test)}};
}

inline Split split_from_json(const std::vector<ProvenanceGraph>& graphs, const nlohmann::json& j) {
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < graphs.size(); ++i) index[graphs[i].id()] = i;
  auto idx = [&](const char* key) {
    Indices out;
    for (const auto& id : j.at(key)) {
      auto it = index.find(id.get<std::string>());
      if (it == index.end()) throw SchemaError(0, "split names unknown graph '" + id.get<std::string>() + "'");
      out.push_back(it->second);
    }
    return out;
  };
  return {idx("train"), idx("validation"), idx("test")};
}

class Runner {
 public:
  Runner(PipelineConfig config, std::ostream& log)
      : c_(std::move(config)), log_(log), manifest_(c_.out) {
    fs::create_directories(c_.out);
    const auto snapshot = to_json(c_);
    manifest_.set_config(snapshot, sha256_hex(snapshot.dump()));
  }

  const PipelineConfig& config() const noexcept { return c_; }
  StageCounters& counters() noexcept { return counters_; }
  Manifest& manifest() noexcept { return manifest_; }
  fs::path path(const std::string& rel) const { return fs::path(c_.out) / rel; }

  void ingest() {
    nlohmann::json inputs = nlohmann::json::object();
    if (c_.format != DataFormat::synthetic) inputs["data"] = sha256_file(c_.data_path);
    const auto cfg = to_json(c_);
    stage("ingest", inputs, {{"data", cfg["data"]}, {"split", cfg["split"]}, {"seed", c_.seed}},
          {"graphs.jsonl", "split.json"}, [&] {
            const auto graphs = load_dataset(c_);
            check_unique_ids(graphs);
            ++counters_.ingest;
            write_file(path("graphs.jsonl"), emit_jsonl(graphs, {.reduction_fields = true}));
            const auto split =
                holdout_split(graphs, c_.test_fraction, c_.validation_fraction, c_.stage_seed("split"));
            write_file(path("split.json"), split_to_json(graphs, split).dump(1) + "\n");
          });
  }

  void reduce() {
    require("graphs.jsonl", "ingest");
    stage("reduce", files({"graphs.jsonl"}), {{"enabled", c_.reduce}}, {"reduced.jsonl"}, [&] {
      auto graphs = read_graphs("graphs.jsonl");
      if (c_.reduce) graphs = reduce_all(graphs);
      ++counters_.reduce;
      write_file(path("reduced.jsonl"), emit_jsonl(graphs, {.reduction_fields = true}));
    });
  }

  void walk() {
    require("reduced.jsonl", "reduce");
    require("split.json", "ingest");
    const auto cfg = to_json(c_);
    stage("walk", files({"reduced.jsonl", "split.json"}), {{"walk", cfg["walk"]}, {"seed", c_.seed}},
          {"walks.txt"}, [&] {
            const auto graphs = read_graphs("reduced.jsonl");
            const auto split = read_split(graphs);
            const auto corpus = build_corpus(graphs, split.train, c_);
            ++counters_.walk;
            std::ostringstream out;
            corpus.write(out);
            write_file(path("walks.txt"), out.str());
          });
  }

  void embed() {
    require("walks.txt", "walk");
    const auto cfg = to_json(c_);
    stage("embed", files({"walks.txt"}), {{"skipgram", cfg["skipgram"]}, {"seed", c_.seed}},
          {"embedding.json"}, [&] {
            std::istringstream in(read_file(path("walks.txt")));
            const auto corpus = embed::WalkCorpus::read(in);
            const auto table = embed::train_skipgram(corpus, c_.skipgram);
            ++counters_.embed;
            write_file(path("embedding.json"), nlohmann::json(table).dump() + "\n");
          });
  }

  void seq() {
    require("reduced.jsonl", "reduce");
    require("embedding.json", "embed");
    stage("seq", files({"reduced.jsonl", "embedding.json"}),
          {{"n_max", c_.model.n_max}, {"tokens", to_string(c_.tokens)}}, {"sequences.jsonl"}, [&] {
            const auto graphs = read_graphs("reduced.jsonl");
            const auto table = read_table();
            std::string text;
            for (const auto& g : graphs)
              text += nlohmann::json(embed::build_sequence(g, table, c_.model.n_max, c_.tokens)).dump() + "\n";
            ++counters_.seq;
            write_file(path("sequences.jsonl"), text);
          });
  }

  void train() {
    require("sequences.jsonl", "seq");
    require("split.json", "ingest");
    const auto cfg = to_json(c_);
    stage("train", files({"sequences.jsonl", "split.json"}),
          {{"model", cfg["model"]}, {"train", cfg["train"]}, {"seed", c_.seed}}, {"model.ckpt", "loss.csv"},
          [&] {
            const auto seqs = read_sequences();
            const auto split = read_split_ids();
            const auto model = train_model(pick(seqs, split.at("train")), c_);
            ++counters_.train;
            std::ostringstream ckpt, loss;
            nn::save_checkpoint(ckpt, model.config, model.params);
            nn::write_loss_csv(loss, model.loss_history);
            write_file(path("model.ckpt"), ckpt.str());
            write_file(path("loss.csv"), loss.str());
          });
  }

  void fit() {
    require("model.ckpt", "train");
    require("sequences.jsonl", "seq");
    const auto cfg = to_json(c_);
    stage("fit", files({"model.ckpt", "sequences.jsonl", "split.json"}),
          {{"detect", cfg["detect"]}, {"seed", c_.seed}}, {"clusters.json"}, [&] {
            const auto seqs = read_sequences();
            const auto split = read_split_ids();
            const auto model = read_model();
            const auto clusters =
                fit_detector(extract_features(pick(seqs, split.at("train")), model),
                             extract_features(pick(seqs, split.at("validation")), model), c_.k,
                             c_.threshold, c_.stage_seed("kmeans"));
            ++counters_.fit;
            write_file(path("clusters.json"), nlohmann::json(clusters).dump(1) + "\n");
          });
  }

  void score() {
    require("model.ckpt", "train");
    require("sequences.jsonl", "seq");
    require("clusters.json", "fit");
    stage("score", files({"model.ckpt", "clusters.json", "sequences.jsonl", "split.json"}),
          nlohmann::json::object(), {"scores.json"}, [&] {
            const auto seqs = read_sequences();
            const auto split = read_split_ids();
            const auto model = read_model();
            const auto clusters =
                nlohmann::json::parse(read_file(path("clusters.json"))).get<detect::ClusterModel>();
            const auto test = pick(seqs, split.at("test"));
            const auto scores = score_rows(extract_features(test, model), clusters);
            ++counters_.score;
            nlohmann::json graphs = nlohmann::json::array();
            for (std::size_t i = 0; i < test.size(); ++i) {
              const auto s = detect::make_scored(test[i].graph_id, scores[i], test[i].label, clusters.threshold);
              graphs.push_back({{"graph_id", s.graph_id},
                                {"score", s.score},
                                {"label", to_string(s.label)},
                                {"verdict", to_string(s.verdict)}});
            }
            write_file(path("scores.json"),
                       nlohmann::json{{"threshold", clusters.threshold}, {"graphs", graphs}}.dump(1) + "\n");
          });
  }

  void report() {
    require("scores.json", "score");
    stage("report", files({"scores.json"}), nlohmann::json::object(), {"report.json", "pr_curve.csv"}, [&] {
      const auto doc = nlohmann::json::parse(read_file(path("scores.json")));
      std::vector<detect::ScoredGraph> graphs;
      for (const auto& g : doc.at("graphs"))
        graphs.push_back({g.at("graph_id").get<std::string>(), g.at("score").get<double>(),
                          *parse_label(g.at("label").get<std::string>()), Label::benign});
      detect::ClusterModel threshold_only;
      threshold_only.threshold = doc.at("threshold").get<double>();
      const auto rep = detect::evaluate(std::move(graphs), threshold_only);
      std::ostringstream csv;
      if (rep.curve) detect::write_pr_csv(csv, *rep.curve);
      else csv << "threshold,precision,recall\n";
      write_file(path("report.json"), nlohmann::json(rep).dump(1) + "\n");
      write_file(path("pr_curve.csv"), csv.str());
      if (auto auc = rep.auc_pr()) log_ << "report: AUC-PR " << *auc << "\n";
    });
  }

  void run_all() {
    ingest();
    reduce();
    walk();
    embed();
    seq();
    train();
    fit();
    score();
    report();
  }

  /// Five-fold (config.folds) cross-validation at config.k.
  CrossValReport eval() {
    auto [graphs, plans, features] = prepare_eval();
    std::vector<FoldSummary> folds;
    for (const auto& plan : plans) {
      const auto fc = fold_config(c_, plan.fold);
      auto [clusters, scores] = score_fold(features[plan.fold], c_.k, c_.threshold, fc.stage_seed("kmeans"), counters_);
      detect::EvaluationReport rep;
      folds.push_back(summarize(graphs, plan, scores, &rep));
      const std::string dir = fold_dir(plan.fold);
      std::ostringstream csv;
      if (rep.curve) detect::write_pr_csv(csv, *rep.curve);
      write_file(path(dir + "/clusters.json"), nlohmann::json(clusters).dump(1) + "\n");
      write_file(path(dir + "/report.json"), nlohmann::json(rep).dump(1) + "\n");
      write_file(path(dir + "/pr_curve.csv"), csv.str());
      manifest_.record(dir + "/detect", stage_key("detect", files({dir + "/features.json"}), {{"k", c_.k}}),
                       {dir + "/clusters.json", dir + "/report.json", dir + "/pr_curve.csv"});
    }
    CrossValReport report{folds, mean_auc(folds)};
    std::ostringstream csv;
    csv << "fold,train,validation,test,threshold,tp,fp,tn,fn,auc_pr\n";
    csv.precision(17);
    for (const auto& f : folds) {
      csv << f.fold << ',' << f.train << ',' << f.validation << ',' << f.test << ',' << f.threshold << ','
          << f.confusion.tp << ',' << f.confusion.fp << ',' << f.confusion.tn << ',' << f.confusion.fn << ',';
      if (f.auc_pr) csv << *f.auc_pr;
      csv << '\n';
    }
    auto doc = to_json(report);
    doc["k"] = c_.k;
    write_file(path("eval/report.json"), doc.dump(1) + "\n");
    write_file(path("eval/folds.csv"), csv.str());
    manifest_.record("eval/report", stage_key("eval-report", doc, nlohmann::json::object()),
                     {"eval/report.json", "eval/folds.csv"});
    manifest_.set("eval", doc);
    manifest_.save();
    for (const auto& f : folds)
      log_ << "eval: fold " << f.fold << " AUC-PR " << (f.auc_pr ? std::to_string(*f.auc_pr) : "n/a") << "\n";
    if (report.mean_auc_pr) log_ << "eval: mean AUC-PR " << *report.mean_auc_pr << "\n";
    return report;
  }

  /// Cross-validated AUC-PR for each K in [k_min, k_max], reusing each
  /// fold's features.
  std::vector<SweepRow> sweep(std::size_t k_min, std::size_t k_max) {
    if (k_min < 2 || k_min > k_max) throw ConfigError("sweep range must satisfy 2 <= k_min <= k_max");
    auto [graphs, plans, features] = prepare_eval();
    std::vector<SweepRow> rows;
    for (std::size_t k = k_min; k <= k_max; ++k) {
      std::vector<FoldSummary> folds;
      SweepRow row{k, {}, {}};
      for (const auto& plan : plans) {
        const auto fc = fold_config(c_, plan.fold);
        auto scores = score_fold(features[plan.fold], k, c_.threshold, fc.stage_seed("kmeans"), counters_).second;
        folds.push_back(summarize(graphs, plan, scores));
        row.fold_auc.push_back(folds.back().auc_pr);
      }
      row.mean_auc_pr = mean_auc(folds);
      log_ << "sweep: K=" << k << " mean AUC-PR "
           << (row.mean_auc_pr ? std::to_string(*row.mean_auc_pr) : "n/a") << "\n";
      rows.push_back(std::move(row));
    }
    std::ostringstream csv;
    csv.precision(17);
    csv << "k";
    for (const auto& p : plans) csv << ",fold" << p.fold;
    csv << ",mean_auc_pr\n";
    nlohmann::json doc = nlohmann::json::array();
    for (const auto& r : rows) {
      csv << r.k;
      nlohmann::json aucs = nlohmann::json::array();
      for (const auto& a : r.fold_auc) {
        csv << ',';
        if (a) csv << *a;
        aucs.push_back(a ? nlohmann::json(*a) : nlohmann::json(nullptr));
      }
      csv << ',';
      if (r.mean_auc_pr) csv << *r.mean_auc_pr;
      csv << '\n';
      doc.push_back({{"k", r.k},
                     {"fold_auc_pr", aucs},
                     {"mean_auc_pr", r.mean_auc_pr ? nlohmann::json(*r.mean_auc_pr) : nlohmann::json(nullptr)}});
    }
    write_file(path("eval/sweep_k.csv"), csv.str());
    write_file(path("eval/sweep_k.json"), doc.dump(1) + "\n");
    manifest_.record("eval/sweep", stage_key("sweep", doc, nlohmann::json::object()),
                     {"eval/sweep_k.csv", "eval/sweep_k.json"});
    manifest_.set("sweep", doc);
    manifest_.save();
    return rows;
  }

 private:
  struct EvalData {
    std::vector<ProvenanceGraph> graphs;
    std::vector<FoldPlan> plans;
    std::vector<FoldFeatures> features;
  };

  static std::string fold_dir(std::size_t f) { return "eval/fold-" + std::to_string(f); }

  EvalData prepare_eval() {
    auto graphs = load_dataset(c_);
    check_unique_ids(graphs);
    ++counters_.ingest;
    if (c_.reduce) {
      graphs = reduce_all(graphs);
      ++counters_.reduce;
    }
    const std::string dataset_sum = sha256_hex(emit_jsonl(graphs, {.reduction_fields = true}));
    auto plans = make_folds(graphs, c_.folds, c_.validation_fraction, c_.stage_seed("folds"));

    nlohmann::json labels = nlohmann::json::object();
    for (const auto& g : graphs) labels[g.id()] = to_string(g.label());
    nlohmann::json folds = nlohmann::json::array();
    for (const auto& p : plans) {
      auto s = split_to_json(graphs, p.split);
      s["fold"] = p.fold;
      folds.push_back(s);
    }
    write_file(path("eval/labels.json"), labels.dump(1) + "\n");
    write_file(path("eval/folds.json"), folds.dump(1) + "\n");
    manifest_.record("eval/plan", stage_key("plan", {{"dataset", dataset_sum}}, to_json(c_)["split"]),
                     {"eval/labels.json", "eval/folds.json"});

    std::vector<FoldFeatures> features(plans.size());
    for (std::size_t start = 0; start < plans.size(); start += c_.jobs) {
      std::vector<std::future<FoldFeatures>> running;
      const std::size_t stop = std::min(plans.size(), start + c_.jobs);
      for (std::size_t f = start; f < stop; ++f)
        running.push_back(std::async(c_.jobs > 1 ? std::launch::async : std::launch::deferred,
                                     [&, f] { return fold_features(graphs, plans[f], dataset_sum); }));
      for (std::size_t f = start; f < stop; ++f) features[f] = running[f - start].get();
    }
    manifest_.save();
    return {std::move(graphs), std::move(plans), std::move(features)};
  }

  FoldFeatures fold_features(const std::vector<ProvenanceGraph>& graphs, const FoldPlan& plan,
                             const std::string& dataset_sum) {
    const auto fc = fold_config(c_, plan.fold);
    const auto cfg = to_json(fc);
    const std::string dir = fold_dir(plan.fold);
    const auto key = stage_key("fold-features",
                               {{"dataset", dataset_sum}, {"split", split_to_json(graphs, plan.split)}},
                               {{"walk", cfg["walk"]},
                                {"skipgram", cfg["skipgram"]},
                                {"model", cfg["model"]},
                                {"train", cfg["train"]},
                                {"seed", fc.seed}});
    const std::string stage_name = dir + "/features";
    if (manifest_.fresh(stage_name, key)) {
      log_ << "eval: fold " << plan.fold << " features up to date\n";
      return nlohmann::json::parse(read_file(path(dir + "/features.json"))).get<FoldFeatures>();
    }
    auto work = compute_fold(graphs, plan.split, fc, counters_);
    std::ostringstream ckpt, loss;
    nn::save_checkpoint(ckpt, work.model.config, work.model.params);
    nn::write_loss_csv(loss, work.model.loss_history);
    write_file(path(dir + "/embedding.json"), nlohmann::json(work.table).dump() + "\n");
    write_file(path(dir + "/model.ckpt"), ckpt.str());
    write_file(path(dir + "/loss.csv"), loss.str());
    write_file(path(dir + "/features.json"), nlohmann::json(work.features).dump() + "\n");
    manifest_.record(stage_name, key,
                     {dir + "/embedding.json", dir + "/model.ckpt", dir + "/loss.csv", dir + "/features.json"});
    log_ << "eval: fold " << plan.fold << " trained, final loss " << work.model.loss_history.back() << "\n";
    return std::move(work.features);
  }

  template <class Body>
  void stage(const std::string& name, const nlohmann::json& inputs, const nlohmann::json& settings,
             const std::vector<std::string>& outputs, Body body) {
    const auto key = stage_key(name, inputs, settings);
    if (manifest_.fresh(name, key)) {
      log_ << name << ": up to date\n";
      return;
    }
    body();
    manifest_.record(name, key, outputs);
    manifest_.save();
    log_ << name << ": wrote";
    for (const auto& o : outputs) log_ << ' ' << o;
    log_ << "\n";
  }

  void require(const std::string& rel, const std::string& command) const {
    if (!fs::exists(path(rel)))
      throw PrerequisiteError(rel + " not found in " + c_.out + ": run " + command + " first");
  }

  nlohmann::json files(std::initializer_list<std::string> rels) const {
    nlohmann::json out = nlohmann::json::object();
    for (const auto& rel : rels) out[rel] = fs::exists(path(rel)) ? sha256_file(path(rel)) : "";
    return out;
  }

  static void check_unique_ids(const std::vector<ProvenanceGraph>& graphs) {
    std::set<std::string> seen;
    for (const auto& g : graphs)
      if (!seen.insert(g.id()).second) throw ContractError("duplicate graph id '" + g.id() + "'");
  }

  std::vector<ProvenanceGraph> read_graphs(const std::string& rel) const {
    return parse_jsonl(read_file(path(rel)));
  }

  Split read_split(const std::vector<ProvenanceGraph>& graphs) const {
    return split_from_json(graphs, nlohmann::json::parse(read_file(path("split.json"))));
  }

  std::map<std::string, std::set<std::string>> read_split_ids() const {
    const auto j = nlohmann::json::parse(read_file(path("split.json")));
    std::map<std::string, std::set<std::string>> out;
    for (const char* key : {"train", "validation", "test"})
      for (const auto& id : j.at(key)) out[key].insert(id.get<std::string>());
    return out;
  }

  embed::EmbeddingTable read_table() const {
    return nlohmann::json::parse(read_file(path("embedding.json"))).get<embed::EmbeddingTable>();
  }

  std::vector<embed::FeatureSequence> read_sequences() const {
    std::vector<embed::FeatureSequence> out;
    std::istringstream in(read_file(path("sequences.jsonl")));
    std::string line;
    while (std::getline(in, line))
      if (!line.empty()) out.push_back(nlohmann::json::parse(line).get<embed::FeatureSequence>());
    return out;
  }

  static std::vector<embed::FeatureSequence> pick(const std::vector<embed::FeatureSequence>& seqs,
                                                  const std::set<std::string>& ids) {
    std::vector<embed::FeatureSequence> out;
    for (const auto& s : seqs)
      if (ids.count(s.graph_id)) out.push_back(s);
    return out;
  }

  TrainedModel read_model() const {
    std::istringstream in(read_file(path("model.ckpt")));
    auto [config, params] = nn::load_checkpoint<float>(in);
    return {config, std::move(params), {}};
  }

  PipelineConfig c_;
  std::ostream& log_;
  Manifest manifest_;
  StageCounters counters_;
};

}  // namespace provtrace::pipeline
