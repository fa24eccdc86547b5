#pragma once

// One-class audit of an output directory: no graph labeled attack may appear
// in a training or validation set, neither in the recorded splits nor in the
// feature artifacts the detector was fit and calibrated on.

#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "provtrace/pipeline/crossval.hpp"
#include "provtrace/pipeline/manifest.hpp"

namespace provtrace::pipeline {

struct AuditReport {
  std::size_t folds = 0;
  std::size_t artifacts = 0;
  std::size_t graphs_checked = 0;
  std::vector<std::string> violations;

  bool passed() const noexcept { return violations.empty() && artifacts > 0; }
};

namespace detail {

inline void audit_ids(const std::string& where, const nlohmann::json& ids,
                      const std::map<std::string, std::string>& labels, AuditReport& r) {
  for (const auto& id : ids) {
    const auto name = id.get<std::string>();
    ++r.graphs_checked;
    const auto it = labels.find(name);
    if (it == labels.end()) r.violations.push_back(where + ": unknown graph '" + name + "'");
    else if (it->second != "benign")
      r.violations.push_back(where + ": " + it->second + " graph '" + name + "'");
  }
}

}  // namespace detail

/// Audits <out>/eval (cross-validation) and <out>/split.json (single run),
/// whichever exist.
inline AuditReport audit_one_class(const fs::path& out) {
  AuditReport r;
  const auto eval = out / "eval";
  if (fs::exists(eval / "labels.json")) {
    const auto labels = nlohmann::json::parse(read_file(eval / "labels.json"))
                            .get<std::map<std::string, std::string>>();
    std::set<std::string> attacks;
    for (const auto& [id, label] : labels)
      if (label == "attack") attacks.insert(id);

    const auto folds = nlohmann::json::parse(read_file(eval / "folds.json"));
    ++r.artifacts;
    for (const auto& fold : folds) {
      const auto f = fold.at("fold").get<std::size_t>();
      const std::string tag = "fold " + std::to_string(f);
      ++r.folds;
      detail::audit_ids(tag + " train split", fold.at("train"), labels, r);
      detail::audit_ids(tag + " validation split", fold.at("validation"), labels, r);
      std::set<std::string> test;
      for (const auto& id : fold.at("test")) test.insert(id.get<std::string>());
      for (const auto& a : attacks)
        if (!test.count(a)) r.violations.push_back(tag + ": attack graph '" + a + "' missing from test");

      const auto features_path = eval / ("fold-" + std::to_string(f)) / "features.json";
      if (!fs::exists(features_path)) {
        r.violations.push_back(tag + ": features.json missing");
        continue;
      }
      const auto features = nlohmann::json::parse(read_file(features_path)).get<FoldFeatures>();
      ++r.artifacts;
      for (const auto* name : {"train", "validation"}) {
        const auto& section = std::string(name) == "train" ? features.train : features.validation;
        detail::audit_ids(tag + " " + name + " features", section.ids, labels, r);
        for (std::size_t i = 0; i < section.labels.size(); ++i)
          if (section.labels[i] != Label::benign)
            r.violations.push_back(tag + " " + name + " features: '" + section.ids[i] + "' carries label " +
                                   std::string(to_string(section.labels[i])));
        const auto& split_ids = fold.at(name);
        if (nlohmann::json(section.ids) != split_ids)
          r.violations.push_back(tag + " " + name + " features do not match the recorded split");
      }
    }
  }

  if (fs::exists(out / "split.json") && fs::exists(out / "graphs.jsonl")) {
    std::map<std::string, std::string> labels;
    for (const auto& g : parse_jsonl(read_file(out / "graphs.jsonl"))) labels[g.id()] = std::string(to_string(g.label()));
    const auto split = nlohmann::json::parse(read_file(out / "split.json"));
    ++r.artifacts;
    detail::audit_ids("train split", split.at("train"), labels, r);
    detail::audit_ids("validation split", split.at("validation"), labels, r);
  }
  return r;
}

inline nlohmann::json to_json(const AuditReport& r) {
  return {{"passed", r.passed()},
          {"folds", r.folds},
          {"artifacts", r.artifacts},
          {"graphs_checked", r.graphs_checked},
          {"violations", r.violations}};
}

}  // namespace provtrace::pipeline
