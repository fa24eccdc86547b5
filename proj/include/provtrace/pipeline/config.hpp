#pragma once

// Pipeline configuration, read from an INI file:
//
//   [data]      format = synthetic | jsonl | streamspot
//               path = <input file>            (jsonl, streamspot)
//               attack_graphs = 300-399, 412   (streamspot graph ids to label attack)
//   [split]     test_fraction, validation_fraction, folds
//   [reduce]    enabled = true | false
//   [walk]      length, walks_per_node, strategy = uniform, tokens = type | contextual
//   [skipgram]  dim, window, negatives, epochs, lr, min_count
//   [model]     profile = desk | bench | paper, then optional d_model, layers,
//               heads, d_ff, dropout, n_max overriding the profile
//   [train]     epochs, batch_size, lr, beta1, beta2, eps, grad_clip
//   [detect]    k, threshold = max | percentile:<p>, sweep_min, sweep_max
//   [run]       seed, out, jobs
//
// Every key is optional; unknown sections or keys are rejected. All random
// streams derive from run.seed through derive_seed(seed, "<stage>").

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <boost/algorithm/string/trim.hpp>
#include <boost/lexical_cast.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <nlohmann/json.hpp>

#include "provtrace/detect/threshold.hpp"
#include "provtrace/embed/skipgram.hpp"
#include "provtrace/embed/walks.hpp"
#include "provtrace/error.hpp"
#include "provtrace/nn/checkpoint.hpp"
#include "provtrace/nn/trainer.hpp"
#include "provtrace/random.hpp"

namespace provtrace::pipeline {

enum class DataFormat { synthetic, jsonl, streamspot };

inline std::string to_string(DataFormat f) {
  switch (f) {
    case DataFormat::synthetic: return "synthetic";
    case DataFormat::jsonl: return "jsonl";
    case DataFormat::streamspot: return "streamspot";
  }
  return "?";
}

inline std::string to_string(embed::TokenMode m) {
  return m == embed::TokenMode::type ? "type" : "contextual";
}

struct IdRange {
  long long first = 0, last = 0;
  bool contains(long long v) const noexcept { return v >= first && v <= last; }
  bool operator==(const IdRange&) const = default;
};

struct PipelineConfig {
  DataFormat format = DataFormat::synthetic;
  std::string data_path;
  std::vector<IdRange> attack_graphs;

  double test_fraction = 0.25;
  double validation_fraction = 0.1;
  std::size_t folds = 5;

  bool reduce = true;

  embed::WalkConfig walk;
  embed::TokenMode tokens = embed::TokenMode::type;
  embed::SkipGramConfig skipgram;

  std::string model_profile = "desk";
  nn::ModelConfig model = nn::ModelConfig::desk();
  nn::TrainConfig train;

  std::size_t k = 8;
  detect::ThresholdPolicy threshold;
  std::size_t sweep_min = 2, sweep_max = 12;

  std::uint64_t seed = 0;
  std::string out = "out";
  std::size_t jobs = 1;

  /// Seed for a named stage.
  std::uint64_t stage_seed(std::string_view stage) const { return derive_seed(seed, stage); }

  /// Pushes run.seed into every sub-config and ties the model input width to
  /// the embedding width.
  void finalize() {
    walk.seed = stage_seed("walk");
    skipgram.seed = stage_seed("skipgram");
    model.seed = stage_seed("model");
    train.seed = stage_seed("train");
    model.input_dim = skipgram.dim;
  }

  void validate() const {
    auto fraction = [](double f) { return f > 0 && f < 1; };
    if (!fraction(test_fraction)) throw ConfigError("split.test_fraction must lie in (0, 1)");
    if (!fraction(validation_fraction))
      throw ConfigError("split.validation_fraction must lie in (0, 1)");
    if (folds < 2) throw ConfigError("split.folds must be >= 2");
    if (format != DataFormat::synthetic && data_path.empty())
      throw ConfigError("data.path is required for format " + to_string(format));
    walk.validate();
    skipgram.validate();
    model.validate();
    train.validate();
    if (k < 2) throw ConfigError("detect.k must be >= 2");
    if (sweep_min < 2 || sweep_min > sweep_max)
      throw ConfigError("detect.sweep_min must be >= 2 and <= sweep_max");
    if (jobs < 1) throw ConfigError("run.jobs must be >= 1");
  }
};

namespace detail {

template <class T>
T parse_value(const std::string& key, const std::string& text) {
  try {
    if constexpr (std::is_same_v<T, bool>) {
      if (text == "true" || text == "yes" || text == "1") return true;
      if (text == "false" || text == "no" || text == "0") return false;
      throw boost::bad_lexical_cast();
    } else if constexpr (std::is_unsigned_v<T>) {
      if (!text.empty() && text.front() == '-') throw boost::bad_lexical_cast();
      return boost::lexical_cast<T>(text);
    } else {
      return boost::lexical_cast<T>(text);
    }
  } catch (const boost::bad_lexical_cast&) {
    throw ConfigError("invalid value '" + text + "' for " + key);
  }
}

inline std::vector<IdRange> parse_ranges(const std::string& key, const std::string& text) {
  std::vector<IdRange> ranges;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    boost::algorithm::trim(item);
    if (item.empty()) continue;
    const auto dash = item.find('-', 1);
    IdRange r;
    r.first = parse_value<long long>(key, item.substr(0, dash));
    r.last = dash == std::string::npos ? r.first : parse_value<long long>(key, item.substr(dash + 1));
    if (r.last < r.first) throw ConfigError("empty range '" + item + "' in " + key);
    ranges.push_back(r);
  }
  return ranges;
}

}  // namespace detail

/// Parses INI text. `source` names the file in error messages.
inline PipelineConfig parse_config(const std::string& text, const std::string& source = "config") {
  boost::property_tree::ptree tree;
  try {
    std::istringstream in(text);
    boost::property_tree::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(source + ": line " + std::to_string(e.line()) + ": " + e.message());
  }

  std::map<std::string, std::string> values;
  for (const auto& [section, keys] : tree) {
    if (keys.empty() && !keys.data().empty())
      throw ConfigError(source + ": key '" + section + "' outside a section");
    for (const auto& [key, value] : keys) values[section + "." + key] = value.data();
  }

  PipelineConfig c;
  auto take = [&](const std::string& key) -> std::optional<std::string> {
    auto it = values.find(key);
    if (it == values.end()) return std::nullopt;
    std::string v = it->second;
    values.erase(it);
    return v;
  };
  auto set = [&]<class T>(const std::string& key, T& field) {
    if (auto v = take(key)) field = detail::parse_value<T>(key, *v);
  };

  if (auto v = take("data.format")) {
    if (*v == "synthetic") c.format = DataFormat::synthetic;
    else if (*v == "jsonl") c.format = DataFormat::jsonl;
    else if (*v == "streamspot") c.format = DataFormat::streamspot;
    else throw ConfigError("data.format must be synthetic, jsonl or streamspot");
  }
  if (auto v = take("data.path")) c.data_path = *v;
  if (auto v = take("data.attack_graphs")) c.attack_graphs = detail::parse_ranges("data.attack_graphs", *v);

  set("split.test_fraction", c.test_fraction);
  set("split.validation_fraction", c.validation_fraction);
  set("split.folds", c.folds);
  set("reduce.enabled", c.reduce);

  set("walk.length", c.walk.length);
  set("walk.walks_per_node", c.walk.walks_per_node);
  if (auto v = take("walk.strategy"); v && *v != "uniform")
    throw ConfigError("walk.strategy must be uniform");
  if (auto v = take("walk.tokens")) {
    if (*v == "type") c.tokens = embed::TokenMode::type;
    else if (*v == "contextual") c.tokens = embed::TokenMode::contextual;
    else throw ConfigError("walk.tokens must be type or contextual");
  }

  set("skipgram.dim", c.skipgram.dim);
  set("skipgram.window", c.skipgram.window);
  set("skipgram.negatives", c.skipgram.negatives);
  set("skipgram.epochs", c.skipgram.epochs);
  set("skipgram.lr", c.skipgram.lr);
  set("skipgram.min_count", c.skipgram.min_count);

  if (auto v = take("model.profile")) {
    if (*v == "desk") c.model = nn::ModelConfig::desk();
    else if (*v == "bench") c.model = nn::ModelConfig::bench();
    else if (*v == "paper") c.model = nn::ModelConfig::paper();
    else throw ConfigError("model.profile must be desk, bench or paper");
    c.model_profile = *v;
  }
  set("model.d_model", c.model.d_model);
  set("model.layers", c.model.layers);
  set("model.heads", c.model.heads);
  set("model.d_ff", c.model.d_ff);
  set("model.dropout", c.model.dropout);
  set("model.n_max", c.model.n_max);

  set("train.epochs", c.train.epochs);
  set("train.batch_size", c.train.batch_size);
  set("train.lr", c.train.lr);
  set("train.beta1", c.train.beta1);
  set("train.beta2", c.train.beta2);
  set("train.eps", c.train.eps);
  set("train.grad_clip", c.train.grad_clip);

  set("detect.k", c.k);
  if (auto v = take("detect.threshold")) c.threshold = detect::ThresholdPolicy::parse(*v);
  set("detect.sweep_min", c.sweep_min);
  set("detect.sweep_max", c.sweep_max);

  set("run.seed", c.seed);
  if (auto v = take("run.out")) c.out = *v;
  set("run.jobs", c.jobs);

  if (!values.empty()) throw ConfigError(source + ": unknown key '" + values.begin()->first + "'");
  c.finalize();
  c.validate();
  return c;
}

inline PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream text;
  text << in.rdbuf();
  auto c = parse_config(text.str(), path.string());
  if (c.format != DataFormat::synthetic && c.data_path.size() &&
      std::filesystem::path(c.data_path).is_relative())
    c.data_path = (path.parent_path() / c.data_path).lexically_normal().string();
  return c;
}

/// Snapshot of every setting that influences results (the output directory
/// and job count do not).
inline nlohmann::json to_json(const PipelineConfig& c) {
  nlohmann::json ranges = nlohmann::json::array();
  for (const auto& r : c.attack_graphs) ranges.push_back({r.first, r.last});
  return {
      {"data", {{"format", to_string(c.format)}, {"path", c.data_path}, {"attack_graphs", ranges}}},
      {"split",
       {{"test_fraction", c.test_fraction},
        {"validation_fraction", c.validation_fraction},
        {"folds", c.folds}}},
      {"reduce", {{"enabled", c.reduce}}},
      {"walk",
       {{"length", c.walk.length},
        {"walks_per_node", c.walk.walks_per_node},
        {"strategy", "uniform"},
        {"tokens", to_string(c.tokens)}}},
      {"skipgram",
       {{"dim", c.skipgram.dim},
        {"window", c.skipgram.window},
        {"negatives", c.skipgram.negatives},
        {"epochs", c.skipgram.epochs},
        {"lr", c.skipgram.lr},
        {"min_count", c.skipgram.min_count}}},
      {"model", {{"profile", c.model_profile}, {"config", c.model}}},
      {"train",
       {{"epochs", c.train.epochs},
        {"batch_size", c.train.batch_size},
        {"lr", c.train.lr},
        {"beta1", c.train.beta1},
        {"beta2", c.train.beta2},
        {"eps", c.train.eps},
        {"grad_clip", c.train.grad_clip}}},
      {"detect",
       {{"k", c.k},
        {"threshold", c.threshold.to_string()},
        {"sweep_min", c.sweep_min},
        {"sweep_max", c.sweep_max}}},
      {"run", {{"seed", c.seed}}},
  };
}

}  // namespace provtrace::pipeline
