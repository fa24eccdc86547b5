#pragma once

// Model checkpoint layout (all integers little-endian):
//
//   8 bytes   magic "PTRCKPT\0"
//   u32       format_version
//   u32       header length L
//   L bytes   JSON header: {"format_version", "config": {...ModelConfig},
//             "tensors": [{"name", "rows", "cols"}, ...]}
//   ...       every tensor in header order, row-major IEEE-754 float32

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <utility>

#include <nlohmann/json.hpp>

#include "provtrace/error.hpp"
#include "provtrace/nn/transformer.hpp"

namespace provtrace::nn {

inline constexpr std::uint32_t checkpoint_format_version = 1;
inline constexpr std::array<char, 8> checkpoint_magic{'P', 'T', 'R', 'C', 'K', 'P', 'T', '\0'};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"d_model", c.d_model}, {"layers", c.layers},
                     {"heads", c.heads},     {"d_ff", c.d_ff},
                     {"dropout", c.dropout}, {"n_max", c.n_max},
                     {"input_dim", c.input_dim}, {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  j.at("d_model").get_to(c.d_model);
  j.at("layers").get_to(c.layers);
  j.at("heads").get_to(c.heads);
  j.at("d_ff").get_to(c.d_ff);
  j.at("dropout").get_to(c.dropout);
  j.at("n_max").get_to(c.n_max);
  j.at("input_dim").get_to(c.input_dim);
  j.at("seed").get_to(c.seed);
}

namespace detail {

inline void put_u32(std::ostream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                     static_cast<char>((v >> 16) & 0xff), static_cast<char>(v >> 24)};
  out.write(b, 4);
}

inline std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw SchemaError(0, "truncated checkpoint");
  return std::uint32_t{b[0]} | std::uint32_t{b[1]} << 8 | std::uint32_t{b[2]} << 16 |
         std::uint32_t{b[3]} << 24;
}

}  // namespace detail

template <class S>
void save_checkpoint(std::ostream& out, const ModelConfig& config,
                     const ModelParams<S>& params) {
  nlohmann::json header;
  header["format_version"] = checkpoint_format_version;
  header["config"] = config;
  header["tensors"] = nlohmann::json::array();
  const auto tensors = params.tensors();
  for (const auto& t : tensors)
    header["tensors"].push_back({{"name", t.name}, {"rows", t.rows}, {"cols", t.cols}});
  const std::string text = header.dump();

  out.write(checkpoint_magic.data(), checkpoint_magic.size());
  detail::put_u32(out, checkpoint_format_version);
  detail::put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& t : tensors)
    for (Eigen::Index k = 0; k < t.size(); ++k)
      detail::put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(t.data[k])));
  if (!out) throw Error("failed to write checkpoint");
}

template <class S>
std::pair<ModelConfig, ModelParams<S>> load_checkpoint(std::istream& in) {
  std::array<char, 8> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != checkpoint_magic)
    throw SchemaError(0, "not a model checkpoint");
  if (detail::get_u32(in) != checkpoint_format_version)
    throw SchemaError(0, "unsupported checkpoint version");
  std::string text(detail::get_u32(in), '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(text.size())))
    throw SchemaError(0, "truncated checkpoint header");
  const auto header = nlohmann::json::parse(text);
  ModelConfig config = header.at("config").get<ModelConfig>();
  auto params = ModelParams<S>::zeros(config);
  auto tensors = params.tensors();
  const auto& manifest = header.at("tensors");
  if (manifest.size() != tensors.size())
    throw SchemaError(0, "checkpoint tensor count does not match its config");
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto& entry = manifest[i];
    if (entry.at("name").get<std::string>() != tensors[i].name ||
        entry.at("rows").get<Eigen::Index>() != tensors[i].rows ||
        entry.at("cols").get<Eigen::Index>() != tensors[i].cols)
      throw SchemaError(0, "checkpoint tensor '" + tensors[i].name + "' mismatch");
    for (Eigen::Index k = 0; k < tensors[i].size(); ++k)
      tensors[i].data[k] = static_cast<S>(std::bit_cast<float>(detail::get_u32(in)));
  }
  return {config, std::move(params)};
}

/// Rounds every parameter to float32, i.e. what a checkpoint round trip keeps.
template <class S>
void round_to_float(ModelParams<S>& params) {
  for (auto& t : params.tensors())
    for (Eigen::Index k = 0; k < t.size(); ++k)
      t.data[k] = static_cast<S>(static_cast<float>(t.data[k]));
}

}  // namespace provtrace::nn
