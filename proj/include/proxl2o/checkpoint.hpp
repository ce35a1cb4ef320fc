#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>

#include "json.hpp"
#include "proxl2o/learned.hpp"
#include "proxl2o/problemset.hpp"

// Checkpoint = directory with model.json (architecture, channel modes,
// activations, seed, layout, training metadata) and weights.bin (little-endian
// float64 blocks in LearnedOptimizerParams block order).

namespace proxl2o {

inline constexpr int kCheckpointVersion = 1;

inline nlohmann::ordered_json checkpoint_manifest(const LearnedOptimizerParams& params,
                                                  const nlohmann::ordered_json& training_meta = {}) {
  nlohmann::ordered_json j;
  j["format"] = "proxl2o-checkpoint";
  j["version"] = kCheckpointVersion;
  j["architecture"] = {{"kind", std::string(to_string(params.arch.kind))},
                       {"input_size", params.arch.input_size},
                       {"hidden", params.arch.hidden},
                       {"layers", params.arch.layers},
                       {"p_scale", std::string(to_string(params.arch.p_scale))},
                       {"preprocess", std::string(to_string(params.arch.preprocess))}};
  j["preset"] = params.ablation.name;
  nlohmann::ordered_json channels, activations;
  for (std::size_t c = 0; c < kChannelCount; ++c) {
    channels[std::string(kChannelNames[c])] = params.ablation.modes[c].describe();
    activations[std::string(kChannelNames[c])] = std::string(kChannelActivations[c]);
  }
  j["channels"] = channels;
  j["activations"] = params.arch.kind == ModelKind::generic ? nlohmann::ordered_json{{"d", "identity"}} : activations;
  j["head_outputs"] = params.head_outputs();
  j["seed"] = params.seed;
  j["parameter_count"] = params.parameter_count();
  nlohmann::ordered_json layout = nlohmann::ordered_json::array();
  auto names = params.block_names();
  auto shapes = params.block_shapes();
  for (std::size_t i = 0; i < names.size(); ++i) {
    layout.push_back({{"name", names[i]}, {"rows", shapes[i].first}, {"cols", shapes[i].second}});
  }
  j["layout"] = layout;
  j["training"] = training_meta.is_null() ? nlohmann::ordered_json::object() : training_meta;
  return j;
}

inline void save_checkpoint(const LearnedOptimizerParams& params, const std::filesystem::path& dir,
                            const nlohmann::ordered_json& training_meta = {}) {
  params.check_layout();
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "model.json");
    if (!out) throw FormatError((dir / "model.json").string(), "cannot write");
    out << checkpoint_manifest(params, training_meta).dump(2) << "\n";
  }
  std::ofstream w(dir / "weights.bin", std::ios::binary);
  if (!w) throw FormatError((dir / "weights.bin").string(), "cannot write");
  for (const auto& b : params.blocks) io::write_f64_le(w, b.span());
  if (!w) throw FormatError((dir / "weights.bin").string(), "write failed");
}

struct LoadedCheckpoint {
  LearnedOptimizerParams params;
  nlohmann::json training;
};

/// Loads and validates a checkpoint. With `expected` set, the stored channel
/// layout must match it exactly.
inline LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir,
                                        const std::optional<AblationConfig>& expected = std::nullopt) {
  const std::string where = (dir / "model.json").string();
  const auto j = io::read_json_file(dir / "model.json");
  if (io::require_field<std::string>(j, "format", where) != "proxl2o-checkpoint") throw FormatError(where, "not a checkpoint");
  if (io::require_field<int>(j, "version", where) != kCheckpointVersion) throw FormatError(where, "unsupported version");
  LoadedCheckpoint out;
  auto& p = out.params;
  const auto& a = j.at("architecture");
  const std::string kind = io::require_field<std::string>(a, "kind", where);
  if (kind != "structured" && kind != "generic") throw FormatError(where, "unknown model kind '" + kind + "'");
  p.arch.kind = kind == "structured" ? ModelKind::structured : ModelKind::generic;
  p.arch.input_size = io::require_field<std::size_t>(a, "input_size", where);
  p.arch.hidden = io::require_field<std::size_t>(a, "hidden", where);
  p.arch.layers = io::require_field<std::size_t>(a, "layers", where);
  const std::string ps = io::require_field<std::string>(a, "p_scale", where);
  if (ps != "unit" && ps != "inverse_lipschitz") throw FormatError(where, "unknown p_scale '" + ps + "'");
  p.arch.p_scale = ps == "unit" ? PScale::unit : PScale::inverse_lipschitz;
  const std::string pre = io::require_field<std::string>(a, "preprocess", where);
  if (pre != "none" && pre != "signed_log") throw FormatError(where, "unknown preprocess '" + pre + "'");
  p.arch.preprocess = pre == "none" ? InputPreprocess::none : InputPreprocess::signed_log;
  if (p.arch.layers == 0 || p.arch.hidden == 0 || p.arch.input_size != 2) throw FormatError(where, "invalid architecture");

  p.ablation.name = io::require_field<std::string>(j, "preset", where);
  const auto& ch = j.at("channels");
  for (std::size_t c = 0; c < kChannelCount; ++c) {
    p.ablation.modes[c] = ChannelMode::parse(io::require_field<std::string>(ch, std::string(kChannelNames[c]).c_str(), where));
  }
  p.seed = io::require_field<std::uint64_t>(j, "seed", where);
  if (expected && expected->modes != p.ablation.modes) {
    throw FormatError(where, "checkpoint channel layout (" + p.ablation.name + ") does not match expected preset " + expected->name);
  }
  if (io::require_field<std::size_t>(j, "head_outputs", where) != p.head_outputs()) {
    throw FormatError(where, "head_outputs disagrees with channel modes");
  }
  if (io::require_field<std::size_t>(j, "parameter_count", where) != p.parameter_count()) {
    throw FormatError(where, "parameter_count disagrees with architecture");
  }
  const auto shapes = p.block_shapes();
  const auto& layout = j.at("layout");
  if (!layout.is_array() || layout.size() != shapes.size()) throw FormatError(where, "layout does not match architecture");
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    if (layout[i].at("rows").get<std::size_t>() != shapes[i].first || layout[i].at("cols").get<std::size_t>() != shapes[i].second) {
      throw FormatError(where, "layout block " + std::to_string(i) + " shape mismatch");
    }
  }
  if (j.contains("training")) out.training = j["training"];

  const std::string wpath = (dir / "weights.bin").string();
  std::ifstream w(dir / "weights.bin", std::ios::binary);
  if (!w) throw FormatError(wpath, "cannot open");
  w.seekg(0, std::ios::end);
  const auto bytes = static_cast<std::size_t>(w.tellg());
  w.seekg(0);
  if (bytes != p.parameter_count() * sizeof(double)) {
    throw FormatError(wpath, "holds " + std::to_string(bytes) + " bytes, layout needs " +
                                 std::to_string(p.parameter_count() * sizeof(double)));
  }
  for (auto [r, c] : shapes) {
    DenseMatrix m(r, c);
    if (!io::read_f64_le(w, m.span())) throw FormatError(wpath, "truncated");
    p.blocks.push_back(std::move(m));
  }
  return out;
}

}  // namespace proxl2o
