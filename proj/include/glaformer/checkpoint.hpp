#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"

#include "glaformer/hsi.hpp"
#include "glaformer/model.hpp"
#include "glaformer/training.hpp"

namespace glaformer {

struct SplitConfig {
  double train_frac = 0.03;
  double val_frac = 0.02;
};

/// Everything needed to rerun or evaluate a training run, as stored in a
/// checkpoint manifest and accepted by `--config`.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  SplitConfig split;
  SyntheticSpec synthetic;
  bool standardize = true;  // per-band z-scoring of the input pair
};

// JSON mapping. Missing keys keep their defaults; unknown keys are rejected
// with ConfigError so typos do not pass silently.
void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
void to_json(nlohmann::json& j, const SplitConfig& c);
void from_json(const nlohmann::json& j, SplitConfig& c);
void to_json(nlohmann::json& j, const SyntheticSpec& c);
void from_json(const nlohmann::json& j, SyntheticSpec& c);
void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);

RunConfig load_run_config(const std::filesystem::path& path);

/// Manifest (JSON) listing the run config and each parameter's name and
/// shape, plus a sibling `.bin` payload of little-endian float32 values
/// concatenated in manifest order.
template <typename T>
void save_checkpoint(const std::filesystem::path& manifest, const RunConfig& run,
                     const ModelParams<T>& params);

template <typename T>
struct LoadedCheckpoint {
  RunConfig run;
  ModelParams<T> params;
};

/// Throws FormatError when names, shapes or payload size disagree with the
/// model the manifest's config describes.
template <typename T>
LoadedCheckpoint<T> load_checkpoint(const std::filesystem::path& manifest);

std::filesystem::path payload_path_for(const std::filesystem::path& manifest);

}  // namespace glaformer
