#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "glaformer/model.hpp"

namespace glaformer {

struct TrainConfig {
  double lr = 0.0006;
  std::size_t batch = 128;
  std::size_t epochs = 100;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 0;
  std::size_t threads = 1;

  void validate() const;
};

/// First/second moment estimates aligned with a parameter list.
template <typename T>
struct AdamState {
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
  std::uint64_t t = 0;

  static AdamState for_params(std::span<const NamedParam<T>> params);
};

/// One bias-corrected Adam update over `params` in list order. Throws
/// ContractError naming the first parameter without a gradient.
template <typename T>
void adam_step(std::span<const NamedParam<T>> params, AdamState<T>& state, const TrainConfig& cfg);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0;  // mean per-sample cross-entropy over the epoch
  double val_oa = 0;
  std::optional<double> val_kappa;  // empty when undefined
};

template <typename T>
struct TrainResult {
  ModelParams<T> best;
  std::size_t best_epoch = 0;  // 0 when no epoch ran
  std::vector<EpochRecord> history;
};

/// Inputs to `train`. Cubes are used as given (standardize beforehand).
struct TrainingData {
  const HsiCube& t1;
  const HsiCube& t2;
  const LabelMap& labels;
  const DatasetSplit& split;
};

/// Seeded mini-batch Adam on mean cross-entropy. Keeps the parameters of
/// the epoch with the best validation OA (ties keep the earlier epoch).
/// Throws TrainingError with epoch/batch diagnostics on a non-finite loss.
/// With cfg.threads > 1 each batch is split across per-worker parameter
/// copies whose gradients are summed in worker order.
template <typename T>
TrainResult<T> train(const ModelConfig& model_cfg, const TrainingData& data,
                     const TrainConfig& cfg);

/// Confusion counts of the model's argmax decisions on `pixels`.
template <typename T>
ConfusionCounts evaluate(const ModelParams<T>& params, const ModelConfig& cfg, const HsiCube& t1,
                         const HsiCube& t2, const LabelMap& labels,
                         std::span<const std::size_t> pixels, std::size_t threads = 1);

/// "epoch,train_loss,val_oa,val_kappa" header plus one line per epoch.
std::string history_csv(std::span<const EpochRecord> history);
void write_history_csv(std::span<const EpochRecord> history, const std::filesystem::path& path);

// --- gradient checking (64-bit only) ------------------------------------

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  /// Relative error is |a - n| / max(|a|, |n|, floor).
  double floor = 1e-6;
  /// Elements checked per tensor; 0 checks every element, otherwise a
  /// seeded random subsample of this size.
  std::size_t max_per_param = 0;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  bool passed = true;
  double max_rel_error = 0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0;
  double worst_numeric = 0;
  std::size_t checked = 0;
  std::vector<std::string> offending;  // parameters with any element over tolerance

  std::string summary() const;
};

/// Compares the analytic gradient of `loss` w.r.t. each listed parameter to
/// central differences. `loss` must rebuild the graph on every call.
GradCheckReport grad_check(const std::function<Var<double>()>& loss,
                           std::span<const NamedParam<double>> params,
                           const GradCheckOptions& opts = {});

/// Cross-entropy of forward_pair on one sample, all model parameters.
GradCheckReport grad_check_model(const ModelConfig& cfg, const ModelParams<double>& params,
                                 const PatchPair& sample, const GradCheckOptions& opts = {});

}  // namespace glaformer
