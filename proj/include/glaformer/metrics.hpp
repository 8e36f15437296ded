#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "glaformer/hsi.hpp"

namespace glaformer {

/// Binary per-pixel decisions (1 = changed), row-major.
struct ChangeMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> decisions;

  ChangeMap() = default;
  ChangeMap(std::size_t h, std::size_t w) : height(h), width(w), decisions(h * w, 0) {}
  friend bool operator==(const ChangeMap&, const ChangeMap&) = default;
};

/// 2×2 agreement tallies; the positive class is "changed".
struct ConfusionCounts {
  std::uint64_t tp = 0;
  std::uint64_t tn = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;

  std::uint64_t total() const { return tp + tn + fp + fn; }
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

/// Counts over the pixels listed in `mask` (row-major indices).
ConfusionCounts confusion(const ChangeMap& pred, const LabelMap& truth,
                          std::span<const std::size_t> mask);
/// Counts over every pixel.
ConfusionCounts confusion(const ChangeMap& pred, const LabelMap& truth);

/// (tp + tn) / total. Throws ContractError on an empty table.
double overall_accuracy(const ConfusionCounts& c);

/// Cohen's kappa, (p_o - p_e) / (1 - p_e) with p_e the chance agreement
/// implied by the marginals. Throws UndefinedKappaError when p_e == 1.
double kappa(const ConfusionCounts& c);

/// {"oa":…,"kappa":…,"tp":…,"tn":…,"fp":…,"fn":…}; kappa is null when
/// undefined.
std::string metrics_json(const ConfusionCounts& c);

/// Changed pixels as 255, unchanged as 0, in a P5 PGM.
void render_change_map(const ChangeMap& map, const std::filesystem::path& path);
ChangeMap load_change_map(const std::filesystem::path& path);

}  // namespace glaformer
