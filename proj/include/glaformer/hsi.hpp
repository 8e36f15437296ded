#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "glaformer/tensor.hpp"

namespace glaformer {

/// height×width×bands hyperspectral image stored band-sequential:
/// values[(band * height + row) * width + col].
struct HsiCube {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t bands = 0;
  std::vector<float> values;
  std::string id;

  HsiCube() = default;
  HsiCube(std::size_t h, std::size_t w, std::size_t b, std::string cube_id = {})
      : height(h), width(w), bands(b), values(h * w * b, 0.0f), id(std::move(cube_id)) {}

  float& at(std::size_t band, std::size_t row, std::size_t col) {
    return values[(band * height + row) * width + col];
  }
  float at(std::size_t band, std::size_t row, std::size_t col) const {
    return values[(band * height + row) * width + col];
  }
  std::size_t pixels() const { return height * width; }
};

/// Per-pixel binary truth: 0 = unchanged, 1 = changed. Row-major.
struct LabelMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> labels;

  LabelMap() = default;
  LabelMap(std::size_t h, std::size_t w) : height(h), width(w), labels(h * w, 0) {}

  std::uint8_t at(std::size_t row, std::size_t col) const { return labels[row * width + col]; }
  std::size_t pixels() const { return height * width; }
};

struct PixelCoord {
  std::size_t row = 0;
  std::size_t col = 0;
  friend bool operator==(const PixelCoord&, const PixelCoord&) = default;
};

/// Co-located p×p windows from both acquisitions, each stored channel-major
/// as a {bands, p, p} tensor.
struct PatchPair {
  PixelCoord center;
  Tensor<float> a;
  Tensor<float> b;
  std::uint8_t label = 0;
};

/// Disjoint pixel index lists (row * width + col), each sorted ascending.
struct DatasetSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
  std::uint64_t seed = 0;
  bool stratified = true;
  std::vector<std::string> warnings;
};

struct SyntheticSpec {
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t bands = 12;
  std::size_t classes = 4;        // land-cover signatures in the first scene
  std::size_t change_kinds = 3;   // signatures substituted inside change regions
  double changed_fraction = 0.2;  // target share of changed pixels
  double noise_std = 0.02;
  std::size_t patch = 9;          // scenes smaller than one patch are rejected
};

struct SyntheticScene {
  HsiCube t1;
  HsiCube t2;
  LabelMap labels;
};

// --- container I/O --------------------------------------------------------
// A cube is a JSON header (`path`) plus a sibling `.raw` payload of
// little-endian float32 values in band-sequential order.

HsiCube load_cube(const std::filesystem::path& header_path);
void save_cube(const HsiCube& cube, const std::filesystem::path& header_path);
std::filesystem::path raw_path_for(const std::filesystem::path& header_path);

/// Binary PGM: 0 = unchanged, maxval = changed; any other value is rejected.
LabelMap load_labels(const std::filesystem::path& path);
void save_labels(const LabelMap& labels, const std::filesystem::path& path);

// --- patches, scenes, splits ----------------------------------------------

/// Windows centred on `center`, out-of-bounds coordinates clamped to the
/// nearest edge pixel. `label` is left 0; callers set it from a LabelMap.
PatchPair extract_patch_pair(const HsiCube& t1, const HsiCube& t2, PixelCoord center,
                             std::size_t patch);

SyntheticScene make_synthetic_scene(const SyntheticSpec& spec, std::uint64_t seed);

/// Stratified by class: each class contributes its population share of the
/// train and val sets (largest-remainder rounding, so totals are exactly
/// round(frac * N)). Falls back to unstratified sampling, with a warning,
/// when a present class is too small to supply one training sample.
DatasetSplit split_dataset(const LabelMap& labels, double train_frac, double val_frac,
                           std::uint64_t seed);

/// Per-band z-scoring with statistics pooled over both cubes. Bands with
/// zero variance are only centred.
[[nodiscard]] std::pair<HsiCube, HsiCube> standardize_pair(const HsiCube& t1, const HsiCube& t2);

/// Throws PairingError unless the cubes (and optional labels) share
/// dimensions.
void check_paired(const HsiCube& t1, const HsiCube& t2);
void check_paired(const HsiCube& cube, const LabelMap& labels);

}  // namespace glaformer
