#include "glaformer/hsi.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <array>
#include <cstring>
#include <numeric>
#include <random>

#include "json.hpp"

#include "glaformer/errors.hpp"
#include "glaformer/pgm.hpp"

namespace glaformer {

namespace {

using json = nlohmann::json;

std::uint32_t to_little_endian(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    v = ((v & 0xFF) << 24) | ((v & 0xFF00) << 8) | ((v >> 8) & 0xFF00) | (v >> 24);
  }
  return v;
}

std::size_t header_dim(const json& header, const char* key, const std::filesystem::path& path) {
  if (!header.contains(key) || !header[key].is_number_unsigned() || header[key].get<std::size_t>() == 0) {
    throw FormatError("cube header " + path.string() + ": '" + key +
                      "' must be a positive integer");
  }
  return header[key].get<std::size_t>();
}

void expect_string(const json& header, const char* key, const char* expected,
                   const std::filesystem::path& path) {
  if (!header.contains(key) || !header[key].is_string() || header[key].get<std::string>() != expected) {
    throw FormatError("cube header " + path.string() + ": '" + key + "' must be \"" + expected +
                      "\"");
  }
}

// Smooth random reflectance curve in [0.05, 0.95].
std::vector<double> random_signature(std::size_t bands, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double base = 0.2 + 0.4 * unit(rng);
  std::vector<double> sig(bands, base);
  for (int bump = 0; bump < 3; ++bump) {
    const double amp = 0.6 * unit(rng) - 0.3;
    const double mu = unit(rng);
    const double sigma = 0.08 + 0.25 * unit(rng);
    for (std::size_t b = 0; b < bands; ++b) {
      const double x = bands > 1 ? double(b) / double(bands - 1) : 0.0;
      sig[b] += amp * std::exp(-(x - mu) * (x - mu) / (2 * sigma * sigma));
    }
  }
  for (auto& v : sig) v = std::clamp(v, 0.05, 0.95);
  return sig;
}

double mean_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += std::abs(a[i] - b[i]);
  return acc / double(a.size());
}

// Signatures pairwise separated by a mean absolute difference of at least
// 0.08 where achievable.
std::vector<std::vector<double>> distinct_signatures(std::size_t count, std::size_t bands,
                                                     std::mt19937_64& rng) {
  std::vector<std::vector<double>> out;
  while (out.size() < count) {
    std::vector<double> cand;
    for (int attempt = 0; attempt < 200; ++attempt) {
      cand = random_signature(bands, rng);
      bool ok = true;
      for (const auto& s : out) ok = ok && mean_abs_diff(s, cand) >= 0.08;
      if (ok) break;
    }
    out.push_back(std::move(cand));
  }
  return out;
}

// Counts per class (0/1) of the given pixel indices.
std::array<std::vector<std::size_t>, 2> by_class(const LabelMap& labels) {
  std::array<std::vector<std::size_t>, 2> out;
  for (std::size_t i = 0; i < labels.labels.size(); ++i) out[labels.labels[i]].push_back(i);
  return out;
}

// Splits `total` across classes proportionally to `counts` so that each
// class receives floor or ceil of its exact share and the parts sum to total.
std::array<std::size_t, 2> largest_remainder(std::size_t total, const std::array<std::size_t, 2>& counts) {
  const double n = double(counts[0] + counts[1]);
  std::array<std::size_t, 2> share{};
  std::array<double, 2> rem{};
  std::size_t assigned = 0;
  for (int c = 0; c < 2; ++c) {
    const double exact = double(total) * double(counts[c]) / n;
    share[c] = static_cast<std::size_t>(std::floor(exact));
    rem[c] = exact - double(share[c]);
    assigned += share[c];
  }
  while (assigned < total) {
    const int c = rem[1] > rem[0] ? 1 : 0;
    ++share[c];
    rem[c] = -1.0;
    ++assigned;
  }
  return share;
}

}  // namespace

std::filesystem::path raw_path_for(const std::filesystem::path& header_path) {
  auto raw = header_path;
  raw.replace_extension(".raw");
  return raw;
}

void check_paired(const HsiCube& t1, const HsiCube& t2) {
  if (t1.height != t2.height || t1.width != t2.width || t1.bands != t2.bands) {
    throw PairingError("cube dimensions differ: " + std::to_string(t1.height) + "x" +
                       std::to_string(t1.width) + "x" + std::to_string(t1.bands) + " vs " +
                       std::to_string(t2.height) + "x" + std::to_string(t2.width) + "x" +
                       std::to_string(t2.bands));
  }
}

void check_paired(const HsiCube& cube, const LabelMap& labels) {
  if (cube.height != labels.height || cube.width != labels.width) {
    throw PairingError("label map " + std::to_string(labels.height) + "x" +
                       std::to_string(labels.width) + " does not match cube " +
                       std::to_string(cube.height) + "x" + std::to_string(cube.width));
  }
}

HsiCube load_cube(const std::filesystem::path& header_path) {
  std::ifstream hin(header_path);
  if (!hin) throw IoError("cannot open " + header_path.string());
  json header;
  try {
    hin >> header;
  } catch (const json::exception& e) {
    throw FormatError("cube header " + header_path.string() + " is not valid JSON: " + e.what());
  }
  if (!header.is_object()) throw FormatError("cube header " + header_path.string() + " is not an object");
  HsiCube cube(header_dim(header, "height", header_path), header_dim(header, "width", header_path),
               header_dim(header, "bands", header_path), header_path.stem().string());
  expect_string(header, "dtype", "f32", header_path);
  expect_string(header, "layout", "band-sequential", header_path);
  expect_string(header, "byte_order", "little-endian", header_path);

  const auto raw = raw_path_for(header_path);
  std::ifstream rin(raw, std::ios::binary);
  if (!rin) throw IoError("cannot open " + raw.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(rin)), std::istreambuf_iterator<char>());
  const std::size_t expected = cube.values.size() * sizeof(float);
  if (bytes.size() != expected) {
    throw FormatError("cube payload " + raw.string() + " holds " + std::to_string(bytes.size()) +
                      " bytes (" + std::to_string(bytes.size() / sizeof(float)) +
                      " scalars); header declares " + std::to_string(cube.height) + "x" +
                      std::to_string(cube.width) + "x" + std::to_string(cube.bands) +
                      ", expected " + std::to_string(expected) + " bytes (" +
                      std::to_string(cube.values.size()) + " scalars)");
  }
  for (std::size_t i = 0; i < cube.values.size(); ++i) {
    std::uint32_t word;
    std::memcpy(&word, bytes.data() + i * 4, 4);
    const float v = std::bit_cast<float>(to_little_endian(word));
    if (!std::isfinite(v)) {
      throw DataError("cube payload " + raw.string() + " has a non-finite value at scalar " +
                      std::to_string(i));
    }
    cube.values[i] = v;
  }
  return cube;
}

void save_cube(const HsiCube& cube, const std::filesystem::path& header_path) {
  if (cube.values.size() != cube.height * cube.width * cube.bands) {
    throw DimensionError("cube value count does not match its dimensions");
  }
  for (std::size_t i = 0; i < cube.values.size(); ++i) {
    if (!std::isfinite(cube.values[i])) {
      throw DataError("refusing to save a non-finite value at scalar " + std::to_string(i));
    }
  }
  json header = {{"height", cube.height},       {"width", cube.width},
                 {"bands", cube.bands},         {"dtype", "f32"},
                 {"layout", "band-sequential"}, {"byte_order", "little-endian"}};
  {
    std::ofstream hout(header_path, std::ios::trunc);
    if (!hout) throw IoError("cannot write " + header_path.string());
    hout << header.dump() << '\n';
  }
  const auto raw = raw_path_for(header_path);
  std::vector<char> bytes(cube.values.size() * 4);
  for (std::size_t i = 0; i < cube.values.size(); ++i) {
    const std::uint32_t word = to_little_endian(std::bit_cast<std::uint32_t>(cube.values[i]));
    std::memcpy(bytes.data() + i * 4, &word, 4);
  }
  std::ofstream rout(raw, std::ios::binary | std::ios::trunc);
  if (!rout) throw IoError("cannot write " + raw.string());
  rout.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!rout) throw IoError("write failed for " + raw.string());
}

LabelMap load_labels(const std::filesystem::path& path) {
  const GreyImage img = read_pgm(path);
  LabelMap out(img.height, img.width);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    const unsigned v = img.pixels[i];
    if (v == 0) {
      out.labels[i] = 0;
    } else if (v == img.maxval) {
      out.labels[i] = 1;
    } else {
      throw DataError("label map " + path.string() + ": pixel " + std::to_string(i) +
                      " has value " + std::to_string(v) + ", expected 0 or " +
                      std::to_string(img.maxval));
    }
  }
  return out;
}

void save_labels(const LabelMap& labels, const std::filesystem::path& path) {
  GreyImage img;
  img.width = labels.width;
  img.height = labels.height;
  img.maxval = 255;
  img.pixels.resize(labels.labels.size());
  for (std::size_t i = 0; i < labels.labels.size(); ++i) img.pixels[i] = labels.labels[i] ? 255 : 0;
  write_pgm(path, img);
}

PatchPair extract_patch_pair(const HsiCube& t1, const HsiCube& t2, PixelCoord center,
                             std::size_t patch) {
  check_paired(t1, t2);
  if (patch == 0 || patch % 2 == 0) {
    throw ConfigError("patch size must be odd, got " + std::to_string(patch));
  }
  if (center.row >= t1.height || center.col >= t1.width) {
    throw ConfigError("patch centre (" + std::to_string(center.row) + "," +
                      std::to_string(center.col) + ") lies outside the cube");
  }
  const long half = static_cast<long>(patch / 2);
  const long H = static_cast<long>(t1.height), W = static_cast<long>(t1.width);
  PatchPair pp;
  pp.center = center;
  pp.a = Tensor<float>({t1.bands, patch, patch});
  pp.b = Tensor<float>({t1.bands, patch, patch});
  for (std::size_t i = 0; i < patch; ++i) {
    const long r = std::clamp(static_cast<long>(center.row) + static_cast<long>(i) - half, 0L, H - 1);
    for (std::size_t j = 0; j < patch; ++j) {
      const long c = std::clamp(static_cast<long>(center.col) + static_cast<long>(j) - half, 0L, W - 1);
      for (std::size_t band = 0; band < t1.bands; ++band) {
        const std::size_t dst = (band * patch + i) * patch + j;
        pp.a[dst] = t1.at(band, static_cast<std::size_t>(r), static_cast<std::size_t>(c));
        pp.b[dst] = t2.at(band, static_cast<std::size_t>(r), static_cast<std::size_t>(c));
      }
    }
  }
  return pp;
}

SyntheticScene make_synthetic_scene(const SyntheticSpec& spec, std::uint64_t seed) {
  if (spec.bands == 0 || spec.classes == 0 || spec.change_kinds == 0) {
    throw ConfigError("synthetic scene needs at least one band, class and change kind");
  }
  if (spec.height < spec.patch || spec.width < spec.patch || spec.height < 2 || spec.width < 2) {
    throw ConfigError("synthetic scene " + std::to_string(spec.height) + "x" +
                      std::to_string(spec.width) + " is smaller than the " +
                      std::to_string(spec.patch) + "-pixel patch");
  }
  if (!(spec.changed_fraction > 0.0 && spec.changed_fraction < 1.0)) {
    throw ConfigError("changed_fraction must lie in (0, 1)");
  }
  if (!(spec.noise_std >= 0.0) || !std::isfinite(spec.noise_std)) {
    throw ConfigError("noise_std must be finite and non-negative");
  }

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const std::size_t H = spec.height, W = spec.width, N = H * W;

  const auto sigs = distinct_signatures(spec.classes + spec.change_kinds, spec.bands, rng);

  // Land cover: Voronoi cells around random sites, cycled over the classes.
  const std::size_t sites = spec.classes * 3;
  std::vector<std::pair<double, double>> site_pos(sites);
  for (auto& s : site_pos) s = {unit(rng) * double(H), unit(rng) * double(W)};
  std::vector<std::size_t> cover(N);
  for (std::size_t r = 0; r < H; ++r) {
    for (std::size_t c = 0; c < W; ++c) {
      std::size_t best = 0;
      double best_d = 1e300;
      for (std::size_t s = 0; s < sites; ++s) {
        const double dr = double(r) - site_pos[s].first, dc = double(c) - site_pos[s].second;
        const double dist = dr * dr + dc * dc;
        if (dist < best_d) {
          best_d = dist;
          best = s;
        }
      }
      cover[r * W + c] = best % spec.classes;
    }
  }

  // Change regions: random rectangles until the target share is reached; the
  // last one is filled row by row only up to the target.
  const std::size_t target = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(spec.changed_fraction * double(N))));
  const std::size_t min_h = std::max<std::size_t>(2, H / 6), max_h = std::max(min_h, H / 3);
  const std::size_t min_w = std::max<std::size_t>(2, W / 6), max_w = std::max(min_w, W / 3);
  std::uniform_int_distribution<std::size_t> rect_h(min_h, max_h), rect_w(min_w, max_w);
  std::uniform_int_distribution<std::size_t> kind_dist(0, spec.change_kinds - 1);
  std::vector<int> change_kind(N, -1);
  std::size_t changed = 0;
  while (changed < target) {
    const std::size_t rh = std::min(rect_h(rng), H), rw = std::min(rect_w(rng), W);
    const std::size_t r0 = std::uniform_int_distribution<std::size_t>(0, H - rh)(rng);
    const std::size_t c0 = std::uniform_int_distribution<std::size_t>(0, W - rw)(rng);
    const int kind = static_cast<int>(kind_dist(rng));
    for (std::size_t r = r0; r < r0 + rh; ++r) {
      for (std::size_t c = c0; c < c0 + rw; ++c) {
        if (change_kind[r * W + c] < 0 && changed < target) {
          change_kind[r * W + c] = kind;
          ++changed;
        }
      }
    }
  }

  SyntheticScene scene{HsiCube(H, W, spec.bands, "synthetic_t1"),
                       HsiCube(H, W, spec.bands, "synthetic_t2"), LabelMap(H, W)};
  std::normal_distribution<double> noise(0.0, spec.noise_std > 0 ? spec.noise_std : 1.0);
  auto draw_noise = [&]() { return spec.noise_std > 0 ? noise(rng) : 0.0; };
  for (std::size_t b = 0; b < spec.bands; ++b) {
    for (std::size_t p = 0; p < N; ++p) {
      scene.t1.values[b * N + p] = static_cast<float>(sigs[cover[p]][b] + draw_noise());
    }
  }
  for (std::size_t b = 0; b < spec.bands; ++b) {
    for (std::size_t p = 0; p < N; ++p) {
      const auto& sig = change_kind[p] >= 0
                            ? sigs[spec.classes + static_cast<std::size_t>(change_kind[p])]
                            : sigs[cover[p]];
      scene.t2.values[b * N + p] = static_cast<float>(sig[b] + draw_noise());
    }
  }
  for (std::size_t p = 0; p < N; ++p) scene.labels.labels[p] = change_kind[p] >= 0 ? 1 : 0;
  return scene;
}

DatasetSplit split_dataset(const LabelMap& labels, double train_frac, double val_frac,
                           std::uint64_t seed) {
  if (!(train_frac > 0.0) || !(val_frac >= 0.0) || !(train_frac + val_frac < 1.0)) {
    throw ConfigError("split fractions must satisfy train > 0, val >= 0, train + val < 1 (got " +
                      std::to_string(train_frac) + ", " + std::to_string(val_frac) + ")");
  }
  const std::size_t N = labels.labels.size();
  if (N == 0) throw ConfigError("cannot split an empty label map");
  const std::size_t n_train = static_cast<std::size_t>(std::llround(train_frac * double(N)));
  const std::size_t n_val = static_cast<std::size_t>(std::llround(val_frac * double(N)));
  if (n_train == 0) throw ConfigError("train fraction selects no pixels");

  DatasetSplit split;
  split.seed = seed;
  std::mt19937_64 rng(seed);

  auto classes = by_class(labels);
  const std::array<std::size_t, 2> counts{classes[0].size(), classes[1].size()};
  for (int c = 0; c < 2; ++c) {
    if (counts[c] > 0 && double(counts[c]) * train_frac < 1.0) split.stratified = false;
  }

  if (split.stratified) {
    const auto train_share = largest_remainder(n_train, counts);
    const auto val_share = largest_remainder(n_val, counts);
    for (int c = 0; c < 2; ++c) {
      auto& idx = classes[c];
      std::shuffle(idx.begin(), idx.end(), rng);
      const std::size_t tr = std::min(train_share[c], idx.size());
      const std::size_t va = std::min(val_share[c], idx.size() - tr);
      split.train.insert(split.train.end(), idx.begin(), idx.begin() + tr);
      split.val.insert(split.val.end(), idx.begin() + tr, idx.begin() + tr + va);
      split.test.insert(split.test.end(), idx.begin() + tr + va, idx.end());
    }
  } else {
    split.warnings.push_back(
        "a class has too few pixels for one stratified training sample; sampling unstratified");
    std::vector<std::size_t> idx(N);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::shuffle(idx.begin(), idx.end(), rng);
    split.train.assign(idx.begin(), idx.begin() + n_train);
    split.val.assign(idx.begin() + n_train, idx.begin() + n_train + n_val);
    split.test.assign(idx.begin() + n_train + n_val, idx.end());
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.val.begin(), split.val.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

std::pair<HsiCube, HsiCube> standardize_pair(const HsiCube& t1, const HsiCube& t2) {
  check_paired(t1, t2);
  HsiCube a = t1, b = t2;
  const std::size_t N = t1.pixels();
  for (std::size_t band = 0; band < t1.bands; ++band) {
    const float* x1 = t1.values.data() + band * N;
    const float* x2 = t2.values.data() + band * N;
    double mu = 0;
    for (std::size_t p = 0; p < N; ++p) mu += double(x1[p]) + double(x2[p]);
    mu /= double(2 * N);
    double var = 0;
    for (std::size_t p = 0; p < N; ++p) {
      var += (double(x1[p]) - mu) * (double(x1[p]) - mu) + (double(x2[p]) - mu) * (double(x2[p]) - mu);
    }
    var /= double(2 * N);
    const double inv = var > 0 ? 1.0 / std::sqrt(var) : 1.0;
    for (std::size_t p = 0; p < N; ++p) {
      a.values[band * N + p] = static_cast<float>((double(x1[p]) - mu) * inv);
      b.values[band * N + p] = static_cast<float>((double(x2[p]) - mu) * inv);
    }
  }
  return {std::move(a), std::move(b)};
}

}  // namespace glaformer
