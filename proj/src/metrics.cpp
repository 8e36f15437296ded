#include "glaformer/metrics.hpp"

#include <cstdio>
#include <sstream>

#include "glaformer/errors.hpp"
#include "glaformer/pgm.hpp"

namespace glaformer {

namespace {

void check_dims(const ChangeMap& pred, const LabelMap& truth) {
  if (pred.height != truth.height || pred.width != truth.width) {
    throw PairingError("change map " + std::to_string(pred.height) + "x" +
                       std::to_string(pred.width) + " does not match labels " +
                       std::to_string(truth.height) + "x" + std::to_string(truth.width));
  }
}

void tally(ConfusionCounts& c, std::uint8_t pred, std::uint8_t truth) {
  if (truth) {
    pred ? ++c.tp : ++c.fn;
  } else {
    pred ? ++c.fp : ++c.tn;
  }
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  std::string out(buf);
  // Keep values visibly real-valued: 1 -> 1.0.
  if (out.find_first_of(".eEn") == std::string::npos) out += ".0";
  return out;
}

}  // namespace

ConfusionCounts confusion(const ChangeMap& pred, const LabelMap& truth,
                          std::span<const std::size_t> mask) {
  check_dims(pred, truth);
  ConfusionCounts c;
  for (std::size_t i : mask) {
    if (i >= truth.labels.size()) {
      throw DimensionError("evaluation mask index " + std::to_string(i) + " is outside the map");
    }
    tally(c, pred.decisions[i], truth.labels[i]);
  }
  return c;
}

ConfusionCounts confusion(const ChangeMap& pred, const LabelMap& truth) {
  check_dims(pred, truth);
  ConfusionCounts c;
  for (std::size_t i = 0; i < truth.labels.size(); ++i) tally(c, pred.decisions[i], truth.labels[i]);
  return c;
}

double overall_accuracy(const ConfusionCounts& c) {
  if (c.total() == 0) throw ContractError("overall accuracy of an empty confusion table");
  return double(c.tp + c.tn) / double(c.total());
}

double kappa(const ConfusionCounts& c) {
  const std::uint64_t n = c.total();
  if (n == 0) throw ContractError("kappa of an empty confusion table");
  // Exact test for p_e == 1 in integers before dividing.
  const unsigned __int128 agree_chance =
      static_cast<unsigned __int128>(c.tp + c.fp) * (c.tp + c.fn) +
      static_cast<unsigned __int128>(c.tn + c.fn) * (c.tn + c.fp);
  if (agree_chance == static_cast<unsigned __int128>(n) * n) {
    throw UndefinedKappaError("kappa is undefined: chance agreement equals 1");
  }
  const double total = double(n);
  const double p_o = double(c.tp + c.tn) / total;
  const double p_e = (double(c.tp + c.fp) * double(c.tp + c.fn) +
                      double(c.tn + c.fn) * double(c.tn + c.fp)) /
                     (total * total);
  return (p_o - p_e) / (1.0 - p_e);
}

std::string metrics_json(const ConfusionCounts& c) {
  std::ostringstream os;
  os << "{\"oa\":" << format_double(overall_accuracy(c)) << ",\"kappa\":";
  try {
    os << format_double(kappa(c));
  } catch (const UndefinedKappaError&) {
    os << "null";
  }
  os << ",\"tp\":" << c.tp << ",\"tn\":" << c.tn << ",\"fp\":" << c.fp << ",\"fn\":" << c.fn << '}';
  return os.str();
}

void render_change_map(const ChangeMap& map, const std::filesystem::path& path) {
  GreyImage img;
  img.width = map.width;
  img.height = map.height;
  img.pixels.resize(map.decisions.size());
  for (std::size_t i = 0; i < map.decisions.size(); ++i) img.pixels[i] = map.decisions[i] ? 255 : 0;
  write_pgm(path, img);
}

ChangeMap load_change_map(const std::filesystem::path& path) {
  const LabelMap lm = load_labels(path);
  ChangeMap out(lm.height, lm.width);
  out.decisions = lm.labels;
  return out;
}

}  // namespace glaformer
