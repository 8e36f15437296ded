#include "glaformer/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>

namespace glaformer {

using json = nlohmann::json;

namespace {

void reject_unknown(const json& j, std::initializer_list<const char*> keys, const char* section) {
  if (!j.is_object()) throw ConfigError(std::string("config section '") + section + "' must be an object");
  std::set<std::string> known(keys.begin(), keys.end());
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.count(it.key())) {
      throw ConfigError(std::string("unknown key '") + it.key() + "' in config section '" + section + "'");
    }
  }
}

template <typename V>
void read_opt(const json& j, const char* key, V& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<V>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

std::uint32_t le32(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    v = ((v & 0xFF) << 24) | ((v & 0xFF00) << 8) | ((v >> 8) & 0xFF00) | (v >> 24);
  }
  return v;
}

}  // namespace

void to_json(json& j, const ModelConfig& c) {
  j = json{{"bands", c.bands},         {"patch", c.patch},
           {"d", c.d},                 {"blocks", c.blocks},
           {"heads", c.heads},         {"local_heads", c.local_heads},
           {"window", c.window},       {"variant", to_string(c.variant)},
           {"shared_weights", c.shared_weights}, {"use_norm", c.use_norm},
           {"ffn_expansion", c.ffn_expansion}};
}

void from_json(const json& j, ModelConfig& c) {
  reject_unknown(j, {"bands", "patch", "d", "blocks", "heads", "local_heads", "window", "variant",
                     "shared_weights", "use_norm", "ffn_expansion"},
                 "model");
  read_opt(j, "bands", c.bands);
  read_opt(j, "patch", c.patch);
  read_opt(j, "d", c.d);
  read_opt(j, "blocks", c.blocks);
  read_opt(j, "heads", c.heads);
  read_opt(j, "local_heads", c.local_heads);
  read_opt(j, "window", c.window);
  if (j.contains("variant")) {
    std::string v;
    read_opt(j, "variant", v);
    c.variant = parse_variant(v);
  }
  read_opt(j, "shared_weights", c.shared_weights);
  read_opt(j, "use_norm", c.use_norm);
  read_opt(j, "ffn_expansion", c.ffn_expansion);
}

void to_json(json& j, const TrainConfig& c) {
  j = json{{"lr", c.lr},       {"batch", c.batch}, {"epochs", c.epochs}, {"beta1", c.beta1},
           {"beta2", c.beta2}, {"eps", c.eps},     {"seed", c.seed}};
}

void from_json(const json& j, TrainConfig& c) {
  reject_unknown(j, {"lr", "batch", "epochs", "beta1", "beta2", "eps", "seed"}, "train");
  read_opt(j, "lr", c.lr);
  read_opt(j, "batch", c.batch);
  read_opt(j, "epochs", c.epochs);
  read_opt(j, "beta1", c.beta1);
  read_opt(j, "beta2", c.beta2);
  read_opt(j, "eps", c.eps);
  read_opt(j, "seed", c.seed);
}

void to_json(json& j, const SplitConfig& c) {
  j = json{{"train_frac", c.train_frac}, {"val_frac", c.val_frac}};
}

void from_json(const json& j, SplitConfig& c) {
  reject_unknown(j, {"train_frac", "val_frac"}, "split");
  read_opt(j, "train_frac", c.train_frac);
  read_opt(j, "val_frac", c.val_frac);
}

void to_json(json& j, const SyntheticSpec& c) {
  j = json{{"height", c.height},
           {"width", c.width},
           {"bands", c.bands},
           {"classes", c.classes},
           {"change_kinds", c.change_kinds},
           {"changed_fraction", c.changed_fraction},
           {"noise_std", c.noise_std},
           {"patch", c.patch}};
}

void from_json(const json& j, SyntheticSpec& c) {
  reject_unknown(j, {"height", "width", "bands", "classes", "change_kinds", "changed_fraction",
                     "noise_std", "patch"},
                 "synthetic");
  read_opt(j, "height", c.height);
  read_opt(j, "width", c.width);
  read_opt(j, "bands", c.bands);
  read_opt(j, "classes", c.classes);
  read_opt(j, "change_kinds", c.change_kinds);
  read_opt(j, "changed_fraction", c.changed_fraction);
  read_opt(j, "noise_std", c.noise_std);
  read_opt(j, "patch", c.patch);
}

void to_json(json& j, const RunConfig& c) {
  j = json{{"model", c.model},
           {"train", c.train},
           {"split", c.split},
           {"synthetic", c.synthetic},
           {"standardize", c.standardize}};
}

void from_json(const json& j, RunConfig& c) {
  reject_unknown(j, {"model", "train", "split", "synthetic", "standardize"}, "root");
  if (j.contains("model")) from_json(j["model"], c.model);
  if (j.contains("train")) from_json(j["train"], c.train);
  if (j.contains("split")) from_json(j["split"], c.split);
  if (j.contains("synthetic")) from_json(j["synthetic"], c.synthetic);
  read_opt(j, "standardize", c.standardize);
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  RunConfig run;
  from_json(j, run);
  return run;
}

std::filesystem::path payload_path_for(const std::filesystem::path& manifest) {
  auto p = manifest;
  p.replace_extension(".bin");
  return p;
}

template <typename T>
void save_checkpoint(const std::filesystem::path& manifest, const RunConfig& run,
                     const ModelParams<T>& params) {
  const auto payload = payload_path_for(manifest);
  json entries = json::array();
  std::vector<char> bytes;
  for (const auto& p : params.named()) {
    entries.push_back({{"name", p.name}, {"shape", p.var.shape()}});
    for (T v : p.var.value().data()) {
      const std::uint32_t word = le32(std::bit_cast<std::uint32_t>(static_cast<float>(v)));
      const auto* raw = reinterpret_cast<const char*>(&word);
      bytes.insert(bytes.end(), raw, raw + 4);
    }
  }
  json j = {{"format", "glaformer-checkpoint"},
            {"version", 1},
            {"config", run},
            {"dtype", "f32"},
            {"byte_order", "little-endian"},
            {"payload", payload.filename().string()},
            {"params", entries}};
  {
    std::ofstream out(manifest, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + manifest.string());
    out << j.dump(2) << '\n';
    if (!out) throw IoError("write failed for " + manifest.string());
  }
  std::ofstream out(payload, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + payload.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + payload.string());
}

template <typename T>
LoadedCheckpoint<T> load_checkpoint(const std::filesystem::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw IoError("cannot open " + manifest.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw FormatError("checkpoint " + manifest.string() + " is not valid JSON: " + e.what());
  }
  if (!j.is_object() || j.value("format", "") != "glaformer-checkpoint" || !j.contains("params") ||
      !j.contains("config")) {
    throw FormatError("checkpoint " + manifest.string() + " is not a glaformer checkpoint manifest");
  }
  RunConfig run;
  from_json(j["config"], run);
  auto params = ModelParams<T>::init(run.model, 0);
  auto named = params.named();
  const auto& entries = j["params"];
  if (!entries.is_array() || entries.size() != named.size()) {
    throw FormatError("checkpoint lists " + std::to_string(entries.size()) +
                      " parameters; the configured model has " + std::to_string(named.size()));
  }

  auto payload = manifest.parent_path() / j.value("payload", payload_path_for(manifest).filename().string());
  std::ifstream pin(payload, std::ios::binary);
  if (!pin) throw IoError("cannot open " + payload.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(pin)), std::istreambuf_iterator<char>());
  const std::size_t expected = params.numel() * 4;
  if (bytes.size() != expected) {
    throw FormatError("checkpoint payload " + payload.string() + " holds " +
                      std::to_string(bytes.size()) + " bytes, expected " + std::to_string(expected));
  }

  std::size_t offset = 0;
  for (std::size_t k = 0; k < named.size(); ++k) {
    const auto& e = entries[k];
    const std::string name = e.value("name", "");
    const Shape shape = e.value("shape", Shape{});
    if (name != named[k].name || shape != named[k].var.shape()) {
      throw FormatError("checkpoint parameter " + std::to_string(k) + " is '" + name + "' " +
                        shape_str(shape) + ", expected '" + named[k].name + "' " +
                        shape_str(named[k].var.shape()));
    }
    auto& values = named[k].var.mutable_value();
    for (std::size_t i = 0; i < values.size(); ++i, offset += 4) {
      std::uint32_t word;
      std::memcpy(&word, bytes.data() + offset, 4);
      const float v = std::bit_cast<float>(le32(word));
      if (!std::isfinite(v)) throw DataError("checkpoint holds a non-finite weight in " + name);
      values[i] = static_cast<T>(v);
    }
  }
  return {std::move(run), std::move(params)};
}

template void save_checkpoint<float>(const std::filesystem::path&, const RunConfig&,
                                     const ModelParams<float>&);
template void save_checkpoint<double>(const std::filesystem::path&, const RunConfig&,
                                      const ModelParams<double>&);
template LoadedCheckpoint<float> load_checkpoint<float>(const std::filesystem::path&);
template LoadedCheckpoint<double> load_checkpoint<double>(const std::filesystem::path&);

}  // namespace glaformer
