#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "glaformer/checkpoint.hpp"

using namespace glaformer;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

fs::path scratch(const std::string& name) {
  fs::path dir = fs::path(GLAFORMER_TEST_TMP) / "checkpoint" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

RunConfig toy_run() {
  RunConfig run;
  run.model.bands = 3;
  run.model.patch = 3;
  run.model.d = 8;
  run.model.blocks = 1;
  run.model.heads = 2;
  run.model.local_heads = 1;
  run.train.seed = 42;
  run.train.epochs = 3;
  return run;
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

void write_json(const fs::path& p, const json& j) { std::ofstream(p) << j.dump(2); }

}  // namespace

TEST(Config, RoundTripsThroughJson) {
  RunConfig run = toy_run();
  run.model.variant = Variant::no_cgfn;
  run.model.shared_weights = false;
  run.split.train_frac = 0.08;
  run.synthetic.noise_std = 0.05;
  run.standardize = false;
  const json j = run;
  const RunConfig back = j.get<RunConfig>();
  EXPECT_EQ(json(back), j);
  EXPECT_EQ(j["model"]["variant"], "no_cgfn");
  EXPECT_EQ(j["train"]["seed"], 42);
}

TEST(Config, MissingKeysKeepDefaults) {
  const auto dir = scratch("defaults");
  write_json(dir / "c.json", {{"model", {{"d", 16}}}, {"train", {{"epochs", 5}}}});
  const auto run = load_run_config(dir / "c.json");
  EXPECT_EQ(run.model.d, 16u);
  EXPECT_EQ(run.model.heads, ModelConfig{}.heads);
  EXPECT_EQ(run.train.epochs, 5u);
  EXPECT_EQ(run.train.lr, TrainConfig{}.lr);
  EXPECT_EQ(run.split.train_frac, 0.03);
  EXPECT_TRUE(run.standardize);
}

TEST(Config, UnknownKeysAndBadTypesRejected) {
  const auto dir = scratch("unknown");
  write_json(dir / "a.json", {{"model", {{"dd", 16}}}});
  try {
    load_run_config(dir / "a.json");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("'dd'"), std::string::npos) << e.what();
  }
  write_json(dir / "b.json", {{"modle", json::object()}});
  EXPECT_THROW(load_run_config(dir / "b.json"), ConfigError);
  write_json(dir / "c.json", {{"train", {{"epochs", "many"}}}});
  EXPECT_THROW(load_run_config(dir / "c.json"), ConfigError);
  write_json(dir / "d.json", {{"model", {{"variant", "glamless"}}}});
  EXPECT_THROW(load_run_config(dir / "d.json"), ConfigError);
  std::ofstream(dir / "e.json") << "{ not json";
  EXPECT_THROW(load_run_config(dir / "e.json"), ConfigError);
  EXPECT_THROW(load_run_config(dir / "absent.json"), IoError);
}

TEST(Checkpoint, RoundTripIsExact) {
  const auto dir = scratch("roundtrip");
  const RunConfig run = toy_run();
  auto cfg = run.model;
  const auto params = ModelParams<float>::init(cfg, 7);
  save_checkpoint(dir / "model.json", run, params);
  EXPECT_TRUE(fs::exists(dir / "model.bin"));
  EXPECT_EQ(fs::file_size(dir / "model.bin"), params.numel() * 4);

  const auto loaded = load_checkpoint<float>(dir / "model.json");
  EXPECT_EQ(json(loaded.run), json(run));
  const auto a = params.named(), b = loaded.params.named();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].name, b[i].name);
    EXPECT_EQ(a[i].var.value(), b[i].var.value());
  }
}

TEST(Checkpoint, ManifestListsParametersInOrder) {
  const auto dir = scratch("manifest");
  const RunConfig run = toy_run();
  const auto params = ModelParams<float>::init(run.model, 1);
  save_checkpoint(dir / "m.json", run, params);
  const auto j = read_json(dir / "m.json");
  EXPECT_EQ(j["format"], "glaformer-checkpoint");
  EXPECT_EQ(j["dtype"], "f32");
  EXPECT_EQ(j["byte_order"], "little-endian");
  EXPECT_EQ(j["payload"], "m.bin");
  const auto named = params.named();
  ASSERT_EQ(j["params"].size(), named.size());
  for (std::size_t i = 0; i < named.size(); ++i) {
    EXPECT_EQ(j["params"][i]["name"], named[i].name);
    EXPECT_EQ(j["params"][i]["shape"].get<std::vector<std::size_t>>(), named[i].var.shape());
  }
}

TEST(Checkpoint, DoublePrecisionLoadsFromFloatPayload) {
  const auto dir = scratch("f64");
  const RunConfig run = toy_run();
  const auto params = ModelParams<float>::init(run.model, 2);
  save_checkpoint(dir / "m.json", run, params);
  const auto loaded = load_checkpoint<double>(dir / "m.json");
  const auto a = params.named();
  const auto b = loaded.params.named();
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t k = 0; k < a[i].var.value().size(); ++k) {
      ASSERT_EQ(double(a[i].var.value()[k]), b[i].var.value()[k]);
    }
  }
}

TEST(Checkpoint, TamperedFilesRejected) {
  const auto dir = scratch("tamper");
  const RunConfig run = toy_run();
  const auto params = ModelParams<float>::init(run.model, 3);
  save_checkpoint(dir / "m.json", run, params);
  const auto good = read_json(dir / "m.json");

  auto renamed = good;
  renamed["params"][0]["name"] = "encoder.embed.weights";
  write_json(dir / "m.json", renamed);
  EXPECT_THROW(load_checkpoint<float>(dir / "m.json"), FormatError);

  auto reshaped = good;
  reshaped["params"][0]["shape"] = {3, 8};
  write_json(dir / "m.json", reshaped);
  EXPECT_THROW(load_checkpoint<float>(dir / "m.json"), FormatError);

  auto wrong_model = good;
  wrong_model["config"]["model"]["d"] = 16;
  write_json(dir / "m.json", wrong_model);
  EXPECT_THROW(load_checkpoint<float>(dir / "m.json"), FormatError);

  auto not_ours = good;
  not_ours["format"] = "other";
  write_json(dir / "m.json", not_ours);
  EXPECT_THROW(load_checkpoint<float>(dir / "m.json"), FormatError);

  write_json(dir / "m.json", good);
  fs::resize_file(dir / "m.bin", fs::file_size(dir / "m.bin") - 4);
  EXPECT_THROW(load_checkpoint<float>(dir / "m.json"), FormatError);

  save_checkpoint(dir / "m.json", run, params);
  {
    std::fstream f(dir / "m.bin", std::ios::in | std::ios::out | std::ios::binary);
    const char nan_bytes[4] = {0, 0, char(0xC0), 0x7F};
    f.write(nan_bytes, 4);
  }
  EXPECT_THROW(load_checkpoint<float>(dir / "m.json"), DataError);

  fs::remove(dir / "m.bin");
  EXPECT_THROW(load_checkpoint<float>(dir / "m.json"), IoError);
}
