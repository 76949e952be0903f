#include <doctest.h>

#include <algorithm>
#include <sstream>
#include <string>
#include <vector>

#include "sfda/binary_io.hpp"
#include "sfda/cli.hpp"
#include "sfda/error.hpp"
#include "sfda/synth.hpp"
#include "test_util.hpp"

using namespace sfda;
using nlohmann::json;

namespace {

struct CliResult {
  int code;
  std::string out;
  std::string err;
};

CliResult run_cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

// Small, fast configuration shared by the end-to-end tests.
std::string write_small_config(const test::TempDir& dir) {
  const json cfg = {
      {"source", {{"frame_size", 8}}},
      {"target", {{"frame_size", 8}}},
      {"data", {{"n_source_clips", 4}, {"n_target_clips", 3}, {"duration_s", 4.0}}},
      {"pretrain", {{"epochs", 2}}},
      {"adapt", {{"epochs", 1}}},
      {"eval", {{"window_s", 4.0}}},
  };
  const auto path = dir / "small.json";
  io::write_text_file(path, cfg.dump());
  return path.string();
}

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST_CASE("config merge is strict") {
  const json base = cli::default_config();
  CHECK(cli::merge_config(base, {{"seed", 4}})["seed"] == 4);
  CHECK(cli::merge_config(base, {{"adapt", {{"lr", 0.5}}}})["adapt"]["lr"] == 0.5);
  CHECK(cli::merge_config(base, {{"adapt", {{"lr", 0.5}}}})["adapt"]["epochs"] == base["adapt"]["epochs"]);
  try {
    cli::merge_config(base, {{"adapt", {{"learning_rate", 0.5}}}});
    FAIL("unknown key accepted");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("adapt.learning_rate") != std::string::npos);
  }
}

TEST_CASE("dotted overrides parse json values") {
  json tree = cli::default_config();
  cli::apply_override(tree, "adapt.lr", "0.25");
  CHECK(tree["adapt"]["lr"] == 0.25);
  cli::apply_override(tree, "pretrain.loss", "kl");
  CHECK(tree["pretrain"]["loss"] == "kl");
  cli::apply_override(tree, "eval.seeds", "[4,5]");
  CHECK(tree["eval"]["seeds"] == json::array({4, 5}));
  CHECK_THROWS_AS(cli::apply_override(tree, "adapt.nope", "1"), ConfigError);
}

TEST_CASE("argument and config errors exit with code 2") {
  test::TempDir dir("cli-args");
  CHECK(run_cli({}).code == cli::kExitConfig);
  CHECK(run_cli({"frobnicate"}).code == cli::kExitConfig);
  CHECK(run_cli({"synth", "--help"}).code == cli::kExitOk);
  CHECK(run_cli({"synth"}).code == cli::kExitConfig);
  CHECK(run_cli({"synth", "--out", (dir / "a").string(), "--data.n_source_clips=many"}).code == cli::kExitConfig);
  CHECK(run_cli({"synth", "--out", (dir / "b").string(), "--data.sources=3"}).code == cli::kExitConfig);
  CHECK(run_cli({"synth", "--out", (dir / "c").string(), "stray"}).code == cli::kExitConfig);
  CHECK(run_cli({"synth", "--config", (dir / "missing.json").string(), "--out", (dir / "d").string()}).code ==
        cli::kExitConfig);
  CHECK(run_cli({"pretrain", "--out", (dir / "e").string()}).code == cli::kExitConfig);
}

TEST_CASE("synth writes the configured datasets reproducibly") {
  test::TempDir dir("cli-synth");
  const auto cfg = write_small_config(dir);
  const auto a = (dir / "a").string();
  const auto r = run_cli({"synth", "--config", cfg, "--seed", "3", "--out", a});
  REQUIRE(r.code == cli::kExitOk);
  CHECK(load_manifest(dir / "a/source").n_clips == 4);
  const auto target = load_manifest(dir / "a/target");
  CHECK(target.n_clips == 3);
  CHECK(target.labeled);
  CHECK(std::filesystem::exists(dir / "a/config.json"));

  REQUIRE(run_cli({"synth", "--config", cfg, "--seed", "3", "--out", (dir / "b").string()}).code == cli::kExitOk);
  CHECK(io::read_file(dir / "a/target/clip_0000.rpgc") == io::read_file(dir / "b/target/clip_0000.rpgc"));
  CHECK(io::read_file(dir / "a/source/manifest.json") == io::read_file(dir / "b/source/manifest.json"));

  CHECK(run_cli({"synth", "--config", cfg, "--out", a}).code == cli::kExitConfig);
  REQUIRE(run_cli({"synth", "--config", cfg, "--out", a, "--force", "--num-target-clips", "1"}).code == cli::kExitOk);
  CHECK(load_manifest(dir / "a/target").n_clips == 1);
  CHECK_FALSE(std::filesystem::exists(dir / "a/target/clip_0001.rpgc"));
}

TEST_CASE("default synth sizes") {
  test::TempDir dir("cli-default");
  REQUIRE(run_cli({"synth", "--out", dir.path().string(), "--force", "--data.duration_s=1"}).code == cli::kExitOk);
  CHECK(load_manifest(dir / "source").n_clips == 40);
  CHECK(load_manifest(dir / "target").n_clips == 20);
}

TEST_CASE("pretrain, adapt, infer and eval chain") {
  test::TempDir dir("cli-chain");
  const auto cfg = write_small_config(dir);
  const auto data = dir / "data";
  REQUIRE(run_cli({"synth", "--config", cfg, "--out", data.string()}).code == cli::kExitOk);
  const std::string src = "--data.source_dir=" + (data / "source").string();
  const std::string tgt = "--data.target_dir=" + (data / "target").string();

  REQUIRE(run_cli({"pretrain", "--config", cfg, "--out", (dir / "pre").string(), src}).code == cli::kExitOk);
  const auto pre = dir / "pre/pretrained.sfda";
  CHECK(std::filesystem::exists(pre));
  CHECK(count_lines(io::read_text_file(dir / "pre/pretrain_log.csv")) == 3);

  const std::string ckpt = "--adapt.checkpoint=" + pre.string();
  const auto same = run_cli({"adapt", "--config", cfg, "--out", (dir / "bad").string(), ckpt, src,
                             "--data.target_dir=" + (data / "source").string()});
  CHECK(same.code == cli::kExitConfig);
  CHECK(same.err.find("source") != std::string::npos);

  const auto adapted = run_cli({"adapt", "--config", cfg, "--out", (dir / "ad").string(), ckpt, src, tgt});
  REQUIRE(adapted.code == cli::kExitOk);
  CHECK(adapted.out.find("source reads 0") != std::string::npos);
  const auto log = io::read_text_file(dir / "ad/adapt_log.csv");
  CHECK(log.rfind("step,epoch,aug,r,l_adapting,spatial_term,temporal_term\n", 0) == 0);
  CHECK(count_lines(log) == 1 + 1);

  REQUIRE(run_cli({"adapt", "--config", cfg, "--out", (dir / "one").string(), ckpt, tgt, "--num-target-clips", "1"})
              .code == cli::kExitOk);
  CHECK(io::read_text_file(dir / "one/adapt_log.csv") != log);

  const auto inf = run_cli({"infer", "--config", cfg, "--out", (dir / "inf").string(),
                            "--infer.checkpoint=" + (dir / "ad/adapted.sfda").string(), tgt});
  REQUIRE(inf.code == cli::kExitOk);
  CHECK(count_lines(io::read_text_file(dir / "inf/predictions.csv")) == 4);

  const auto ev = run_cli({"eval", "--config", cfg, "--out", (dir / "ev").string(),
                           "--eval.checkpoint=" + (dir / "ad/adapted.sfda").string(), "--eval.method=sfda-fwd", tgt});
  REQUIRE(ev.code == cli::kExitOk);
  CHECK(count_lines(ev.out) == 2);
  CHECK(ev.out.find("sfda-fwd") != std::string::npos);
  const auto mismatch = run_cli({"eval", "--config", cfg, "--out", (dir / "ev2").string(),
                                 "--eval.checkpoint=" + pre.string(), "--eval.method=sfda-fwd", tgt});
  CHECK(mismatch.code == cli::kExitConfig);

  const auto corrupt = dir / "corrupt.sfda";
  auto bytes = io::read_file(pre);
  bytes[10] ^= 0xFF;
  io::write_file(corrupt, bytes);
  CHECK(run_cli({"infer", "--config", cfg, "--out", (dir / "inf2").string(),
                 "--infer.checkpoint=" + corrupt.string(), tgt})
            .code == cli::kExitData);
}

TEST_CASE("otbench reports one row per method and seed") {
  test::TempDir dir("cli-otbench");
  const auto cfg = write_small_config(dir);
  const auto r = run_cli({"otbench", "--config", cfg, "--out", dir.path().string() + "/ot",
                          R"(--otbench.methods=["sfda-fwd","sfda-kl"])"});
  REQUIRE(r.code == cli::kExitOk);
  const auto csv = io::read_text_file(dir / "ot/otbench.csv");
  CHECK(count_lines(csv) == 7);
  CHECK(csv.find("spectral_fwd_bpm") != std::string::npos);
  CHECK(csv.find(",sfda-kl,kl,kl,") != std::string::npos);
}

TEST_CASE("gradcheck exits 4 when a suite fails") {
  const auto ok = run_cli({"gradcheck", "--gradcheck.filter=tanh", "--gradcheck.cases=5"});
  CHECK(ok.code == cli::kExitOk);
  const auto bad = run_cli({"gradcheck", "--gradcheck.filter=tanh", "--gradcheck.cases=5",
                            "--gradcheck.perturb_suite=tanh"});
  CHECK(bad.code == cli::kExitVerification);
  CHECK(bad.err.find("tanh") != std::string::npos);
}
