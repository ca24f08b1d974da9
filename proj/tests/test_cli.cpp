#include "isp/cli.hpp"
#include "isp/common.hpp"
#include "isp/config.hpp"
#include "isp/dataio.hpp"

#include <fstream>

#include "doctest_shim.hpp"

using namespace isp;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("uisp_cli_" + tag + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

int run(std::vector<std::string> args) {
  std::vector<const char*> argv{"uisp"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return cli::dispatch(static_cast<int>(argv.size()), argv.data());
}

std::vector<char> slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("usage errors exit 2, runtime errors exit 1") {
  CHECK(run({"definitely-not-a-command"}) == 2);
  CHECK(run({"synth-data"}) == 2);  // missing required --out
  CHECK(run({"eval", "--ckpt", "/no/such.ckpt", "--data", "/none", "--out", "/tmp/x"}) == 1);
}

TEST_CASE("synth-data is reproducible tree-for-tree") {
  TempDir a("synth_a"), b("synth_b");
  auto args = [&](const fs::path& out) {
    return std::vector<std::string>{"synth-data", "--out", out.string(),
                                    "--n", "4", "--patch", "16", "--seed", "7"};
  };
  CHECK(run(args(a.path)) == 0);
  CHECK(run(args(b.path)) == 0);
  for (int i = 0; i < 4; ++i) {
    const auto name = "000" + std::to_string(i) + ".png";
    CHECK(slurp(a.path / "raw" / name) == slurp(b.path / "raw" / name));
    CHECK(slurp(a.path / "rgb" / name) == slurp(b.path / "rgb" / name));
  }
  CHECK(fs::exists(a.path / "manifest.index"));
  CHECK(fs::exists(a.path / "run.resolved.txt"));
}

TEST_CASE("stage exclusivity is enforced at the command line") {
  TempDir data_dir("excl_data"), out("excl_out");
  REQUIRE(run({"synth-data", "--out", data_dir.path.string(), "--n", "4", "--patch",
               "16", "--seed", "3"}) == 0);
  const auto index = (data_dir.path / "manifest.index").string();
  CHECK(run({"train", "--stage", "unpaired", "--set", "loss.color=on", "--train",
             index, "--target-rgb", (data_dir.path / "rgb").string(), "--out",
             out.path.string()}) == 1);
}

TEST_CASE("end-to-end: synth-data, pretrain, unpaired train, eval, infer") {
  TempDir data_dir("flow_data"), pre_out("flow_pre"), tr_out("flow_train"),
      ev_out("flow_eval"), inf_out("flow_infer");

  REQUIRE(run({"synth-data", "--out", data_dir.path.string(), "--n", "10",
               "--patch", "32", "--seed", "5", "--val", "2", "--test", "2"}) == 0);
  const auto train_index = (data_dir.path / "train.index").string();
  const auto val_index = (data_dir.path / "val.index").string();

  REQUIRE(run({"pretrain", "--train", train_index, "--val", val_index, "--out",
               pre_out.path.string(), "--set", "max_steps=20", "--set",
               "batch_size=2", "--set", "val_every=10"}) == 0);
  CHECK(fs::exists(pre_out.path / "last.ckpt"));
  CHECK(fs::exists(pre_out.path / "metrics.csv"));
  CHECK(fs::exists(pre_out.path / "config.resolved.txt"));

  REQUIRE(run({"train", "--stage", "unpaired", "--train", train_index,
               "--target-rgb", (data_dir.path / "rgb").string(), "--val", val_index,
               "--out", tr_out.path.string(), "--set", "max_steps=6", "--set",
               "batch_size=2", "--set", "val_every=3", "--set",
               std::string("init_checkpoint=") + (pre_out.path / "last.ckpt").string()}) ==
          0);
  CHECK(fs::exists(tr_out.path / "best_psnr.ckpt"));
  CHECK(fs::exists(tr_out.path / "best_lpips.ckpt"));

  REQUIRE(run({"eval", "--ckpt", (tr_out.path / "last.ckpt").string(), "--data",
               val_index, "--out", ev_out.path.string(), "--metrics",
               "psnr,ssim,lpips"}) == 0);
  CHECK(fs::exists(ev_out.path / "report.csv"));
  CHECK(fs::exists(ev_out.path / "report.md"));

  REQUIRE(run({"infer", "--ckpt", (pre_out.path / "last.ckpt").string(), "--raw-dir",
               (data_dir.path / "raw").string(), "--out", inf_out.path.string()}) == 0);
  auto img = common::read_png_rgb8(inf_out.path / "0000.png");
  CHECK(img.sizes() == torch::IntArrayRef({3, 32, 32}));
}

TEST_CASE("infer handles a 448x448 mosaic at full geometry") {
  TempDir data_dir("big_data"), pre_out("big_pre"), inf_out("big_infer");
  REQUIRE(run({"synth-data", "--out", data_dir.path.string(), "--n", "2", "--patch",
               "448", "--seed", "9"}) == 0);
  REQUIRE(run({"pretrain", "--train", (data_dir.path / "manifest.index").string(),
               "--out", pre_out.path.string(), "--set", "max_steps=2", "--set",
               "batch_size=1", "--set", "val_every=2"}) == 0);
  REQUIRE(run({"infer", "--ckpt", (pre_out.path / "last.ckpt").string(), "--raw-dir",
               (data_dir.path / "raw").string(), "--out", inf_out.path.string()}) == 0);
  auto img = common::read_png_rgb8(inf_out.path / "0000.png");
  CHECK(img.sizes() == torch::IntArrayRef({3, 448, 448}));
}

TEST_CASE("prepare-data indexes a directory and splits deterministically") {
  TempDir root("prep_root"), out1("prep_out1"), out2("prep_out2");
  // reuse the synthetic generator to lay out a raw/rgb tree
  REQUIRE(run({"synth-data", "--out", root.path.string(), "--n", "10", "--patch",
               "16", "--seed", "2"}) == 0);
  auto args = [&](const fs::path& out) {
    return std::vector<std::string>{
        "prepare-data", "--root", root.path.string(), "--layout", "zrr",
        "--pairing", "paired", "--out", out.string(), "--val", "2", "--test", "2",
        "--split-seed", "13"};
  };
  REQUIRE(run(args(out1.path)) == 0);
  REQUIRE(run(args(out2.path)) == 0);
  CHECK(slurp(out1.path / "val.index") == slurp(out2.path / "val.index"));
  auto m = data::load_manifest_index(out1.path / "train.index");
  CHECK(m.size() == 6);
}

TEST_CASE("fetch-weights runs the exporter script against the cache dir") {
  TempDir dir("fetch");
  const auto script = dir.path / "fake_exporter.py";
  {
    std::ofstream f(script);
    f << "import argparse, pathlib\n";
    f << "ap = argparse.ArgumentParser(); ap.add_argument('--cache')\n";
    f << "a = ap.parse_args()\n";
    f << "(pathlib.Path(a.cache) / 'marker.txt').write_text('ok')\n";
  }
  const auto cache = dir.path / "cache";
  CHECK(run({"fetch-weights", "--cache", cache.string(), "--script",
             script.string()}) == 0);
  CHECK(fs::exists(cache / "marker.txt"));
  CHECK(fs::exists(cache / "run.resolved.txt"));
  CHECK(run({"fetch-weights", "--cache", cache.string(), "--script",
             "/no/such/script.py"}) == 1);
}

TEST_CASE("config files merge with overrides and reject unknown keys") {
  TempDir dir("cfg");
  {
    std::ofstream f(dir.path / "train.cfg");
    f << "# comment line\n";
    f << "stage=pretrain\n";
    f << "gen_lr=1e-3\n";
  }
  auto c = cfg::ConfigMap::from_file(dir.path / "train.cfg");
  c.apply_override("gen_lr=2e-3");
  CHECK(c.get("gen_lr") == "2e-3");
  CHECK(cfg::parse_double("gen_lr", c.get("gen_lr")) == doctest::Approx(2e-3));
  CHECK_THROWS(cfg::parse_bool("flag", "maybe"));
  CHECK_THROWS(c.require_known({"stage"}));
}
