#include "isp/common.hpp"
#include "isp/dataio.hpp"
#include "isp/evaluation.hpp"

#include <fstream>

#include "doctest_shim.hpp"

using namespace isp;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("uisp_test_" + tag + "_" +
                                        std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

void make_zrr_style(const fs::path& root, int n, bool with_rgb = true) {
  fs::create_directories(root / "raw");
  if (with_rgb) fs::create_directories(root / "rgb");
  for (int i = 0; i < n; ++i) {
    auto gen = torch::make_generator<torch::CPUGeneratorImpl>(i);
    auto mosaic = torch::rand({8, 8}, gen, torch::TensorOptions()) * 65535.0;
    common::write_png_gray16(root / "raw" / (std::to_string(i) + ".png"), mosaic);
    if (with_rgb) {
      auto rgb = torch::rand({3, 8, 8}, gen, torch::TensorOptions());
      common::write_png_rgb8(root / "rgb" / (std::to_string(i) + ".png"), rgb);
    }
  }
}

std::vector<char> slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("zrr layout loads paired entries, count preserved, sorted") {
  TempDir dir("zrr");
  make_zrr_style(dir.path, 10);
  auto m = data::load_manifest(dir.path, "zrr", data::PairingMode::Paired);
  CHECK(m.size() == 10);
  CHECK(m.patch_size == 8);
  for (const auto& e : m.entries) CHECK(e.rgb_path.has_value());
  CHECK(std::is_sorted(m.entries.begin(), m.entries.end(),
                       [](const auto& a, const auto& b) { return a.raw_path < b.raw_path; }));
}

TEST_CASE("unpaired mode tolerates a missing rgb side") {
  TempDir dir("unp");
  make_zrr_style(dir.path, 10, /*with_rgb=*/false);
  auto m = data::load_manifest(dir.path, "zrr", data::PairingMode::Unpaired);
  CHECK(m.size() == 10);
  for (const auto& e : m.entries) CHECK(!e.rgb_path.has_value());
}

TEST_CASE("paired mode names orphaned raw files") {
  TempDir dir("orphan");
  make_zrr_style(dir.path, 3);
  fs::remove(dir.path / "rgb" / "0.png");
  try {
    data::load_manifest(dir.path, "zrr", data::PairingMode::Paired);
    CHECK(false);
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("0") != std::string::npos);
  }
}

TEST_CASE("missing dataset directory is fatal") {
  CHECK_THROWS_AS(data::load_manifest("/nonexistent/nowhere", "zrr",
                                      data::PairingMode::Paired),
                  std::runtime_error);
}

TEST_CASE("exclude.txt filters stems") {
  TempDir dir("excl");
  make_zrr_style(dir.path, 4);
  std::ofstream(dir.path / "exclude.txt") << "1\n3\n";
  auto m = data::load_manifest(dir.path, "zrr", data::PairingMode::Paired);
  CHECK(m.size() == 2);
}

TEST_CASE("synthetic identity domain round-trips through demosaic at 30+ dB") {
  TempDir dir("ident");
  data::SyntheticDomainSpec spec;
  spec.color_matrix = torch::eye(3);
  spec.gamma = 1.0;
  spec.noise_sigma = 0.0;
  spec.seed = 7;
  auto m = data::generate_synthetic(spec, 4, 32, dir.path);
  CHECK(m.size() == 4);
  for (std::size_t i = 0; i < m.size(); ++i) {
    auto rgb = bayer::demosaic(data::load_raw(m, i));
    auto target = data::load_rgb(m, i);
    CHECK(metric::psnr(rgb, target) >= 30.0);
  }
}

TEST_CASE("synthetic generation is bit-identical for a fixed seed") {
  TempDir a("det_a"), b("det_b");
  auto spec = data::default_synthetic_spec();
  spec.seed = 123;
  spec.noise_sigma = 0.01;
  data::generate_synthetic(spec, 3, 16, a.path);
  data::generate_synthetic(spec, 3, 16, b.path);
  for (int i = 0; i < 3; ++i) {
    const auto name = "000" + std::to_string(i) + ".png";
    CHECK(slurp(a.path / "raw" / name) == slurp(b.path / "raw" / name));
    CHECK(slurp(a.path / "rgb" / name) == slurp(b.path / "rgb" / name));
  }
}

TEST_CASE("gamma 2.2 darkens the raw domain relative to targets") {
  TempDir dir("gamma");
  auto spec = data::default_synthetic_spec();
  spec.color_matrix = torch::eye(3);
  spec.gamma = 2.2;
  spec.seed = 5;
  auto m = data::generate_synthetic(spec, 4, 32, dir.path);
  double raw_mean = 0, target_mean = 0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    raw_mean += bayer::normalize(data::load_raw(m, i)).mean().item<double>();
    target_mean += data::load_rgb(m, i).mean().item<double>();
  }
  CHECK(raw_mean < target_mean);
}

TEST_CASE("synthetic generation rejects bad inputs") {
  TempDir dir("bad");
  auto spec = data::default_synthetic_spec();
  CHECK_THROWS_AS(data::generate_synthetic(spec, 2, 9, dir.path),
                  std::invalid_argument);  // odd patch
  CHECK_THROWS_AS(data::generate_synthetic(spec, 0, 16, dir.path),
                  std::invalid_argument);
  spec.gamma = 9.0;
  CHECK_THROWS_AS(data::generate_synthetic(spec, 2, 16, dir.path),
                  std::invalid_argument);
  spec = data::default_synthetic_spec();
  spec.color_matrix = torch::zeros({3, 3});
  CHECK_THROWS_AS(data::generate_synthetic(spec, 2, 16, dir.path),
                  std::invalid_argument);
}

TEST_CASE("split is disjoint, unioned, and seed-deterministic") {
  TempDir dir("split");
  make_zrr_style(dir.path, 10);
  auto m = data::load_manifest(dir.path, "zrr", data::PairingMode::Paired);

  auto s1 = data::split_manifest(m, 2, 2, 99);
  CHECK(s1.train.size() == 6);
  CHECK(s1.val.size() == 2);
  CHECK(s1.test.size() == 2);

  std::set<std::string> all;
  for (const auto* part : {&s1.train, &s1.val, &s1.test})
    for (const auto& e : part->entries) all.insert(e.raw_path);
  CHECK(all.size() == 10);

  auto s2 = data::split_manifest(m, 2, 2, 99);
  for (std::size_t i = 0; i < s1.val.size(); ++i)
    CHECK(s1.val.entries[i].raw_path == s2.val.entries[i].raw_path);

  CHECK_THROWS_AS(data::split_manifest(m, 6, 6, 1), std::invalid_argument);
}

TEST_CASE("manifest index round-trips") {
  TempDir dir("index");
  make_zrr_style(dir.path, 4);
  auto m = data::load_manifest(dir.path, "zrr", data::PairingMode::Paired);
  m.bayer_pattern = bayer::Pattern::GBRG;
  m.black_level = 64;
  m.white_level = 1023;
  data::save_manifest(m, dir.path / "idx");
  auto back = data::load_manifest_index(dir.path / "idx");
  CHECK(back.size() == m.size());
  CHECK(back.bayer_pattern == m.bayer_pattern);
  CHECK(back.black_level == m.black_level);
  CHECK(back.patch_size == m.patch_size);
  for (std::size_t i = 0; i < m.size(); ++i) {
    CHECK(back.entries[i].raw_path == m.entries[i].raw_path);
    CHECK(back.entries[i].rgb_path == m.entries[i].rgb_path);
  }
}

TEST_CASE("16-bit raw pngs survive write/read exactly") {
  TempDir dir("png16");
  auto gen = torch::make_generator<torch::CPUGeneratorImpl>(3);
  auto counts = (torch::rand({6, 6}, gen, torch::TensorOptions()) * 65535.0).round();
  common::write_png_gray16(dir.path / "x.png", counts);
  auto back = common::read_png_gray16(dir.path / "x.png");
  CHECK(torch::equal(back, counts));
}
