#include "isp/dataio.hpp"
#include "isp/evaluation.hpp"
#include "test_util.hpp"

#include <fstream>

#include "doctest_shim.hpp"

using namespace isp;
namespace fs = std::filesystem;

TEST_CASE("psnr: cap, exact 20 dB case, symmetry") {
  auto x = oracle::rand_image(3, 16, 16, 1);
  CHECK(metric::psnr(x, x) == 100.0);

  auto a = oracle::rand_image(3, 16, 16, 2, torch::kFloat64) * 0.8;  // no clipping
  auto b = a + 0.1;
  CHECK(metric::psnr(a, b) == doctest::Approx(20.0).epsilon(1e-9));
  CHECK(metric::psnr(a, b) == metric::psnr(b, a));
  CHECK_THROWS(metric::psnr(a, torch::rand({3, 8, 8})));
}

TEST_CASE("psnr matches the loop reference") {
  for (std::uint64_t s : {5, 6, 7, 8}) {
    auto a = oracle::rand_image(3, 24, 24, s);
    auto b = oracle::rand_image(3, 24, 24, s + 40);
    CHECK(metric::psnr(a, b) == doctest::Approx(oracle::psnr_ref(a, b)).epsilon(1e-9));
  }
}

TEST_CASE("ssim: identity, inversion, small-image error") {
  auto x = oracle::rand_image(3, 32, 32, 10);
  CHECK(metric::ssim(x, x) == doctest::Approx(1.0).epsilon(1e-9));

  // binary pattern against its inversion: structure term flips sign
  auto idx = torch::arange(32);
  auto board = ((idx.reshape({32, 1}) + idx.reshape({1, 32})) % 2).to(torch::kFloat32);
  auto img = board.reshape({1, 32, 32}).expand({3, 32, 32}).contiguous();
  CHECK(metric::ssim(img, 1.0 - img) < 0.0);

  CHECK_THROWS_AS(metric::ssim(torch::rand({3, 8, 8}), torch::rand({3, 8, 8})),
                  std::invalid_argument);
}

TEST_CASE("ssim of independent noise stays low") {
  int low = 0;
  for (int t = 0; t < 100; ++t) {
    auto a = oracle::rand_image(3, 64, 64, 900 + t);
    auto b = oracle::rand_image(3, 64, 64, 2900 + t);
    if (metric::ssim(a, b) < 0.1) ++low;
  }
  CHECK(low >= 99);
}

TEST_CASE("ssim matches the brute-force reference on 8 random pairs") {
  for (int t = 0; t < 8; ++t) {
    const std::int64_t size = 16 + 6 * t;  // 16..58
    auto a = oracle::rand_image(3, size, size, 100 + t);
    auto b = (a + 0.2 * oracle::rand_image(3, size, size, 200 + t)).clamp(0, 1);
    const double got = metric::ssim(a, b);
    const double ref = oracle::ssim_ref(a, b);
    CHECK(std::abs(got - ref) / std::max(std::abs(ref), 1e-12) < 1e-6);
  }
}

TEST_CASE("ms_ssim: identity, degradation ordering, size guard") {
  auto x = oracle::rand_image(3, 176, 176, 11);
  CHECK(metric::ms_ssim(x, x) == doctest::Approx(1.0).epsilon(1e-9));

  auto slight = (x + 0.05 * oracle::rand_image(3, 176, 176, 12)).clamp(0, 1);
  auto heavy = (x + 0.5 * oracle::rand_image(3, 176, 176, 13)).clamp(0, 1);
  const double s_slight = metric::ms_ssim(x, slight);
  const double s_heavy = metric::ms_ssim(x, heavy);
  CHECK(s_slight > s_heavy);
  CHECK(s_slight <= 1.0);
  CHECK(s_heavy >= -1.0);

  CHECK_THROWS_AS(metric::ms_ssim(torch::rand({3, 128, 128}), torch::rand({3, 128, 128})),
                  std::invalid_argument);
}

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("uisp_eval_" + tag + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("evaluate: identity hook reaches the metric ceilings") {
  TempDir dir("ident");
  data::SyntheticDomainSpec spec;
  spec.color_matrix = torch::eye(3);
  spec.gamma = 1.0;
  spec.seed = 3;
  auto m = data::generate_synthetic(spec, 3, 32, dir.path);

  auto bank = feat::make_stub_bank(7);
  auto identity = [](const data::DatasetManifest& mm, std::size_t i) {
    return data::load_rgb(mm, i);
  };
  auto report = metric::evaluate(identity, m, {"psnr", "ssim", "lpips"}, bank.get());
  CHECK(report.rows.size() == m.size());
  CHECK(report.aggregate.at("psnr") == doctest::Approx(100.0));
  CHECK(report.aggregate.at("ssim") == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(report.aggregate.at("lpips") < 1e-6);

  double mean = 0;
  for (const auto& row : report.rows) mean += row.values.at("psnr");
  mean /= report.rows.size();
  CHECK(std::abs(mean - report.aggregate.at("psnr")) < 1e-9);

  metric::write_report_csv(report, dir.path / "report.csv");
  metric::write_report_markdown(report, dir.path / "report.md");
  std::ifstream csv(dir.path / "report.csv");
  std::string header;
  std::getline(csv, header);
  CHECK(header == "image_id,psnr,ssim,ms_ssim,lpips");
  int rows = 0;
  std::string line;
  while (std::getline(csv, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 3);
}

TEST_CASE("evaluate refuses unpaired manifests and unknown metrics") {
  TempDir dir("unpaired");
  data::SyntheticDomainSpec spec;
  spec.color_matrix = torch::eye(3);
  spec.seed = 4;
  auto m = data::generate_synthetic(spec, 2, 16, dir.path);
  auto no_rgb = m;
  for (auto& e : no_rgb.entries) e.rgb_path.reset();

  auto identity = [](const data::DatasetManifest& mm, std::size_t i) {
    return data::load_rgb(mm, i);
  };
  CHECK_THROWS_AS(metric::evaluate(identity, no_rgb, {"psnr"}), std::runtime_error);
  CHECK_THROWS_AS(metric::evaluate(identity, m, {"vibes"}), std::invalid_argument);
  CHECK_THROWS_AS(metric::evaluate(identity, m, {"lpips"}, nullptr),
                  std::invalid_argument);
}
