#include "isp/evaluation.hpp"

#include "isp/common.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>

namespace isp::metric {

namespace {

torch::Tensor gray601(const torch::Tensor& img) {
  TORCH_CHECK(img.dim() == 3 && img.size(0) == 3, "metric expects (3,H,W)");
  auto x = img.to(torch::kFloat64).clamp(0.0, 1.0);
  auto w = torch::tensor({0.299, 0.587, 0.114}, torch::kFloat64).reshape({3, 1, 1});
  return (x * w).sum(0);  // (H,W)
}

torch::Tensor ssim_window() {
  auto m = torch::arange(-5, 6, torch::kFloat64);
  auto g = torch::exp(-m.square() / (2.0 * 1.5 * 1.5));
  auto k = torch::outer(g, g);
  return (k / k.sum()).reshape({1, 1, 11, 11});
}

struct SsimMaps {
  torch::Tensor luminance, contrast_structure;  // valid-window maps
};

SsimMaps ssim_maps(const torch::Tensor& ga, const torch::Tensor& gb) {
  constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  auto win = ssim_window();
  auto a = ga.reshape({1, 1, ga.size(0), ga.size(1)});
  auto b = gb.reshape({1, 1, gb.size(0), gb.size(1)});
  auto mu_a = torch::conv2d(a, win);
  auto mu_b = torch::conv2d(b, win);
  auto var_a = torch::conv2d(a * a, win) - mu_a.square();
  auto var_b = torch::conv2d(b * b, win) - mu_b.square();
  auto cov = torch::conv2d(a * b, win) - mu_a * mu_b;
  SsimMaps maps;
  maps.luminance = (2.0 * mu_a * mu_b + c1) / (mu_a.square() + mu_b.square() + c1);
  maps.contrast_structure = (2.0 * cov + c2) / (var_a + var_b + c2);
  return maps;
}

}  // namespace

double psnr(const torch::Tensor& a, const torch::Tensor& b) {
  TORCH_CHECK(a.sizes() == b.sizes(), "psnr: shape mismatch");
  auto xa = a.to(torch::kFloat64).clamp(0.0, 1.0);
  auto xb = b.to(torch::kFloat64).clamp(0.0, 1.0);
  const double mse = (xa - xb).square().mean().item<double>();
  return common::psnr_mse(mse);
}

double ssim(const torch::Tensor& a, const torch::Tensor& b) {
  TORCH_CHECK(a.sizes() == b.sizes(), "ssim: shape mismatch");
  auto ga = gray601(a), gb = gray601(b);
  if (ga.size(0) < 11 || ga.size(1) < 11)
    throw std::invalid_argument("ssim needs at least 11x11 input");
  auto maps = ssim_maps(ga, gb);
  return (maps.luminance * maps.contrast_structure).mean().item<double>();
}

double ms_ssim(const torch::Tensor& a, const torch::Tensor& b) {
  TORCH_CHECK(a.sizes() == b.sizes(), "ms_ssim: shape mismatch");
  static const double weights[5] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
  auto ga = gray601(a), gb = gray601(b);
  // 5 scales with an 11-tap window: (11-1) * 2^4 = 160 pixel minimum
  if (std::min(ga.size(0), ga.size(1)) < 160)
    throw std::invalid_argument("ms_ssim needs min dimension >= 160 for 5 scales");

  auto xa = ga.reshape({1, 1, ga.size(0), ga.size(1)});
  auto xb = gb.reshape({1, 1, gb.size(0), gb.size(1)});
  double score = 1.0;
  for (int scale = 0; scale < 5; ++scale) {
    auto maps = ssim_maps(xa.squeeze(0).squeeze(0), xb.squeeze(0).squeeze(0));
    if (scale < 4) {
      const double mcs =
          std::max(0.0, maps.contrast_structure.mean().item<double>());
      score *= std::pow(mcs, weights[scale]);
      xa = torch::avg_pool2d(xa, 2);
      xb = torch::avg_pool2d(xb, 2);
    } else {
      const double mssim = std::max(
          0.0, (maps.luminance * maps.contrast_structure).mean().item<double>());
      score *= std::pow(mssim, weights[scale]);
    }
  }
  return score;
}

MetricReport evaluate(const PredictFn& predict, const data::DatasetManifest& manifest,
                      const std::vector<std::string>& metrics,
                      feat::FeatureBank* bank) {
  for (const auto& e : manifest.entries)
    if (!e.rgb_path)
      throw std::runtime_error("evaluate needs paired targets; entry lacks rgb: " +
                               e.raw_path);
  for (const auto& m : metrics) {
    if (m != "psnr" && m != "ssim" && m != "ms_ssim" && m != "lpips")
      throw std::invalid_argument("unknown metric: " + m);
    if (m == "lpips" && bank == nullptr)
      throw std::invalid_argument("lpips metric requires a feature bank");
  }

  MetricReport report;
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    auto pred = predict(manifest, i).detach().clamp(0.0, 1.0);
    auto gt = data::load_rgb(manifest, i);
    MetricRow row;
    row.image_id = fs::path(manifest.entries[i].raw_path).stem().string();
    for (const auto& m : metrics) {
      if (m == "psnr") row.values["psnr"] = psnr(pred, gt);
      else if (m == "ssim") row.values["ssim"] = ssim(pred, gt);
      else if (m == "ms_ssim") row.values["ms_ssim"] = ms_ssim(pred, gt);
      else row.values["lpips"] = bank->perceptual_scores(pred, gt).lpips.item<double>();
    }
    report.rows.push_back(std::move(row));
  }

  for (const auto& m : metrics) {
    double sum = 0.0;
    for (const auto& row : report.rows) sum += row.values.at(m);
    report.aggregate[m] = sum / static_cast<double>(report.rows.size());
  }
  return report;
}

namespace {

std::string cell(const MetricRow& row, const std::string& key) {
  auto it = row.values.find(key);
  if (it == row.values.end()) return "";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", it->second);
  return buf;
}

std::string agg_cell(const MetricReport& r, const std::string& key) {
  auto it = r.aggregate.find(key);
  if (it == r.aggregate.end()) return "-";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", it->second);
  return buf;
}

}  // namespace

void write_report_csv(const MetricReport& report, const fs::path& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write report: " + path.string());
  f << "image_id,psnr,ssim,ms_ssim,lpips\n";
  for (const auto& row : report.rows)
    f << row.image_id << ',' << cell(row, "psnr") << ',' << cell(row, "ssim") << ','
      << cell(row, "ms_ssim") << ',' << cell(row, "lpips") << '\n';
}

void write_report_markdown(const MetricReport& report, const fs::path& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write report: " + path.string());
  f << "| Method | Dataset | Split | PSNR &uarr; | SSIM &uarr; | MS-SSIM &uarr; | LPIPS &darr; |\n";
  f << "|---|---|---|---|---|---|---|\n";
  f << "| " << report.model_tag << " | " << report.dataset_tag << " | "
    << report.split_tag << " | " << agg_cell(report, "psnr") << " | "
    << agg_cell(report, "ssim") << " | " << agg_cell(report, "ms_ssim") << " | "
    << agg_cell(report, "lpips") << " |\n";
}

}  // namespace isp::metric
