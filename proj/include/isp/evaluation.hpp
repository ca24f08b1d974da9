#pragma once

#include "isp/dataio.hpp"
#include "isp/features.hpp"

#include <torch/torch.h>

#include <functional>
#include <map>
#include <string>
#include <vector>

namespace isp::metric {

namespace fs = std::filesystem;

// Inputs are clamped to [0,1]; 10*log10(1/MSE), capped at 100 dB.
double psnr(const torch::Tensor& a, const torch::Tensor& b);

// Windowed SSIM on BT.601 grayscale: 11x11 Gaussian window (sigma 1.5),
// k1=0.01, k2=0.03, L=1, valid windows only (no padding).
double ssim(const torch::Tensor& a, const torch::Tensor& b);

// 5-scale MS-SSIM, standard weights; requires min(H,W) >= 160.
double ms_ssim(const torch::Tensor& a, const torch::Tensor& b);

struct MetricRow {
  std::string image_id;
  std::map<std::string, double> values;
};

struct MetricReport {
  std::vector<MetricRow> rows;
  std::map<std::string, double> aggregate;  // arithmetic means
  std::string model_tag, dataset_tag, split_tag;
};

// Produces the (3,H,W) prediction for one manifest entry.
using PredictFn =
    std::function<torch::Tensor(const data::DatasetManifest&, std::size_t)>;

// Runs inference per entry and computes the requested metrics
// (psnr/ssim/ms_ssim/lpips). lpips requires a feature bank.
MetricReport evaluate(const PredictFn& predict, const data::DatasetManifest& manifest,
                      const std::vector<std::string>& metrics,
                      feat::FeatureBank* bank = nullptr);

void write_report_csv(const MetricReport& report, const fs::path& path);
void write_report_markdown(const MetricReport& report, const fs::path& path);

}  // namespace isp::metric
