#include "isp/common.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include <cmath>
#include <stdexcept>

namespace isp::common {

torch::Tensor read_png_gray16(const fs::path& path) {
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (m.empty()) throw std::runtime_error("cannot read RAW png: " + path.string());
  if (m.channels() != 1)
    throw std::runtime_error("RAW png must be single-channel: " + path.string());
  cv::Mat m16;
  if (m.depth() == CV_16U) {
    m16 = m;
  } else if (m.depth() == CV_8U) {
    m.convertTo(m16, CV_16U, 257.0);  // widen 8-bit raws, 255 -> 65535
  } else {
    throw std::runtime_error("unsupported RAW png depth: " + path.string());
  }
  auto t = torch::from_blob(m16.ptr<std::uint16_t>(), {m16.rows, m16.cols},
                            torch::kUInt16)
               .clone();
  return t.to(torch::kFloat32);
}

void write_png_gray16(const fs::path& path, const torch::Tensor& counts) {
  TORCH_CHECK(counts.dim() == 2, "write_png_gray16 expects (H,W)");
  auto t = counts.detach().to(torch::kFloat32).clamp(0, 65535).round().to(torch::kUInt16).contiguous();
  cv::Mat m(static_cast<int>(t.size(0)), static_cast<int>(t.size(1)), CV_16UC1,
            t.data_ptr<std::uint16_t>());
  if (!cv::imwrite(path.string(), m))
    throw std::runtime_error("cannot write png: " + path.string());
}

torch::Tensor read_png_rgb8(const fs::path& path) {
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_COLOR);  // BGR
  if (m.empty()) throw std::runtime_error("cannot read RGB png: " + path.string());
  auto t = torch::from_blob(m.ptr<std::uint8_t>(), {m.rows, m.cols, 3}, torch::kUInt8)
               .clone();
  // BGR -> RGB
  return t.permute({2, 0, 1}).flip(0).to(torch::kFloat32).div(255.0).contiguous();
}

void write_png_rgb8(const fs::path& path, const torch::Tensor& img) {
  TORCH_CHECK(img.dim() == 3 && img.size(0) == 3, "write_png_rgb8 expects (3,H,W)");
  auto t = img.detach()
               .to(torch::kFloat32)
               .clamp(0, 1)
               .mul(255.0)
               .round()
               .to(torch::kUInt8)
               .flip(0)  // RGB -> BGR
               .permute({1, 2, 0})
               .contiguous();
  cv::Mat bgr(static_cast<int>(t.size(0)), static_cast<int>(t.size(1)), CV_8UC3,
              t.data_ptr<std::uint8_t>());
  if (!cv::imwrite(path.string(), bgr))
    throw std::runtime_error("cannot write png: " + path.string());
}

std::uint32_t Rng::below(std::uint32_t n) {
  if (n == 0) throw std::invalid_argument("Rng::below(0)");
  const std::uint32_t limit = UINT32_MAX - UINT32_MAX % n;
  std::uint32_t x;
  do {
    x = next_u32();
  } while (x >= limit);
  return x % n;
}

double Rng::gaussian() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = 0.0;
  while (u1 <= 1e-12) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * M_PI * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint32_t seed) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = rng.below(static_cast<std::uint32_t>(i));
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

std::uint64_t checksum(const std::vector<torch::Tensor>& tensors) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const std::uint8_t* p, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 1099511628211ull;
    }
  };
  for (const auto& t : tensors) {
    auto c = t.detach().contiguous();
    mix(static_cast<const std::uint8_t*>(c.const_data_ptr()), c.numel() * c.element_size());
  }
  return h;
}

torch::Tensor resize_bilinear(const torch::Tensor& nchw, int64_t h, int64_t w) {
  namespace F = torch::nn::functional;
  return F::interpolate(nchw, F::InterpolateFuncOptions()
                                  .size(std::vector<int64_t>{h, w})
                                  .mode(torch::kBilinear)
                                  .align_corners(false));
}

double psnr_mse(double mse) {
  if (mse < 1e-10) return 100.0;
  return 10.0 * std::log10(1.0 / mse);
}

}  // namespace isp::common
