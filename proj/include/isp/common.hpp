#pragma once

// Shared conventions:
//   RGB images   : float32/float64 CHW (3,H,W), values in [0,1]; batches NCHW.
//   Bayer mosaics: (H,W) float tensors holding raw sensor counts.
//   Packed RAW   : (4,H/2,W/2) in [0,1], plane order R, Gr, Gb, B.

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace isp::common {

namespace fs = std::filesystem;

// ---- PNG I/O (RAW = 16-bit grayscale, RGB = 8-bit color) ----

// (H,W) float tensor of sensor counts in [0, 65535].
torch::Tensor read_png_gray16(const fs::path& path);
void write_png_gray16(const fs::path& path, const torch::Tensor& counts);

// (3,H,W) float tensor in [0,1].
torch::Tensor read_png_rgb8(const fs::path& path);
void write_png_rgb8(const fs::path& path, const torch::Tensor& img);

// ---- Deterministic randomness ----
//
// mt19937 output is fully specified by the standard; the std:: distributions
// are not. Everything that must reproduce bit-exactly across platforms draws
// through this wrapper.
class Rng {
 public:
  explicit Rng(std::uint32_t seed) : state_(seed) {}

  std::uint32_t next_u32() { return state_(); }

  // Uniform in [0,1) with 24 bits of mantissa.
  double uniform() { return (next_u32() >> 8) * (1.0 / 16777216.0); }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Unbiased integer in [0, n), rejection sampled.
  std::uint32_t below(std::uint32_t n);

  // Standard normal via Box-Muller (second draw cached).
  double gaussian();

 private:
  std::mt19937 state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// In-place Fisher-Yates over indices [0, n), platform-stable.
std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint32_t seed);

// ---- Misc tensor helpers ----

// FNV-1a over the raw bytes of all tensors; used to assert frozen weights.
std::uint64_t checksum(const std::vector<torch::Tensor>& tensors);

// Bilinear resize of a NCHW batch (align_corners=false).
torch::Tensor resize_bilinear(const torch::Tensor& nchw, int64_t h, int64_t w);

double psnr_mse(double mse);  // 10*log10(1/mse), capped at 100 dB

}  // namespace isp::common
