#pragma once

#include <torch/torch.h>

#include <functional>
#include <string>
#include <vector>

namespace isp::bayer {

enum class Pattern { RGGB, BGGR, GRBG, GBRG };

Pattern pattern_from_string(const std::string& s);
std::string to_string(Pattern p);

// (row, col) of each canonical plane inside the 2x2 Bayer cell.
// Gr = green sharing a row with red, Gb = green sharing a row with blue.
struct CellOffsets {
  std::pair<int, int> r, gr, gb, b;
};
CellOffsets offsets(Pattern p);

struct RawPatch {
  torch::Tensor mosaic;  // (H,W) float sensor counts
  Pattern pattern = Pattern::RGGB;
  double black_level = 0.0;
  double white_level = 65535.0;

  void validate() const;  // even dims, 0 <= black < white
};

// clamp((mosaic - black) / (white - black), 0, 1) -> (H,W)
torch::Tensor normalize(const RawPatch& raw);

// (4, H/2, W/2) in [0,1], plane order (R, Gr, Gb, B) for every pattern.
torch::Tensor pack(const RawPatch& raw);

// Scatter canonical planes back into a normalized (H,W) mosaic.
torch::Tensor unpack(const torch::Tensor& planes, Pattern pattern);

// Full-resolution (3,H,W) RGB in [0,1]. "bilinear" is built in; other
// algorithms (e.g. "menon") must be registered as plugins first.
torch::Tensor demosaic(const RawPatch& raw, const std::string& algo = "bilinear");

using DemosaicFn = std::function<torch::Tensor(const RawPatch&)>;
void register_demosaic(const std::string& name, DemosaicFn fn);
std::vector<std::string> demosaic_algorithms();

// sRGB transfer curve and LAB lightness, differentiable, (...,3,H,W) layouts.
torch::Tensor srgb_to_linear(const torch::Tensor& x);
torch::Tensor linear_to_srgb(const torch::Tensor& x);
torch::Tensor relative_luminance(const torch::Tensor& img);  // (...,1,H,W)
torch::Tensor lab_lightness(const torch::Tensor& img);       // L in [0,100]

// Gray image with the input's LAB lightness replicated across channels,
// re-encoded so the gray axis is a fixed point (L <-> Y is bijective, so
// retaining Y retains L; this keeps the op exactly idempotent).
torch::Tensor luminance_replicate(const torch::Tensor& img);

}  // namespace isp::bayer
