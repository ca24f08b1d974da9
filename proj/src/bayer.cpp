#include "isp/bayer.hpp"

#include <map>
#include <mutex>
#include <sstream>
#include <stdexcept>

namespace isp::bayer {

using torch::indexing::None;
using torch::indexing::Slice;

Pattern pattern_from_string(const std::string& s) {
  if (s == "RGGB") return Pattern::RGGB;
  if (s == "BGGR") return Pattern::BGGR;
  if (s == "GRBG") return Pattern::GRBG;
  if (s == "GBRG") return Pattern::GBRG;
  throw std::invalid_argument("unknown Bayer pattern: " + s);
}

std::string to_string(Pattern p) {
  switch (p) {
    case Pattern::RGGB: return "RGGB";
    case Pattern::BGGR: return "BGGR";
    case Pattern::GRBG: return "GRBG";
    case Pattern::GBRG: return "GBRG";
  }
  return "?";
}

CellOffsets offsets(Pattern p) {
  switch (p) {
    case Pattern::RGGB: return {{0, 0}, {0, 1}, {1, 0}, {1, 1}};
    case Pattern::BGGR: return {{1, 1}, {1, 0}, {0, 1}, {0, 0}};
    case Pattern::GRBG: return {{0, 1}, {0, 0}, {1, 1}, {1, 0}};
    case Pattern::GBRG: return {{1, 0}, {1, 1}, {0, 0}, {0, 1}};
  }
  throw std::logic_error("bad pattern");
}

void RawPatch::validate() const {
  if (mosaic.dim() != 2) throw std::invalid_argument("mosaic must be (H,W)");
  if (mosaic.size(0) % 2 != 0 || mosaic.size(1) % 2 != 0)
    throw std::invalid_argument("mosaic dimensions must be even");
  if (!(black_level >= 0.0 && black_level < white_level))
    throw std::invalid_argument("need 0 <= black_level < white_level");
}

torch::Tensor normalize(const RawPatch& raw) {
  raw.validate();
  const double scale = raw.white_level - raw.black_level;
  return ((raw.mosaic.to(torch::kFloat32) - raw.black_level) / scale).clamp(0.0, 1.0);
}

torch::Tensor pack(const RawPatch& raw) {
  auto norm = normalize(raw);
  const auto off = offsets(raw.pattern);
  auto plane = [&norm](std::pair<int, int> o) {
    return norm.index({Slice(o.first, None, 2), Slice(o.second, None, 2)});
  };
  return torch::stack({plane(off.r), plane(off.gr), plane(off.gb), plane(off.b)}, 0);
}

torch::Tensor unpack(const torch::Tensor& planes, Pattern pattern) {
  TORCH_CHECK(planes.dim() == 3 && planes.size(0) == 4, "unpack expects (4,h,w)");
  const auto h = planes.size(1), w = planes.size(2);
  auto mosaic = torch::zeros({2 * h, 2 * w}, planes.options());
  const auto off = offsets(pattern);
  const std::pair<int, int> pos[4] = {off.r, off.gr, off.gb, off.b};
  for (int c = 0; c < 4; ++c) {
    mosaic.index_put_({Slice(pos[c].first, None, 2), Slice(pos[c].second, None, 2)},
                      planes[c]);
  }
  return mosaic;
}

namespace {

// Classic bilinear demosaic as mask-normalized convolution: sample pixels are
// reproduced exactly, missing ones are the weighted mean of their neighbors.
// Zero padding cancels between numerator and denominator, so constants are
// preserved at borders and the output stays in [0,1].
torch::Tensor demosaic_bilinear(const RawPatch& raw) {
  auto norm = normalize(raw);
  const auto h = norm.size(0), w = norm.size(1);
  const auto off = offsets(raw.pattern);

  auto mask_at = [&](std::initializer_list<std::pair<int, int>> cells) {
    auto m = torch::zeros({h, w}, norm.options());
    for (auto [r, c] : cells)
      m.index_put_({Slice(r, None, 2), Slice(c, None, 2)}, 1.0);
    return m;
  };
  auto mask_r = mask_at({off.r});
  auto mask_g = mask_at({off.gr, off.gb});
  auto mask_b = mask_at({off.b});

  auto k_rb = torch::tensor({{1.f, 2.f, 1.f}, {2.f, 4.f, 2.f}, {1.f, 2.f, 1.f}})
                  .reshape({1, 1, 3, 3});
  auto k_g = torch::tensor({{0.f, 1.f, 0.f}, {1.f, 4.f, 1.f}, {0.f, 1.f, 0.f}})
                 .reshape({1, 1, 3, 3});

  auto interp = [&](const torch::Tensor& mask, const torch::Tensor& k) {
    auto v = (norm * mask).reshape({1, 1, h, w});
    auto m = mask.reshape({1, 1, h, w});
    auto num = torch::conv2d(v, k, {}, 1, 1);
    auto den = torch::conv2d(m, k, {}, 1, 1);
    return (num / den).reshape({h, w});
  };

  auto rgb = torch::stack(
      {interp(mask_r, k_rb), interp(mask_g, k_g), interp(mask_b, k_rb)}, 0);
  return rgb.clamp(0.0, 1.0);
}

std::map<std::string, DemosaicFn>& registry() {
  static std::map<std::string, DemosaicFn> reg{{"bilinear", demosaic_bilinear}};
  return reg;
}
std::mutex registry_mutex;

}  // namespace

torch::Tensor demosaic(const RawPatch& raw, const std::string& algo) {
  DemosaicFn fn;
  {
    std::lock_guard<std::mutex> lock(registry_mutex);
    auto it = registry().find(algo);
    if (it == registry().end()) {
      std::ostringstream msg;
      msg << "unknown demosaic algorithm '" << algo << "' (available:";
      for (const auto& [name, _] : registry()) msg << ' ' << name;
      msg << "; 'menon' requires an external plugin)";
      throw std::invalid_argument(msg.str());
    }
    fn = it->second;
  }
  return fn(raw);
}

void register_demosaic(const std::string& name, DemosaicFn fn) {
  std::lock_guard<std::mutex> lock(registry_mutex);
  registry()[name] = std::move(fn);
}

std::vector<std::string> demosaic_algorithms() {
  std::lock_guard<std::mutex> lock(registry_mutex);
  std::vector<std::string> names;
  for (const auto& [name, _] : registry()) names.push_back(name);
  return names;
}

torch::Tensor srgb_to_linear(const torch::Tensor& x) {
  auto lo = x / 12.92;
  auto hi = torch::pow(((x + 0.055) / 1.055).clamp_min(1e-8), 2.4);
  return torch::where(x <= 0.04045, lo, hi);
}

torch::Tensor linear_to_srgb(const torch::Tensor& x) {
  auto lo = x * 12.92;
  auto hi = 1.055 * torch::pow(x.clamp_min(1e-8), 1.0 / 2.4) - 0.055;
  return torch::where(x <= 0.0031308, lo, hi);
}

torch::Tensor relative_luminance(const torch::Tensor& img) {
  TORCH_CHECK(img.size(-3) == 3, "expected 3-channel image");
  auto lin = srgb_to_linear(img);
  // sRGB / Rec.709 primaries, D65 white point
  auto w = torch::tensor({0.2126729f, 0.7151522f, 0.0721750f}, img.options())
               .reshape({3, 1, 1});
  return (lin * w).sum(-3, /*keepdim=*/true);
}

torch::Tensor lab_lightness(const torch::Tensor& img) {
  auto y = relative_luminance(img);  // Yn = 1 for D65 relative luminance
  const double d = 6.0 / 29.0;
  auto f_lin = y / (3.0 * d * d) + 4.0 / 29.0;
  auto f_cub = torch::pow(y.clamp_min(1e-10), 1.0 / 3.0);
  auto f = torch::where(y <= d * d * d, f_lin, f_cub);
  return 116.0 * f - 16.0;
}

torch::Tensor luminance_replicate(const torch::Tensor& img) {
  auto y = relative_luminance(img);
  auto gray = linear_to_srgb(y).clamp(0.0, 1.0);
  return torch::cat({gray, gray, gray}, -3);
}

}  // namespace isp::bayer
