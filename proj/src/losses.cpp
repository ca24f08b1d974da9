#include "isp/losses.hpp"

#include "isp/bayer.hpp"

#include <stdexcept>

namespace isp::loss {

namespace F = torch::nn::functional;

torch::Tensor GaussianKernel::build(torch::Dtype dtype) const {
  if (size % 2 == 0 || size < 1)
    throw std::invalid_argument("Gaussian kernel size must be odd and positive");
  const int half = size / 2;
  auto m = torch::arange(-half, half + 1, torch::TensorOptions().dtype(dtype));
  auto dy = (m - mu_y).square() / (2.0 * sigma_y * sigma_y);
  auto dx = (m - mu_x).square() / (2.0 * sigma_x * sigma_x);
  auto k = torch::exp(-(dx.reshape({size, 1}) + dy.reshape({1, size})));
  return k / k.sum();
}

namespace {

torch::Tensor as_batch(const torch::Tensor& img) {
  if (img.dim() == 3) return img.unsqueeze(0);
  TORCH_CHECK(img.dim() == 4, "expected (C,H,W) or (N,C,H,W)");
  return img;
}

}  // namespace

torch::Tensor gaussian_blur(const torch::Tensor& img, const GaussianKernel& k) {
  auto x = as_batch(img);
  const auto c = x.size(1), h = x.size(2), w = x.size(3);
  if (k.size > h || k.size > w)
    throw std::invalid_argument("blur kernel larger than image");
  auto kern = k.build(x.scalar_type()).reshape({1, 1, k.size, k.size}).expand({c, 1, k.size, k.size});
  const int64_t pad = k.size / 2;
  auto padded = F::pad(x, F::PadFuncOptions({pad, pad, pad, pad}).mode(torch::kReflect));
  auto out = F::conv2d(padded, kern, F::Conv2dFuncOptions().groups(c));
  return img.dim() == 3 ? out.squeeze(0) : out;
}

torch::Tensor content_loss(const torch::Tensor& gen, const torch::Tensor& ref,
                           ContentMode mode, feat::FeatureBank& bank) {
  TORCH_CHECK(gen.sizes() == ref.sizes(), "content_loss: shape mismatch ",
              gen.sizes(), " vs ", ref.sizes());
  torch::Tensor a = gen, b = ref;
  if (mode == ContentMode::Unpaired) {
    a = bayer::luminance_replicate(a);
    b = bayer::luminance_replicate(b);
  }
  auto fa = bank.vgg_content_features(a);
  auto fb = bank.vgg_content_features(b);
  return (fa - fb).square().mean();
}

torch::Tensor color_loss(const torch::Tensor& a, const torch::Tensor& b,
                         const GaussianKernel& k) {
  TORCH_CHECK(a.sizes() == b.sizes(), "color_loss: shape mismatch");
  return (gaussian_blur(a, k) - gaussian_blur(b, k)).square().mean();
}

torch::Tensor tv_loss(const torch::Tensor& img) {
  auto x = as_batch(img);
  const auto n = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
  if (h < 2 || w < 2)
    throw std::invalid_argument("tv_loss needs H,W >= 2");
  using torch::indexing::Slice;
  auto dv = x.index({Slice(), Slice(), Slice(1), Slice()}) -
            x.index({Slice(), Slice(), Slice(0, h - 1), Slice()});
  auto dh = x.index({Slice(), Slice(), Slice(), Slice(1)}) -
            x.index({Slice(), Slice(), Slice(), Slice(0, w - 1)});
  auto v = dv.square().sum() / static_cast<double>((h - 1) * w * c);
  auto hh = dh.square().sum() / static_cast<double>(h * (w - 1) * c);
  return (v + hh) / static_cast<double>(n);
}

TextureLosses texture_losses(const torch::Tensor& gen, const torch::Tensor& gt,
                             feat::FeatureBank& bank) {
  auto scores = bank.perceptual_scores(gen, gt);
  return {scores.lpips_plus, scores.dists};
}

torch::Tensor mse_loss(const torch::Tensor& a, const torch::Tensor& b) {
  TORCH_CHECK(a.sizes() == b.sizes(), "mse_loss: shape mismatch");
  return (a - b).square().mean();
}

}  // namespace isp::loss
