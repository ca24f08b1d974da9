#pragma once

#include "isp/features.hpp"

#include <torch/torch.h>

namespace isp::loss {

// Blur kernel A*exp(-(m-mu_x)^2/2sx^2 - (n-mu_y)^2/2sy^2); A is fixed by
// normalizing the entries to sum 1.
struct GaussianKernel {
  int size = 21;  // odd
  double sigma_x = 3.0, sigma_y = 3.0;
  double mu_x = 0.0, mu_y = 0.0;

  torch::Tensor build(torch::Dtype dtype = torch::kFloat32) const;
};

// Depthwise blur with reflection padding (constants are fixed points).
torch::Tensor gaussian_blur(const torch::Tensor& img, const GaussianKernel& k);

enum class ContentMode { Paired, Unpaired };

// Feature-space MSE on relu5_4-style maps, mean over all elements. Unpaired
// mode routes both images through luminance_replicate first.
torch::Tensor content_loss(const torch::Tensor& gen, const torch::Tensor& ref,
                           ContentMode mode, feat::FeatureBank& bank);

// MSE between blurred images (per-element mean).
torch::Tensor color_loss(const torch::Tensor& a, const torch::Tensor& b,
                         const GaussianKernel& k);

// Squared adjacent-pixel differences, each direction divided by its own
// count, averaged over the batch.
torch::Tensor tv_loss(const torch::Tensor& img);

struct TextureLosses {
  torch::Tensor lpips_plus, dists;
};
TextureLosses texture_losses(const torch::Tensor& gen, const torch::Tensor& gt,
                             feat::FeatureBank& bank);

torch::Tensor mse_loss(const torch::Tensor& a, const torch::Tensor& b);

}  // namespace isp::loss
