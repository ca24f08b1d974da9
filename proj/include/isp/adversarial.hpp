#pragma once

#include "isp/features.hpp"
#include "isp/losses.hpp"

#include <torch/torch.h>

#include <functional>

namespace isp::gan {

// Three-layer MLP applied per ViT token, mean-pooled to one realism score
// per image.
struct ColorDiscriminatorImpl : torch::nn::Module {
  ColorDiscriminatorImpl(int64_t embed_dim, std::uint64_t seed,
                         int64_t hidden1 = 512, int64_t hidden2 = 256);
  torch::Tensor forward(const torch::Tensor& tokens);  // (N,T,D) -> (N,)

  torch::nn::Linear fc1{nullptr}, fc2{nullptr}, fc3{nullptr};
};
TORCH_MODULE(ColorDiscriminator);

// Five conv layers (48,96,192,192,96; stride 2 at the first four) with
// LeakyReLU, then a two-layer FC head. Accepts one lin layer's channel
// count, fixed at construction.
struct TextureDiscriminatorImpl : torch::nn::Module {
  TextureDiscriminatorImpl(int64_t in_channels, std::uint64_t seed);
  torch::Tensor forward(const torch::Tensor& feats);  // (N,C,h,w) -> (N,)

  int64_t in_channels;
  torch::nn::Conv2d c1{nullptr}, c2{nullptr}, c3{nullptr}, c4{nullptr}, c5{nullptr};
  torch::nn::Linear fc1{nullptr}, fc2{nullptr};
};
TORCH_MODULE(TextureDiscriminator);

enum class CompareFn { Softplus };

struct GanPenaltyConfig {
  double gamma = 1.0;  // R1/R2 weight
  CompareFn f = CompareFn::Softplus;
};

using ScoreFn = std::function<torch::Tensor(const torch::Tensor&)>;

struct DLossParts {
  torch::Tensor total, relativistic, r1, r2;
};

// L_D = E[f(-(D(x_r)-D(x_f)))] + (gamma/2) E||grad_{x_r} D||^2
//                              + (gamma/2) E||grad_{x_f} D||^2.
// Penalty gradients are taken w.r.t. the feature maps fed to D; fakes are
// detached from the generator graph.
DLossParts d_loss(const ScoreFn& D, const torch::Tensor& real_feats,
                  const torch::Tensor& fake_feats, const GanPenaltyConfig& cfg);

// L_G = E[f(-(D(x_f)-D(x_r)))]; reals detached, fakes keep their graph.
torch::Tensor g_loss(const ScoreFn& D, const torch::Tensor& real_feats,
                     const torch::Tensor& fake_feats, const GanPenaltyConfig& cfg);

// Gaussian blur (optional) -> ViT tokens -> per-token MLP -> mean pool.
torch::Tensor color_realism(ColorDiscriminator& D, const torch::Tensor& imgs,
                            feat::FeatureBank& bank,
                            const loss::GaussianKernel* blur);

// grayscale -> lin-layer features -> conv discriminator.
torch::Tensor texture_realism(TextureDiscriminator& D, const torch::Tensor& imgs,
                              feat::FeatureBank& bank, feat::LpipsLayer layer);

}  // namespace isp::gan
