#include "isp/adversarial.hpp"

#include <stdexcept>

namespace isp::gan {

namespace {

void seeded_uniform_init(torch::Tensor& w, torch::Tensor& b, int64_t fan_in,
                         torch::Generator& gen) {
  torch::NoGradGuard no_grad;
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  w.copy_(torch::rand(w.sizes(), gen, w.options()).mul_(2 * bound).sub_(bound));
  b.zero_();
}

torch::Tensor compare(CompareFn f, const torch::Tensor& x) {
  switch (f) {
    case CompareFn::Softplus: return torch::softplus(x);
  }
  throw std::logic_error("bad CompareFn");
}

}  // namespace

ColorDiscriminatorImpl::ColorDiscriminatorImpl(int64_t embed_dim, std::uint64_t seed,
                                               int64_t hidden1, int64_t hidden2) {
  fc1 = register_module("fc1", torch::nn::Linear(embed_dim, hidden1));
  fc2 = register_module("fc2", torch::nn::Linear(hidden1, hidden2));
  fc3 = register_module("fc3", torch::nn::Linear(hidden2, 1));
  auto gen = torch::make_generator<torch::CPUGeneratorImpl>(seed);
  seeded_uniform_init(fc1->weight, fc1->bias, embed_dim, gen);
  seeded_uniform_init(fc2->weight, fc2->bias, hidden1, gen);
  seeded_uniform_init(fc3->weight, fc3->bias, hidden2, gen);
}

torch::Tensor ColorDiscriminatorImpl::forward(const torch::Tensor& tokens) {
  TORCH_CHECK(tokens.dim() == 3, "color discriminator expects (N,T,D) tokens");
  TORCH_CHECK(tokens.size(2) == fc1->weight.size(1),
              "token embed dim mismatch: expected ", fc1->weight.size(1), ", got ",
              tokens.size(2));
  auto x = torch::relu(fc1->forward(tokens));
  x = torch::relu(fc2->forward(x));
  x = fc3->forward(x);           // (N,T,1)
  return x.squeeze(-1).mean(1);  // mean pool over tokens -> (N,)
}

TextureDiscriminatorImpl::TextureDiscriminatorImpl(int64_t in_channels_,
                                                   std::uint64_t seed)
    : in_channels(in_channels_) {
  auto conv = [](int64_t in, int64_t out, int64_t stride) {
    return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).stride(stride).padding(1));
  };
  c1 = register_module("c1", conv(in_channels, 48, 2));
  c2 = register_module("c2", conv(48, 96, 2));
  c3 = register_module("c3", conv(96, 192, 2));
  c4 = register_module("c4", conv(192, 192, 2));
  c5 = register_module("c5", conv(192, 96, 1));
  fc1 = register_module("fc1", torch::nn::Linear(96 * 4 * 4, 1024));
  fc2 = register_module("fc2", torch::nn::Linear(1024, 1));

  auto gen = torch::make_generator<torch::CPUGeneratorImpl>(seed);
  for (torch::nn::Conv2d* c : {&c1, &c2, &c3, &c4, &c5}) {
    auto& conv = *c;
    seeded_uniform_init(conv->weight, conv->bias, conv->weight.size(1) * 9, gen);
  }
  seeded_uniform_init(fc1->weight, fc1->bias, fc1->weight.size(1), gen);
  seeded_uniform_init(fc2->weight, fc2->bias, fc2->weight.size(1), gen);
}

torch::Tensor TextureDiscriminatorImpl::forward(const torch::Tensor& feats) {
  TORCH_CHECK(feats.dim() == 4, "texture discriminator expects (N,C,h,w)");
  if (feats.size(1) != in_channels)
    throw std::invalid_argument(
        "texture discriminator channel mismatch: configured for " +
        std::to_string(in_channels) + " channels, got " +
        std::to_string(feats.size(1)));
  auto lrelu = [](const torch::Tensor& x) { return torch::leaky_relu(x, 0.2); };
  auto x = lrelu(c1->forward(feats));
  x = lrelu(c2->forward(x));
  x = lrelu(c3->forward(x));
  x = lrelu(c4->forward(x));
  x = lrelu(c5->forward(x));
  x = torch::adaptive_avg_pool2d(x, {4, 4}).flatten(1);
  x = lrelu(fc1->forward(x));
  return fc2->forward(x).squeeze(-1);
}

namespace {

// (gamma/2) * E_n || d score_n / d input_n ||^2, differentiable in D's params.
torch::Tensor input_gradient_penalty(const torch::Tensor& scores,
                                     const torch::Tensor& inputs, double gamma) {
  if (!scores.requires_grad())  // score has no graph at all (constant D)
    return torch::zeros({}, scores.options());
  auto grads = torch::autograd::grad({scores.sum()}, {inputs}, /*grad_outputs=*/{},
                                     /*retain_graph=*/true, /*create_graph=*/true,
                                     /*allow_unused=*/true);
  if (!grads[0].defined())  // D ignores its input (e.g. constant closure)
    return torch::zeros({}, scores.options());
  return (gamma / 2.0) * grads[0].square().flatten(1).sum(1).mean();
}

}  // namespace

DLossParts d_loss(const ScoreFn& D, const torch::Tensor& real_feats,
                  const torch::Tensor& fake_feats, const GanPenaltyConfig& cfg) {
  if (real_feats.size(0) == 0 || fake_feats.size(0) == 0)
    throw std::invalid_argument("d_loss: empty batch");
  TORCH_CHECK(real_feats.size(0) == fake_feats.size(0),
              "d_loss: real/fake batch sizes must match for relativistic pairing");

  auto xr = real_feats.detach().requires_grad_(true);
  auto xf = fake_feats.detach().requires_grad_(true);
  auto sr = D(xr);
  auto sf = D(xf);

  DLossParts parts;
  parts.relativistic = compare(cfg.f, -(sr - sf)).mean();
  parts.r1 = input_gradient_penalty(sr, xr, cfg.gamma);
  parts.r2 = input_gradient_penalty(sf, xf, cfg.gamma);
  parts.total = parts.relativistic + parts.r1 + parts.r2;
  return parts;
}

torch::Tensor g_loss(const ScoreFn& D, const torch::Tensor& real_feats,
                     const torch::Tensor& fake_feats, const GanPenaltyConfig& cfg) {
  if (real_feats.size(0) == 0 || fake_feats.size(0) == 0)
    throw std::invalid_argument("g_loss: empty batch");
  auto sr = D(real_feats.detach());
  auto sf = D(fake_feats);
  return compare(cfg.f, -(sf - sr)).mean();
}

torch::Tensor color_realism(ColorDiscriminator& D, const torch::Tensor& imgs,
                            feat::FeatureBank& bank,
                            const loss::GaussianKernel* blur) {
  auto x = imgs.dim() == 3 ? imgs.unsqueeze(0) : imgs;
  if (blur != nullptr) x = loss::gaussian_blur(x, *blur);
  return D->forward(bank.vit_tokens(x));
}

torch::Tensor texture_realism(TextureDiscriminator& D, const torch::Tensor& imgs,
                              feat::FeatureBank& bank, feat::LpipsLayer layer) {
  auto x = imgs.dim() == 3 ? imgs.unsqueeze(0) : imgs;
  auto feats = bank.lpips_layer_features(feat::to_grayscale3(x), layer);
  return D->forward(feats);
}

}  // namespace isp::gan
