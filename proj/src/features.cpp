#include "isp/features.hpp"

#include "isp/common.hpp"

#include <torch/script.h>

#include <stdexcept>

namespace isp::feat {

namespace F = torch::nn::functional;

LpipsLayer lpips_layer_from_string(const std::string& s) {
  if (s == "lin0") return LpipsLayer::Lin0;
  if (s == "lin1") return LpipsLayer::Lin1;
  if (s == "lin2") return LpipsLayer::Lin2;
  if (s == "lin3") return LpipsLayer::Lin3;
  if (s == "lin4") return LpipsLayer::Lin4;
  throw std::invalid_argument("unknown lpips layer tag: " + s);
}

std::string to_string(LpipsLayer l) {
  switch (l) {
    case LpipsLayer::Lin0: return "lin0";
    case LpipsLayer::Lin1: return "lin1";
    case LpipsLayer::Lin2: return "lin2";
    case LpipsLayer::Lin3: return "lin3";
    case LpipsLayer::Lin4: return "lin4";
  }
  return "?";
}

int64_t lpips_layer_channels(LpipsLayer l) {
  static constexpr int64_t chans[5] = {64, 192, 384, 256, 256};
  return chans[static_cast<int>(l)];
}

torch::Tensor to_grayscale3(const torch::Tensor& img) {
  TORCH_CHECK(img.size(-3) == 3, "to_grayscale3 expects 3-channel input");
  auto w = torch::tensor({0.299f, 0.587f, 0.114f}, img.options()).reshape({3, 1, 1});
  auto y = (img * w).sum(-3, /*keepdim=*/true);
  return torch::cat({y, y, y}, -3);
}

namespace {

torch::Tensor as_batch(const torch::Tensor& img) {
  if (img.dim() == 3) return img.unsqueeze(0);
  TORCH_CHECK(img.dim() == 4, "expected (3,H,W) or (N,3,H,W) image");
  return img;
}

torch::Tensor normalize_channels(const torch::Tensor& x, const std::array<double, 3>& mean,
                                 const std::array<double, 3>& stddev) {
  auto m = torch::tensor({mean[0], mean[1], mean[2]}, x.options()).reshape({1, 3, 1, 1});
  auto s = torch::tensor({stddev[0], stddev[1], stddev[2]}, x.options()).reshape({1, 3, 1, 1});
  return (x - m) / s;
}

// Unit L2 norm along the channel dim (LPIPS-style).
torch::Tensor unit_normalize(const torch::Tensor& f) {
  auto n = torch::sqrt(f.square().sum(1, /*keepdim=*/true) + 1e-10);
  return f / n;
}

torch::Tensor seeded_uniform(std::vector<int64_t> shape, double lo, double hi,
                             torch::Generator& gen) {
  auto u = torch::rand(shape, gen, torch::TensorOptions().dtype(torch::kFloat32));
  return u.mul_(hi - lo).add_(lo);
}

struct StubConv {
  torch::Tensor weight, bias;
  int64_t stride;

  torch::Tensor operator()(const torch::Tensor& x) const {
    return torch::conv2d(x, weight.to(x.dtype()), bias.to(x.dtype()), stride,
                         /*padding=*/weight.size(2) / 2);
  }
};

StubConv make_stub_conv(int64_t in, int64_t out, int64_t k, int64_t stride,
                        torch::Generator& gen) {
  const double bound = std::sqrt(6.0 / static_cast<double>(in * k * k));
  StubConv c;
  c.weight = seeded_uniform({out, in, k, k}, -bound, bound, gen);
  c.bias = seeded_uniform({out}, -0.05, 0.05, gen);
  c.stride = stride;
  c.weight.set_requires_grad(false);
  c.bias.set_requires_grad(false);
  return c;
}

// Seed-pinned random extractors. Shapes and freezing mirror the pretrained
// ones; the representations are random but stable, which is all the desk
// scale tests and CI need.
class StubFeatureBank final : public FeatureBank {
 public:
  StubFeatureBank(std::uint64_t seed, torch::Dtype dtype) : dtype_(dtype) {
    auto gen = torch::make_generator<torch::CPUGeneratorImpl>(seed);

    vgg_.push_back(make_stub_conv(3, 32, 3, 1, gen));
    vgg_.push_back(make_stub_conv(32, 64, 3, 2, gen));
    vgg_.push_back(make_stub_conv(64, 64, 3, 2, gen));
    vgg_.push_back(make_stub_conv(64, 64, 3, 2, gen));
    vgg_.push_back(make_stub_conv(64, 64, 3, 2, gen));

    const double vb = std::sqrt(6.0 / 768.0);
    vit_proj_w_ = seeded_uniform({vit_dim_, 768}, -vb, vb, gen);
    vit_proj_b_ = seeded_uniform({vit_dim_}, -0.05, 0.05, gen);
    const double mb = std::sqrt(6.0 / static_cast<double>(vit_dim_));
    vit_mix_w_ = seeded_uniform({vit_dim_, vit_dim_}, -mb, mb, gen);
    vit_mix_b_ = seeded_uniform({vit_dim_}, -0.05, 0.05, gen);

    int64_t in = 3;
    const int64_t strides[5] = {2, 2, 2, 1, 1};
    for (int l = 0; l < 5; ++l) {
      const auto out = lpips_layer_channels(static_cast<LpipsLayer>(l));
      alex_.push_back(make_stub_conv(in, out, 3, strides[l], gen));
      lin_w_.push_back(seeded_uniform({1, out, 1, 1}, 0.5, 1.5, gen) /
                       static_cast<double>(out));
      in = out;
    }

    for (auto* t : all_tensors()) {
      *t = t->to(dtype_);
      t->set_requires_grad(false);
    }
  }

  torch::Tensor vgg_content_features(const torch::Tensor& imgs) override {
    auto x = prep(imgs, vgg_input_spec());
    x = normalize_channels(x, vgg_input_spec().mean, vgg_input_spec().stddev);
    for (std::size_t i = 0; i < vgg_.size(); ++i) {
      x = vgg_[i](x);
      x = torch::relu(x);
    }
    return x;
  }

  torch::Tensor vit_tokens(const torch::Tensor& imgs) override {
    auto x = as_batch(imgs).to(dtype_);
    x = common::resize_bilinear(x, 224, 224);
    x = normalize_channels(x, vit_input_spec().mean, vit_input_spec().stddev);
    auto patches = F::unfold(x, F::UnfoldFuncOptions(16).stride(16));  // (N,768,196)
    auto tokens = patches.transpose(1, 2);                             // (N,196,768)
    tokens = torch::relu(torch::linear(tokens, vit_proj_w_.to(tokens.dtype()),
                                       vit_proj_b_.to(tokens.dtype())));
    tokens = torch::linear(tokens, vit_mix_w_.to(tokens.dtype()),
                           vit_mix_b_.to(tokens.dtype()));
    return tokens;
  }

  int64_t vit_embed_dim() const override { return vit_dim_; }

  torch::Tensor lpips_layer_features(const torch::Tensor& gray3,
                                     LpipsLayer layer) override {
    return lpips_stack(gray3)[static_cast<int>(layer)];
  }

  PerceptualScores perceptual_scores(const torch::Tensor& a,
                                     const torch::Tensor& b) override {
    TORCH_CHECK(a.sizes() == b.sizes(), "perceptual_scores: shape mismatch ",
                a.sizes(), " vs ", b.sizes());
    auto fa_raw = raw_stack(a);
    auto fb_raw = raw_stack(b);

    PerceptualScores out;
    auto zero = torch::zeros({}, torch::TensorOptions().dtype(dtype_));
    out.lpips = zero.clone();
    out.lpips_plus = zero.clone();

    for (int l = 0; l < 5; ++l) {
      auto w = lin_w_[l].to(fa_raw[l].dtype());
      auto ga = unit_normalize(fa_raw[l]) * torch::sqrt(w);
      auto gb = unit_normalize(fb_raw[l]) * torch::sqrt(w);
      auto d = (ga - gb).square().sum(1, /*keepdim=*/true);  // (N,1,h,w)
      out.lpips = out.lpips + d.mean(std::vector<int64_t>{2, 3}).mean();

      // semantic-weighted pooling: reference feature magnitude as weights
      auto mag = fb_raw[l].square().sum(1, /*keepdim=*/true);
      auto wmap = mag / (mag.sum(std::vector<int64_t>{2, 3}, /*keepdim=*/true) + 1e-10);
      out.lpips_plus = out.lpips_plus + (d * wmap).sum(std::vector<int64_t>{2, 3}).mean();
    }

    out.dists = dists_score(as_batch(a).to(dtype_), as_batch(b).to(dtype_), fa_raw, fb_raw);
    return out;
  }

  std::vector<torch::Tensor> frozen_parameters() const override {
    std::vector<torch::Tensor> out;
    for (auto* t : const_cast<StubFeatureBank*>(this)->all_tensors()) out.push_back(*t);
    return out;
  }

  InputSpec vgg_input_spec() const override {
    return {224, 8, {0.485, 0.456, 0.406}, {0.229, 0.224, 0.225}};
  }
  InputSpec vit_input_spec() const override {
    return {224, 1, {0.5, 0.5, 0.5}, {0.5, 0.5, 0.5}};
  }
  InputSpec lpips_input_spec() const override {
    return {64, 8, {0.5, 0.5, 0.5}, {0.5, 0.5, 0.5}};
  }

 private:
  std::vector<torch::Tensor*> all_tensors() {
    std::vector<torch::Tensor*> out;
    for (auto& c : vgg_) { out.push_back(&c.weight); out.push_back(&c.bias); }
    for (auto& c : alex_) { out.push_back(&c.weight); out.push_back(&c.bias); }
    for (auto& w : lin_w_) out.push_back(&w);
    out.push_back(&vit_proj_w_); out.push_back(&vit_proj_b_);
    out.push_back(&vit_mix_w_); out.push_back(&vit_mix_b_);
    return out;
  }

  torch::Tensor prep(const torch::Tensor& imgs, const InputSpec& spec) {
    auto x = as_batch(imgs).to(dtype_);
    TORCH_CHECK(x.size(1) == 3, "extractor expects 3-channel input");
    TORCH_CHECK(x.size(2) >= spec.hard_min && x.size(3) >= spec.hard_min,
                "input resolution ", x.size(2), "x", x.size(3),
                " below extractor minimum ", spec.hard_min);
    if (x.size(2) < 32 || x.size(3) < 32)
      x = common::resize_bilinear(x, std::max<int64_t>(x.size(2), 32),
                                  std::max<int64_t>(x.size(3), 32));
    return x;
  }

  // Raw per-stage activations of the AlexNet-style stack.
  std::vector<torch::Tensor> raw_stack(const torch::Tensor& imgs) {
    auto x = prep(imgs, lpips_input_spec());
    x = normalize_channels(x, lpips_input_spec().mean, lpips_input_spec().stddev);
    std::vector<torch::Tensor> feats;
    for (int l = 0; l < 5; ++l) {
      x = torch::relu(alex_[l](x));
      feats.push_back(x);
    }
    return feats;
  }

  // sqrt(w)-scaled unit-normalized maps; what the scalar metric differences
  // and what the texture discriminators consume.
  std::vector<torch::Tensor> lpips_stack(const torch::Tensor& imgs) {
    auto feats = raw_stack(imgs);
    for (int l = 0; l < 5; ++l)
      feats[l] = unit_normalize(feats[l]) * torch::sqrt(lin_w_[l].to(feats[l].dtype()));
    return feats;
  }

  torch::Tensor dists_score(const torch::Tensor& a, const torch::Tensor& b,
                            const std::vector<torch::Tensor>& fa,
                            const std::vector<torch::Tensor>& fb) {
    constexpr double c1 = 1e-6, c2 = 1e-6;
    std::vector<torch::Tensor> sa{a}, sb{b};
    sa.insert(sa.end(), fa.begin(), fa.end());
    sb.insert(sb.end(), fb.begin(), fb.end());

    torch::Tensor acc = torch::zeros({}, a.options());
    int64_t n_stages = static_cast<int64_t>(sa.size());
    for (std::size_t i = 0; i < sa.size(); ++i) {
      auto ma = sa[i].mean(std::vector<int64_t>{2, 3}, true);
      auto mb = sb[i].mean(std::vector<int64_t>{2, 3}, true);
      auto va = (sa[i] - ma).square().mean(std::vector<int64_t>{2, 3}, true);
      auto vb = (sb[i] - mb).square().mean(std::vector<int64_t>{2, 3}, true);
      auto cov = ((sa[i] - ma) * (sb[i] - mb)).mean(std::vector<int64_t>{2, 3}, true);
      auto texture = (2.0 * ma * mb + c1) / (ma.square() + mb.square() + c1);
      auto structure = (2.0 * cov + c2) / (va + vb + c2);
      acc = acc + (0.5 * texture + 0.5 * structure).mean();
    }
    return 1.0 - acc / static_cast<double>(n_stages);
  }

  torch::Dtype dtype_;
  int64_t vit_dim_ = 192;
  std::vector<StubConv> vgg_, alex_;
  std::vector<torch::Tensor> lin_w_;
  torch::Tensor vit_proj_w_, vit_proj_b_, vit_mix_w_, vit_mix_b_;
};

// Wraps TorchScript exports produced by `uisp fetch-weights`:
//   vgg19_relu54.pt  : (N,3,H,W) [0,1] -> (N,512,H/16,W/16)
//   vit_b16.pt       : (N,3,224,224) [0,1] -> (N,196,768)
//   lpips_alex.pt    : (N,3,H,W) [0,1] -> 5 maps, sqrt(lin_w)*normalized
//   dists.pt         : (a,b) -> (N,) scores
class JitFeatureBank final : public FeatureBank {
 public:
  explicit JitFeatureBank(const fs::path& cache_dir) : cache_(cache_dir) {
    vgg_ = load("vgg19_relu54.pt");
    vit_ = load("vit_b16.pt");
    lpips_ = load("lpips_alex.pt");
    dists_ = load("dists.pt");
    for (auto* m : {&vgg_, &vit_, &lpips_, &dists_}) {
      m->eval();
      for (auto p : m->parameters()) p.set_requires_grad(false);
    }
  }

  torch::Tensor vgg_content_features(const torch::Tensor& imgs) override {
    auto x = prep(imgs, vgg_input_spec());
    return vgg_.forward({x}).toTensor();
  }

  torch::Tensor vit_tokens(const torch::Tensor& imgs) override {
    auto x = common::resize_bilinear(as_batch(imgs), 224, 224);
    return vit_.forward({x}).toTensor();
  }

  int64_t vit_embed_dim() const override { return 768; }

  torch::Tensor lpips_layer_features(const torch::Tensor& gray3,
                                     LpipsLayer layer) override {
    auto maps = lpips_.forward({prep(gray3, lpips_input_spec())}).toTensorVector();
    return maps.at(static_cast<std::size_t>(layer));
  }

  PerceptualScores perceptual_scores(const torch::Tensor& a,
                                     const torch::Tensor& b) override {
    TORCH_CHECK(a.sizes() == b.sizes(), "perceptual_scores: shape mismatch");
    auto xa = prep(a, lpips_input_spec());
    auto xb = prep(b, lpips_input_spec());
    auto ga = lpips_.forward({xa}).toTensorVector();
    auto gb = lpips_.forward({xb}).toTensorVector();
    PerceptualScores out;
    out.lpips = torch::zeros({}, xa.options());
    out.lpips_plus = torch::zeros({}, xa.options());
    for (std::size_t l = 0; l < ga.size(); ++l) {
      auto d = (ga[l] - gb[l]).square().sum(1, true);
      out.lpips = out.lpips + d.mean(std::vector<int64_t>{2, 3}).mean();
      auto mag = gb[l].square().sum(1, true);
      auto wmap = mag / (mag.sum(std::vector<int64_t>{2, 3}, true) + 1e-10);
      out.lpips_plus = out.lpips_plus + (d * wmap).sum(std::vector<int64_t>{2, 3}).mean();
    }
    out.dists = dists_.forward({xa, xb}).toTensor().mean();
    return out;
  }

  std::vector<torch::Tensor> frozen_parameters() const override {
    std::vector<torch::Tensor> out;
    for (auto* m : {&vgg_, &vit_, &lpips_, &dists_})
      for (auto p : m->parameters()) out.push_back(p);
    return out;
  }

  InputSpec vgg_input_spec() const override {
    return {224, 8, {0.485, 0.456, 0.406}, {0.229, 0.224, 0.225}};
  }
  InputSpec vit_input_spec() const override {
    return {224, 1, {0.5, 0.5, 0.5}, {0.5, 0.5, 0.5}};
  }
  InputSpec lpips_input_spec() const override {
    return {64, 8, {-0.030, -0.088, -0.188}, {0.458, 0.448, 0.450}};
  }

 private:
  torch::jit::script::Module load(const std::string& name) {
    auto path = cache_ / name;
    if (!fs::exists(path))
      throw std::runtime_error("pretrained extractor missing: " + path.string() +
                               " (run `uisp fetch-weights` first)");
    return torch::jit::load(path.string());
  }

  torch::Tensor prep(const torch::Tensor& imgs, const InputSpec& spec) {
    auto x = as_batch(imgs);
    TORCH_CHECK(x.size(2) >= spec.hard_min && x.size(3) >= spec.hard_min,
                "input resolution below extractor minimum ", spec.hard_min);
    if (x.size(2) < 32 || x.size(3) < 32)
      x = common::resize_bilinear(x, std::max<int64_t>(x.size(2), 32),
                                  std::max<int64_t>(x.size(3), 32));
    return x;
  }

  fs::path cache_;
  mutable torch::jit::script::Module vgg_, vit_, lpips_, dists_;
};

}  // namespace

std::unique_ptr<FeatureBank> make_stub_bank(std::uint64_t seed, torch::Dtype dtype) {
  return std::make_unique<StubFeatureBank>(seed, dtype);
}

std::unique_ptr<FeatureBank> make_pretrained_bank(const fs::path& cache_dir) {
  return std::make_unique<JitFeatureBank>(cache_dir);
}

std::unique_ptr<FeatureBank> make_bank(const std::string& kind,
                                       const fs::path& cache_dir,
                                       std::uint64_t seed) {
  if (kind == "stub") return make_stub_bank(seed);
  if (kind == "pretrained") {
    auto dir = cache_dir;
    if (dir.empty()) {
      const char* env = std::getenv("UISP_EXTRACTOR_CACHE");
      if (env != nullptr) dir = env;
    }
    if (dir.empty())
      throw std::runtime_error(
          "pretrained extractors need a cache dir (config cache_dir or "
          "UISP_EXTRACTOR_CACHE)");
    return make_pretrained_bank(dir);
  }
  throw std::invalid_argument("extractors must be 'stub' or 'pretrained', got '" +
                              kind + "'");
}

}  // namespace isp::feat
