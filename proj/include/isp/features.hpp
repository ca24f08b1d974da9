#pragma once

#include <torch/torch.h>

#include <array>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

namespace isp::feat {

namespace fs = std::filesystem;

enum class LpipsLayer { Lin0, Lin1, Lin2, Lin3, Lin4 };

LpipsLayer lpips_layer_from_string(const std::string& s);
std::string to_string(LpipsLayer l);
int64_t lpips_layer_channels(LpipsLayer l);  // 64,192,384,256,256

struct InputSpec {
  int64_t native_size;            // inputs are resized/upsampled toward this
  int64_t hard_min;               // below this the extractor refuses
  std::array<double, 3> mean{};   // normalization applied internally
  std::array<double, 3> stddev{};
};

struct PerceptualScores {
  torch::Tensor lpips_plus;  // 0-dim, >= 0, 0 at identity
  torch::Tensor dists;
  torch::Tensor lpips;
};

// Frozen feature extractors shared by perceptual losses and discriminators.
// All methods are differentiable w.r.t. their image inputs; parameters never
// receive gradients. Callers pass plain [0,1] images; normalization happens
// inside (each extractor owns its constants).
class FeatureBank {
 public:
  virtual ~FeatureBank() = default;

  // (N,3,H,W) -> relu5_4-style map (N,C,H'/16,W'/16).
  virtual torch::Tensor vgg_content_features(const torch::Tensor& imgs) = 0;

  // (N,3,H,W) -> (N,196,D) patch tokens; CLS excluded by construction.
  virtual torch::Tensor vit_tokens(const torch::Tensor& imgs) = 0;
  virtual int64_t vit_embed_dim() const = 0;

  // Linearly reweighted backbone activations for one lin layer; channel
  // count preserved (lin0 -> 64, lin3 -> 256).
  virtual torch::Tensor lpips_layer_features(const torch::Tensor& gray3,
                                             LpipsLayer layer) = 0;

  virtual PerceptualScores perceptual_scores(const torch::Tensor& a,
                                             const torch::Tensor& b) = 0;

  virtual std::vector<torch::Tensor> frozen_parameters() const = 0;
  virtual InputSpec vgg_input_spec() const = 0;
  virtual InputSpec vit_input_spec() const = 0;
  virtual InputSpec lpips_input_spec() const = 0;
};

// Deterministic seed-pinned random conv stacks satisfying every shape
// contract; they make the full pipeline runnable with no weight download.
std::unique_ptr<FeatureBank> make_stub_bank(std::uint64_t seed,
                                            torch::Dtype dtype = torch::kFloat32);

// TorchScript modules exported into cache_dir by `uisp fetch-weights`.
std::unique_ptr<FeatureBank> make_pretrained_bank(const fs::path& cache_dir);

std::unique_ptr<FeatureBank> make_bank(const std::string& kind,
                                       const fs::path& cache_dir,
                                       std::uint64_t seed);

// BT.601 luma replicated to 3 channels; pure function.
torch::Tensor to_grayscale3(const torch::Tensor& img);

}  // namespace isp::feat
