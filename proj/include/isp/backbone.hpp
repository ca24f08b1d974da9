#pragma once

#include <torch/torch.h>

#include <array>
#include <filesystem>
#include <map>
#include <string>

namespace isp::model {

namespace fs = std::filesystem;

enum class Arch { Efficient, Robust };

Arch arch_from_string(const std::string& s);
std::string to_string(Arch a);

// Per-conv output channels; the last entry is pinned to 12 = 3 * upscale^2.
std::array<int64_t, 3> channel_plan(Arch a);

// conv3x3 -> Tanh -> conv3x3 -> ReLU -> conv3x3 -> depth-to-space(2).
// Depth-to-space follows torch::pixel_shuffle: block channel c lands at
// offset ((c/2) % 2, c % 2) inside each 2x2 output cell.
struct IspBackboneImpl : torch::nn::Module {
  IspBackboneImpl(Arch arch, std::uint64_t init_seed);

  // (N,4,h,w) -> (N,3,2h,2w); raw (unclamped) output for training.
  torch::Tensor forward(const torch::Tensor& packed);

  // Inference path: no grad, clamped to [0,1].
  torch::Tensor infer(const torch::Tensor& packed);

  Arch arch;
  std::uint64_t init_seed;
  torch::nn::Conv2d conv1{nullptr}, conv2{nullptr}, conv3{nullptr};
};
TORCH_MODULE(IspBackbone);

int64_t param_count(Arch a);                    // closed form
int64_t param_count(const torch::nn::Module& m);  // actual trainable scalars

// Named-tensor checkpoint with a metadata header; shared with discriminators.
struct CheckpointMeta {
  std::string kind;        // "generator" / "color_disc" / ...
  std::string arch;        // arch tag or layer tag
  std::string packing = "R,Gr,Gb,B";
  std::uint64_t init_seed = 0;
  std::int64_t step = 0;
};

void save_checkpoint(const torch::nn::Module& m, const CheckpointMeta& meta,
                     const fs::path& path);
CheckpointMeta read_checkpoint_meta(const fs::path& path);
// Loads weights; throws if kind/arch do not match the target module's slot.
CheckpointMeta load_checkpoint(torch::nn::Module& m, const fs::path& path,
                               const std::string& expect_kind,
                               const std::string& expect_arch);

// Convenience: build a backbone from a generator checkpoint.
IspBackbone load_backbone(const fs::path& path);

}  // namespace isp::model
