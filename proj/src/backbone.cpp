#include "isp/backbone.hpp"

#include <stdexcept>

namespace isp::model {

Arch arch_from_string(const std::string& s) {
  if (s == "efficient") return Arch::Efficient;
  if (s == "robust") return Arch::Robust;
  throw std::invalid_argument("unknown arch: " + s);
}

std::string to_string(Arch a) {
  return a == Arch::Efficient ? "efficient" : "robust";
}

std::array<int64_t, 3> channel_plan(Arch a) {
  return a == Arch::Efficient ? std::array<int64_t, 3>{12, 12, 12}
                              : std::array<int64_t, 3>{16, 4, 12};
}

namespace {

// Kaiming-style uniform fan-in init, seeded: U(-b, b), b = sqrt(6/fan_in).
void init_conv(torch::nn::Conv2d& conv, torch::Generator& gen) {
  torch::NoGradGuard no_grad;
  const auto fan_in = conv->weight.size(1) * conv->weight.size(2) * conv->weight.size(3);
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  auto u = torch::rand(conv->weight.sizes(), gen, conv->weight.options());
  conv->weight.copy_(u.mul_(2.0 * bound).sub_(bound));
  conv->bias.zero_();
}

}  // namespace

IspBackboneImpl::IspBackboneImpl(Arch arch_, std::uint64_t init_seed_)
    : arch(arch_), init_seed(init_seed_) {
  const auto plan = channel_plan(arch);
  conv1 = register_module(
      "conv1", torch::nn::Conv2d(torch::nn::Conv2dOptions(4, plan[0], 3).padding(1)));
  conv2 = register_module(
      "conv2",
      torch::nn::Conv2d(torch::nn::Conv2dOptions(plan[0], plan[1], 3).padding(1)));
  conv3 = register_module(
      "conv3",
      torch::nn::Conv2d(torch::nn::Conv2dOptions(plan[1], plan[2], 3).padding(1)));
  auto gen = torch::make_generator<torch::CPUGeneratorImpl>(init_seed);
  init_conv(conv1, gen);
  init_conv(conv2, gen);
  init_conv(conv3, gen);
}

torch::Tensor IspBackboneImpl::forward(const torch::Tensor& packed) {
  TORCH_CHECK(packed.dim() == 4, "expected (N,4,h,w) packed batch");
  TORCH_CHECK(packed.size(1) == 4, "channel mismatch: packed input must have 4 planes, got ",
              packed.size(1));
  auto x = torch::tanh(conv1->forward(packed));
  x = torch::relu(conv2->forward(x));
  x = conv3->forward(x);
  return torch::pixel_shuffle(x, 2);
}

torch::Tensor IspBackboneImpl::infer(const torch::Tensor& packed) {
  torch::NoGradGuard no_grad;
  return forward(packed).clamp(0.0, 1.0);
}

int64_t param_count(Arch a) {
  const auto plan = channel_plan(a);
  int64_t in = 4, total = 0;
  for (auto out : plan) {
    total += in * out * 9 + out;
    in = out;
  }
  return total;
}

int64_t param_count(const torch::nn::Module& m) {
  int64_t total = 0;
  for (const auto& p : m.parameters())
    if (p.requires_grad()) total += p.numel();
  return total;
}

void save_checkpoint(const torch::nn::Module& m, const CheckpointMeta& meta,
                     const fs::path& path) {
  torch::serialize::OutputArchive archive;
  archive.write("meta/kind", meta.kind);
  archive.write("meta/arch", meta.arch);
  archive.write("meta/packing", meta.packing);
  archive.write("meta/init_seed", static_cast<int64_t>(meta.init_seed));
  archive.write("meta/step", meta.step);
  for (const auto& p : m.named_parameters())
    archive.write("param/" + p.key(), p.value());
  for (const auto& b : m.named_buffers())
    archive.write("buffer/" + b.key(), b.value());
  archive.save_to(path.string());
}

namespace {

CheckpointMeta read_meta(torch::serialize::InputArchive& archive) {
  CheckpointMeta meta;
  torch::IValue v;
  archive.read("meta/kind", v);
  meta.kind = v.toStringRef();
  archive.read("meta/arch", v);
  meta.arch = v.toStringRef();
  archive.read("meta/packing", v);
  meta.packing = v.toStringRef();
  archive.read("meta/init_seed", v);
  meta.init_seed = static_cast<std::uint64_t>(v.toInt());
  archive.read("meta/step", v);
  meta.step = v.toInt();
  return meta;
}

}  // namespace

CheckpointMeta read_checkpoint_meta(const fs::path& path) {
  torch::serialize::InputArchive archive;
  archive.load_from(path.string());
  return read_meta(archive);
}

CheckpointMeta load_checkpoint(torch::nn::Module& m, const fs::path& path,
                               const std::string& expect_kind,
                               const std::string& expect_arch) {
  torch::serialize::InputArchive archive;
  archive.load_from(path.string());
  auto meta = read_meta(archive);
  if (meta.kind != expect_kind)
    throw std::runtime_error("checkpoint kind '" + meta.kind +
                             "' does not match slot '" + expect_kind + "'");
  if (meta.arch != expect_arch)
    throw std::runtime_error("checkpoint arch '" + meta.arch +
                             "' does not match slot '" + expect_arch + "'");
  torch::NoGradGuard no_grad;
  for (const auto& p : m.named_parameters()) {
    torch::Tensor t;
    archive.read("param/" + p.key(), t);
    p.value().copy_(t);
  }
  for (const auto& b : m.named_buffers()) {
    torch::Tensor t;
    archive.read("buffer/" + b.key(), t);
    b.value().copy_(t);
  }
  return meta;
}

IspBackbone load_backbone(const fs::path& path) {
  auto meta = read_checkpoint_meta(path);
  if (meta.kind != "generator")
    throw std::runtime_error("not a generator checkpoint: " + path.string());
  IspBackbone model(arch_from_string(meta.arch), meta.init_seed);
  load_checkpoint(*model, path, "generator", meta.arch);
  return model;
}

}  // namespace isp::model
