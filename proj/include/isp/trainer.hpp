#pragma once

#include "isp/adversarial.hpp"
#include "isp/backbone.hpp"
#include "isp/config.hpp"
#include "isp/dataio.hpp"
#include "isp/features.hpp"
#include "isp/losses.hpp"

#include <torch/torch.h>

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace isp::train {

namespace fs = std::filesystem;

enum class Stage { Pretrain, PairedNoAdv, PairedFull, Unpaired };

Stage stage_from_string(const std::string& s);
std::string to_string(Stage s);

struct TrainConfig {
  Stage stage = Stage::Pretrain;
  model::Arch arch = model::Arch::Efficient;
  std::int64_t batch_size = 32;
  double gen_lr = 5e-4;
  double disc_lr = 1e-5;
  std::int64_t disc_update_period = 10;  // "N" or "N:1" gen:disc ratio
  double beta1 = 0.0;
  double beta2 = 0.999;
  std::int64_t max_steps = 1000;
  std::uint64_t seed = 1;
  double eps = 1e-8;  // dynamic-weight gradient-norm floor
  std::int64_t val_every = 500;
  std::string select_by = "lpips";  // or "psnr"
  std::string extractors = "stub";
  std::string cache_dir;
  bool deterministic = true;
  bool resume = false;
  std::string init_checkpoint;
  std::string demosaic_algo = "bilinear";
  std::string pretrain_content_path = "rgb";  // or "luminance"
  gan::GanPenaltyConfig penalty;
  bool color_blur = true;
  feat::LpipsLayer tex_layer_a = feat::LpipsLayer::Lin0;
  feat::LpipsLayer tex_layer_b = feat::LpipsLayer::Lin3;
  loss::GaussianKernel color_kernel;

  // tri-state toggles keyed by loss.* config names; stage defaults fill the rest
  std::map<std::string, bool> toggles;

  static TrainConfig from_config(const cfg::ConfigMap& c);
  cfg::ConfigMap to_config() const;  // fully resolved, for the frozen copy

  // Terms this stage trains with, in objective order. Adversarial texture
  // names follow the configured layers ("adv_lin0", "adv_lin3" by default).
  std::vector<std::string> active_terms() const;
  bool term_active(const std::string& name) const;
  void validate() const;
};

struct TermRecord {
  std::string name;
  double raw = 0.0;
  double grad_norm = 0.0;
  double lambda = 0.0;
};

struct LossBundle {
  std::vector<TermRecord> terms;
  double total = 0.0;

  const TermRecord* find(const std::string& name) const;
  std::vector<std::string> names() const;
};

class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(std::string term, const std::string& what)
      : std::runtime_error("loss term '" + term + "' " + what), term_(std::move(term)) {}
  const std::string& term() const { return term_; }

 private:
  std::string term_;
};

struct TermValue {
  std::string name;
  torch::Tensor value;  // 0-dim, graph-connected to the generator
};

// One backward per term; lambda_i = 1/max(||grad_theta L_i||, eps), treated
// as a constant. Writes sum_i lambda_i grad_i into the params' .grad fields.
// Throws DivergenceError naming the term on non-finite values/gradients.
LossBundle apply_dynamic_weights(const std::vector<TermValue>& terms,
                                 const std::vector<torch::Tensor>& params,
                                 double eps);

struct PretrainBatch {
  torch::Tensor packed;      // (N,4,h,w)
  torch::Tensor demosaiced;  // (N,3,2h,2w) reference
};
struct PairedBatch {
  torch::Tensor packed;
  torch::Tensor gt;
};
struct UnpairedBatch {
  torch::Tensor packed;
  torch::Tensor demosaiced;  // content reference
  torch::Tensor target_rgb;  // independent target-domain pool batch
};

class Trainer {
 public:
  Trainer(TrainConfig cfg, feat::FeatureBank& bank, model::IspBackbone model);

  // One generator update; discriminators update on scheduled steps (1-based).
  LossBundle pretrain_step(const PretrainBatch& batch, std::int64_t step);
  LossBundle train_step_paired(const PairedBatch& batch, std::int64_t step);
  LossBundle train_step_unpaired(const UnpairedBatch& batch, std::int64_t step);

  // Term tensors only, no update; used by tests and the acceptance suite.
  std::vector<TermValue> compute_terms_pretrain(const PretrainBatch& batch);
  std::vector<TermValue> compute_terms_paired(const PairedBatch& batch);
  std::vector<TermValue> compute_terms_unpaired(const UnpairedBatch& batch);

  model::IspBackbone& generator() { return model_; }
  gan::ColorDiscriminator& color_disc() { return color_disc_; }
  gan::TextureDiscriminator& tex_disc_a() { return tex_a_; }
  gan::TextureDiscriminator& tex_disc_b() { return tex_b_; }
  std::vector<torch::Tensor> generator_params() const;
  const TrainConfig& config() const { return cfg_; }

  torch::optim::Adam& gen_opt() { return *gen_opt_; }
  bool disc_step_due(std::int64_t step) const;

  // Discriminator updates for the current batch (called by train_step_*).
  void update_discriminators_paired(const PairedBatch& batch);
  void update_discriminators_unpaired(const UnpairedBatch& batch);

 private:
  LossBundle generator_update(const std::vector<TermValue>& terms);

  TrainConfig cfg_;
  feat::FeatureBank& bank_;
  model::IspBackbone model_;
  gan::ColorDiscriminator color_disc_{nullptr};
  gan::TextureDiscriminator tex_a_{nullptr}, tex_b_{nullptr};
  std::unique_ptr<torch::optim::Adam> gen_opt_, color_opt_, tex_a_opt_, tex_b_opt_;

 public:
  torch::optim::Adam& color_opt() { return *color_opt_; }
  torch::optim::Adam& tex_a_opt() { return *tex_a_opt_; }
  torch::optim::Adam& tex_b_opt() { return *tex_b_opt_; }
};

struct StageData {
  data::DatasetManifest train;
  std::optional<data::DatasetManifest> val;  // paired for fidelity metrics
  std::vector<std::string> target_rgb;       // unpaired target-domain pool
};

struct ValPoint {
  std::int64_t step = 0;
  double psnr = 0.0, ssim = 0.0, ms_ssim = 0.0, lpips = 0.0;
  bool has_ms_ssim = false;  // needs >= 160 px for 5 scales
};

struct RunResult {
  std::int64_t final_step = 0;
  bool aborted = false;
  std::string abort_reason;
  double best_psnr = -1.0;
  double best_lpips = std::numeric_limits<double>::infinity();
  fs::path best_psnr_ckpt, best_lpips_ckpt, last_ckpt, log_path;
  fs::path selected_ckpt;  // per config select_by; falls back to last
  std::vector<ValPoint> validations;
};

// Full stage: batching, dynamic weighting, scheduled discriminator updates,
// periodic validation, best/last checkpointing, append-only CSV metric log.
RunResult run_stage(const TrainConfig& cfg, const StageData& data,
                    const fs::path& out_dir, feat::FeatureBank& bank);

}  // namespace isp::train
