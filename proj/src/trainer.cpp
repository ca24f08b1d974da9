#include "isp/trainer.hpp"

#include "isp/common.hpp"
#include "isp/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

namespace isp::train {

Stage stage_from_string(const std::string& s) {
  if (s == "pretrain") return Stage::Pretrain;
  if (s == "paired_no_adv") return Stage::PairedNoAdv;
  if (s == "paired_full") return Stage::PairedFull;
  if (s == "unpaired") return Stage::Unpaired;
  throw std::runtime_error("unknown stage: " + s);
}

std::string to_string(Stage s) {
  switch (s) {
    case Stage::Pretrain: return "pretrain";
    case Stage::PairedNoAdv: return "paired_no_adv";
    case Stage::PairedFull: return "paired_full";
    case Stage::Unpaired: return "unpaired";
  }
  return "?";
}

namespace {

const std::vector<std::string> kToggleKeys = {
    "loss.content",  "loss.mse",       "loss.lpips_plus",
    "loss.dists",    "loss.tv",        "loss.color",
    "loss.adv_color", "loss.adv_lin0", "loss.adv_lin3"};

// Toggle keys legal per stage; each stage trains with exactly this set.
std::vector<std::string> legal_toggles(Stage s) {
  switch (s) {
    case Stage::Pretrain:
      return {"loss.content", "loss.mse", "loss.tv"};
    case Stage::PairedNoAdv:
      return {"loss.content", "loss.lpips_plus", "loss.dists", "loss.tv",
              "loss.color"};
    case Stage::PairedFull:
      return {"loss.content", "loss.lpips_plus", "loss.dists", "loss.tv",
              "loss.color", "loss.adv_lin0", "loss.adv_lin3"};
    case Stage::Unpaired:
      return {"loss.content", "loss.adv_color", "loss.adv_lin0",
              "loss.adv_lin3", "loss.tv"};
  }
  return {};
}

std::int64_t parse_period(const std::string& v) {
  auto colon = v.find(':');
  if (colon == std::string::npos) {
    auto p = cfg::parse_int("disc_update_period", v);
    if (p < 1) throw std::runtime_error("disc_update_period must be >= 1");
    return p;
  }
  auto gen = cfg::parse_int("disc_update_period", v.substr(0, colon));
  auto disc = cfg::parse_int("disc_update_period", v.substr(colon + 1));
  if (gen < 1 || disc != 1)
    throw std::runtime_error("disc_update_period ratio must be N:1, got " + v);
  return gen;
}

const std::vector<std::string> kKnownKeys = [] {
  std::vector<std::string> keys = {
      "stage",          "arch",       "batch_size",   "gen_lr",
      "disc_lr",        "disc_update_period",         "beta1",
      "beta2",          "max_steps",  "seed",         "eps",
      "val_every",      "select_by",  "extractors",   "cache_dir",
      "deterministic",  "resume",     "init_checkpoint",
      "demosaic",       "pretrain.content_path",
      "adv.gamma",      "adv.f",      "adv.color_blur",
      "adv.tex_layer_a", "adv.tex_layer_b",
      "color.kernel_size", "color.sigma"};
  keys.insert(keys.end(), kToggleKeys.begin(), kToggleKeys.end());
  return keys;
}();

}  // namespace

TrainConfig TrainConfig::from_config(const cfg::ConfigMap& c) {
  c.require_known(kKnownKeys);
  TrainConfig t;
  t.stage = stage_from_string(c.get_or("stage", "pretrain"));
  t.arch = model::arch_from_string(c.get_or("arch", "efficient"));
  t.batch_size = cfg::parse_int("batch_size", c.get_or("batch_size", "32"));
  t.gen_lr = cfg::parse_double("gen_lr", c.get_or("gen_lr", "5e-4"));
  t.disc_lr = cfg::parse_double("disc_lr", c.get_or("disc_lr", "1e-5"));
  t.disc_update_period = parse_period(c.get_or("disc_update_period", "10"));
  t.beta1 = cfg::parse_double("beta1", c.get_or("beta1", "0.0"));
  t.beta2 = cfg::parse_double("beta2", c.get_or("beta2", "0.999"));
  t.max_steps = cfg::parse_int("max_steps", c.get_or("max_steps", "1000"));
  t.seed = static_cast<std::uint64_t>(cfg::parse_int("seed", c.get_or("seed", "1")));
  t.eps = cfg::parse_double("eps", c.get_or("eps", "1e-8"));
  t.val_every = cfg::parse_int("val_every", c.get_or("val_every", "500"));
  t.select_by = c.get_or("select_by", "lpips");
  t.extractors = c.get_or("extractors", "stub");
  t.cache_dir = c.get_or("cache_dir", "");
  t.deterministic = cfg::parse_bool("deterministic", c.get_or("deterministic", "on"));
  t.resume = cfg::parse_bool("resume", c.get_or("resume", "off"));
  t.init_checkpoint = c.get_or("init_checkpoint", "");
  t.demosaic_algo = c.get_or("demosaic", "bilinear");
  t.pretrain_content_path = c.get_or("pretrain.content_path", "rgb");
  t.penalty.gamma = cfg::parse_double("adv.gamma", c.get_or("adv.gamma", "1.0"));
  if (c.get_or("adv.f", "softplus") != "softplus")
    throw std::runtime_error("adv.f: only 'softplus' is implemented");
  t.color_blur = cfg::parse_bool("adv.color_blur", c.get_or("adv.color_blur", "on"));
  t.tex_layer_a = feat::lpips_layer_from_string(c.get_or("adv.tex_layer_a", "lin0"));
  t.tex_layer_b = feat::lpips_layer_from_string(c.get_or("adv.tex_layer_b", "lin3"));
  t.color_kernel.size =
      static_cast<int>(cfg::parse_int("color.kernel_size", c.get_or("color.kernel_size", "21")));
  t.color_kernel.sigma_x = t.color_kernel.sigma_y =
      cfg::parse_double("color.sigma", c.get_or("color.sigma", "3.0"));

  const auto legal = legal_toggles(t.stage);
  for (const auto& key : kToggleKeys) {
    if (!c.has(key)) continue;
    const bool enabled = cfg::parse_bool(key, c.get(key));
    const bool is_legal = std::find(legal.begin(), legal.end(), key) != legal.end();
    if (enabled && !is_legal)
      throw std::runtime_error("config key " + key + ": loss term not allowed in stage " +
                               to_string(t.stage));
    t.toggles[key] = enabled;
  }
  t.validate();
  return t;
}

cfg::ConfigMap TrainConfig::to_config() const {
  cfg::ConfigMap c;
  c.set("stage", to_string(stage));
  c.set("arch", model::to_string(arch));
  c.set("batch_size", std::to_string(batch_size));
  c.set("gen_lr", std::to_string(gen_lr));
  c.set("disc_lr", std::to_string(disc_lr));
  c.set("disc_update_period", std::to_string(disc_update_period));
  c.set("beta1", std::to_string(beta1));
  c.set("beta2", std::to_string(beta2));
  c.set("max_steps", std::to_string(max_steps));
  c.set("seed", std::to_string(seed));
  c.set("eps", std::to_string(eps));
  c.set("val_every", std::to_string(val_every));
  c.set("select_by", select_by);
  c.set("extractors", extractors);
  c.set("cache_dir", cache_dir);
  c.set("deterministic", deterministic ? "on" : "off");
  c.set("resume", resume ? "on" : "off");
  c.set("init_checkpoint", init_checkpoint);
  c.set("demosaic", demosaic_algo);
  c.set("pretrain.content_path", pretrain_content_path);
  c.set("adv.gamma", std::to_string(penalty.gamma));
  c.set("adv.f", "softplus");
  c.set("adv.color_blur", color_blur ? "on" : "off");
  c.set("adv.tex_layer_a", feat::to_string(tex_layer_a));
  c.set("adv.tex_layer_b", feat::to_string(tex_layer_b));
  c.set("color.kernel_size", std::to_string(color_kernel.size));
  c.set("color.sigma", std::to_string(color_kernel.sigma_x));
  for (const auto& key : legal_toggles(stage)) {
    auto it = toggles.find(key);
    const bool on = it == toggles.end() ? true : it->second;
    c.set(key, on ? "on" : "off");
  }
  return c;
}

std::vector<std::string> TrainConfig::active_terms() const {
  auto on = [this](const char* key) {
    auto it = toggles.find(key);
    return it == toggles.end() ? true : it->second;
  };
  const std::string adv_a = "adv_" + feat::to_string(tex_layer_a);
  const std::string adv_b = "adv_" + feat::to_string(tex_layer_b);
  std::vector<std::string> out;
  switch (stage) {
    case Stage::Pretrain:
      if (on("loss.content")) out.push_back("content");
      if (on("loss.mse")) out.push_back("mse");
      if (on("loss.tv")) out.push_back("tv");
      break;
    case Stage::PairedNoAdv:
    case Stage::PairedFull:
      if (on("loss.content")) out.push_back("content");
      if (on("loss.lpips_plus")) out.push_back("lpips_plus");
      if (on("loss.dists")) out.push_back("dists");
      if (on("loss.tv")) out.push_back("tv");
      if (on("loss.color")) out.push_back("color");
      if (stage == Stage::PairedFull) {
        if (on("loss.adv_lin0")) out.push_back(adv_a);
        if (on("loss.adv_lin3")) out.push_back(adv_b);
      }
      break;
    case Stage::Unpaired:
      if (on("loss.content")) out.push_back("content");
      if (on("loss.adv_color")) out.push_back("adv_color");
      if (on("loss.adv_lin0")) out.push_back(adv_a);
      if (on("loss.adv_lin3")) out.push_back(adv_b);
      if (on("loss.tv")) out.push_back("tv");
      break;
  }
  return out;
}

bool TrainConfig::term_active(const std::string& name) const {
  auto terms = active_terms();
  return std::find(terms.begin(), terms.end(), name) != terms.end();
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw std::runtime_error("batch_size must be >= 1");
  if (gen_lr <= 0 || disc_lr <= 0) throw std::runtime_error("learning rates must be > 0");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1))
    throw std::runtime_error("betas must lie in [0,1)");
  if (max_steps < 1) throw std::runtime_error("max_steps must be >= 1");
  if (eps <= 0) throw std::runtime_error("eps must be > 0");
  if (val_every < 1) throw std::runtime_error("val_every must be >= 1");
  if (select_by != "lpips" && select_by != "psnr")
    throw std::runtime_error("select_by must be lpips or psnr");
  if (pretrain_content_path != "rgb" && pretrain_content_path != "luminance")
    throw std::runtime_error("pretrain.content_path must be rgb or luminance");
  if (penalty.gamma < 0) throw std::runtime_error("adv.gamma must be >= 0");
  if (tex_layer_a == tex_layer_b)
    throw std::runtime_error("texture discriminators must use distinct lin layers");
  if (active_terms().empty()) throw std::runtime_error("no active loss terms");
}

const TermRecord* LossBundle::find(const std::string& name) const {
  for (const auto& t : terms)
    if (t.name == name) return &t;
  return nullptr;
}

std::vector<std::string> LossBundle::names() const {
  std::vector<std::string> out;
  for (const auto& t : terms) out.push_back(t.name);
  return out;
}

LossBundle apply_dynamic_weights(const std::vector<TermValue>& terms,
                                 const std::vector<torch::Tensor>& params,
                                 double eps) {
  LossBundle bundle;
  std::vector<torch::Tensor> combined(params.size());

  for (const auto& term : terms) {
    const double raw = term.value.item<double>();
    if (!std::isfinite(raw)) throw DivergenceError(term.name, "is non-finite");

    auto grads = torch::autograd::grad({term.value}, params, /*grad_outputs=*/{},
                                       /*retain_graph=*/true, /*create_graph=*/false,
                                       /*allow_unused=*/true);
    double sq = 0.0;
    for (const auto& g : grads)
      if (g.defined()) sq += g.square().sum().item<double>();
    if (!std::isfinite(sq))
      throw DivergenceError(term.name, "produced a non-finite gradient");

    const double norm = std::sqrt(sq);
    const double lambda = 1.0 / std::max(norm, eps);
    for (std::size_t j = 0; j < params.size(); ++j) {
      if (!grads[j].defined()) continue;
      if (!combined[j].defined()) combined[j] = torch::zeros_like(params[j]);
      combined[j] += lambda * grads[j];
    }
    bundle.terms.push_back({term.name, raw, norm, lambda});
    bundle.total += lambda * raw;
  }

  for (std::size_t j = 0; j < params.size(); ++j) {
    auto p = params[j];  // shared handle; assigns the grad on the same impl
    p.mutable_grad() = combined[j].defined() ? combined[j] : torch::zeros_like(p);
  }
  return bundle;
}

Trainer::Trainer(TrainConfig cfg, feat::FeatureBank& bank, model::IspBackbone model)
    : cfg_(std::move(cfg)), bank_(bank), model_(std::move(model)) {
  cfg_.validate();
  color_disc_ = gan::ColorDiscriminator(bank_.vit_embed_dim(), cfg_.seed + 101);
  tex_a_ = gan::TextureDiscriminator(feat::lpips_layer_channels(cfg_.tex_layer_a),
                                     cfg_.seed + 202);
  tex_b_ = gan::TextureDiscriminator(feat::lpips_layer_channels(cfg_.tex_layer_b),
                                     cfg_.seed + 303);

  auto adam = [this](std::vector<torch::Tensor> params, double lr) {
    return std::make_unique<torch::optim::Adam>(
        std::move(params),
        torch::optim::AdamOptions(lr).betas({cfg_.beta1, cfg_.beta2}));
  };
  gen_opt_ = adam(model_->parameters(), cfg_.gen_lr);
  color_opt_ = adam(color_disc_->parameters(), cfg_.disc_lr);
  tex_a_opt_ = adam(tex_a_->parameters(), cfg_.disc_lr);
  tex_b_opt_ = adam(tex_b_->parameters(), cfg_.disc_lr);
}

std::vector<torch::Tensor> Trainer::generator_params() const {
  return model_->parameters();
}

bool Trainer::disc_step_due(std::int64_t step) const {
  return step % cfg_.disc_update_period == 0;
}

namespace {

// Texture path features: grayscale -> reweighted lin-layer maps.
torch::Tensor tex_feats(feat::FeatureBank& bank, const torch::Tensor& imgs,
                        feat::LpipsLayer layer) {
  return bank.lpips_layer_features(feat::to_grayscale3(imgs), layer);
}

}  // namespace

std::vector<TermValue> Trainer::compute_terms_pretrain(const PretrainBatch& batch) {
  auto out = model_->forward(batch.packed);
  const auto mode = cfg_.pretrain_content_path == "luminance"
                        ? loss::ContentMode::Unpaired
                        : loss::ContentMode::Paired;
  std::vector<TermValue> terms;
  for (const auto& name : cfg_.active_terms()) {
    if (name == "content")
      terms.push_back({name, loss::content_loss(out, batch.demosaiced, mode, bank_)});
    else if (name == "mse")
      terms.push_back({name, loss::mse_loss(out, batch.demosaiced)});
    else if (name == "tv")
      terms.push_back({name, loss::tv_loss(out)});
  }
  return terms;
}

std::vector<TermValue> Trainer::compute_terms_paired(const PairedBatch& batch) {
  if (batch.gt.numel() == 0)
    throw std::invalid_argument("paired training step requires ground-truth batch");
  auto out = model_->forward(batch.packed);
  const std::string adv_a = "adv_" + feat::to_string(cfg_.tex_layer_a);
  const std::string adv_b = "adv_" + feat::to_string(cfg_.tex_layer_b);

  std::vector<TermValue> terms;
  std::optional<loss::TextureLosses> tex;
  for (const auto& name : cfg_.active_terms()) {
    if (name == "content") {
      terms.push_back(
          {name, loss::content_loss(out, batch.gt, loss::ContentMode::Paired, bank_)});
    } else if (name == "lpips_plus" || name == "dists") {
      if (!tex) tex = loss::texture_losses(out, batch.gt, bank_);
      terms.push_back({name, name == "lpips_plus" ? tex->lpips_plus : tex->dists});
    } else if (name == "tv") {
      terms.push_back({name, loss::tv_loss(out)});
    } else if (name == "color") {
      terms.push_back({name, loss::color_loss(out, batch.gt, cfg_.color_kernel)});
    } else if (name == adv_a || name == adv_b) {
      auto& disc = name == adv_a ? tex_a_ : tex_b_;
      const auto layer = name == adv_a ? cfg_.tex_layer_a : cfg_.tex_layer_b;
      torch::Tensor real;
      {
        torch::NoGradGuard no_grad;
        real = tex_feats(bank_, batch.gt, layer);
      }
      auto fake = tex_feats(bank_, out, layer);
      gan::ScoreFn fn = [&disc](const torch::Tensor& x) { return disc->forward(x); };
      terms.push_back({name, gan::g_loss(fn, real, fake, cfg_.penalty)});
    }
  }
  return terms;
}

std::vector<TermValue> Trainer::compute_terms_unpaired(const UnpairedBatch& batch) {
  auto adv_terms_active = cfg_.term_active("adv_color") ||
                          cfg_.term_active("adv_" + feat::to_string(cfg_.tex_layer_a)) ||
                          cfg_.term_active("adv_" + feat::to_string(cfg_.tex_layer_b));
  if (adv_terms_active && batch.target_rgb.size(0) == 0)
    throw std::invalid_argument("empty target pool");

  auto out = model_->forward(batch.packed);
  const std::string adv_a = "adv_" + feat::to_string(cfg_.tex_layer_a);
  const std::string adv_b = "adv_" + feat::to_string(cfg_.tex_layer_b);
  const loss::GaussianKernel* blur = cfg_.color_blur ? &cfg_.color_kernel : nullptr;

  std::vector<TermValue> terms;
  for (const auto& name : cfg_.active_terms()) {
    if (name == "content") {
      terms.push_back({name, loss::content_loss(out, batch.demosaiced,
                                                loss::ContentMode::Unpaired, bank_)});
    } else if (name == "adv_color") {
      torch::Tensor real_tok;
      {
        torch::NoGradGuard no_grad;
        auto real = blur ? loss::gaussian_blur(batch.target_rgb, *blur) : batch.target_rgb;
        real_tok = bank_.vit_tokens(real);
      }
      auto fake = blur ? loss::gaussian_blur(out, *blur) : out;
      auto fake_tok = bank_.vit_tokens(fake);
      gan::ScoreFn fn = [this](const torch::Tensor& x) { return color_disc_->forward(x); };
      terms.push_back({name, gan::g_loss(fn, real_tok, fake_tok, cfg_.penalty)});
    } else if (name == adv_a || name == adv_b) {
      auto& disc = name == adv_a ? tex_a_ : tex_b_;
      const auto layer = name == adv_a ? cfg_.tex_layer_a : cfg_.tex_layer_b;
      torch::Tensor real;
      {
        torch::NoGradGuard no_grad;
        real = tex_feats(bank_, batch.target_rgb, layer);
      }
      auto fake = tex_feats(bank_, out, layer);
      gan::ScoreFn fn = [&disc](const torch::Tensor& x) { return disc->forward(x); };
      terms.push_back({name, gan::g_loss(fn, real, fake, cfg_.penalty)});
    } else if (name == "tv") {
      terms.push_back({name, loss::tv_loss(out)});
    }
  }
  return terms;
}

LossBundle Trainer::generator_update(const std::vector<TermValue>& terms) {
  auto params = generator_params();
  auto bundle = apply_dynamic_weights(terms, params, cfg_.eps);
  gen_opt_->step();
  gen_opt_->zero_grad(true);
  return bundle;
}

LossBundle Trainer::pretrain_step(const PretrainBatch& batch, std::int64_t) {
  return generator_update(compute_terms_pretrain(batch));
}

LossBundle Trainer::train_step_paired(const PairedBatch& batch, std::int64_t step) {
  auto bundle = generator_update(compute_terms_paired(batch));
  if (cfg_.stage == Stage::PairedFull && disc_step_due(step))
    update_discriminators_paired(batch);
  return bundle;
}

LossBundle Trainer::train_step_unpaired(const UnpairedBatch& batch, std::int64_t step) {
  auto bundle = generator_update(compute_terms_unpaired(batch));
  if (disc_step_due(step)) update_discriminators_unpaired(batch);
  return bundle;
}

namespace {

void disc_update(torch::optim::Adam& opt, const gan::ScoreFn& fn,
                 const torch::Tensor& real, const torch::Tensor& fake,
                 const gan::GanPenaltyConfig& penalty) {
  auto parts = gan::d_loss(fn, real, fake, penalty);
  opt.zero_grad(true);
  parts.total.backward();
  opt.step();
  opt.zero_grad(true);
}

}  // namespace

void Trainer::update_discriminators_paired(const PairedBatch& batch) {
  torch::Tensor out;
  {
    torch::NoGradGuard no_grad;
    out = model_->forward(batch.packed);
  }
  const std::string adv_a = "adv_" + feat::to_string(cfg_.tex_layer_a);
  const std::string adv_b = "adv_" + feat::to_string(cfg_.tex_layer_b);
  for (const auto& name : cfg_.active_terms()) {
    if (name != adv_a && name != adv_b) continue;
    auto& disc = name == adv_a ? tex_a_ : tex_b_;
    auto& opt = name == adv_a ? *tex_a_opt_ : *tex_b_opt_;
    const auto layer = name == adv_a ? cfg_.tex_layer_a : cfg_.tex_layer_b;
    torch::Tensor real, fake;
    {
      torch::NoGradGuard no_grad;
      real = tex_feats(bank_, batch.gt, layer);
      fake = tex_feats(bank_, out, layer);
    }
    gan::ScoreFn fn = [&disc](const torch::Tensor& x) { return disc->forward(x); };
    disc_update(opt, fn, real, fake, cfg_.penalty);
  }
}

void Trainer::update_discriminators_unpaired(const UnpairedBatch& batch) {
  torch::Tensor out;
  {
    torch::NoGradGuard no_grad;
    out = model_->forward(batch.packed);
  }
  const std::string adv_a = "adv_" + feat::to_string(cfg_.tex_layer_a);
  const std::string adv_b = "adv_" + feat::to_string(cfg_.tex_layer_b);
  const loss::GaussianKernel* blur = cfg_.color_blur ? &cfg_.color_kernel : nullptr;

  for (const auto& name : cfg_.active_terms()) {
    if (name == "adv_color") {
      torch::Tensor real_tok, fake_tok;
      {
        torch::NoGradGuard no_grad;
        auto real = blur ? loss::gaussian_blur(batch.target_rgb, *blur) : batch.target_rgb;
        auto fake = blur ? loss::gaussian_blur(out, *blur) : out;
        real_tok = bank_.vit_tokens(real);
        fake_tok = bank_.vit_tokens(fake);
      }
      gan::ScoreFn fn = [this](const torch::Tensor& x) { return color_disc_->forward(x); };
      disc_update(*color_opt_, fn, real_tok, fake_tok, cfg_.penalty);
    } else if (name == adv_a || name == adv_b) {
      auto& disc = name == adv_a ? tex_a_ : tex_b_;
      auto& opt = name == adv_a ? *tex_a_opt_ : *tex_b_opt_;
      const auto layer = name == adv_a ? cfg_.tex_layer_a : cfg_.tex_layer_b;
      torch::Tensor real, fake;
      {
        torch::NoGradGuard no_grad;
        real = tex_feats(bank_, batch.target_rgb, layer);
        fake = tex_feats(bank_, out, layer);
      }
      gan::ScoreFn fn = [&disc](const torch::Tensor& x) { return disc->forward(x); };
      disc_update(opt, fn, real, fake, cfg_.penalty);
    }
  }
}

// ---------------------------------------------------------------------------
// run_stage
// ---------------------------------------------------------------------------

namespace {

struct EntryCache {
  std::vector<torch::Tensor> packed, demosaiced, gt;
  const data::DatasetManifest* manifest = nullptr;
  std::string demosaic_algo;

  explicit EntryCache(const data::DatasetManifest& m, std::string algo)
      : manifest(&m), demosaic_algo(std::move(algo)) {
    packed.resize(m.size());
    demosaiced.resize(m.size());
    gt.resize(m.size());
  }

  torch::Tensor get_packed(std::size_t i) {
    if (!packed[i].defined()) packed[i] = bayer::pack(data::load_raw(*manifest, i));
    return packed[i];
  }
  torch::Tensor get_demosaiced(std::size_t i) {
    if (!demosaiced[i].defined())
      demosaiced[i] = bayer::demosaic(data::load_raw(*manifest, i), demosaic_algo);
    return demosaiced[i];
  }
  torch::Tensor get_gt(std::size_t i) {
    if (!gt[i].defined()) gt[i] = data::load_rgb(*manifest, i);
    return gt[i];
  }
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

}  // namespace

RunResult run_stage(const TrainConfig& cfg, const StageData& data,
                    const fs::path& out_dir, feat::FeatureBank& bank) {
  cfg.validate();
  fs::create_directories(out_dir);
  if (cfg.deterministic) torch::set_num_threads(1);
  torch::manual_seed(cfg.seed);
  cfg.to_config().write(out_dir / "config.resolved.txt");

  const bool adversarial =
      cfg.stage == Stage::PairedFull || cfg.stage == Stage::Unpaired;
  const bool needs_gt =
      cfg.stage == Stage::PairedNoAdv || cfg.stage == Stage::PairedFull;

  if (needs_gt)
    for (const auto& e : data.train.entries)
      if (!e.rgb_path)
        throw std::runtime_error("stage " + to_string(cfg.stage) +
                                 " requires paired data; entry lacks rgb: " + e.raw_path);
  if (cfg.stage == Stage::Unpaired && data.target_rgb.empty())
    throw std::runtime_error("empty target pool");

  // generator init: resume > init_checkpoint > fresh (non-adversarial only)
  RunResult result;
  model::IspBackbone model{nullptr};
  std::int64_t start_step = 0;
  const auto last_path = out_dir / "last.ckpt";
  if (cfg.resume && fs::exists(last_path)) {
    auto meta = model::read_checkpoint_meta(last_path);
    model = model::load_backbone(last_path);
    start_step = meta.step;
  } else if (!cfg.init_checkpoint.empty()) {
    model = model::load_backbone(cfg.init_checkpoint);
    if (model->arch != cfg.arch)
      throw std::runtime_error("init checkpoint arch mismatch");
  } else {
    if (adversarial)
      throw std::runtime_error("stage " + to_string(cfg.stage) +
                               " requires a pretrained init_checkpoint");
    model = model::IspBackbone(cfg.arch, cfg.seed);
  }

  Trainer trainer(cfg, bank, model);
  const auto arch_tag = model::to_string(cfg.arch);
  if (cfg.resume && start_step > 0) {
    auto try_load = [&](torch::nn::Module& mod, const std::string& name,
                        const std::string& kind, const std::string& tag) {
      auto p = out_dir / name;
      if (fs::exists(p)) model::load_checkpoint(mod, p, kind, tag);
    };
    try_load(*trainer.color_disc(), "last_color_disc.ckpt", "color_disc", "mlp");
    try_load(*trainer.tex_disc_a(), "last_tex_a.ckpt", "texture_disc_a",
             feat::to_string(cfg.tex_layer_a));
    try_load(*trainer.tex_disc_b(), "last_tex_b.ckpt", "texture_disc_b",
             feat::to_string(cfg.tex_layer_b));
    auto try_load_opt = [&](torch::optim::Adam& opt, const std::string& name) {
      auto p = out_dir / name;
      if (fs::exists(p)) torch::load(opt, p.string());
    };
    try_load_opt(trainer.gen_opt(), "last_gen_opt.pt");
    try_load_opt(trainer.color_opt(), "last_color_opt.pt");
    try_load_opt(trainer.tex_a_opt(), "last_tex_a_opt.pt");
    try_load_opt(trainer.tex_b_opt(), "last_tex_b_opt.pt");
  }

  EntryCache train_cache(data.train, cfg.demosaic_algo);
  std::unique_ptr<EntryCache> val_cache;
  if (data.val) val_cache = std::make_unique<EntryCache>(*data.val, cfg.demosaic_algo);
  std::vector<torch::Tensor> pool_cache(data.target_rgb.size());
  auto get_pool = [&](std::size_t i) {
    if (!pool_cache[i].defined())
      pool_cache[i] = common::read_png_rgb8(data.target_rgb[i]);
    return pool_cache[i];
  };

  common::Rng rng(static_cast<std::uint32_t>(cfg.seed * 2654435761ull + 17 +
                                             static_cast<std::uint64_t>(start_step)));
  const auto n_train = data.train.size();

  auto draw_indices = [&rng](std::size_t n, std::int64_t count) {
    std::vector<std::size_t> idx(count);
    for (auto& i : idx) i = rng.below(static_cast<std::uint32_t>(n));
    return idx;
  };

  // metric log
  const auto terms = cfg.active_terms();
  result.log_path = out_dir / "metrics.csv";
  std::ofstream log(result.log_path,
                    start_step > 0 ? std::ios::app : std::ios::trunc);
  if (start_step == 0) {
    log << "step";
    for (const auto& t : terms) log << ',' << t << "_raw," << t << "_lambda";
    log << ",val_psnr,val_ssim,val_ms_ssim,val_lpips\n";
  }

  // rollback snapshot for divergence aborts
  std::vector<torch::Tensor> last_good;
  auto snapshot = [&] {
    last_good.clear();
    for (const auto& p : model->parameters()) last_good.push_back(p.detach().clone());
  };
  auto restore = [&] {
    if (last_good.empty()) return;
    torch::NoGradGuard no_grad;
    auto params = model->parameters();
    for (std::size_t i = 0; i < params.size(); ++i) params[i].copy_(last_good[i]);
  };
  snapshot();

  auto save_gen = [&](const fs::path& p, std::int64_t step) {
    model::CheckpointMeta meta;
    meta.kind = "generator";
    meta.arch = arch_tag;
    meta.init_seed = cfg.seed;
    meta.step = step;
    model::save_checkpoint(*model, meta, p);
  };

  auto validate = [&](std::int64_t step) -> std::optional<ValPoint> {
    if (!val_cache) return std::nullopt;
    torch::NoGradGuard no_grad;
    ValPoint v;
    v.step = step;
    const auto n = data.val->size();
    for (std::size_t i = 0; i < n; ++i) {
      auto packed = val_cache->get_packed(i).unsqueeze(0);
      auto pred = model->infer(packed).squeeze(0);
      auto target = cfg.stage == Stage::Pretrain ? val_cache->get_demosaiced(i)
                                                 : val_cache->get_gt(i);
      v.psnr += metric::psnr(pred, target);
      if (pred.size(1) >= 11 && pred.size(2) >= 11)
        v.ssim += metric::ssim(pred, target);
      if (pred.size(1) >= 160 && pred.size(2) >= 160) {
        v.ms_ssim += metric::ms_ssim(pred, target);
        v.has_ms_ssim = true;
      }
      v.lpips += bank.perceptual_scores(pred, target).lpips.item<double>();
    }
    v.psnr /= n;
    v.ssim /= n;
    v.ms_ssim /= n;
    v.lpips /= n;
    return v;
  };

  for (std::int64_t step = start_step + 1; step <= cfg.max_steps; ++step) {
    LossBundle bundle;
    try {
      const auto idx = draw_indices(n_train, cfg.batch_size);
      auto stack = [&](auto getter) {
        std::vector<torch::Tensor> xs;
        for (auto i : idx) xs.push_back(getter(i));
        return torch::stack(xs, 0);
      };
      if (cfg.stage == Stage::Pretrain) {
        PretrainBatch b{stack([&](std::size_t i) { return train_cache.get_packed(i); }),
                        stack([&](std::size_t i) { return train_cache.get_demosaiced(i); })};
        bundle = trainer.pretrain_step(b, step);
      } else if (cfg.stage == Stage::Unpaired) {
        const auto pool_idx = draw_indices(data.target_rgb.size(), cfg.batch_size);
        std::vector<torch::Tensor> pool;
        for (auto i : pool_idx) pool.push_back(get_pool(i));
        UnpairedBatch b{stack([&](std::size_t i) { return train_cache.get_packed(i); }),
                        stack([&](std::size_t i) { return train_cache.get_demosaiced(i); }),
                        torch::stack(pool, 0)};
        bundle = trainer.train_step_unpaired(b, step);
      } else {
        PairedBatch b{stack([&](std::size_t i) { return train_cache.get_packed(i); }),
                      stack([&](std::size_t i) { return train_cache.get_gt(i); })};
        bundle = trainer.train_step_paired(b, step);
      }
    } catch (const DivergenceError& e) {
      restore();
      save_gen(out_dir / "last_good.ckpt", step - 1);
      result.aborted = true;
      result.abort_reason = e.what();
      result.final_step = step - 1;
      break;
    }

    log << step;
    for (const auto& t : terms) {
      const auto* rec = bundle.find(t);
      log << ',' << (rec ? fmt(rec->raw) : "") << ',' << (rec ? fmt(rec->lambda) : "");
    }

    const bool val_step = step % cfg.val_every == 0 || step == cfg.max_steps;
    if (val_step) {
      auto v = validate(step);
      if (v) {
        log << ',' << fmt(v->psnr) << ',' << fmt(v->ssim) << ','
            << (v->has_ms_ssim ? fmt(v->ms_ssim) : "") << ',' << fmt(v->lpips);
        result.validations.push_back(*v);
        if (v->psnr > result.best_psnr) {
          result.best_psnr = v->psnr;
          result.best_psnr_ckpt = out_dir / "best_psnr.ckpt";
          save_gen(result.best_psnr_ckpt, step);
        }
        if (v->lpips < result.best_lpips) {
          result.best_lpips = v->lpips;
          result.best_lpips_ckpt = out_dir / "best_lpips.ckpt";
          save_gen(result.best_lpips_ckpt, step);
        }
      } else {
        log << ",,,,";
      }
      snapshot();
      save_gen(last_path, step);
      {
        model::CheckpointMeta m;
        m.init_seed = cfg.seed;
        m.step = step;
        m.kind = "color_disc";
        m.arch = "mlp";
        model::save_checkpoint(*trainer.color_disc(), m, out_dir / "last_color_disc.ckpt");
        m.kind = "texture_disc_a";
        m.arch = feat::to_string(cfg.tex_layer_a);
        model::save_checkpoint(*trainer.tex_disc_a(), m, out_dir / "last_tex_a.ckpt");
        m.kind = "texture_disc_b";
        m.arch = feat::to_string(cfg.tex_layer_b);
        model::save_checkpoint(*trainer.tex_disc_b(), m, out_dir / "last_tex_b.ckpt");
      }
      torch::save(trainer.gen_opt(), (out_dir / "last_gen_opt.pt").string());
      torch::save(trainer.color_opt(), (out_dir / "last_color_opt.pt").string());
      torch::save(trainer.tex_a_opt(), (out_dir / "last_tex_a_opt.pt").string());
      torch::save(trainer.tex_b_opt(), (out_dir / "last_tex_b_opt.pt").string());
    } else {
      log << ",,,,";
    }
    log << '\n';
    log.flush();
    result.final_step = step;
  }

  if (!result.aborted) save_gen(last_path, result.final_step);
  result.last_ckpt = last_path;
  if (cfg.select_by == "psnr" && !result.best_psnr_ckpt.empty())
    result.selected_ckpt = result.best_psnr_ckpt;
  else if (cfg.select_by == "lpips" && !result.best_lpips_ckpt.empty())
    result.selected_ckpt = result.best_lpips_ckpt;
  else
    result.selected_ckpt = result.last_ckpt;
  return result;
}

}  // namespace isp::train
