#include "isp/cli.hpp"

#include "isp/backbone.hpp"
#include "isp/common.hpp"
#include "isp/config.hpp"
#include "isp/dataio.hpp"
#include "isp/evaluation.hpp"
#include "isp/trainer.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <sstream>

#ifndef UISP_TOOLS_DIR
#define UISP_TOOLS_DIR "tools"
#endif

namespace isp::cli {

namespace fs = std::filesystem;

namespace {

void write_runspec(const fs::path& out_dir, const std::string& command,
                   const std::map<std::string, std::string>& args) {
  fs::create_directories(out_dir);
  cfg::ConfigMap m;
  m.set("command", command);
  for (const auto& [k, v] : args) m.set(k, v);
  m.write(out_dir / "run.resolved.txt");
}

torch::Tensor parse_matrix(const std::string& csv) {
  std::vector<float> vals;
  std::stringstream ss(csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) vals.push_back(std::stof(tok));
  if (vals.size() != 9)
    throw std::runtime_error("--matrix expects 9 comma-separated values");
  return torch::from_blob(vals.data(), {3, 3}, torch::kFloat32).clone();
}

cfg::ConfigMap resolve_train_config(const std::string& config_path,
                                    const std::vector<std::string>& overrides,
                                    const std::string& forced_stage) {
  cfg::ConfigMap c = config_path.empty() ? cfg::ConfigMap()
                                         : cfg::ConfigMap::from_file(config_path);
  for (const auto& kv : overrides) c.apply_override(kv);
  if (!forced_stage.empty()) c.set("stage", forced_stage);
  return c;
}

data::DatasetManifest load_index(const std::string& path) {
  return data::load_manifest_index(path);
}

std::vector<std::string> resolve_target_rgb(const std::string& path) {
  if (fs::is_directory(path)) return data::list_rgb_dir(path);
  auto m = load_index(path);
  auto paths = data::rgb_paths(m);
  if (paths.empty())
    throw std::runtime_error("target-rgb index has no rgb entries: " + path);
  return paths;
}

void maybe_split_and_save(const data::DatasetManifest& m, const fs::path& out_dir,
                          int val, int test, std::uint32_t seed) {
  data::save_manifest(m, out_dir / "manifest.index");
  if (val > 0 || test > 0) {
    auto split = data::split_manifest(m, val, test, seed);
    data::save_manifest(split.train, out_dir / "train.index");
    data::save_manifest(split.val, out_dir / "val.index");
    data::save_manifest(split.test, out_dir / "test.index");
  }
}

int run_train_like(const std::string& command_name, const std::string& config_path,
                   const std::vector<std::string>& overrides,
                   const std::string& forced_stage, const std::string& train_index,
                   const std::string& val_index, const std::string& target_rgb,
                   const std::string& out_dir) {
  auto c = resolve_train_config(config_path, overrides, forced_stage);
  auto cfg = train::TrainConfig::from_config(c);

  train::StageData data;
  data.train = load_index(train_index);
  if (!val_index.empty()) data.val = load_index(val_index);
  if (!target_rgb.empty()) data.target_rgb = resolve_target_rgb(target_rgb);

  std::map<std::string, std::string> runspec{{"stage", to_string(cfg.stage)},
                                             {"train", train_index},
                                             {"val", val_index},
                                             {"target_rgb", target_rgb}};
  write_runspec(out_dir, command_name, runspec);

  auto bank = feat::make_bank(cfg.extractors, cfg.cache_dir, cfg.seed + 7);
  auto result = train::run_stage(cfg, data, out_dir, *bank);

  if (result.aborted) {
    std::cerr << "training aborted: " << result.abort_reason
              << " (last good checkpoint saved)\n";
    return 1;
  }
  std::cout << "stage " << to_string(cfg.stage) << " finished at step "
            << result.final_step;
  if (!result.validations.empty()) {
    const auto& v = result.validations.back();
    std::cout << "  val_psnr=" << v.psnr << " val_lpips=" << v.lpips;
  }
  std::cout << "\nselected checkpoint (by " << cfg.select_by
            << "): " << result.selected_ckpt.string() << "\n";
  return 0;
}

int dispatch_inner(int argc, const char* const* argv) {
  CLI::App app{"lightweight learned smartphone ISP: training, evaluation, inference"};
  app.require_subcommand(1);

  // synth-data
  auto* synth = app.add_subcommand("synth-data", "generate a synthetic RAW/RGB dataset");
  std::string s_out, s_matrix;
  int s_n = 16, s_patch = 64, s_val = 0, s_test = 0;
  std::uint32_t s_seed = 0, s_split_seed = 1;
  double s_gamma = 2.2, s_noise = 0.0;
  synth->add_option("--out", s_out)->required();
  synth->add_option("--n", s_n);
  synth->add_option("--patch", s_patch);
  synth->add_option("--seed", s_seed);
  synth->add_option("--gamma", s_gamma);
  synth->add_option("--noise", s_noise);
  synth->add_option("--matrix", s_matrix, "9 comma-separated row-major entries");
  synth->add_option("--val", s_val);
  synth->add_option("--test", s_test);
  synth->add_option("--split-seed", s_split_seed);

  // prepare-data
  auto* prep = app.add_subcommand("prepare-data", "index a real dataset directory");
  std::string p_root, p_layout = "zrr", p_pairing = "paired", p_out;
  std::string p_raw_subdir = "raw", p_rgb_subdir = "rgb", p_pattern = "RGGB";
  double p_black = 0, p_white = 65535;
  int p_val = 0, p_test = 0;
  std::uint32_t p_split_seed = 1;
  prep->add_option("--root", p_root)->required();
  prep->add_option("--layout", p_layout)->check(CLI::IsMember({"zrr", "fuji", "generic"}));
  prep->add_option("--pairing", p_pairing)->check(CLI::IsMember({"paired", "unpaired"}));
  prep->add_option("--out", p_out)->required();
  prep->add_option("--raw-subdir", p_raw_subdir);
  prep->add_option("--rgb-subdir", p_rgb_subdir);
  prep->add_option("--pattern", p_pattern);
  prep->add_option("--black", p_black);
  prep->add_option("--white", p_white);
  prep->add_option("--val", p_val);
  prep->add_option("--test", p_test);
  prep->add_option("--split-seed", p_split_seed);

  // pretrain / train
  std::string t_config, t_stage, t_train, t_val, t_target_rgb, t_out;
  std::vector<std::string> t_set;
  auto* pre = app.add_subcommand("pretrain", "demosaicing pretraining stage");
  pre->add_option("--config", t_config);
  pre->add_option("--set", t_set, "config overrides key=value");
  pre->add_option("--train", t_train)->required();
  pre->add_option("--val", t_val);
  pre->add_option("--out", t_out)->required();

  auto* tr = app.add_subcommand("train", "paired or unpaired training stage");
  tr->add_option("--config", t_config);
  tr->add_option("--set", t_set);
  tr->add_option("--stage", t_stage)
      ->check(CLI::IsMember({"pretrain", "paired_no_adv", "paired_full", "unpaired"}));
  tr->add_option("--train", t_train)->required();
  tr->add_option("--val", t_val);
  tr->add_option("--target-rgb", t_target_rgb, "index file or directory of target pngs");
  tr->add_option("--out", t_out)->required();

  // eval
  auto* ev = app.add_subcommand("eval", "compute metrics against paired targets");
  std::string e_ckpt, e_data, e_out, e_metrics = "psnr,ssim,lpips";
  std::string e_extractors = "stub", e_cache;
  std::uint64_t e_seed = 7;
  ev->add_option("--ckpt", e_ckpt)->required();
  ev->add_option("--data", e_data)->required();
  ev->add_option("--out", e_out)->required();
  ev->add_option("--metrics", e_metrics, "comma list of psnr,ssim,ms_ssim,lpips");
  ev->add_option("--extractors", e_extractors)->check(CLI::IsMember({"stub", "pretrained"}));
  ev->add_option("--cache", e_cache);
  ev->add_option("--seed", e_seed);

  // infer
  auto* inf = app.add_subcommand("infer", "convert a directory of RAW patches to PNG");
  std::string i_ckpt, i_raw_dir, i_out, i_pattern = "RGGB";
  double i_black = 0, i_white = 65535;
  inf->add_option("--ckpt", i_ckpt)->required();
  inf->add_option("--raw-dir", i_raw_dir)->required();
  inf->add_option("--out", i_out)->required();
  inf->add_option("--pattern", i_pattern);
  inf->add_option("--black", i_black);
  inf->add_option("--white", i_white);

  // fetch-weights
  auto* fw = app.add_subcommand("fetch-weights", "export pretrained extractors into a cache dir");
  std::string f_cache, f_script;
  fw->add_option("--cache", f_cache)->required();
  fw->add_option("--script", f_script, "exporter script (defaults to bundled fetch_weights.py)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (synth->parsed()) {
    auto spec = data::default_synthetic_spec();
    spec.gamma = s_gamma;
    spec.noise_sigma = s_noise;
    spec.seed = s_seed;
    if (!s_matrix.empty()) spec.color_matrix = parse_matrix(s_matrix);
    auto m = data::generate_synthetic(spec, s_n, s_patch, s_out);
    maybe_split_and_save(m, s_out, s_val, s_test, s_split_seed);
    write_runspec(s_out, "synth-data",
                  {{"n", std::to_string(s_n)},
                   {"patch", std::to_string(s_patch)},
                   {"seed", std::to_string(s_seed)},
                   {"gamma", std::to_string(s_gamma)},
                   {"noise", std::to_string(s_noise)},
                   {"matrix", s_matrix.empty() ? "default" : s_matrix},
                   {"val", std::to_string(s_val)},
                   {"test", std::to_string(s_test)},
                   {"split_seed", std::to_string(s_split_seed)}});
    std::cout << "wrote " << m.size() << " synthetic pairs to " << s_out << "\n";
    return 0;
  }

  if (prep->parsed()) {
    data::LayoutSpec layout{p_raw_subdir, p_rgb_subdir};
    auto m = data::load_manifest(p_root, p_layout, data::pairing_from_string(p_pairing),
                                 layout);
    m.bayer_pattern = bayer::pattern_from_string(p_pattern);
    m.black_level = p_black;
    m.white_level = p_white;
    fs::create_directories(p_out);
    maybe_split_and_save(m, p_out, p_val, p_test, p_split_seed);
    write_runspec(p_out, "prepare-data",
                  {{"root", p_root},
                   {"layout", p_layout},
                   {"pairing", p_pairing},
                   {"pattern", p_pattern},
                   {"black", std::to_string(p_black)},
                   {"white", std::to_string(p_white)},
                   {"val", std::to_string(p_val)},
                   {"test", std::to_string(p_test)},
                   {"split_seed", std::to_string(p_split_seed)}});
    std::cout << "indexed " << m.size() << " entries into " << p_out << "\n";
    return 0;
  }

  if (pre->parsed())
    return run_train_like("pretrain", t_config, t_set, "pretrain", t_train, t_val, "",
                          t_out);

  if (tr->parsed())
    return run_train_like("train", t_config, t_set, t_stage, t_train, t_val,
                          t_target_rgb, t_out);

  if (ev->parsed()) {
    auto manifest = load_index(e_data);
    auto model = model::load_backbone(e_ckpt);
    std::vector<std::string> metrics;
    std::stringstream ss(e_metrics);
    std::string tok;
    while (std::getline(ss, tok, ',')) metrics.push_back(tok);
    std::unique_ptr<feat::FeatureBank> bank;
    if (std::find(metrics.begin(), metrics.end(), "lpips") != metrics.end())
      bank = feat::make_bank(e_extractors, e_cache, e_seed);
    auto predict = [&model](const data::DatasetManifest& m, std::size_t i) {
      auto packed = bayer::pack(data::load_raw(m, i)).unsqueeze(0);
      return model->infer(packed).squeeze(0);
    };
    auto report = metric::evaluate(predict, manifest, metrics, bank.get());
    report.model_tag = model::to_string(model->arch);
    report.dataset_tag = e_data;
    report.split_tag = "eval";
    fs::create_directories(e_out);
    metric::write_report_csv(report, fs::path(e_out) / "report.csv");
    metric::write_report_markdown(report, fs::path(e_out) / "report.md");
    write_runspec(e_out, "eval",
                  {{"ckpt", e_ckpt}, {"data", e_data}, {"metrics", e_metrics}});
    for (const auto& [k, v] : report.aggregate) std::cout << k << ": " << v << "\n";
    return 0;
  }

  if (inf->parsed()) {
    auto model = model::load_backbone(i_ckpt);
    fs::create_directories(i_out);
    std::size_t count = 0;
    std::vector<fs::path> files;
    for (const auto& de : fs::directory_iterator(i_raw_dir))
      if (de.is_regular_file() && de.path().extension() == ".png")
        files.push_back(de.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw std::runtime_error("no RAW pngs in " + i_raw_dir);
    for (const auto& f : files) {
      bayer::RawPatch raw;
      raw.mosaic = common::read_png_gray16(f);
      raw.pattern = bayer::pattern_from_string(i_pattern);
      raw.black_level = i_black;
      raw.white_level = i_white;
      auto rgb = model->infer(bayer::pack(raw).unsqueeze(0)).squeeze(0);
      common::write_png_rgb8(fs::path(i_out) / f.filename(), rgb);
      ++count;
    }
    write_runspec(i_out, "infer",
                  {{"ckpt", i_ckpt}, {"raw_dir", i_raw_dir}, {"pattern", i_pattern}});
    std::cout << "wrote " << count << " images to " << i_out << "\n";
    return 0;
  }

  if (fw->parsed()) {
    fs::path script = f_script.empty()
                          ? fs::path(UISP_TOOLS_DIR) / "fetch_weights.py"
                          : fs::path(f_script);
    if (!fs::exists(script))
      throw std::runtime_error("exporter script not found: " + script.string());
    fs::create_directories(f_cache);
    const std::string cmd =
        "python3 \"" + script.string() + "\" --cache \"" + f_cache + "\"";
    const int rc = std::system(cmd.c_str());
    if (rc != 0) throw std::runtime_error("weight export failed (are you online?)");
    write_runspec(f_cache, "fetch-weights", {{"cache", f_cache}, {"script", script.string()}});
    std::cout << "extractor cache populated at " << f_cache << "\n";
    return 0;
  }

  return 2;
}

}  // namespace

int dispatch(int argc, const char* const* argv) {
  try {
    return dispatch_inner(argc, argv);
  } catch (const std::exception& e) {
    std::string msg = e.what();
    auto nl = msg.find('\n');
    if (nl != std::string::npos) msg = msg.substr(0, nl);
    std::cerr << "error: " << msg << "\n";
    return 1;
  }
}

}  // namespace isp::cli
