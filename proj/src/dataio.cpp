#include "isp/dataio.hpp"

#include "isp/common.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>
#include <stdexcept>

namespace isp::data {

using common::Rng;
using torch::indexing::None;
using torch::indexing::Slice;

PairingMode pairing_from_string(const std::string& s) {
  if (s == "paired") return PairingMode::Paired;
  if (s == "unpaired") return PairingMode::Unpaired;
  throw std::invalid_argument("unknown pairing mode: " + s);
}

std::string to_string(PairingMode m) {
  return m == PairingMode::Paired ? "paired" : "unpaired";
}

void DatasetManifest::validate() const {
  if (patch_size % 2 != 0)
    throw std::invalid_argument("patch_size must be even (Bayer packing)");
  if (!(black_level >= 0.0 && black_level < white_level))
    throw std::invalid_argument("need 0 <= black_level < white_level");
  for (const auto& e : entries) {
    if (!fs::exists(e.raw_path))
      throw std::runtime_error("missing raw file: " + e.raw_path);
    if (pairing_mode == PairingMode::Paired) {
      if (!e.rgb_path)
        throw std::runtime_error("paired manifest entry lacks rgb: " + e.raw_path);
      if (!fs::exists(*e.rgb_path))
        throw std::runtime_error("missing rgb file: " + *e.rgb_path);
    }
  }
}

namespace {

std::set<std::string> read_exclusions(const fs::path& root) {
  std::set<std::string> out;
  std::ifstream f(root / "exclude.txt");
  std::string line;
  while (std::getline(f, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (!line.empty()) out.insert(line);
  }
  return out;
}

}  // namespace

DatasetManifest load_manifest(const fs::path& root, const std::string& layout,
                              PairingMode mode, const LayoutSpec& generic) {
  if (!fs::is_directory(root))
    throw std::runtime_error("dataset directory not found: " + root.string());

  LayoutSpec spec = generic;
  if (layout == "zrr" || layout == "fuji") {
    spec = LayoutSpec{};
  } else if (layout != "generic") {
    throw std::invalid_argument("unknown layout: " + layout);
  }

  const fs::path raw_dir = root / spec.raw_subdir;
  const fs::path rgb_dir = root / spec.rgb_subdir;
  if (!fs::is_directory(raw_dir))
    throw std::runtime_error("raw directory not found: " + raw_dir.string());

  const auto excluded = read_exclusions(root);

  std::vector<std::string> stems;
  for (const auto& de : fs::directory_iterator(raw_dir)) {
    if (!de.is_regular_file() || de.path().extension() != ".png") continue;
    auto stem = de.path().stem().string();
    if (!excluded.count(stem)) stems.push_back(stem);
  }
  std::sort(stems.begin(), stems.end());

  DatasetManifest m;
  m.pairing_mode = mode;
  std::vector<std::string> orphans;
  for (const auto& stem : stems) {
    Entry e;
    e.raw_path = (raw_dir / (stem + ".png")).string();
    if (mode == PairingMode::Paired) {
      auto rgb = rgb_dir / (stem + ".png");
      if (!fs::exists(rgb)) {
        orphans.push_back(stem);
        continue;
      }
      e.rgb_path = rgb.string();
    } else {
      auto rgb = rgb_dir / (stem + ".png");
      if (fs::exists(rgb)) e.rgb_path = rgb.string();
    }
    m.entries.push_back(std::move(e));
  }
  if (!orphans.empty()) {
    std::ostringstream msg;
    msg << "paired dataset has " << orphans.size() << " RAW file(s) without RGB:";
    for (const auto& s : orphans) msg << ' ' << s;
    throw std::runtime_error(msg.str());
  }
  if (m.entries.empty())
    throw std::runtime_error("no RAW patches found in " + raw_dir.string());

  auto first = common::read_png_gray16(m.entries.front().raw_path);
  m.patch_size = static_cast<int>(first.size(0));
  m.validate();
  return m;
}

void SyntheticDomainSpec::validate() const {
  TORCH_CHECK(color_matrix.dim() == 2 && color_matrix.size(0) == 3 &&
                  color_matrix.size(1) == 3,
              "color_matrix must be 3x3");
  const double det =
      torch::linalg_det(color_matrix.to(torch::kFloat64)).item<double>();
  if (std::abs(det) < 1e-8)
    throw std::invalid_argument("color_matrix must be invertible");
  if (!(gamma > 0.2 && gamma < 5.0))
    throw std::invalid_argument("gamma must lie in (0.2, 5.0)");
  if (noise_sigma < 0.0) throw std::invalid_argument("noise_sigma must be >= 0");
}

SyntheticDomainSpec default_synthetic_spec() {
  SyntheticDomainSpec s;
  s.color_matrix = torch::tensor({{0.90f, 0.10f, 0.00f},
                                  {0.05f, 0.90f, 0.05f},
                                  {0.00f, 0.10f, 0.90f}});
  s.gamma = 2.2;
  s.noise_sigma = 0.0;
  s.seed = 0;
  return s;
}

namespace {

torch::Tensor coord_grid(int size) {  // (2,H,W), values in [0,1)
  auto r = torch::arange(size, torch::kFloat32) / size;
  auto y = r.reshape({size, 1}).expand({size, size});
  auto x = r.reshape({1, size}).expand({size, size});
  return torch::stack({y, x}, 0);
}

torch::Tensor synth_sinusoids(Rng& rng, int size) {
  auto g = coord_grid(size);
  auto img = torch::full({3, size, size}, 0.5f);
  for (int c = 0; c < 3; ++c) {
    auto acc = torch::zeros({size, size});
    for (int k = 0; k < 3; ++k) {
      const double fy = rng.uniform(0.5, 3.5), fx = rng.uniform(0.5, 3.5);
      const double phase = rng.uniform(0.0, 2.0 * M_PI);
      const double amp = rng.uniform(0.3, 1.0);
      acc += amp * torch::sin(2.0 * M_PI * (fy * g[0] + fx * g[1]) + phase);
    }
    img[c] = 0.5 + 0.45 * acc / 3.0;
  }
  return img.clamp(0.0, 1.0);
}

torch::Tensor synth_polygons(Rng& rng, int size) {
  auto g = coord_grid(size);
  // gradient background between two random colors
  auto img = torch::zeros({3, size, size});
  for (int c = 0; c < 3; ++c) {
    const double a = rng.uniform(0.1, 0.9), b = rng.uniform(0.1, 0.9);
    img[c] = a + (b - a) * g[1];
  }
  const int npoly = 3 + static_cast<int>(rng.below(4));
  for (int p = 0; p < npoly; ++p) {
    // random triangle
    double vx[3], vy[3];
    for (int v = 0; v < 3; ++v) {
      vy[v] = rng.uniform(0.0, 1.0);
      vx[v] = rng.uniform(0.0, 1.0);
    }
    float col[3];
    for (int c = 0; c < 3; ++c) col[c] = static_cast<float>(rng.uniform(0.05, 0.95));
    // orient the triangle consistently, then half-plane tests
    const double cross = (vx[1] - vx[0]) * (vy[2] - vy[0]) - (vy[1] - vy[0]) * (vx[2] - vx[0]);
    if (std::abs(cross) < 1e-4) continue;
    auto inside = torch::ones({size, size}, torch::kBool);
    for (int e = 0; e < 3; ++e) {
      const int f = (e + 1) % 3;
      auto s = (g[1] - vx[e]) * (vy[f] - vy[e]) - (g[0] - vy[e]) * (vx[f] - vx[e]);
      inside = inside & ((cross > 0) ? (s >= 0) : (s <= 0));
    }
    for (int c = 0; c < 3; ++c)
      img[c] = torch::where(inside, torch::full({size, size}, col[c]), img[c]);
  }
  return img.clamp(0.0, 1.0);
}

torch::Tensor synth_smooth_noise(Rng& rng, int size) {
  const int grid = 6;
  auto coarse = torch::zeros({3, grid, grid});
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < grid; ++i)
      for (int j = 0; j < grid; ++j)
        coarse[c][i][j] = static_cast<float>(rng.uniform(0.05, 0.95));
  auto img = common::resize_bilinear(coarse.unsqueeze(0), size, size).squeeze(0);
  return img.clamp(0.0, 1.0);
}

torch::Tensor mosaic_rggb(const torch::Tensor& rgb) {  // (3,H,W) -> (H,W)
  const auto h = rgb.size(1), w = rgb.size(2);
  auto m = torch::zeros({h, w}, rgb.options());
  m.index_put_({Slice(0, None, 2), Slice(0, None, 2)},
               rgb.index({0, Slice(0, None, 2), Slice(0, None, 2)}));
  m.index_put_({Slice(0, None, 2), Slice(1, None, 2)},
               rgb.index({1, Slice(0, None, 2), Slice(1, None, 2)}));
  m.index_put_({Slice(1, None, 2), Slice(0, None, 2)},
               rgb.index({1, Slice(1, None, 2), Slice(0, None, 2)}));
  m.index_put_({Slice(1, None, 2), Slice(1, None, 2)},
               rgb.index({2, Slice(1, None, 2), Slice(1, None, 2)}));
  return m;
}

}  // namespace

torch::Tensor apply_domain_transform(const SyntheticDomainSpec& spec,
                                     const torch::Tensor& scene_linear) {
  auto m = spec.color_matrix.to(scene_linear.dtype());
  auto flat = scene_linear.reshape({3, -1});
  auto mixed = torch::matmul(m, flat).reshape(scene_linear.sizes()).clamp(0.0, 1.0);
  return torch::pow(mixed.clamp_min(1e-8), 1.0 / spec.gamma);
}

DatasetManifest generate_synthetic(const SyntheticDomainSpec& spec, int n,
                                   int patch_size, const fs::path& out_dir) {
  spec.validate();
  if (n < 1) throw std::invalid_argument("need n >= 1");
  if (patch_size % 2 != 0)
    throw std::invalid_argument("patch_size must be even");

  fs::create_directories(out_dir / "raw");
  fs::create_directories(out_dir / "rgb");

  auto minv = torch::linalg_inv(spec.color_matrix.to(torch::kFloat64)).to(torch::kFloat32);
  Rng rng(spec.seed);

  DatasetManifest m;
  m.pairing_mode = PairingMode::Paired;
  m.patch_size = patch_size;
  m.bayer_pattern = bayer::Pattern::RGGB;
  m.black_level = 0.0;
  m.white_level = 65535.0;

  for (int i = 0; i < n; ++i) {
    torch::Tensor target;
    switch (i % 3) {
      case 0: target = synth_sinusoids(rng, patch_size); break;
      case 1: target = synth_polygons(rng, patch_size); break;
      default: target = synth_smooth_noise(rng, patch_size); break;
    }

    // invert the domain transform: display target -> scene-linear RGB
    auto lin = torch::pow(target.clamp_min(1e-8), spec.gamma);
    auto scene = torch::matmul(minv, lin.reshape({3, -1}))
                     .reshape(target.sizes())
                     .clamp(0.0, 1.0);
    auto mosaic = mosaic_rggb(scene);
    if (spec.noise_sigma > 0.0) {
      auto noise = torch::zeros_like(mosaic);
      auto acc = noise.accessor<float, 2>();
      for (int64_t r = 0; r < mosaic.size(0); ++r)
        for (int64_t c = 0; c < mosaic.size(1); ++c)
          acc[r][c] = static_cast<float>(rng.gaussian() * spec.noise_sigma);
      mosaic = (mosaic + noise).clamp(0.0, 1.0);
    }

    std::ostringstream name;
    name << std::setw(4) << std::setfill('0') << i << ".png";
    const auto raw_path = out_dir / "raw" / name.str();
    const auto rgb_path = out_dir / "rgb" / name.str();
    common::write_png_gray16(raw_path, mosaic * 65535.0);
    common::write_png_rgb8(rgb_path, target);
    m.entries.push_back({raw_path.string(), rgb_path.string()});
  }

  save_manifest(m, out_dir / "manifest.index");
  return m;
}

SplitResult split_manifest(const DatasetManifest& m, std::size_t val_count,
                           std::size_t test_count, std::uint32_t seed) {
  if (val_count + test_count >= m.size())
    throw std::invalid_argument("val_count + test_count must be < manifest size");
  auto idx = common::shuffled_indices(m.size(), seed);

  auto subset = [&m](std::vector<std::size_t> take) {
    std::sort(take.begin(), take.end());
    DatasetManifest out = m;
    out.entries.clear();
    for (auto i : take) out.entries.push_back(m.entries[i]);
    return out;
  };

  std::vector<std::size_t> val(idx.begin(), idx.begin() + val_count);
  std::vector<std::size_t> test(idx.begin() + val_count,
                                idx.begin() + val_count + test_count);
  std::vector<std::size_t> train(idx.begin() + val_count + test_count, idx.end());
  return {subset(train), subset(val), subset(test)};
}

void save_manifest(const DatasetManifest& m, const fs::path& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write manifest: " + path.string());
  f << "uisp-manifest v1\n";
  f << "pairing=" << to_string(m.pairing_mode) << "\n";
  f << "patch_size=" << m.patch_size << "\n";
  f << "pattern=" << bayer::to_string(m.bayer_pattern) << "\n";
  f << "black_level=" << m.black_level << "\n";
  f << "white_level=" << m.white_level << "\n";
  for (const auto& e : m.entries)
    f << e.raw_path << '\t' << (e.rgb_path ? *e.rgb_path : "-") << '\n';
}

DatasetManifest load_manifest_index(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read manifest: " + path.string());
  std::string line;
  if (!std::getline(f, line) || line != "uisp-manifest v1")
    throw std::runtime_error("bad manifest header in " + path.string());

  DatasetManifest m;
  auto field = [&](const std::string& l) {
    auto eq = l.find('=');
    return std::pair{l.substr(0, eq), l.substr(eq + 1)};
  };
  for (int i = 0; i < 5 && std::getline(f, line); ++i) {
    auto [k, v] = field(line);
    if (k == "pairing") m.pairing_mode = pairing_from_string(v);
    else if (k == "patch_size") m.patch_size = std::stoi(v);
    else if (k == "pattern") m.bayer_pattern = bayer::pattern_from_string(v);
    else if (k == "black_level") m.black_level = std::stod(v);
    else if (k == "white_level") m.white_level = std::stod(v);
    else throw std::runtime_error("unknown manifest field: " + k);
  }
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw std::runtime_error("malformed manifest line: " + line);
    Entry e;
    e.raw_path = line.substr(0, tab);
    auto rgb = line.substr(tab + 1);
    if (rgb != "-") e.rgb_path = rgb;
    m.entries.push_back(std::move(e));
  }
  return m;
}

bayer::RawPatch load_raw(const DatasetManifest& m, std::size_t i) {
  bayer::RawPatch raw;
  raw.mosaic = common::read_png_gray16(m.entries.at(i).raw_path);
  raw.pattern = m.bayer_pattern;
  raw.black_level = m.black_level;
  raw.white_level = m.white_level;
  return raw;
}

torch::Tensor load_rgb(const DatasetManifest& m, std::size_t i) {
  const auto& e = m.entries.at(i);
  if (!e.rgb_path) throw std::runtime_error("entry has no rgb target: " + e.raw_path);
  return common::read_png_rgb8(*e.rgb_path);
}

std::vector<std::string> rgb_paths(const DatasetManifest& m) {
  std::vector<std::string> out;
  for (const auto& e : m.entries)
    if (e.rgb_path) out.push_back(*e.rgb_path);
  return out;
}

std::vector<std::string> list_rgb_dir(const fs::path& dir) {
  if (!fs::is_directory(dir))
    throw std::runtime_error("rgb directory not found: " + dir.string());
  std::vector<std::string> out;
  for (const auto& de : fs::directory_iterator(dir))
    if (de.is_regular_file() && de.path().extension() == ".png")
      out.push_back(de.path().string());
  std::sort(out.begin(), out.end());
  if (out.empty()) throw std::runtime_error("no png files in " + dir.string());
  return out;
}

}  // namespace isp::data
