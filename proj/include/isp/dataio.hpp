#pragma once

#include "isp/bayer.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace isp::data {

namespace fs = std::filesystem;

enum class PairingMode { Paired, Unpaired };

PairingMode pairing_from_string(const std::string& s);
std::string to_string(PairingMode m);

struct Entry {
  std::string raw_path;
  std::optional<std::string> rgb_path;
};

struct DatasetManifest {
  std::vector<Entry> entries;
  PairingMode pairing_mode = PairingMode::Paired;
  int patch_size = 0;  // mosaic height == width, must be even
  bayer::Pattern bayer_pattern = bayer::Pattern::RGGB;
  double black_level = 0.0;
  double white_level = 65535.0;

  std::size_t size() const { return entries.size(); }
  void validate() const;  // paired => rgb present; files exist; even patch
};

// Directory layouts: zrr/fuji = {raw/*.png, rgb/*.png}; generic takes the
// subdir names from LayoutSpec. Pairs are matched by filename stem. An
// optional `exclude.txt` in root (one stem per line) filters entries.
struct LayoutSpec {
  std::string raw_subdir = "raw";
  std::string rgb_subdir = "rgb";
};

DatasetManifest load_manifest(const fs::path& root, const std::string& layout,
                              PairingMode mode, const LayoutSpec& generic = {});

struct SyntheticDomainSpec {
  torch::Tensor color_matrix;  // 3x3, invertible
  double gamma = 1.0;          // target = (M * scene)^(1/gamma)
  double noise_sigma = 0.0;    // Gaussian, normalized [0,1] units
  std::uint32_t seed = 0;

  void validate() const;
};

SyntheticDomainSpec default_synthetic_spec();

// Emits rgb/NNNN.png targets (procedural textures), raw/NNNN.png RGGB
// mosaics derived by inverse-gamma + inverse color matrix + mosaicing +
// noise, plus manifest.index. Reproducible bit-exactly from seed.
DatasetManifest generate_synthetic(const SyntheticDomainSpec& spec, int n,
                                   int patch_size, const fs::path& out_dir);

// The forward domain transform the synthetic ISP has to learn:
// scene-linear (3,H,W) -> display target, clamp(M x, 0, 1)^(1/gamma).
torch::Tensor apply_domain_transform(const SyntheticDomainSpec& spec,
                                     const torch::Tensor& scene_linear);

struct SplitResult {
  DatasetManifest train, val, test;
};
// Seed-deterministic disjoint split; union of parts equals the input.
SplitResult split_manifest(const DatasetManifest& m, std::size_t val_count,
                           std::size_t test_count, std::uint32_t seed);

// Line-oriented text index.
void save_manifest(const DatasetManifest& m, const fs::path& path);
DatasetManifest load_manifest_index(const fs::path& path);

// Pure per-entry decoders, safe to call concurrently.
bayer::RawPatch load_raw(const DatasetManifest& m, std::size_t i);
torch::Tensor load_rgb(const DatasetManifest& m, std::size_t i);

// RGB paths of a manifest (the unpaired target pool), or of a directory.
std::vector<std::string> rgb_paths(const DatasetManifest& m);
std::vector<std::string> list_rgb_dir(const fs::path& dir);

}  // namespace isp::data
