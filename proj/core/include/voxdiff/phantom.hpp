#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "voxdiff/group.hpp"
#include "voxdiff/volume.hpp"

namespace voxdiff {

struct PairedSample {
  Volume3D condition;  // structural analog, normalized to [0, 1]
  Volume3D target;     // uptake analog, normalized to [0, 1]
  GroupLabel group;
  std::uint64_t subject_seed;
  std::string pair_id;
};

/// Synthetic paired-volume generator settings.
struct PhantomConfig {
  Dims3 dims{16, 16, 16};
  Spacing3 spacing{1.5f, 1.5f, 1.5f};
  std::array<int, 3> counts{40, 40, 40};
  // Amplitude of the subject-specific perturbation added to each group's targets.
  std::array<double, 3> sigma{0.0, 0.12, 0.3};
  // Ellipsoid semi-axes, as a fraction of the half field of view.
  double axis_min = 0.72;
  double axis_max = 0.9;
  // Thickness of the outer (scalp) shell in normalized radius units.
  double shell_thickness = 0.15;
  double noise_floor = 0.01;
  int perturbation_modes = 10;

  /// Throws ConfigError on invalid settings.
  void validate() const;
};

/// Per-group counts proportional to 108:163:80 summing to `total`
/// (largest-remainder rounding).
std::array<int, 3> paper_ratio_counts(int total);

/// Deterministic in (group, subject_seed, cfg). Anatomy depends on
/// subject_seed only, so equal seeds give equal anatomy across groups.
PairedSample generate_pair(GroupLabel group, std::uint64_t subject_seed, const PhantomConfig& cfg);

enum class Split { Train, Val, Test };
std::string to_string(Split s);
Split parse_split(std::string_view s);

/// (train, val, test) sizes for a group of n pairs: 670/838 of the pairs go
/// to training, the rest is divided evenly (val takes the odd one).
std::array<int, 3> split_sizes(int n);

struct ManifestEntry {
  std::string pair_id;
  GroupLabel group;
  Split split;
  std::uint64_t subject_seed;
  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct Dataset {
  std::vector<PairedSample> pairs;      // same order as manifest
  std::vector<ManifestEntry> manifest;
};

/// Pairs plus a stratified split; a pure function of (cfg, master_seed).
Dataset generate_dataset(const PhantomConfig& cfg, std::uint64_t master_seed);

/// `<root>/<split>/<id>_cond.vvol`, `<id>_targ.vvol` and `<root>/manifest.csv`.
void write_dataset(const Dataset& ds, const std::filesystem::path& root);
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& manifest_csv);
std::string manifest_csv(const std::vector<ManifestEntry>& manifest);

std::filesystem::path condition_path(const std::filesystem::path& root, const ManifestEntry& e);
std::filesystem::path target_path(const std::filesystem::path& root, const ManifestEntry& e);

/// Loads every pair of one split from a dataset directory.
std::vector<PairedSample> load_split(const std::filesystem::path& root, Split split);

}  // namespace voxdiff
