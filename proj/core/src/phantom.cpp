#include "voxdiff/phantom.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "voxdiff/error.hpp"
#include "voxdiff/rng.hpp"

namespace voxdiff {

namespace {

// Stream ids for seed derivation.
constexpr std::uint64_t kAnatomyStream = 1;
constexpr std::uint64_t kConditionNoiseStream = 2;
constexpr std::uint64_t kPerturbationStream = 3;
constexpr std::uint64_t kSplitStream = 0x5B117;

constexpr double kEdgeWidth = 0.04;  // tissue boundary softness, radius units
// Fixed uptake reference: unperturbed white matter lands at 0.6 / 0.75 = 0.8.
constexpr double kUptakeReference = 0.75;

/// ~1 inside radius `edge`, ~0 outside.
double inside(double r, double edge) { return 1.0 / (1.0 + std::exp((r - edge) / kEdgeWidth)); }

struct Anatomy {
  std::array<double, 3> center;
  std::array<double, 3> axes;
  double white_matter_radius;
  double ventricle_radius;
};

Anatomy draw_anatomy(std::uint64_t subject_seed, const PhantomConfig& cfg) {
  auto rng = SeededRng::derived(subject_seed, kAnatomyStream);
  Anatomy a{};
  for (auto& c : a.center) c = rng.uniform(-0.06, 0.06);
  for (auto& ax : a.axes) ax = rng.uniform(cfg.axis_min, cfg.axis_max);
  a.white_matter_radius = rng.uniform(0.52, 0.68);
  a.ventricle_radius = rng.uniform(0.16, 0.28);
  return a;
}

struct Wave {
  std::array<double, 3> k;
  double phase;
};

std::string pair_id(GroupLabel g, int index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%c%04d", "ABC"[group_index(g)], index);
  return buf;
}

std::vector<float> min_max(const std::vector<double>& v) {
  const auto [lo, hi] = std::ranges::minmax(v);
  std::vector<float> out(v.size());
  const double range = hi - lo;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = range > 0 ? static_cast<float>((v[i] - lo) / range) : 0.0f;
  }
  return out;
}

}  // namespace

std::string to_string(GroupLabel g) {
  switch (g) {
    case GroupLabel::A: return "GroupA";
    case GroupLabel::B: return "GroupB";
    case GroupLabel::C: return "GroupC";
  }
  return "Group?";
}

GroupLabel parse_group(std::string_view s) {
  if (s == "GroupA" || s == "A" || s == "a") return GroupLabel::A;
  if (s == "GroupB" || s == "B" || s == "b") return GroupLabel::B;
  if (s == "GroupC" || s == "C" || s == "c") return GroupLabel::C;
  throw ConfigError("unknown group '" + std::string(s) + "'");
}

std::string to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

Split parse_split(std::string_view s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw ConfigError("unknown split '" + std::string(s) + "'");
}

void PhantomConfig::validate() const {
  if (dims.nx <= 0 || dims.ny <= 0 || dims.nz <= 0 || dims.nx % 16 || dims.ny % 16 || dims.nz % 16) {
    throw ConfigError("phantom dims must be positive multiples of 16");
  }
  if (!(spacing.sx > 0 && spacing.sy > 0 && spacing.sz > 0)) {
    throw ConfigError("phantom spacing must be positive");
  }
  for (int c : counts) {
    if (c < 2) throw ConfigError("every group needs at least 2 subjects");
  }
  if (!(sigma[0] >= 0.0 && sigma[0] < sigma[1] && sigma[1] < sigma[2])) {
    throw ConfigError("heterogeneity must satisfy 0 <= sigma_A < sigma_B < sigma_C");
  }
  if (!(axis_min > 0.0 && axis_min <= axis_max && axis_max <= 1.0)) {
    throw ConfigError("need 0 < axis_min <= axis_max <= 1");
  }
  if (!(shell_thickness > 0.0 && shell_thickness < 0.4)) {
    throw ConfigError("shell_thickness must lie in (0, 0.4)");
  }
  if (!(noise_floor >= 0.0)) throw ConfigError("noise_floor must be non-negative");
  if (perturbation_modes < 1) throw ConfigError("perturbation_modes must be at least 1");
}

std::array<int, 3> paper_ratio_counts(int total) {
  constexpr std::array<int, 3> kCohorts{108, 163, 80};
  const int sum = std::accumulate(kCohorts.begin(), kCohorts.end(), 0);
  if (total < 6) throw ConfigError("paper-ratio preset needs a total of at least 6 pairs");
  std::array<int, 3> counts{};
  std::array<double, 3> remainder{};
  int assigned = 0;
  for (std::size_t g = 0; g < 3; ++g) {
    const double exact = static_cast<double>(total) * kCohorts[g] / sum;
    counts[g] = static_cast<int>(std::floor(exact));
    remainder[g] = exact - counts[g];
    assigned += counts[g];
  }
  std::array<std::size_t, 3> order{0, 1, 2};
  std::ranges::stable_sort(order, [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
  for (std::size_t i = 0; assigned < total; ++i, ++assigned) ++counts[order[i % 3]];
  return counts;
}

PairedSample generate_pair(GroupLabel group, std::uint64_t subject_seed, const PhantomConfig& cfg) {
  cfg.validate();
  const Dims3 d = cfg.dims;
  const Anatomy a = draw_anatomy(subject_seed, cfg);

  // The perturbation stream mixes in the group so that one anatomy can carry
  // different deposition patterns in different cohorts.
  auto prng = SeededRng::derived(mix_seed(subject_seed, group_index(group)), kPerturbationStream);
  std::vector<Wave> waves(static_cast<std::size_t>(cfg.perturbation_modes));
  for (auto& w : waves) {
    for (auto& k : w.k) k = prng.uniform(-1.5, 1.5);
    w.phase = prng.uniform(0.0, 2.0 * std::numbers::pi);
  }
  const double wave_norm = 1.0 / std::sqrt(0.5 * static_cast<double>(waves.size()));
  const double sigma = cfg.sigma[group_index(group)];

  auto nrng = SeededRng::derived(subject_seed, kConditionNoiseStream);
  std::vector<double> cond(d.voxels());
  std::vector<double> targ(d.voxels());
  const double scalp_edge = 1.0 - cfg.shell_thickness;
  std::size_t idx = 0;
  for (int k = 0; k < d.nz; ++k) {
    for (int j = 0; j < d.ny; ++j) {
      for (int i = 0; i < d.nx; ++i, ++idx) {
        const std::array<double, 3> u{(i + 0.5) / d.nx * 2.0 - 1.0, (j + 0.5) / d.ny * 2.0 - 1.0,
                                      (k + 0.5) / d.nz * 2.0 - 1.0};
        double r2 = 0.0;
        for (int ax = 0; ax < 3; ++ax) {
          const double q = (u[ax] - a.center[ax]) / a.axes[ax];
          r2 += q * q;
        }
        const double r = std::sqrt(r2);
        const double head = inside(r, 1.0);
        const double brain = inside(r, scalp_edge);
        const double white = inside(r, a.white_matter_radius);
        const double ventricle = inside(r, a.ventricle_radius);

        // Structural contrast: scalp 0.55, gray 0.45, white 0.9, ventricles 0.2.
        cond[idx] = 0.55 * head - 0.10 * brain + 0.45 * white - 0.70 * ventricle +
                    cfg.noise_floor * nrng.normal();

        // Uptake contrast: scalp 0.15, gray 0.35, white 0.6, ventricles 0.05.
        double uptake = 0.15 * head + 0.20 * brain + 0.25 * white - 0.55 * ventricle;
        if (sigma > 0.0) {
          double field = 0.0;
          for (const auto& w : waves) {
            field += std::cos(2.0 * std::numbers::pi * (w.k[0] * u[0] + w.k[1] * u[1] + w.k[2] * u[2]) +
                              w.phase);
          }
          uptake += sigma * wave_norm * field * brain;
        }
        targ[idx] = std::clamp(uptake / kUptakeReference, 0.0, 1.0);
      }
    }
  }
  std::vector<float> targ_f(targ.begin(), targ.end());
  return PairedSample{Volume3D(d, cfg.spacing, min_max(cond)), Volume3D(d, cfg.spacing, std::move(targ_f)),
                      group, subject_seed, ""};
}

std::array<int, 3> split_sizes(int n) {
  const int train = static_cast<int>(std::lround(static_cast<double>(n) * 670.0 / 838.0));
  const int rest = n - train;
  const int test = rest / 2;
  const int val = rest - test;
  if (train < 1 || val < 1 || test < 1) {
    throw ConfigError("group of " + std::to_string(n) + " pairs cannot populate train/val/test");
  }
  return {train, val, test};
}

Dataset generate_dataset(const PhantomConfig& cfg, std::uint64_t master_seed) {
  cfg.validate();
  Dataset ds;
  for (GroupLabel g : kAllGroups) {
    const int n = cfg.counts[group_index(g)];
    const auto sizes = split_sizes(n);
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    auto rng = SeededRng::derived(master_seed, kSplitStream + group_index(g));
    for (int i = n - 1; i > 0; --i) {
      std::swap(order[static_cast<std::size_t>(i)],
                order[static_cast<std::size_t>(rng.uniform_int(0, i))]);
    }
    std::vector<Split> split_of(static_cast<std::size_t>(n));
    for (int r = 0; r < n; ++r) {
      const Split s = r < sizes[0] ? Split::Train : r < sizes[0] + sizes[1] ? Split::Val : Split::Test;
      split_of[static_cast<std::size_t>(order[static_cast<std::size_t>(r)])] = s;
    }
    for (int i = 0; i < n; ++i) {
      const std::uint64_t seed = mix_seed(master_seed, (group_index(g) << 32) | static_cast<std::uint64_t>(i));
      auto pair = generate_pair(g, seed, cfg);
      pair.pair_id = pair_id(g, i);
      ds.manifest.push_back({pair.pair_id, g, split_of[static_cast<std::size_t>(i)], seed});
      ds.pairs.push_back(std::move(pair));
    }
  }
  return ds;
}

std::filesystem::path condition_path(const std::filesystem::path& root, const ManifestEntry& e) {
  return root / to_string(e.split) / (e.pair_id + "_cond.vvol");
}

std::filesystem::path target_path(const std::filesystem::path& root, const ManifestEntry& e) {
  return root / to_string(e.split) / (e.pair_id + "_targ.vvol");
}

std::string manifest_csv(const std::vector<ManifestEntry>& manifest) {
  std::ostringstream out;
  out << "pair_id,group,split,subject_seed\n";
  for (const auto& e : manifest) {
    out << e.pair_id << ',' << to_string(e.group) << ',' << to_string(e.split) << ','
        << e.subject_seed << '\n';
  }
  return out.str();
}

void write_dataset(const Dataset& ds, const std::filesystem::path& root) {
  for (Split s : {Split::Train, Split::Val, Split::Test}) {
    std::filesystem::create_directories(root / to_string(s));
  }
  for (std::size_t i = 0; i < ds.pairs.size(); ++i) {
    save_volume(ds.pairs[i].condition, condition_path(root, ds.manifest[i]));
    save_volume(ds.pairs[i].target, target_path(root, ds.manifest[i]));
  }
  std::ofstream out(root / "manifest.csv", std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write manifest in " + root.string());
  out << manifest_csv(ds.manifest);
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& manifest_csv_path) {
  std::ifstream in(manifest_csv_path);
  if (!in) throw IoError("cannot open manifest " + manifest_csv_path.string());
  std::string line;
  if (!std::getline(in, line) || line != "pair_id,group,split,subject_seed") {
    throw FormatError("manifest header must be pair_id,group,split,subject_seed");
  }
  std::vector<ManifestEntry> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cols.push_back(cell);
    if (cols.size() != 4) throw FormatError("manifest row needs 4 columns: " + line);
    std::uint64_t seed = 0;
    const auto [ptr, ec] = std::from_chars(cols[3].data(), cols[3].data() + cols[3].size(), seed);
    if (ec != std::errc() || ptr != cols[3].data() + cols[3].size()) {
      throw FormatError("bad subject_seed in manifest row: " + line);
    }
    out.push_back({cols[0], parse_group(cols[1]), parse_split(cols[2]), seed});
  }
  return out;
}

std::vector<PairedSample> load_split(const std::filesystem::path& root, Split split) {
  std::vector<PairedSample> out;
  for (const auto& e : read_manifest(root / "manifest.csv")) {
    if (e.split != split) continue;
    out.push_back(PairedSample{load_volume(condition_path(root, e)), load_volume(target_path(root, e)),
                               e.group, e.subject_seed, e.pair_id});
  }
  return out;
}

}  // namespace voxdiff
