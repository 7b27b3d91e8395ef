#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "voxdiff/group.hpp"
#include "voxdiff/volume.hpp"

namespace voxdiff {

/// 10 log10(peak^2 / MSE) in dB; +infinity when the volumes are identical.
double psnr(const Volume3D& ref, const Volume3D& test, double peak = 1.0);

struct SsimParams {
  int window = 7;  // odd edge length of the cubic box window
  double k1 = 0.01;
  double k2 = 0.03;
  double peak = 1.0;
};

/// Mean SSIM over every fully contained window position (stride 1, no
/// padding), with a uniform box window and population (1/N) moments.
double ssim3d(const Volume3D& ref, const Volume3D& test, const SsimParams& params = {});

enum class CiMethod { Normal, StudentT };

struct MeanCi {
  double mean;
  double half_width;
};

/// mean +/- q * s / sqrt(n) with the sample (n - 1) standard deviation; q is
/// 1.96 for Normal or the 97.5% Student-t quantile with n - 1 dof.
MeanCi mean_ci95(std::span<const double> values, CiMethod method = CiMethod::Normal);

/// Per-voxel population standard deviation across subjects. Each voxel's
/// values are sorted before accumulation, so the result does not depend on
/// the order of `volumes`.
Volume3D voxelwise_std_map(std::span<const Volume3D> volumes);

/// Mid-axial (z = nz / 2) slice as binary PGM, min-max scaled to 0..255.
std::string mid_axial_pgm(const Volume3D& v);

struct EvalPair {
  std::string pair_id;
  GroupLabel group;
  Volume3D reference;
  Volume3D synthesized;
};

struct PairMetrics {
  std::string pair_id;
  GroupLabel group;
  double ssim;
  double psnr;  // +inf for identical volumes
};

struct GroupAggregate {
  GroupLabel group;
  std::string metric;  // "ssim" or "psnr"
  double mean;
  std::optional<double> ci95_half;  // empty when fewer than 2 finite values (NoCI)
  int n;                            // values aggregated
  int excluded_infinite = 0;
};

struct EvalOptions {
  SsimParams ssim;
  double psnr_peak = 1.0;
  CiMethod ci = CiMethod::Normal;
};

struct MetricReport {
  std::vector<PairMetrics> pairs;
  std::vector<GroupAggregate> aggregates;  // ordered A, B, C; ssim before psnr
  std::vector<std::string> warnings;

  [[nodiscard]] const GroupAggregate* find(GroupLabel g, const std::string& metric) const;

  /// `pair_id,group,ssim,psnr`
  [[nodiscard]] std::string pairs_csv() const;
  /// `group,metric,mean,ci95_half,n`
  [[nodiscard]] std::string aggregate_csv() const;
  /// Rows GroupA/B/C, columns SSIM and PSNR as "mean ± half-width".
  [[nodiscard]] std::string table() const;
};

MetricReport evaluate_groups(std::span<const EvalPair> pairs, const EvalOptions& options = {});

}  // namespace voxdiff
