#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "voxdiff/params.hpp"

namespace voxdiff {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const;
};

/// Adam moments keyed by parameter name, plus the number of updates taken.
template <std::floating_point Real>
struct OptimizerState {
  std::map<std::string, std::vector<Real>> m;
  std::map<std::string, std::vector<Real>> v;
  std::int64_t step = 0;

  /// Records `m.<name>` and `v.<name>`; the step count is kept by the caller.
  [[nodiscard]] std::vector<ParamRecord> to_records(const ParameterStore<Real>& params) const;
  /// Rebuilds moments for `params`; throws CheckpointMismatch if any record is
  /// missing, extra, or mis-sized.
  void assign_from(const std::vector<ParamRecord>& records, const ParameterStore<Real>& params);

  friend bool operator==(const OptimizerState&, const OptimizerState&) = default;
};

/// L2 norm over every gradient in the store.
template <std::floating_point Real>
double global_grad_norm(const ParameterStore<Real>& params);

/// One bias-corrected Adam update from the gradients currently held by the
/// parameter leaves. Parameters without a gradient are treated as having a
/// zero gradient. If `clip_norm` is set, gradients are first rescaled so
/// their global L2 norm is at most that value. Throws NonFiniteGradient
/// before touching any state if a gradient entry is NaN or infinite.
template <std::floating_point Real>
void adam_step(ParameterStore<Real>& params, OptimizerState<Real>& state, const AdamConfig& cfg,
               std::optional<double> clip_norm = std::nullopt);

}  // namespace voxdiff
