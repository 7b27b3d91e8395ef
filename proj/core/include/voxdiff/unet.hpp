#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "voxdiff/autodiff.hpp"
#include "voxdiff/params.hpp"
#include "voxdiff/rng.hpp"

namespace voxdiff {

struct UNetConfig {
  std::vector<int> channel_widths{8, 16, 32, 32};
  int in_channels = 2;  // noisy target + condition
  int out_channels = 1;
  int time_embed_dim = 32;
  int groups = 8;

  /// Widths 128/256/512/512, as used for full-resolution training.
  static UNetConfig paper_scale();
  static UNetConfig desk_scale() { return {}; }

  /// Throws ConfigError on any violated invariant.
  void validate() const;

  /// Plain-text `key=value` record, one field per line.
  [[nodiscard]] std::string to_text() const;
  static UNetConfig from_text(std::string_view text);

  friend bool operator==(const UNetConfig&, const UNetConfig&) = default;
};

/// Group count actually used for a normalization over `channels`: the
/// configured count, or `channels` itself when there are fewer channels.
int effective_groups(int channels, int groups);

/// Conditional epsilon-prediction network.
///
/// stem conv -> 4 down blocks (2 residual units, then a stride-2 conv) ->
/// 2 bottleneck units -> 4 up blocks (nearest 2x + conv, concat the matching
/// skip, 2 residual units) -> conv head. The condition volume is
/// concatenated with the noisy input as a second channel; the timestep enters
/// through a sinusoidal embedding and MLP that adds a per-channel bias inside
/// every residual unit.
template <std::floating_point Real>
class UNet {
 public:
  UNet(UNetConfig cfg, SeededRng& rng);

  /// x_t and y are (B, 1, d, d, d) with d divisible by 16; t holds one
  /// diffusion step (1-based) per batch item.
  ad::Var<Real> forward(const ad::Var<Real>& x_t, const ad::Var<Real>& y,
                        std::span<const int> t) const;
  ad::Var<Real> operator()(const ad::Var<Real>& x_t, const ad::Var<Real>& y,
                           std::span<const int> t) const {
    return forward(x_t, y, t);
  }

  [[nodiscard]] const UNetConfig& config() const noexcept { return cfg_; }
  [[nodiscard]] ParameterStore<Real>& params() noexcept { return params_; }
  [[nodiscard]] const ParameterStore<Real>& params() const noexcept { return params_; }
  [[nodiscard]] std::size_t parameter_count() const noexcept { return params_.scalar_count(); }

 private:
  void add_conv(const std::string& name, int cin, int cout, int k, SeededRng& rng);
  void add_linear(const std::string& name, int in, int out, SeededRng& rng);
  void add_norm(const std::string& name, int channels);
  void add_res_unit(const std::string& name, int cin, int cout, SeededRng& rng);

  ad::Var<Real> conv(const std::string& name, const ad::Var<Real>& x, int stride, int pad) const;
  ad::Var<Real> norm(const std::string& name, const ad::Var<Real>& x) const;
  ad::Var<Real> res_unit(const std::string& name, const ad::Var<Real>& x,
                         const ad::Var<Real>& temb) const;

  UNetConfig cfg_;
  int time_hidden_ = 0;
  ParameterStore<Real> params_;
};

/// Float network used for training and sampling.
UNet<float> build_unet(const UNetConfig& cfg, SeededRng& rng);

}  // namespace voxdiff
