#include "voxdiff/diffusion.hpp"

#include "voxdiff/unet.hpp"

namespace voxdiff {

void DiffusionConfig::validate() const {
  if (T < 2) throw ConfigError("diffusion T must be at least 2, got " + std::to_string(T));
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    throw ConfigError("need 0 < beta_start <= beta_end < 1");
  }
}

NoiseSchedule NoiseSchedule::from_betas(std::vector<double> betas) {
  if (betas.empty()) throw ConfigError("noise schedule needs at least one step");
  for (double b : betas) {
    if (!(b > 0.0 && b < 1.0)) throw ConfigError("every beta must lie in (0, 1)");
  }
  NoiseSchedule s;
  s.beta_ = std::move(betas);
  const std::size_t T = s.beta_.size();
  s.alpha_.resize(T);
  s.alpha_bar_.resize(T);
  s.beta_tilde_.resize(T);
  double running = 1.0;
  for (std::size_t i = 0; i < T; ++i) {
    s.alpha_[i] = 1.0 - s.beta_[i];
    const double prev = running;
    running *= s.alpha_[i];
    s.alpha_bar_[i] = running;
    s.beta_tilde_[i] = (1.0 - prev) / (1.0 - running) * s.beta_[i];
  }
  return s;
}

NoiseSchedule make_linear_schedule(const DiffusionConfig& cfg) {
  cfg.validate();
  std::vector<double> betas(static_cast<std::size_t>(cfg.T));
  const double step = (cfg.beta_end - cfg.beta_start) / (cfg.T - 1);
  for (int i = 0; i < cfg.T; ++i) betas[static_cast<std::size_t>(i)] = cfg.beta_start + step * i;
  betas.back() = cfg.beta_end;
  return NoiseSchedule::from_betas(std::move(betas));
}

Volume3D synthesize(const UNet<float>& net, const Volume3D& condition, const NoiseSchedule& sched,
                    SeededRng& rng) {
  const Dims3 d = condition.dims();
  if (d.nx % 16 != 0 || d.ny % 16 != 0 || d.nz % 16 != 0) {
    throw ShapeError("condition dims must be multiples of 16 for full-volume synthesis");
  }
  const auto src = condition.data();
  auto y = ad::constant<float>(ad::Shape{1, 1, d.nx, d.ny, d.nz},
                               std::vector<float>(src.begin(), src.end()));
  auto denoise = [&net](const ad::Var<float>& x, const ad::Var<float>& c, std::span<const int> t) {
    return net.forward(x, c, t);
  };
  auto x = sample_chain<float>(denoise, y, sched, rng);
  for (auto& v : x) v = std::clamp(v, 0.0f, 1.0f);
  return Volume3D(d, condition.spacing(), std::move(x));
}

}  // namespace voxdiff
