#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <span>
#include <string>
#include <vector>

#include "voxdiff/autodiff.hpp"
#include "voxdiff/error.hpp"
#include "voxdiff/rng.hpp"
#include "voxdiff/volume.hpp"

namespace voxdiff {

template <std::floating_point Real>
class UNet;

/// The desk preset keeps T = 50 but scales the usual 1e-4 .. 0.02 betas by
/// ten: with only 50 steps the unscaled schedule ends at alpha_bar ~ 0.6, far
/// from the N(0, I) the sampler starts from. Scaled, alpha_bar_T ~ 0.005.
struct DiffusionConfig {
  int T = 50;
  double beta_start = 1e-3;
  double beta_end = 0.2;

  static DiffusionConfig desk_scale() { return {}; }
  static DiffusionConfig paper_scale() { return {1000, 1e-4, 0.02}; }

  void validate() const;
};

/// Precomputed variance schedule. Steps are 1-based: t in [1, T].
/// alpha_bar(0) = 1 by convention, which makes beta_tilde(1) = 0.
class NoiseSchedule {
 public:
  /// Any T >= 1 with every beta in (0, 1).
  static NoiseSchedule from_betas(std::vector<double> betas);

  [[nodiscard]] int T() const noexcept { return static_cast<int>(beta_.size()); }
  [[nodiscard]] double beta(int t) const { return beta_[index(t)]; }
  [[nodiscard]] double alpha(int t) const { return alpha_[index(t)]; }
  [[nodiscard]] double alpha_bar(int t) const { return t == 0 ? 1.0 : alpha_bar_[index(t)]; }
  [[nodiscard]] double beta_tilde(int t) const { return beta_tilde_[index(t)]; }

  [[nodiscard]] std::span<const double> betas() const noexcept { return beta_; }
  [[nodiscard]] std::span<const double> alphas() const noexcept { return alpha_; }
  [[nodiscard]] std::span<const double> alpha_bars() const noexcept { return alpha_bar_; }
  [[nodiscard]] std::span<const double> beta_tildes() const noexcept { return beta_tilde_; }

  /// Throws IndexError unless 1 <= t <= T.
  void check_step(int t) const { (void)index(t); }

 private:
  NoiseSchedule() = default;
  [[nodiscard]] std::size_t index(int t) const {
    if (t < 1 || t > T()) {
      throw IndexError("diffusion step " + std::to_string(t) + " outside [1, " +
                       std::to_string(T()) + "]");
    }
    return static_cast<std::size_t>(t - 1);
  }

  std::vector<double> beta_, alpha_, alpha_bar_, beta_tilde_;
};

/// Linearly spaced betas from beta_start to beta_end inclusive.
NoiseSchedule make_linear_schedule(const DiffusionConfig& cfg);

/// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps, elementwise.
template <std::floating_point Real>
std::vector<Real> q_sample(std::span<const Real> x0, int t, std::span<const Real> eps,
                           const NoiseSchedule& sched) {
  if (x0.size() != eps.size()) throw ShapeError("q_sample: x0 and eps differ in size");
  sched.check_step(t);
  const double a = std::sqrt(sched.alpha_bar(t));
  const double s = std::sqrt(1.0 - sched.alpha_bar(t));
  std::vector<Real> out(x0.size());
  for (std::size_t i = 0; i < x0.size(); ++i) {
    out[i] = static_cast<Real>(a * x0[i] + s * eps[i]);
  }
  return out;
}

/// One forward transition: x_t = sqrt(1 - beta_t) x_{t-1} + sqrt(beta_t) noise.
template <std::floating_point Real>
std::vector<Real> forward_step(std::span<const Real> x_prev, int t, std::span<const Real> noise,
                               const NoiseSchedule& sched) {
  if (x_prev.size() != noise.size()) throw ShapeError("forward_step: size mismatch");
  const double keep = std::sqrt(1.0 - sched.beta(t));
  const double s = std::sqrt(sched.beta(t));
  std::vector<Real> out(x_prev.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<Real>(keep * x_prev[i] + s * noise[i]);
  return out;
}

/// Reverse mean mu = (x_t - (1 - alpha_t) / sqrt(1 - abar_t) * eps_hat) / sqrt(alpha_t).
template <std::floating_point Real>
std::vector<Real> posterior_mean(std::span<const Real> x_t, int t, std::span<const Real> eps_hat,
                                 const NoiseSchedule& sched) {
  if (x_t.size() != eps_hat.size()) throw ShapeError("posterior_mean: size mismatch");
  const double inv_sqrt_alpha = 1.0 / std::sqrt(sched.alpha(t));
  const double eps_coef = (1.0 - sched.alpha(t)) / std::sqrt(1.0 - sched.alpha_bar(t));
  std::vector<Real> out(x_t.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<Real>(inv_sqrt_alpha * (x_t[i] - eps_coef * eps_hat[i]));
  }
  return out;
}

/// x_{t-1} = mu + sqrt(beta_tilde_t) z. At t = 1 the noise term is dropped.
template <std::floating_point Real>
std::vector<Real> posterior_step(std::span<const Real> x_t, int t, std::span<const Real> eps_hat,
                                 std::span<const Real> z, const NoiseSchedule& sched) {
  auto out = posterior_mean(x_t, t, eps_hat, sched);
  if (t == 1) return out;
  if (z.size() != out.size()) throw ShapeError("posterior_step: noise size mismatch");
  const double sigma = std::sqrt(sched.beta_tilde(t));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<Real>(out[i] + sigma * z[i]);
  return out;
}

/// Anything callable as an epsilon predictor: (x_t, y, steps) -> eps_hat.
template <class F, class Real>
concept Denoiser = requires(const F& f, const ad::Var<Real>& x, std::span<const int> t) {
  { f(x, x, t) } -> std::convertible_to<ad::Var<Real>>;
};

/// Squared-error epsilon objective for explicit steps and noise.
template <std::floating_point Real, Denoiser<Real> Net>
ad::Var<Real> training_loss_at(const Net& net, const ad::Var<Real>& x0, const ad::Var<Real>& y,
                               std::span<const int> t, std::vector<Real> eps,
                               const NoiseSchedule& sched) {
  const ad::Shape s = x0->shape;
  if (t.size() != static_cast<std::size_t>(s.n)) throw ShapeError("one step per batch item required");
  if (eps.size() != x0->numel()) throw ShapeError("noise does not match x0");
  const std::size_t item = x0->numel() / static_cast<std::size_t>(s.n);
  std::vector<Real> xt(x0->numel());
  for (int n = 0; n < s.n; ++n) {
    const auto off = static_cast<std::size_t>(n) * item;
    const auto noisy = q_sample<Real>(std::span<const Real>(x0->value).subspan(off, item),
                                      t[static_cast<std::size_t>(n)],
                                      std::span<const Real>(eps).subspan(off, item), sched);
    std::ranges::copy(noisy, xt.begin() + static_cast<std::ptrdiff_t>(off));
  }
  const auto pred = net(ad::constant<Real>(s, std::move(xt)), y, t);
  return ad::mse_loss(pred, ad::constant<Real>(s, std::move(eps)));
}

/// Draws t uniform on {1..T} per batch item, then eps ~ N(0, I), and returns
/// the epsilon-prediction loss.
template <std::floating_point Real, Denoiser<Real> Net>
ad::Var<Real> training_loss(const Net& net, const ad::Var<Real>& x0, const ad::Var<Real>& y,
                            SeededRng& rng, const NoiseSchedule& sched) {
  std::vector<int> t(static_cast<std::size_t>(x0->shape.n));
  for (auto& step : t) step = static_cast<int>(rng.uniform_int(1, sched.T()));
  std::vector<Real> eps(x0->numel());
  for (auto& e : eps) e = static_cast<Real>(rng.normal());
  return training_loss_at<Real>(net, x0, y, t, std::move(eps), sched);
}

inline constexpr double kChainClampLo = -0.1;
inline constexpr double kChainClampHi = 1.1;

/// Ancestral sampling from x_T ~ N(0, I) down to t = 1. The chain itself is
/// never clamped; the returned estimate is clamped to [-0.1, 1.1].
template <std::floating_point Real, Denoiser<Real> Net>
std::vector<Real> sample_chain(const Net& net, const ad::Var<Real>& y, const NoiseSchedule& sched,
                               SeededRng& rng) {
  ad::NoGradGuard no_grad;
  const ad::Shape s = y->shape;
  std::vector<Real> x(y->numel());
  for (auto& v : x) v = static_cast<Real>(rng.normal());
  std::vector<Real> z(x.size());
  std::vector<int> steps(static_cast<std::size_t>(s.n));
  for (int t = sched.T(); t >= 1; --t) {
    std::ranges::fill(steps, t);
    const auto eps_hat = net(ad::constant<Real>(s, x), y, steps);
    if (t > 1) {
      for (auto& v : z) v = static_cast<Real>(rng.normal());
    }
    x = posterior_step<Real>(x, t, eps_hat->value, z, sched);
  }
  for (auto& v : x) {
    v = std::clamp(v, static_cast<Real>(kChainClampLo), static_cast<Real>(kChainClampHi));
  }
  return x;
}

/// Full-volume synthesis from one condition volume; the result is clipped to
/// [0, 1] for export. Throws ShapeError unless every dim is a multiple of 16.
Volume3D synthesize(const UNet<float>& net, const Volume3D& condition, const NoiseSchedule& sched,
                    SeededRng& rng);

}  // namespace voxdiff
