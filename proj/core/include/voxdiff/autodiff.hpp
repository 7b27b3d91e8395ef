#pragma once

// Reverse-mode automatic differentiation over an explicitly recorded DAG.
//
// Every tensor is five-dimensional, (batch, channels, x, y, z), stored with x
// fastest so that volumes, patches and feature maps share one layout. Scalars
// are 1x1x1x1x1. Operations record their parents and a backward closure when
// gradient recording is enabled and at least one input requires a gradient;
// backward() then walks the graph in reverse topological order and
// accumulates into every node's grad buffer.
//
// All operations are templated on the scalar type. Training runs in float;
// the finite-difference checks run the same code in double.

#include <concepts>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace voxdiff::ad {

struct Shape {
  int n = 1;
  int c = 1;
  int x = 1;
  int y = 1;
  int z = 1;

  [[nodiscard]] std::size_t spatial() const noexcept {
    return static_cast<std::size_t>(x) * static_cast<std::size_t>(y) * static_cast<std::size_t>(z);
  }
  [[nodiscard]] std::size_t numel() const noexcept {
    return static_cast<std::size_t>(n) * static_cast<std::size_t>(c) * spatial();
  }
  [[nodiscard]] std::string str() const;
  friend bool operator==(const Shape&, const Shape&) = default;
};

template <std::floating_point Real>
struct Node {
  Shape shape;
  std::vector<Real> value;
  std::vector<Real> grad;  // empty until the backward pass reaches this node
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  [[nodiscard]] std::size_t numel() const noexcept { return value.size(); }
  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), Real(0));
  }
  void zero_grad() { grad.clear(); }
};

template <std::floating_point Real>
using Var = std::shared_ptr<Node<Real>>;

/// Thread-local switch for graph recording.
bool grad_enabled() noexcept;

/// Disables graph recording for its lifetime (inference, validation).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <std::floating_point Real>
Var<Real> constant(Shape shape, std::vector<Real> values);

template <std::floating_point Real>
Var<Real> constant(Shape shape, Real fill = Real(0));

/// Leaf that receives gradients.
template <std::floating_point Real>
Var<Real> leaf(Shape shape, std::vector<Real> values);

/// Reverse sweep from a scalar loss. Gradients accumulate (+=) into every
/// node on a path to the loss, including leaves; zero them between steps.
template <std::floating_point Real>
void backward(const Var<Real>& loss);

// ---- operators -------------------------------------------------------------

/// 3D convolution with a cubic kernel. w is (c_out, c_in, k, k, k) stored as
/// Shape{c_out, c_in, k, k, k}; b is Shape{1, c_out} or null.
template <std::floating_point Real>
Var<Real> conv3d(const Var<Real>& x, const Var<Real>& w, const Var<Real>& b, int stride,
                 int padding);

/// Group normalization over (channels-in-group x spatial) per sample, then a
/// per-channel affine map. scale and shift are Shape{1, C}.
template <std::floating_point Real>
Var<Real> group_norm(const Var<Real>& x, int groups, const Var<Real>& scale,
                     const Var<Real>& shift, Real eps);

template <std::floating_point Real>
Var<Real> swish(const Var<Real>& x);

template <std::floating_point Real>
Var<Real> upsample_nearest2x(const Var<Real>& x);

/// y[n, o] = sum_i w[o, i] x[n, i] + b[o]; x is Shape{N, in}, w is Shape{out, in}.
template <std::floating_point Real>
Var<Real> linear(const Var<Real>& x, const Var<Real>& w, const Var<Real>& b);

template <std::floating_point Real>
Var<Real> add(const Var<Real>& a, const Var<Real>& b);

/// Adds a per-(sample, channel) bias of Shape{N, C} broadcast over space.
template <std::floating_point Real>
Var<Real> add_channel_bias(const Var<Real>& x, const Var<Real>& bias);

template <std::floating_point Real>
Var<Real> concat_channels(const Var<Real>& a, const Var<Real>& b);

template <std::floating_point Real>
Var<Real> scalar_mul(const Var<Real>& x, Real s);

template <std::floating_point Real>
Var<Real> sum(const Var<Real>& x);

/// Mean of squared differences over all elements.
template <std::floating_point Real>
Var<Real> mse_loss(const Var<Real>& pred, const Var<Real>& target);

/// dim/2 sines followed by dim/2 cosines of t * w_k, with frequencies w_k
/// geometrically spaced from 1 down to 1e-4.
template <std::floating_point Real>
std::vector<Real> sinusoidal_time_embedding(int t, int dim);

}  // namespace voxdiff::ad
