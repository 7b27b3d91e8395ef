#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstring>

#include "voxdiff/autodiff.hpp"
#include "voxdiff/error.hpp"
#include "voxdiff/parallel.hpp"

namespace voxdiff::ad {

namespace {

template <class Real>
using RowMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class Real>
using MatMap = Eigen::Map<RowMat<Real>>;
template <class Real>
using ConstMatMap = Eigen::Map<const RowMat<Real>>;

template <class Real>
bool tracks(std::initializer_list<const Var<Real>*> inputs) {
  if (!grad_enabled()) return false;
  return std::ranges::any_of(inputs, [](const Var<Real>* v) { return *v && (*v)->requires_grad; });
}

template <class Real>
Var<Real> make_node(Shape shape, std::vector<Real> value) {
  auto node = std::make_shared<Node<Real>>();
  node->shape = shape;
  node->value = std::move(value);
  return node;
}

template <class Real>
void attach(Var<Real>& out, std::initializer_list<Var<Real>> parents,
            std::function<void(Node<Real>&)> fn) {
  out->requires_grad = true;
  for (const auto& p : parents) out->parents.push_back(p);
  out->backward_fn = std::move(fn);
}

/// Parent i's grad buffer if it wants one, else null.
template <class Real>
Real* grad_of(Node<Real>& self, std::size_t i) {
  if (i >= self.parents.size()) return nullptr;
  auto& p = *self.parents[i];
  if (!p.requires_grad) return nullptr;
  p.ensure_grad();
  return p.grad.data();
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw ShapeError(msg);
}

int conv_out_size(int in, int k, int stride, int padding) {
  return (in + 2 * padding - k) / stride + 1;
}

struct ConvGeometry {
  int cin, k, stride, pad;
  int ix, iy, iz;
  int ox, oy, oz;
  [[nodiscard]] std::size_t rows() const { return static_cast<std::size_t>(cin) * k * k * k; }
  [[nodiscard]] std::size_t cols() const {
    return static_cast<std::size_t>(ox) * oy * oz;
  }
  [[nodiscard]] std::size_t in_spatial() const {
    return static_cast<std::size_t>(ix) * iy * iz;
  }
};

// Valid [lo, hi) range of output x positions that read input column ox*s - pad + kx.
inline void valid_x_range(const ConvGeometry& g, int kx, int& lo, int& hi) {
  // ix = ox * s - pad + kx must lie in [0, ix)
  const int s = g.stride;
  const int before = g.pad - kx;
  lo = before <= 0 ? 0 : (before + s - 1) / s;
  const int last = g.ix - 1 + g.pad - kx;
  hi = last < 0 ? 0 : std::min(g.ox, last / s + 1);
  if (hi < lo) hi = lo;
}

template <class Real>
void im2col(const ConvGeometry& g, const Real* x, Real* col) {
  const std::size_t P = g.cols();
  std::size_t row = 0;
  for (int ci = 0; ci < g.cin; ++ci) {
    const Real* xc = x + static_cast<std::size_t>(ci) * g.in_spatial();
    for (int kz = 0; kz < g.k; ++kz) {
      for (int ky = 0; ky < g.k; ++ky) {
        for (int kx = 0; kx < g.k; ++kx, ++row) {
          Real* dst = col + row * P;
          int lo, hi;
          valid_x_range(g, kx, lo, hi);
          for (int oz = 0; oz < g.oz; ++oz) {
            const int iz = oz * g.stride - g.pad + kz;
            for (int oy = 0; oy < g.oy; ++oy, dst += g.ox) {
              const int iy = oy * g.stride - g.pad + ky;
              if (iz < 0 || iz >= g.iz || iy < 0 || iy >= g.iy) {
                std::fill(dst, dst + g.ox, Real(0));
                continue;
              }
              const Real* src = xc + (static_cast<std::size_t>(iz) * g.iy + iy) * g.ix;
              std::fill(dst, dst + lo, Real(0));
              if (g.stride == 1) {
                const int offset = kx - g.pad;
                std::memcpy(dst + lo, src + lo + offset, sizeof(Real) * (hi - lo));
              } else {
                for (int ox = lo; ox < hi; ++ox) dst[ox] = src[ox * g.stride - g.pad + kx];
              }
              std::fill(dst + hi, dst + g.ox, Real(0));
            }
          }
        }
      }
    }
  }
}

template <class Real>
void col2im(const ConvGeometry& g, const Real* col, Real* dx) {
  const std::size_t P = g.cols();
  std::size_t row = 0;
  for (int ci = 0; ci < g.cin; ++ci) {
    Real* xc = dx + static_cast<std::size_t>(ci) * g.in_spatial();
    for (int kz = 0; kz < g.k; ++kz) {
      for (int ky = 0; ky < g.k; ++ky) {
        for (int kx = 0; kx < g.k; ++kx, ++row) {
          const Real* src = col + row * P;
          int lo, hi;
          valid_x_range(g, kx, lo, hi);
          for (int oz = 0; oz < g.oz; ++oz) {
            const int iz = oz * g.stride - g.pad + kz;
            for (int oy = 0; oy < g.oy; ++oy, src += g.ox) {
              const int iy = oy * g.stride - g.pad + ky;
              if (iz < 0 || iz >= g.iz || iy < 0 || iy >= g.iy) continue;
              Real* dst = xc + (static_cast<std::size_t>(iz) * g.iy + iy) * g.ix;
              for (int ox = lo; ox < hi; ++ox) dst[ox * g.stride - g.pad + kx] += src[ox];
            }
          }
        }
      }
    }
  }
}

}  // namespace

// ---- conv3d ------------------------------------------------------------------

template <std::floating_point Real>
Var<Real> conv3d(const Var<Real>& x, const Var<Real>& w, const Var<Real>& b, int stride,
                 int padding) {
  const Shape xs = x->shape;
  const Shape ws = w->shape;
  require(ws.x == ws.y && ws.y == ws.z, "conv3d kernel must be cubic, got " + ws.str());
  require(xs.c == ws.c, "conv3d channel mismatch: input " + xs.str() + ", kernel " + ws.str());
  require(stride == 1 || stride == 2, "conv3d stride must be 1 or 2");
  require(padding >= 0, "conv3d padding must be non-negative");
  if (b) require(b->numel() == static_cast<std::size_t>(ws.n), "conv3d bias size mismatch");

  ConvGeometry g{xs.c, ws.x, stride, padding, xs.x, xs.y, xs.z,
                 conv_out_size(xs.x, ws.x, stride, padding),
                 conv_out_size(xs.y, ws.x, stride, padding),
                 conv_out_size(xs.z, ws.x, stride, padding)};
  require(g.ox > 0 && g.oy > 0 && g.oz > 0, "conv3d input " + xs.str() + " smaller than kernel");

  const int cout = ws.n;
  const std::size_t K = g.rows();
  const std::size_t P = g.cols();
  const Shape os{xs.n, cout, g.ox, g.oy, g.oz};
  const bool track = tracks<Real>({&x, &w, &b});

  std::vector<Real> out(os.numel());
  // Column buffers are kept for the weight gradient.
  auto cols = std::make_shared<std::vector<std::vector<Real>>>(static_cast<std::size_t>(xs.n));
  parallel_for(static_cast<std::size_t>(xs.n), [&](std::size_t n) {
    std::vector<Real> col(K * P);
    im2col(g, x->value.data() + n * xs.c * g.in_spatial(), col.data());
    MatMap<Real> o(out.data() + n * cout * P, cout, static_cast<Eigen::Index>(P));
    o.noalias() = ConstMatMap<Real>(w->value.data(), cout, static_cast<Eigen::Index>(K)) *
                  ConstMatMap<Real>(col.data(), static_cast<Eigen::Index>(K),
                                    static_cast<Eigen::Index>(P));
    if (b) {
      for (int co = 0; co < cout; ++co) o.row(co).array() += b->value[static_cast<std::size_t>(co)];
    }
    if (track) (*cols)[n] = std::move(col);
  });

  auto result = make_node<Real>(os, std::move(out));
  if (!track) return result;
  attach<Real>(result, {x, w, b ? b : constant<Real>(Shape{}, Real(0))},
               [g, cols, cout, K, P, has_bias = static_cast<bool>(b)](Node<Real>& self) {
                 const auto& wv = self.parents[1]->value;
                 Real* dx = grad_of(self, 0);
                 Real* dw = grad_of(self, 1);
                 Real* db = has_bias ? grad_of(self, 2) : nullptr;
                 const std::size_t batch = static_cast<std::size_t>(self.shape.n);
                 const std::size_t wsize = static_cast<std::size_t>(cout) * K;
                 std::vector<std::vector<Real>> dw_items(dw ? batch : 0);
                 parallel_for(batch, [&](std::size_t n) {
                   ConstMatMap<Real> dout(self.grad.data() + n * cout * P, cout,
                                          static_cast<Eigen::Index>(P));
                   if (dw) {
                     dw_items[n].resize(wsize);
                     MatMap<Real>(dw_items[n].data(), cout, static_cast<Eigen::Index>(K)).noalias() =
                         dout * ConstMatMap<Real>((*cols)[n].data(), static_cast<Eigen::Index>(K),
                                                  static_cast<Eigen::Index>(P))
                                    .transpose();
                   }
                   if (dx) {
                     std::vector<Real> dcol(K * P);
                     MatMap<Real>(dcol.data(), static_cast<Eigen::Index>(K),
                                  static_cast<Eigen::Index>(P))
                         .noalias() =
                         ConstMatMap<Real>(wv.data(), cout, static_cast<Eigen::Index>(K)).transpose() *
                         dout;
                     col2im(g, dcol.data(), dx + n * g.cin * g.in_spatial());
                   }
                 });
                 // Fixed-order reductions keep results independent of the thread count.
                 if (dw) {
                   for (std::size_t n = 0; n < batch; ++n) {
                     for (std::size_t i = 0; i < wsize; ++i) dw[i] += dw_items[n][i];
                   }
                 }
                 if (db) {
                   for (std::size_t n = 0; n < batch; ++n) {
                     for (int co = 0; co < cout; ++co) {
                       const Real* row = self.grad.data() + (n * cout + co) * P;
                       Real acc = 0;
                       for (std::size_t p = 0; p < P; ++p) acc += row[p];
                       db[co] += acc;
                     }
                   }
                 }
               });
  return result;
}

// ---- group_norm ----------------------------------------------------------------

template <std::floating_point Real>
Var<Real> group_norm(const Var<Real>& x, int groups, const Var<Real>& scale,
                     const Var<Real>& shift, Real eps) {
  const Shape xs = x->shape;
  require(groups > 0 && xs.c % groups == 0, "group_norm: " + std::to_string(xs.c) +
                                                " channels not divisible by " +
                                                std::to_string(groups) + " groups");
  require(scale->numel() == static_cast<std::size_t>(xs.c) &&
              shift->numel() == static_cast<std::size_t>(xs.c),
          "group_norm: affine parameters must have one entry per channel");
  const std::size_t S = xs.spatial();
  const int cpg = xs.c / groups;
  const std::size_t group_size = static_cast<std::size_t>(cpg) * S;
  const bool track = tracks<Real>({&x, &scale, &shift});

  std::vector<Real> out(xs.numel());
  auto xhat = std::make_shared<std::vector<Real>>(xs.numel());
  auto inv_std = std::make_shared<std::vector<Real>>(static_cast<std::size_t>(xs.n) * groups);
  for (int n = 0; n < xs.n; ++n) {
    for (int gi = 0; gi < groups; ++gi) {
      const std::size_t base = (static_cast<std::size_t>(n) * xs.c + gi * cpg) * S;
      const Real* src = x->value.data() + base;
      double mean = 0.0;
      for (std::size_t i = 0; i < group_size; ++i) mean += src[i];
      mean /= static_cast<double>(group_size);
      double var = 0.0;
      for (std::size_t i = 0; i < group_size; ++i) {
        const double d = src[i] - mean;
        var += d * d;
      }
      var /= static_cast<double>(group_size);
      const double istd = 1.0 / std::sqrt(var + static_cast<double>(eps));
      (*inv_std)[static_cast<std::size_t>(n) * groups + gi] = static_cast<Real>(istd);
      for (int cc = 0; cc < cpg; ++cc) {
        const int c = gi * cpg + cc;
        const Real gamma = scale->value[static_cast<std::size_t>(c)];
        const Real beta = shift->value[static_cast<std::size_t>(c)];
        for (std::size_t s = 0; s < S; ++s) {
          const std::size_t i = base + cc * S + s;
          const Real h = static_cast<Real>((x->value[i] - mean) * istd);
          (*xhat)[i] = h;
          out[i] = h * gamma + beta;
        }
      }
    }
  }

  auto result = make_node<Real>(xs, std::move(out));
  if (!track) return result;
  attach<Real>(result, {x, scale, shift}, [xhat, inv_std, groups, cpg, S, group_size](Node<Real>& self) {
    const Shape xs = self.shape;
    const auto& gamma = self.parents[1]->value;
    Real* dx = grad_of(self, 0);
    Real* dgamma = grad_of(self, 1);
    Real* dbeta = grad_of(self, 2);
    std::vector<Real> dxhat(group_size);
    for (int n = 0; n < xs.n; ++n) {
      for (int gi = 0; gi < groups; ++gi) {
        const std::size_t base = (static_cast<std::size_t>(n) * xs.c + gi * cpg) * S;
        double sum_dxhat = 0.0;
        double sum_dxhat_xhat = 0.0;
        for (int cc = 0; cc < cpg; ++cc) {
          const int c = gi * cpg + cc;
          double acc_gamma = 0.0;
          double acc_beta = 0.0;
          for (std::size_t s = 0; s < S; ++s) {
            const std::size_t i = base + cc * S + s;
            const Real dy = self.grad[i];
            const Real h = (*xhat)[i];
            const Real d = dy * gamma[static_cast<std::size_t>(c)];
            dxhat[cc * S + s] = d;
            sum_dxhat += d;
            sum_dxhat_xhat += static_cast<double>(d) * h;
            acc_gamma += static_cast<double>(dy) * h;
            acc_beta += dy;
          }
          if (dgamma) dgamma[c] += static_cast<Real>(acc_gamma);
          if (dbeta) dbeta[c] += static_cast<Real>(acc_beta);
        }
        if (!dx) continue;
        const double mean_d = sum_dxhat / static_cast<double>(group_size);
        const double mean_dh = sum_dxhat_xhat / static_cast<double>(group_size);
        const double istd = (*inv_std)[static_cast<std::size_t>(n) * groups + gi];
        for (std::size_t i = 0; i < group_size; ++i) {
          dx[base + i] += static_cast<Real>(istd * (dxhat[i] - mean_d - (*xhat)[base + i] * mean_dh));
        }
      }
    }
  });
  return result;
}

// ---- elementwise -----------------------------------------------------------------

template <std::floating_point Real>
Var<Real> swish(const Var<Real>& x) {
  std::vector<Real> out(x->numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const Real v = x->value[i];
    out[i] = v / (Real(1) + std::exp(-v));
  }
  auto result = make_node<Real>(x->shape, std::move(out));
  if (!tracks<Real>({&x})) return result;
  attach<Real>(result, {x}, [](Node<Real>& self) {
    const auto& xv = self.parents[0]->value;
    Real* dx = grad_of(self, 0);
    for (std::size_t i = 0; i < xv.size(); ++i) {
      const Real sig = Real(1) / (Real(1) + std::exp(-xv[i]));
      dx[i] += self.grad[i] * sig * (Real(1) + xv[i] * (Real(1) - sig));
    }
  });
  return result;
}

template <std::floating_point Real>
Var<Real> upsample_nearest2x(const Var<Real>& x) {
  const Shape xs = x->shape;
  const Shape os{xs.n, xs.c, xs.x * 2, xs.y * 2, xs.z * 2};
  std::vector<Real> out(os.numel());
  const std::size_t planes = static_cast<std::size_t>(xs.n) * xs.c;
  for (std::size_t p = 0; p < planes; ++p) {
    const Real* src = x->value.data() + p * xs.spatial();
    Real* dst = out.data() + p * os.spatial();
    for (int k = 0; k < os.z; ++k) {
      for (int j = 0; j < os.y; ++j) {
        const Real* srow = src + (static_cast<std::size_t>(k / 2) * xs.y + j / 2) * xs.x;
        Real* drow = dst + (static_cast<std::size_t>(k) * os.y + j) * os.x;
        for (int i = 0; i < os.x; ++i) drow[i] = srow[i / 2];
      }
    }
  }
  auto result = make_node<Real>(os, std::move(out));
  if (!tracks<Real>({&x})) return result;
  attach<Real>(result, {x}, [xs, os, planes](Node<Real>& self) {
    Real* dx = grad_of(self, 0);
    for (std::size_t p = 0; p < planes; ++p) {
      const Real* src = self.grad.data() + p * os.spatial();
      Real* dst = dx + p * xs.spatial();
      for (int k = 0; k < os.z; ++k) {
        for (int j = 0; j < os.y; ++j) {
          const Real* srow = src + (static_cast<std::size_t>(k) * os.y + j) * os.x;
          Real* drow = dst + (static_cast<std::size_t>(k / 2) * xs.y + j / 2) * xs.x;
          for (int i = 0; i < os.x; ++i) drow[i / 2] += srow[i];
        }
      }
    }
  });
  return result;
}

template <std::floating_point Real>
Var<Real> linear(const Var<Real>& x, const Var<Real>& w, const Var<Real>& b) {
  const Shape xs = x->shape;
  const Shape ws = w->shape;
  require(xs.spatial() == 1 && ws.spatial() == 1, "linear expects vector inputs");
  require(xs.c == ws.c, "linear: input width " + std::to_string(xs.c) + " vs weight " + ws.str());
  require(!b || b->numel() == static_cast<std::size_t>(ws.n), "linear bias size mismatch");
  const int in = ws.c;
  const int outw = ws.n;
  const Shape os{xs.n, outw};
  std::vector<Real> out(os.numel());
  for (int n = 0; n < xs.n; ++n) {
    for (int o = 0; o < outw; ++o) {
      Real acc = b ? b->value[static_cast<std::size_t>(o)] : Real(0);
      for (int i = 0; i < in; ++i) {
        acc += w->value[static_cast<std::size_t>(o) * in + i] *
               x->value[static_cast<std::size_t>(n) * in + i];
      }
      out[static_cast<std::size_t>(n) * outw + o] = acc;
    }
  }
  auto result = make_node<Real>(os, std::move(out));
  if (!tracks<Real>({&x, &w, &b})) return result;
  attach<Real>(result, {x, w, b ? b : constant<Real>(Shape{}, Real(0))},
               [in, outw, has_bias = static_cast<bool>(b)](Node<Real>& self) {
                 const auto& xv = self.parents[0]->value;
                 const auto& wv = self.parents[1]->value;
                 Real* dx = grad_of(self, 0);
                 Real* dw = grad_of(self, 1);
                 Real* db = has_bias ? grad_of(self, 2) : nullptr;
                 for (int n = 0; n < self.shape.n; ++n) {
                   for (int o = 0; o < outw; ++o) {
                     const Real g = self.grad[static_cast<std::size_t>(n) * outw + o];
                     if (db) db[o] += g;
                     for (int i = 0; i < in; ++i) {
                       if (dw) dw[static_cast<std::size_t>(o) * in + i] += g * xv[static_cast<std::size_t>(n) * in + i];
                       if (dx) dx[static_cast<std::size_t>(n) * in + i] += g * wv[static_cast<std::size_t>(o) * in + i];
                     }
                   }
                 }
               });
  return result;
}

template <std::floating_point Real>
Var<Real> add(const Var<Real>& a, const Var<Real>& b) {
  require(a->shape == b->shape, "add: shape mismatch " + a->shape.str() + " vs " + b->shape.str());
  std::vector<Real> out(a->numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->value[i] + b->value[i];
  auto result = make_node<Real>(a->shape, std::move(out));
  if (!tracks<Real>({&a, &b})) return result;
  attach<Real>(result, {a, b}, [](Node<Real>& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (Real* d = grad_of(self, k)) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) d[i] += self.grad[i];
      }
    }
  });
  return result;
}

template <std::floating_point Real>
Var<Real> add_channel_bias(const Var<Real>& x, const Var<Real>& bias) {
  const Shape xs = x->shape;
  require(bias->shape.spatial() == 1 && bias->shape.n == xs.n && bias->shape.c == xs.c,
          "add_channel_bias: bias " + bias->shape.str() + " does not match " + xs.str());
  const std::size_t S = xs.spatial();
  const std::size_t planes = static_cast<std::size_t>(xs.n) * xs.c;
  std::vector<Real> out(x->numel());
  for (std::size_t p = 0; p < planes; ++p) {
    const Real bv = bias->value[p];
    for (std::size_t s = 0; s < S; ++s) out[p * S + s] = x->value[p * S + s] + bv;
  }
  auto result = make_node<Real>(xs, std::move(out));
  if (!tracks<Real>({&x, &bias})) return result;
  attach<Real>(result, {x, bias}, [S, planes](Node<Real>& self) {
    if (Real* dx = grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) dx[i] += self.grad[i];
    }
    if (Real* db = grad_of(self, 1)) {
      for (std::size_t p = 0; p < planes; ++p) {
        Real acc = 0;
        for (std::size_t s = 0; s < S; ++s) acc += self.grad[p * S + s];
        db[p] += acc;
      }
    }
  });
  return result;
}

template <std::floating_point Real>
Var<Real> concat_channels(const Var<Real>& a, const Var<Real>& b) {
  const Shape as = a->shape;
  const Shape bs = b->shape;
  require(as.n == bs.n && as.x == bs.x && as.y == bs.y && as.z == bs.z,
          "concat_channels: " + as.str() + " vs " + bs.str());
  const Shape os{as.n, as.c + bs.c, as.x, as.y, as.z};
  const std::size_t a_block = static_cast<std::size_t>(as.c) * as.spatial();
  const std::size_t b_block = static_cast<std::size_t>(bs.c) * bs.spatial();
  std::vector<Real> out(os.numel());
  for (int n = 0; n < as.n; ++n) {
    auto dst = out.begin() + static_cast<std::ptrdiff_t>(n * (a_block + b_block));
    dst = std::copy_n(a->value.begin() + static_cast<std::ptrdiff_t>(n * a_block), a_block, dst);
    std::copy_n(b->value.begin() + static_cast<std::ptrdiff_t>(n * b_block), b_block, dst);
  }
  auto result = make_node<Real>(os, std::move(out));
  if (!tracks<Real>({&a, &b})) return result;
  attach<Real>(result, {a, b}, [a_block, b_block](Node<Real>& self) {
    Real* da = grad_of(self, 0);
    Real* db = grad_of(self, 1);
    for (int n = 0; n < self.shape.n; ++n) {
      const Real* src = self.grad.data() + n * (a_block + b_block);
      if (da) {
        for (std::size_t i = 0; i < a_block; ++i) da[n * a_block + i] += src[i];
      }
      if (db) {
        for (std::size_t i = 0; i < b_block; ++i) db[n * b_block + i] += src[a_block + i];
      }
    }
  });
  return result;
}

template <std::floating_point Real>
Var<Real> scalar_mul(const Var<Real>& x, Real s) {
  std::vector<Real> out(x->numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x->value[i] * s;
  auto result = make_node<Real>(x->shape, std::move(out));
  if (!tracks<Real>({&x})) return result;
  attach<Real>(result, {x}, [s](Node<Real>& self) {
    Real* dx = grad_of(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) dx[i] += self.grad[i] * s;
  });
  return result;
}

template <std::floating_point Real>
Var<Real> sum(const Var<Real>& x) {
  double acc = 0.0;
  for (Real v : x->value) acc += v;
  auto result = make_node<Real>(Shape{}, std::vector<Real>{static_cast<Real>(acc)});
  if (!tracks<Real>({&x})) return result;
  attach<Real>(result, {x}, [](Node<Real>& self) {
    Real* dx = grad_of(self, 0);
    const std::size_t n = self.parents[0]->numel();
    for (std::size_t i = 0; i < n; ++i) dx[i] += self.grad[0];
  });
  return result;
}

template <std::floating_point Real>
Var<Real> mse_loss(const Var<Real>& pred, const Var<Real>& target) {
  require(pred->shape == target->shape,
          "mse_loss: shape mismatch " + pred->shape.str() + " vs " + target->shape.str());
  const std::size_t m = pred->numel();
  double acc = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double d = static_cast<double>(pred->value[i]) - target->value[i];
    acc += d * d;
  }
  auto result =
      make_node<Real>(Shape{}, std::vector<Real>{static_cast<Real>(acc / static_cast<double>(m))});
  if (!tracks<Real>({&pred, &target})) return result;
  attach<Real>(result, {pred, target}, [m](Node<Real>& self) {
    const auto& p = self.parents[0]->value;
    const auto& t = self.parents[1]->value;
    const Real scale = Real(2) * self.grad[0] / static_cast<Real>(m);
    Real* dp = grad_of(self, 0);
    Real* dt = grad_of(self, 1);
    for (std::size_t i = 0; i < m; ++i) {
      const Real d = scale * (p[i] - t[i]);
      if (dp) dp[i] += d;
      if (dt) dt[i] -= d;
    }
  });
  return result;
}

template <std::floating_point Real>
std::vector<Real> sinusoidal_time_embedding(int t, int dim) {
  if (dim <= 0 || dim % 2 != 0) {
    throw ConfigError("time embedding dim must be a positive even number, got " +
                      std::to_string(dim));
  }
  if (t < 0) throw IndexError("time embedding index must be non-negative");
  const int half = dim / 2;
  std::vector<Real> out(static_cast<std::size_t>(dim));
  for (int k = 0; k < half; ++k) {
    const double exponent = half > 1 ? static_cast<double>(k) / (half - 1) : 0.0;
    const double freq = std::pow(1.0e4, -exponent);
    const double arg = static_cast<double>(t) * freq;
    out[static_cast<std::size_t>(k)] = static_cast<Real>(std::sin(arg));
    out[static_cast<std::size_t>(half + k)] = static_cast<Real>(std::cos(arg));
  }
  return out;
}

#define VOXDIFF_INSTANTIATE(Real)                                                              \
  template Var<Real> conv3d<Real>(const Var<Real>&, const Var<Real>&, const Var<Real>&, int,  \
                                  int);                                                       \
  template Var<Real> group_norm<Real>(const Var<Real>&, int, const Var<Real>&,                \
                                      const Var<Real>&, Real);                                \
  template Var<Real> swish<Real>(const Var<Real>&);                                           \
  template Var<Real> upsample_nearest2x<Real>(const Var<Real>&);                              \
  template Var<Real> linear<Real>(const Var<Real>&, const Var<Real>&, const Var<Real>&);      \
  template Var<Real> add<Real>(const Var<Real>&, const Var<Real>&);                           \
  template Var<Real> add_channel_bias<Real>(const Var<Real>&, const Var<Real>&);              \
  template Var<Real> concat_channels<Real>(const Var<Real>&, const Var<Real>&);               \
  template Var<Real> scalar_mul<Real>(const Var<Real>&, Real);                                \
  template Var<Real> sum<Real>(const Var<Real>&);                                             \
  template Var<Real> mse_loss<Real>(const Var<Real>&, const Var<Real>&);                      \
  template std::vector<Real> sinusoidal_time_embedding<Real>(int, int);

VOXDIFF_INSTANTIATE(float)
VOXDIFF_INSTANTIATE(double)
#undef VOXDIFF_INSTANTIATE

}  // namespace voxdiff::ad
