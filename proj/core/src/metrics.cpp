#include "voxdiff/metrics.hpp"

#include <algorithm>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "voxdiff/error.hpp"

namespace voxdiff {

namespace {

void require_same_dims(const Volume3D& a, const Volume3D& b, const char* what) {
  if (!(a.dims() == b.dims())) throw ShapeError(std::string(what) + ": volume dims differ");
}

/// Inclusive 3D prefix sums over an (nx+1)(ny+1)(nz+1) grid.
class SummedVolume {
 public:
  SummedVolume(const Dims3& d, auto&& value_at) : sx_(d.nx + 1), sy_(d.ny + 1) {
    table_.assign(static_cast<std::size_t>(sx_) * sy_ * (d.nz + 1), 0.0);
    for (int k = 1; k <= d.nz; ++k) {
      for (int j = 1; j <= d.ny; ++j) {
        for (int i = 1; i <= d.nx; ++i) {
          at(i, j, k) = value_at(i - 1, j - 1, k - 1) + at(i - 1, j, k) + at(i, j - 1, k) +
                        at(i, j, k - 1) - at(i - 1, j - 1, k) - at(i - 1, j, k - 1) -
                        at(i, j - 1, k - 1) + at(i - 1, j - 1, k - 1);
        }
      }
    }
  }

  /// Sum over the box [i, i+w) x [j, j+w) x [k, k+w).
  [[nodiscard]] double box(int i, int j, int k, int w) const {
    const int I = i + w, J = j + w, K = k + w;
    return get(I, J, K) - get(i, J, K) - get(I, j, K) - get(I, J, k) + get(i, j, K) + get(i, J, k) +
           get(I, j, k) - get(i, j, k);
  }

 private:
  double& at(int i, int j, int k) { return table_[(static_cast<std::size_t>(k) * sy_ + j) * sx_ + i]; }
  [[nodiscard]] double get(int i, int j, int k) const {
    return table_[(static_cast<std::size_t>(k) * sy_ + j) * sx_ + i];
  }
  int sx_, sy_;
  std::vector<double> table_;
};

std::string fmt(double v, int prec) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

std::string fmt_exact(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

double psnr(const Volume3D& ref, const Volume3D& test, double peak) {
  require_same_dims(ref, test, "psnr");
  if (!(peak > 0.0)) throw ConfigError("psnr peak must be positive");
  const auto a = ref.data();
  const auto b = test.data();
  double sse = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    sse += d * d;
  }
  const double mse = sse / static_cast<double>(a.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / mse);
}

double ssim3d(const Volume3D& ref, const Volume3D& test, const SsimParams& p) {
  require_same_dims(ref, test, "ssim3d");
  const Dims3 d = ref.dims();
  const int w = p.window;
  if (w < 1 || w % 2 == 0) throw ConfigError("SSIM window must be a positive odd number");
  if (w > d.nx || w > d.ny || w > d.nz) {
    throw ConfigError("SSIM window " + std::to_string(w) + " larger than a volume dim");
  }
  const double c1 = (p.k1 * p.peak) * (p.k1 * p.peak);
  const double c2 = (p.k2 * p.peak) * (p.k2 * p.peak);

  const auto va = [&](int i, int j, int k) { return static_cast<double>(ref.at(i, j, k)); };
  const auto vb = [&](int i, int j, int k) { return static_cast<double>(test.at(i, j, k)); };
  const SummedVolume sa(d, va);
  const SummedVolume sb(d, vb);
  const SummedVolume saa(d, [&](int i, int j, int k) { return va(i, j, k) * va(i, j, k); });
  const SummedVolume sbb(d, [&](int i, int j, int k) { return vb(i, j, k) * vb(i, j, k); });
  const SummedVolume sab(d, [&](int i, int j, int k) { return va(i, j, k) * vb(i, j, k); });

  const double n = static_cast<double>(w) * w * w;
  double total = 0.0;
  std::size_t count = 0;
  for (int k = 0; k + w <= d.nz; ++k) {
    for (int j = 0; j + w <= d.ny; ++j) {
      for (int i = 0; i + w <= d.nx; ++i) {
        const double mu_a = sa.box(i, j, k, w) / n;
        const double mu_b = sb.box(i, j, k, w) / n;
        const double mu_ab = mu_a * mu_b;
        const double var_a = saa.box(i, j, k, w) / n - mu_a * mu_a;
        const double var_b = sbb.box(i, j, k, w) / n - mu_b * mu_b;
        const double cov = sab.box(i, j, k, w) / n - mu_ab;
        // Written so that swapping the arguments, or passing the same volume
        // twice, gives bitwise-identical numerator and denominator terms.
        const double num = (2.0 * mu_ab + c1) * (2.0 * cov + c2);
        const double den = ((mu_a * mu_a + mu_b * mu_b) + c1) * ((var_a + var_b) + c2);
        total += num / den;
        ++count;
      }
    }
  }
  return total / static_cast<double>(count);
}

MeanCi mean_ci95(std::span<const double> values, CiMethod method) {
  const std::size_t n = values.size();
  if (n < 2) throw ConfigError("a confidence interval needs at least 2 values");
  if (!std::ranges::all_of(values, [](double v) { return std::isfinite(v); })) {
    throw ConfigError("confidence interval over non-finite values");
  }
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  double q = 1.96;
  if (method == CiMethod::StudentT) {
    q = boost::math::quantile(boost::math::students_t(static_cast<double>(n - 1)), 0.975);
  }
  return {mean, q * sd / std::sqrt(static_cast<double>(n))};
}

Volume3D voxelwise_std_map(std::span<const Volume3D> volumes) {
  if (volumes.size() < 2) throw ConfigError("a std map needs at least 2 volumes");
  const Dims3 d = volumes.front().dims();
  for (const auto& v : volumes) require_same_dims(volumes.front(), v, "voxelwise_std_map");
  const std::size_t m = volumes.size();
  std::vector<float> out(d.voxels());
  std::vector<double> column(m);
  for (std::size_t i = 0; i < out.size(); ++i) {
    for (std::size_t s = 0; s < m; ++s) column[s] = volumes[s].data()[i];
    std::ranges::sort(column);
    double mean = 0.0;
    for (double v : column) mean += v;
    mean /= static_cast<double>(m);
    double ss = 0.0;
    for (double v : column) ss += (v - mean) * (v - mean);
    out[i] = static_cast<float>(std::sqrt(ss / static_cast<double>(m)));
  }
  return Volume3D(d, volumes.front().spacing(), std::move(out));
}

std::string mid_axial_pgm(const Volume3D& v) {
  const Dims3 d = v.dims();
  const int k = d.nz / 2;
  float lo = std::numeric_limits<float>::max();
  float hi = std::numeric_limits<float>::lowest();
  for (int j = 0; j < d.ny; ++j) {
    for (int i = 0; i < d.nx; ++i) {
      lo = std::min(lo, v.at(i, j, k));
      hi = std::max(hi, v.at(i, j, k));
    }
  }
  std::string out = "P5\n" + std::to_string(d.nx) + " " + std::to_string(d.ny) + "\n255\n";
  const double range = static_cast<double>(hi) - lo;
  for (int j = 0; j < d.ny; ++j) {
    for (int i = 0; i < d.nx; ++i) {
      const double s = range > 0 ? (v.at(i, j, k) - lo) / range : 0.0;
      out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(s * 255.0))));
    }
  }
  return out;
}

const GroupAggregate* MetricReport::find(GroupLabel g, const std::string& metric) const {
  for (const auto& a : aggregates) {
    if (a.group == g && a.metric == metric) return &a;
  }
  return nullptr;
}

std::string MetricReport::pairs_csv() const {
  std::string out = "pair_id,group,ssim,psnr\n";
  for (const auto& p : pairs) {
    out += p.pair_id + "," + to_string(p.group) + "," + fmt_exact(p.ssim) + "," + fmt_exact(p.psnr) + "\n";
  }
  return out;
}

std::string MetricReport::aggregate_csv() const {
  std::string out = "group,metric,mean,ci95_half,n\n";
  for (const auto& a : aggregates) {
    out += to_string(a.group) + "," + a.metric + "," + fmt_exact(a.mean) + "," +
           (a.ci95_half ? fmt_exact(*a.ci95_half) : std::string("NA")) + "," + std::to_string(a.n) + "\n";
  }
  return out;
}

std::string MetricReport::table() const {
  auto cell = [](const GroupAggregate* a, int prec) {
    if (!a) return std::string("-");
    std::string s = fmt(a->mean, prec);
    s += a->ci95_half ? " ± " + fmt(*a->ci95_half, prec) : std::string(" (NoCI)");
    return s;
  };
  std::ostringstream out;
  char line[160];
  std::snprintf(line, sizeof line, "%-8s %-22s %-22s\n", "", "SSIM", "PSNR");
  out << line;
  for (GroupLabel g : kAllGroups) {
    const auto* s = find(g, "ssim");
    const auto* p = find(g, "psnr");
    if (!s && !p) continue;
    std::snprintf(line, sizeof line, "%-8s %-22s %-22s\n", to_string(g).c_str(), cell(s, 3).c_str(),
                  cell(p, 3).c_str());
    out << line;
  }
  return out.str();
}

MetricReport evaluate_groups(std::span<const EvalPair> pairs, const EvalOptions& options) {
  if (pairs.empty()) throw ConfigError("nothing to evaluate");
  MetricReport report;
  for (const auto& p : pairs) {
    report.pairs.push_back({p.pair_id, p.group, ssim3d(p.reference, p.synthesized, options.ssim),
                            psnr(p.reference, p.synthesized, options.psnr_peak)});
  }
  for (GroupLabel g : kAllGroups) {
    std::vector<double> ssims, psnrs;
    int infinite = 0;
    for (const auto& m : report.pairs) {
      if (m.group != g) continue;
      ssims.push_back(m.ssim);
      if (std::isinf(m.psnr)) {
        ++infinite;
      } else {
        psnrs.push_back(m.psnr);
      }
    }
    if (ssims.empty()) continue;

    auto aggregate = [&](const std::string& metric, const std::vector<double>& vals, int excluded) {
      GroupAggregate a{g, metric, 0.0, std::nullopt, static_cast<int>(vals.size()), excluded};
      if (vals.size() >= 2) {
        const auto ci = mean_ci95(vals, options.ci);
        a.mean = ci.mean;
        a.ci95_half = ci.half_width;
      } else if (vals.size() == 1) {
        a.mean = vals.front();
      } else {
        a.mean = std::numeric_limits<double>::infinity();
      }
      if (!a.ci95_half) {
        report.warnings.push_back(to_string(g) + " " + metric + ": fewer than 2 values, NoCI");
      }
      report.aggregates.push_back(a);
    };
    aggregate("ssim", ssims, 0);
    if (infinite > 0) {
      report.warnings.push_back(to_string(g) + ": " + std::to_string(infinite) +
                                " pair(s) with infinite PSNR excluded from aggregation");
    }
    aggregate("psnr", psnrs, infinite);
  }
  return report;
}

}  // namespace voxdiff
