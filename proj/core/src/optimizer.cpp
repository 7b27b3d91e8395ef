#include "voxdiff/optimizer.hpp"

#include <cmath>

#include "voxdiff/error.hpp"

namespace voxdiff {

void AdamConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("learning rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("adam beta1 must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("adam beta2 must lie in [0, 1)");
  if (!(eps > 0.0)) throw ConfigError("adam eps must be positive");
}

template <std::floating_point Real>
std::vector<ParamRecord> OptimizerState<Real>::to_records(const ParameterStore<Real>& params) const {
  std::vector<ParamRecord> out;
  for (const auto& [name, entry] : params.entries()) {
    const auto n = entry.var->numel();
    auto emit = [&](const char* prefix, const std::map<std::string, std::vector<Real>>& moments) {
      ParamRecord r{std::string(prefix) + name, entry.dims, std::vector<float>(n, 0.0f)};
      if (auto it = moments.find(name); it != moments.end()) {
        for (std::size_t i = 0; i < n; ++i) r.values[i] = static_cast<float>(it->second[i]);
      }
      out.push_back(std::move(r));
    };
    emit("m.", m);
    emit("v.", v);
  }
  return out;
}

template <std::floating_point Real>
void OptimizerState<Real>::assign_from(const std::vector<ParamRecord>& records,
                                       const ParameterStore<Real>& params) {
  std::map<std::string, const ParamRecord*> by_name;
  for (const auto& r : records) by_name[r.name] = &r;
  if (by_name.size() != 2 * params.size()) {
    throw CheckpointMismatch("optimizer state holds " + std::to_string(by_name.size()) +
                             " records, expected " + std::to_string(2 * params.size()));
  }
  std::map<std::string, std::vector<Real>> new_m, new_v;
  for (const auto& [name, entry] : params.entries()) {
    for (const char* prefix : {"m.", "v."}) {
      const auto it = by_name.find(prefix + name);
      if (it == by_name.end()) throw CheckpointMismatch("optimizer state lacks " + std::string(prefix) + name);
      if (it->second->dims != entry.dims) throw CheckpointMismatch("optimizer state dims differ for " + name);
      std::vector<Real> vals(it->second->values.begin(), it->second->values.end());
      (prefix[0] == 'm' ? new_m : new_v)[name] = std::move(vals);
    }
  }
  m = std::move(new_m);
  v = std::move(new_v);
}

template <std::floating_point Real>
double global_grad_norm(const ParameterStore<Real>& params) {
  double ss = 0.0;
  for (const auto& [name, entry] : params.entries()) {
    for (Real g : entry.var->grad) ss += static_cast<double>(g) * g;
  }
  return std::sqrt(ss);
}

template <std::floating_point Real>
void adam_step(ParameterStore<Real>& params, OptimizerState<Real>& state, const AdamConfig& cfg,
               std::optional<double> clip_norm) {
  for (const auto& [name, entry] : params.entries()) {
    const auto& g = entry.var->grad;
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (!std::isfinite(g[i])) {
        throw NonFiniteGradient("non-finite gradient in " + name + " at element " + std::to_string(i) +
                                " (step " + std::to_string(state.step + 1) + ")");
      }
    }
  }
  double scale = 1.0;
  if (clip_norm) {
    const double norm = global_grad_norm(params);
    if (norm > *clip_norm) scale = *clip_norm / norm;
  }

  state.step += 1;
  const double b1 = cfg.beta1, b2 = cfg.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (auto& [name, entry] : params.entries()) {
    auto& node = *entry.var;
    const std::size_t n = node.numel();
    auto& m = state.m[name];
    auto& v = state.v[name];
    if (m.size() != n) m.assign(n, Real(0));
    if (v.size() != n) v.assign(n, Real(0));
    const bool has_grad = node.grad.size() == n;
    for (std::size_t i = 0; i < n; ++i) {
      const double g = has_grad ? scale * node.grad[i] : 0.0;
      const double mi = b1 * m[i] + (1.0 - b1) * g;
      const double vi = b2 * v[i] + (1.0 - b2) * g * g;
      m[i] = static_cast<Real>(mi);
      v[i] = static_cast<Real>(vi);
      const double m_hat = mi / c1;
      const double v_hat = vi / c2;
      node.value[i] = static_cast<Real>(node.value[i] - cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps));
    }
  }
}

template struct OptimizerState<float>;
template struct OptimizerState<double>;
template double global_grad_norm(const ParameterStore<float>&);
template double global_grad_norm(const ParameterStore<double>&);
template void adam_step(ParameterStore<float>&, OptimizerState<float>&, const AdamConfig&, std::optional<double>);
template void adam_step(ParameterStore<double>&, OptimizerState<double>&, const AdamConfig&, std::optional<double>);

}  // namespace voxdiff
