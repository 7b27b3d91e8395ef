#include "run_config.hpp"

#include <fstream>

#include "voxdiff/error.hpp"

namespace voxdiff::cli {

using nlohmann::json;

namespace {

void flatten_into(const json& j, const std::string& prefix, json& out) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (it->is_object()) {
      flatten_into(*it, key, out);
    } else {
      out[key] = *it;
    }
  }
}

template <class T>
T as(const json& v, const std::string& key) {
  try {
    return v.get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config key '" + key + "' has the wrong type: " + v.dump());
  }
}

Dims3 as_dims(const json& v, const std::string& key) {
  if (v.is_number_integer()) {
    const int d = as<int>(v, key);
    return {d, d, d};
  }
  const auto a = as<std::vector<int>>(v, key);
  if (a.size() != 3) throw ConfigError("config key '" + key + "' needs 1 or 3 integers");
  return {a[0], a[1], a[2]};
}

json dims_json(Dims3 d) {
  if (d.nx == d.ny && d.ny == d.nz) return d.nx;
  return json::array({d.nx, d.ny, d.nz});
}

}  // namespace

json flatten(const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  json out = json::object();
  flatten_into(j, "", out);
  return out;
}

void RunConfig::validate() const {
  phantom.validate();
  train.validate();
  diffusion.validate();
  unet.validate();
  if (threads < 1) throw ConfigError("threads must be >= 1");
  const Dims3 d = phantom.dims;
  const Dims3 p = train.patch;
  if (d.nx < p.nx || d.ny < p.ny || d.nz < p.nz) {
    throw ConfigError("phantom dims must be at least the training patch size");
  }
}

nlohmann::ordered_json RunConfig::to_json() const {
  nlohmann::ordered_json j;
  j["data.seed"] = data_seed;
  j["threads"] = threads;
  j["phantom.dims"] = dims_json(phantom.dims);
  j["phantom.spacing"] = phantom.spacing.sx;
  j["phantom.counts"] = phantom.counts;
  j["phantom.sigma"] = phantom.sigma;
  j["phantom.axis_min"] = phantom.axis_min;
  j["phantom.axis_max"] = phantom.axis_max;
  j["phantom.shell_thickness"] = phantom.shell_thickness;
  j["phantom.noise_floor"] = phantom.noise_floor;
  j["phantom.perturbation_modes"] = phantom.perturbation_modes;
  j["diffusion.schedule"] = "linear";
  j["diffusion.T"] = diffusion.T;
  j["diffusion.beta_start"] = diffusion.beta_start;
  j["diffusion.beta_end"] = diffusion.beta_end;
  j["unet.channel_widths"] = unet.channel_widths;
  j["unet.time_embed_dim"] = unet.time_embed_dim;
  j["unet.groups"] = unet.groups;
  j["train.epochs"] = train.epochs;
  j["train.patch"] = dims_json(train.patch);
  j["train.batch_size"] = train.batch_size;
  j["train.patches_per_volume"] = train.patches_per_volume;
  j["train.lr"] = train.adam.lr;
  j["train.adam_beta1"] = train.adam.beta1;
  j["train.adam_beta2"] = train.adam.beta2;
  j["train.adam_eps"] = train.adam.eps;
  j["train.seed"] = train.seed;
  j["train.checkpoint_every"] = train.checkpoint_every;
  return j;
}

void RunConfig::apply(const json& flat_in) {
  const json flat = flatten(flat_in);
  for (auto it = flat.begin(); it != flat.end(); ++it) {
    const std::string& k = it.key();
    const json& v = *it;
    if (k == "data.seed") data_seed = as<std::uint64_t>(v, k);
    else if (k == "threads") threads = as<int>(v, k);
    else if (k == "phantom.dims") phantom.dims = as_dims(v, k);
    else if (k == "phantom.spacing") {
      const auto s = as<float>(v, k);
      phantom.spacing = {s, s, s};
    }
    else if (k == "phantom.counts") phantom.counts = as<std::array<int, 3>>(v, k);
    else if (k == "phantom.sigma") phantom.sigma = as<std::array<double, 3>>(v, k);
    else if (k == "phantom.axis_min") phantom.axis_min = as<double>(v, k);
    else if (k == "phantom.axis_max") phantom.axis_max = as<double>(v, k);
    else if (k == "phantom.shell_thickness") phantom.shell_thickness = as<double>(v, k);
    else if (k == "phantom.noise_floor") phantom.noise_floor = as<double>(v, k);
    else if (k == "phantom.perturbation_modes") phantom.perturbation_modes = as<int>(v, k);
    else if (k == "diffusion.schedule") {
      if (as<std::string>(v, k) != "linear") throw ConfigError("only the linear schedule is supported");
    }
    else if (k == "diffusion.T") diffusion.T = as<int>(v, k);
    else if (k == "diffusion.beta_start") diffusion.beta_start = as<double>(v, k);
    else if (k == "diffusion.beta_end") diffusion.beta_end = as<double>(v, k);
    else if (k == "unet.channel_widths") unet.channel_widths = as<std::vector<int>>(v, k);
    else if (k == "unet.time_embed_dim") unet.time_embed_dim = as<int>(v, k);
    else if (k == "unet.groups") unet.groups = as<int>(v, k);
    else if (k == "train.epochs") train.epochs = as<int>(v, k);
    else if (k == "train.patch") train.patch = as_dims(v, k);
    else if (k == "train.batch_size") train.batch_size = as<int>(v, k);
    else if (k == "train.patches_per_volume") train.patches_per_volume = as<int>(v, k);
    else if (k == "train.lr") train.adam.lr = as<double>(v, k);
    else if (k == "train.adam_beta1") train.adam.beta1 = as<double>(v, k);
    else if (k == "train.adam_beta2") train.adam.beta2 = as<double>(v, k);
    else if (k == "train.adam_eps") train.adam.eps = as<double>(v, k);
    else if (k == "train.seed") train.seed = as<std::uint64_t>(v, k);
    else if (k == "train.checkpoint_every") train.checkpoint_every = as<int>(v, k);
    else throw ConfigError("unknown config key '" + k + "'");
  }
}

void RunConfig::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + assignment + "'");
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  apply(json{{key, value}});
}

RunConfig RunConfig::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  const json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigError("config file " + path.string() + " is not valid JSON");
  RunConfig cfg;
  cfg.apply(j);
  return cfg;
}

void write_run_config(const std::filesystem::path& dir, const RunConfig& cfg) {
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / "run_config.json", std::ios::binary);
  out << cfg.to_json().dump(2) << "\n";
  if (!out) throw IoError("cannot write " + (dir / "run_config.json").string());
}

}  // namespace voxdiff::cli
