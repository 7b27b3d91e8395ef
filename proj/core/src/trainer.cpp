#include "voxdiff/trainer.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "voxdiff/binary_io.hpp"
#include "voxdiff/error.hpp"

namespace voxdiff {

namespace fs = std::filesystem;

namespace {

constexpr int kStateVersion = 1;
constexpr std::uint64_t kValidationStream = 0x76616c6964ULL;  // "valid"
constexpr double kRetryClipNorm = 1.0;

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw CheckpointMismatch("trainer state: bad number for " + what + ": '" + s + "'");
  }
}

long long parse_ll(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw CheckpointMismatch("trainer state: bad integer for " + what + ": '" + s + "'");
  }
}

PatchSpec centred_patch(Dims3 dims, Dims3 size) {
  return {size, {(dims.nx - size.nx) / 2, (dims.ny - size.ny) / 2, (dims.nz - size.nz) / 2}};
}

void check_pairs(const std::vector<PairedSample>& pairs, Dims3 patch, const char* which) {
  for (const auto& p : pairs) {
    const Dims3 d = p.condition.dims();
    if (!(p.target.dims() == d)) throw ShapeError(p.pair_id + ": condition and target dims differ");
    if (!(d == pairs.front().condition.dims())) throw ShapeError(std::string(which) + " volumes differ in dims");
    if (d.nx < patch.nx || d.ny < patch.ny || d.nz < patch.nz) {
      throw ConfigError(std::string(which) + " volumes are smaller than the training patch");
    }
  }
}

struct Batch {
  ad::Var<float> x0;
  ad::Var<float> y;
};

Batch assemble(const std::vector<PairedSample>& pairs,
               std::span<const std::pair<std::size_t, PatchSpec>> items) {
  const Dims3 p = items.front().second.size;
  const ad::Shape s{static_cast<int>(items.size()), 1, p.nx, p.ny, p.nz};
  std::vector<float> x0, y;
  x0.reserve(s.numel());
  y.reserve(s.numel());
  for (const auto& [idx, spec] : items) {
    const auto targ = extract_patch(pairs[idx].target, spec);
    const auto cond = extract_patch(pairs[idx].condition, spec);
    x0.insert(x0.end(), targ.data().begin(), targ.data().end());
    y.insert(y.end(), cond.data().begin(), cond.data().end());
  }
  return {ad::constant<float>(s, std::move(x0)), ad::constant<float>(s, std::move(y))};
}

/// One pass over the training pairs. Returns the mean per-item loss.
double run_epoch(UNet<float>& net, const std::vector<PairedSample>& pairs, const NoiseSchedule& sched,
                 const TrainConfig& cfg, int epoch, OptimizerState<float>& opt, bool clipping) {
  auto rng = SeededRng::derived(cfg.seed, static_cast<std::uint64_t>(epoch));
  std::vector<std::pair<std::size_t, PatchSpec>> items;
  const Dims3 dims = pairs.front().condition.dims();
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    for (int k = 0; k < cfg.patches_per_volume; ++k) items.emplace_back(i, random_patch_spec(dims, cfg.patch, rng));
  }
  for (std::size_t i = items.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
    std::swap(items[i - 1], items[j]);
  }

  const auto clip = clipping ? std::optional<double>(kRetryClipNorm) : std::nullopt;
  double total = 0.0;
  const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
  for (std::size_t start = 0; start < items.size(); start += bs) {
    const auto batch_items = std::span(items).subspan(start, std::min(bs, items.size() - start));
    const auto batch = assemble(pairs, batch_items);
    net.params().zero_grad();
    const auto loss = training_loss<float>(net, batch.x0, batch.y, rng, sched);
    ad::backward(loss);
    adam_step(net.params(), opt, cfg.adam, clip);
    total += static_cast<double>(loss->value[0]) * static_cast<double>(batch_items.size());
  }
  return total / static_cast<double>(items.size());
}

}  // namespace

TrainConfig TrainConfig::paper_scale() {
  TrainConfig cfg;
  cfg.epochs = 2500;
  cfg.patch = {64, 64, 64};
  return cfg;
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1, got " + std::to_string(epochs));
  for (int d : {patch.nx, patch.ny, patch.nz}) {
    if (d <= 0 || d % 16 != 0) throw ConfigError("patch dims must be positive multiples of 16");
  }
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (patches_per_volume < 1) throw ConfigError("patches_per_volume must be >= 1");
  if (checkpoint_every < 1) throw ConfigError("checkpoint_every must be >= 1");
  adam.validate();
}

std::vector<int> validation_steps(int T) {
  std::vector<int> steps{1, T / 4, T / 2, 3 * T / 4, T};
  std::erase_if(steps, [](int t) { return t < 1; });
  std::ranges::sort(steps);
  steps.erase(std::unique(steps.begin(), steps.end()), steps.end());
  return steps;
}

double validation_loss(const UNet<float>& net, const std::vector<PairedSample>& pairs,
                       const NoiseSchedule& sched, const TrainConfig& cfg) {
  if (pairs.empty()) throw ConfigError("validation set is empty");
  check_pairs(pairs, cfg.patch, "validation");
  ad::NoGradGuard no_grad;
  const auto steps = validation_steps(sched.T());
  const PatchSpec spec = centred_patch(pairs.front().condition.dims(), cfg.patch);
  double total = 0.0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    // The same patch repeated once per grid step, as one batch.
    std::vector<std::pair<std::size_t, PatchSpec>> items(steps.size(), {i, spec});
    const auto batch = assemble(pairs, items);
    auto rng = SeededRng::derived(mix_seed(cfg.seed, kValidationStream), i);
    std::vector<float> eps(batch.x0->numel());
    for (auto& e : eps) e = static_cast<float>(rng.normal());
    const auto loss = training_loss_at<float>(net, batch.x0, batch.y, steps, std::move(eps), sched);
    total += loss->value[0];
  }
  return total / static_cast<double>(pairs.size());
}

std::string loss_csv(const std::vector<EpochRecord>& history) {
  std::string out = "epoch,train_loss,val_loss\n";
  for (const auto& r : history) {
    out += std::to_string(r.epoch) + "," + num(r.train_loss) + "," + (r.val_loss ? num(*r.val_loss) : "") + "\n";
  }
  return out;
}

void train(UNet<float>& net, const std::vector<PairedSample>& train_pairs,
           const std::vector<PairedSample>& val_pairs, const NoiseSchedule& sched,
           const TrainConfig& cfg, TrainState& state, const TrainOptions& options) {
  cfg.validate();
  if (train_pairs.empty()) throw ConfigError("training set is empty");
  if (val_pairs.empty()) throw ConfigError("validation set is empty");
  check_pairs(train_pairs, cfg.patch, "training");
  check_pairs(val_pairs, cfg.patch, "validation");
  if (!(train_pairs.front().condition.dims() == val_pairs.front().condition.dims())) {
    throw ShapeError("training and validation volumes differ in dims");
  }
  auto log = [&](const std::string& msg) {
    if (options.log) options.log(msg);
  };
  auto write_text = [](const fs::path& path, const std::string& text) {
    const auto* p = reinterpret_cast<const std::byte*>(text.data());
    io::write_file(path, std::span(p, text.size()));
  };
  if (options.out_dir) fs::create_directories(*options.out_dir);

  if (!state.initial_val) {
    state.initial_val = validation_loss(net, val_pairs, sched, cfg);
    log("initial validation loss " + num(*state.initial_val));
  }

  for (int epoch = state.epoch + 1; epoch <= cfg.epochs; ++epoch) {
    // Snapshot for a single retry with clipping after a non-finite gradient.
    const auto weights = net.params().to_records();
    const auto opt_before = state.optimizer;
    double train_loss = 0.0;
    try {
      train_loss = run_epoch(net, train_pairs, sched, cfg, epoch, state.optimizer, state.clipping);
    } catch (const NonFiniteGradient& e) {
      if (state.clipping) throw;
      log(std::string("epoch ") + std::to_string(epoch) + ": " + e.what() +
          "; restoring epoch start and retrying with gradient clipping");
      net.params().assign_from(weights);
      state.optimizer = opt_before;
      state.clipping = true;
      train_loss = run_epoch(net, train_pairs, sched, cfg, epoch, state.optimizer, state.clipping);
    }

    EpochRecord rec{epoch, train_loss, std::nullopt};
    const bool checkpoint = epoch % cfg.checkpoint_every == 0 || epoch == cfg.epochs;
    if (checkpoint) rec.val_loss = validation_loss(net, val_pairs, sched, cfg);
    state.history.push_back(rec);
    state.epoch = epoch;

    bool improved = false;
    if (rec.val_loss && (!state.best_val || *rec.val_loss < *state.best_val)) {
      state.best_val = rec.val_loss;
      state.best_epoch = epoch;
      improved = true;
    }
    if (options.out_dir && checkpoint) {
      if (improved) save_checkpoint(*options.out_dir / "best", net, sched, state);
      save_checkpoint(*options.out_dir / "last", net, sched, state);
      write_text(*options.out_dir / "loss.csv", loss_csv(state.history));
    }
    if (options.on_epoch) options.on_epoch(rec);
  }

  if (options.out_dir) {
    save_checkpoint(*options.out_dir / "final", net, sched, state);
    write_text(*options.out_dir / "loss.csv", loss_csv(state.history));
  }
}

void save_checkpoint(const fs::path& dir, const UNet<float>& net, const NoiseSchedule& sched,
                     const TrainState& state) {
  fs::create_directories(dir);
  const auto put = [&](const char* name, const std::string& text) {
    const auto* p = reinterpret_cast<const std::byte*>(text.data());
    io::write_file(dir / name, std::span(p, text.size()));
  };
  put("unet.cfg", net.config().to_text());
  net.params().save(dir / "params.prm");
  write_prm(dir / "optimizer.prm", state.optimizer.to_records(net.params()));

  std::ostringstream s;
  s << "version=" << kStateVersion << "\n"
    << "T=" << sched.T() << "\n"
    << "epoch=" << state.epoch << "\n"
    << "step=" << state.optimizer.step << "\n"
    << "clipping=" << (state.clipping ? 1 : 0) << "\n"
    << "initial_val=" << (state.initial_val ? num(*state.initial_val) : "") << "\n"
    << "best_val=" << (state.best_val ? num(*state.best_val) : "") << "\n"
    << "best_epoch=" << state.best_epoch << "\n";
  for (const auto& r : state.history) {
    s << "h=" << r.epoch << "," << num(r.train_loss) << "," << (r.val_loss ? num(*r.val_loss) : "") << "\n";
  }
  put("trainer_state.txt", s.str());
}

UNetConfig read_checkpoint_config(const fs::path& dir) {
  try {
    const auto bytes = io::read_file(dir / "unet.cfg");
    return UNetConfig::from_text(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
  } catch (const CheckpointMismatch&) {
    throw;
  } catch (const Error& e) {
    throw CheckpointMismatch("unreadable checkpoint config in " + dir.string() + ": " + e.what());
  }
}

int checkpoint_schedule_length(const fs::path& dir) {
  std::string text;
  try {
    const auto bytes = io::read_file(dir / "trainer_state.txt");
    text.assign(reinterpret_cast<const char*>(bytes.data()), bytes.size());
  } catch (const Error& e) {
    throw CheckpointMismatch("unreadable trainer state in " + dir.string() + ": " + e.what());
  }
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.starts_with("T=")) return static_cast<int>(parse_ll(line.substr(2), "T"));
  }
  throw CheckpointMismatch("trainer state in " + dir.string() + " does not record T");
}

void load_weights(const fs::path& dir, UNet<float>& net) {
  if (read_checkpoint_config(dir) != net.config()) {
    throw CheckpointMismatch("checkpoint " + dir.string() + " was written for a different network configuration");
  }
  try {
    net.params().load(dir / "params.prm");
  } catch (const CheckpointMismatch&) {
    throw;
  } catch (const Error& e) {
    throw CheckpointMismatch("corrupt weights in " + dir.string() + ": " + e.what());
  }
}

TrainState load_checkpoint(const fs::path& dir, UNet<float>& net, const NoiseSchedule& sched) {
  load_weights(dir, net);
  TrainState state;
  std::vector<ParamRecord> opt_records;
  std::string text;
  try {
    opt_records = read_prm(dir / "optimizer.prm");
    const auto bytes = io::read_file(dir / "trainer_state.txt");
    text.assign(reinterpret_cast<const char*>(bytes.data()), bytes.size());
  } catch (const Error& e) {
    throw CheckpointMismatch("corrupt checkpoint " + dir.string() + ": " + e.what());
  }
  state.optimizer.assign_from(opt_records, net.params());

  bool seen_version = false;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw CheckpointMismatch("trainer state: malformed line '" + line + "'");
    const std::string key = line.substr(0, eq);
    const std::string val = line.substr(eq + 1);
    if (key == "version") {
      if (parse_ll(val, key) != kStateVersion) throw CheckpointMismatch("unsupported trainer state version " + val);
      seen_version = true;
    } else if (key == "T") {
      if (parse_ll(val, key) != sched.T()) {
        throw CheckpointMismatch("checkpoint used T=" + val + ", current schedule has T=" + std::to_string(sched.T()));
      }
    } else if (key == "epoch") {
      state.epoch = static_cast<int>(parse_ll(val, key));
    } else if (key == "step") {
      state.optimizer.step = parse_ll(val, key);
    } else if (key == "clipping") {
      state.clipping = parse_ll(val, key) != 0;
    } else if (key == "initial_val") {
      if (!val.empty()) state.initial_val = parse_double(val, key);
    } else if (key == "best_val") {
      if (!val.empty()) state.best_val = parse_double(val, key);
    } else if (key == "best_epoch") {
      state.best_epoch = static_cast<int>(parse_ll(val, key));
    } else if (key == "h") {
      const auto c1 = val.find(',');
      const auto c2 = val.find(',', c1 == std::string::npos ? c1 : c1 + 1);
      if (c1 == std::string::npos || c2 == std::string::npos) throw CheckpointMismatch("trainer state: bad history row");
      EpochRecord r{static_cast<int>(parse_ll(val.substr(0, c1), "epoch")),
                    parse_double(val.substr(c1 + 1, c2 - c1 - 1), "train_loss"), std::nullopt};
      if (c2 + 1 < val.size()) r.val_loss = parse_double(val.substr(c2 + 1), "val_loss");
      state.history.push_back(r);
    } else {
      throw CheckpointMismatch("trainer state: unknown key '" + key + "'");
    }
  }
  if (!seen_version) throw CheckpointMismatch("trainer state lacks a version");
  if (state.history.size() != static_cast<std::size_t>(state.epoch)) {
    throw CheckpointMismatch("trainer state history does not match its epoch count");
  }
  return state;
}

}  // namespace voxdiff
