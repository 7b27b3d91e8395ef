#include "app.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>

#include <CLI11.hpp>

#include "run_config.hpp"
#include "voxdiff/error.hpp"
#include "voxdiff/metrics.hpp"
#include "voxdiff/parallel.hpp"
#include "voxdiff/trainer.hpp"

namespace voxdiff::cli {

namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::optional<int> threads;
  std::string schedule = "linear";
  std::optional<int> T;
  std::optional<double> beta_start;
  std::optional<double> beta_end;
};

void add_common(CLI::App* sub, Common& c, bool diffusion) {
  sub->add_option("--config", c.config, "JSON config (flat dotted keys)")->check(CLI::ExistingFile);
  sub->add_option("--set", c.sets, "Override a config key, key=value (repeatable)");
  sub->add_option("--threads", c.threads, "Worker threads; 1 is bitwise deterministic")->check(CLI::PositiveNumber);
  if (!diffusion) return;
  sub->add_option("--schedule", c.schedule, "Noise schedule")->check(CLI::IsMember({"linear"}));
  sub->add_option("--T", c.T, "Diffusion steps");
  sub->add_option("--beta-start", c.beta_start, "First beta");
  sub->add_option("--beta-end", c.beta_end, "Last beta");
}

RunConfig resolve(const Common& c) {
  RunConfig cfg = c.config.empty() ? RunConfig{} : RunConfig::from_file(c.config);
  for (const auto& s : c.sets) cfg.apply_override(s);
  if (c.threads) cfg.threads = *c.threads;
  if (c.T) cfg.diffusion.T = *c.T;
  if (c.beta_start) cfg.diffusion.beta_start = *c.beta_start;
  if (c.beta_end) cfg.diffusion.beta_end = *c.beta_end;
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw IoError("cannot write " + path.string());
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// ---- gen-data ---------------------------------------------------------------

struct GenDataArgs {
  Common common;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string counts = "default";
  std::optional<int> total;
};

int gen_data(const GenDataArgs& a, std::ostream& out) {
  RunConfig cfg = resolve(a.common);
  if (a.seed) cfg.data_seed = *a.seed;
  if (a.counts == "paper-ratio") {
    if (!a.total) throw ConfigError("--counts paper-ratio needs --total");
    cfg.phantom.counts = paper_ratio_counts(*a.total);
  } else if (a.total) {
    throw ConfigError("--total only applies with --counts paper-ratio");
  }
  cfg.phantom.validate();
  set_num_threads(cfg.threads);

  const auto ds = generate_dataset(cfg.phantom, cfg.data_seed);
  write_dataset(ds, a.out);
  write_run_config(a.out, cfg);
  std::array<std::array<int, 3>, 3> tally{};
  for (const auto& e : ds.manifest) tally[group_index(e.group)][static_cast<std::size_t>(e.split)]++;
  out << "wrote " << ds.pairs.size() << " pairs to " << a.out << "\n";
  for (GroupLabel g : kAllGroups) {
    const auto& t = tally[group_index(g)];
    out << "  " << to_string(g) << ": " << t[0] + t[1] + t[2] << " (train " << t[0] << ", val " << t[1]
        << ", test " << t[2] << ")\n";
  }
  return kOk;
}

// ---- train ------------------------------------------------------------------

struct TrainArgs {
  Common common;
  std::string data;
  std::string out;
  std::string resume;
  std::optional<int> epochs;
  std::optional<std::uint64_t> seed;
  std::optional<double> lr;
  bool quiet = false;
};

int train_cmd(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  RunConfig cfg = resolve(a.common);
  if (a.epochs) cfg.train.epochs = *a.epochs;
  if (a.seed) cfg.train.seed = *a.seed;
  if (a.lr) cfg.train.adam.lr = *a.lr;
  cfg.train.validate();
  cfg.diffusion.validate();
  cfg.unet.validate();
  if (cfg.threads < 1) throw ConfigError("threads must be >= 1");
  set_num_threads(cfg.threads);
  if (!fs::is_directory(a.data)) throw ConfigError("dataset directory " + a.data + " does not exist");

  const auto train_pairs = load_split(a.data, Split::Train);
  const auto val_pairs = load_split(a.data, Split::Val);
  const auto sched = make_linear_schedule(cfg.diffusion);
  auto init_rng = SeededRng::derived(cfg.train.seed, fnv1a("unet-init"));
  auto net = build_unet(cfg.unet, init_rng);

  TrainState state;
  if (!a.resume.empty()) {
    state = load_checkpoint(a.resume, net, sched);
    out << "resumed from " << a.resume << " at epoch " << state.epoch << "\n";
  }
  write_run_config(a.out, cfg);

  TrainOptions opts;
  opts.out_dir = fs::path(a.out);
  opts.log = [&](const std::string& m) { err << m << "\n"; };
  opts.on_epoch = [&](const EpochRecord& r) {
    if (a.quiet && !r.val_loss) return;
    out << "epoch " << r.epoch << " train_loss " << r.train_loss;
    if (r.val_loss) out << " val_loss " << *r.val_loss;
    out << std::endl;
  };
  out << "training " << net.parameter_count() << " parameters on " << train_pairs.size() << " pairs ("
      << val_pairs.size() << " validation)\n";
  train(net, train_pairs, val_pairs, sched, cfg.train, state, opts);
  out << "done: best val " << (state.best_val ? *state.best_val : NAN) << " at epoch " << state.best_epoch
      << "; checkpoints in " << a.out << "\n";
  return kOk;
}

// ---- synthesize -------------------------------------------------------------

struct SynthArgs {
  Common common;
  std::string checkpoint;
  std::string out;
  std::uint64_t seed = 0;
  std::vector<std::string> inputs;
};

std::vector<fs::path> expand_inputs(const std::vector<std::string>& inputs) {
  std::vector<fs::path> files;
  for (const auto& in : inputs) {
    if (fs::is_directory(in)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::directory_iterator(in)) {
        const auto name = e.path().filename().string();
        if (e.is_regular_file() && name.ends_with("_cond.vvol")) found.push_back(e.path());
      }
      std::ranges::sort(found);
      files.insert(files.end(), found.begin(), found.end());
    } else if (fs::is_regular_file(in)) {
      files.emplace_back(in);
    } else {
      throw ConfigError("input " + in + " does not exist");
    }
  }
  if (files.empty()) throw ConfigError("no input volumes");
  return files;
}

int synthesize_cmd(const SynthArgs& a, std::ostream& out) {
  RunConfig cfg = resolve(a.common);
  cfg.diffusion.validate();
  set_num_threads(cfg.threads);
  const auto sched = make_linear_schedule(cfg.diffusion);
  if (const int ckpt_T = checkpoint_schedule_length(a.checkpoint); ckpt_T != sched.T()) {
    throw CheckpointMismatch("checkpoint was trained with T=" + std::to_string(ckpt_T) + ", requested T=" +
                             std::to_string(sched.T()));
  }
  cfg.unet = read_checkpoint_config(a.checkpoint);
  SeededRng unused(0);
  auto net = build_unet(cfg.unet, unused);
  load_weights(a.checkpoint, net);

  const auto files = expand_inputs(a.inputs);
  fs::create_directories(a.out);
  write_run_config(a.out, cfg);
  for (const auto& f : files) {
    const auto cond = load_volume(f);
    const std::string stem = f.stem().string();
    auto rng = SeededRng::derived(a.seed, fnv1a(stem));
    const auto synth = synthesize(net, cond, sched, rng);
    const auto dst = fs::path(a.out) / (stem + "_synth.vvol");
    save_volume(synth, dst);
    out << f.string() << " -> " << dst.string() << "\n";
  }
  return kOk;
}

// ---- evaluate ---------------------------------------------------------------

struct EvalArgs {
  Common common;
  std::string ref;
  std::string synth;
  std::string manifest;
  std::string out;
  std::string split = "test";
  std::string ci = "normal";
  int window = 7;
};

std::optional<fs::path> find_synth(const fs::path& dir, const ManifestEntry& e) {
  for (const auto& base : {dir, dir / to_string(e.split)}) {
    for (const char* suffix : {"_cond_synth.vvol", "_synth.vvol", "_targ.vvol"}) {
      auto p = base / (e.pair_id + suffix);
      if (fs::is_regular_file(p)) return p;
    }
  }
  return std::nullopt;
}

int evaluate_cmd(const EvalArgs& a, std::ostream& out, std::ostream& err) {
  RunConfig cfg = resolve(a.common);
  set_num_threads(cfg.threads);
  const fs::path manifest = a.manifest.empty() ? fs::path(a.ref) / "manifest.csv" : fs::path(a.manifest);
  auto entries = read_manifest(manifest);
  if (a.split != "all") {
    const Split s = parse_split(a.split);
    std::erase_if(entries, [&](const ManifestEntry& e) { return e.split != s; });
  }
  if (entries.empty()) throw ConfigError("no manifest entries for split " + a.split);

  std::vector<EvalPair> pairs;
  std::vector<std::string> missing;
  for (const auto& e : entries) {
    const auto synth = find_synth(a.synth, e);
    if (!synth) {
      missing.push_back(e.pair_id);
      continue;
    }
    pairs.push_back({e.pair_id, e.group, load_volume(target_path(a.ref, e)), load_volume(*synth)});
  }
  if (!missing.empty()) {
    std::string msg = "no synthesized volume for " + std::to_string(missing.size()) + " pair id(s):";
    for (const auto& id : missing) msg += " " + id;
    throw ConfigError(msg);
  }

  EvalOptions opts;
  opts.ssim.window = a.window;
  opts.ci = a.ci == "t" ? CiMethod::StudentT : CiMethod::Normal;
  const auto report = evaluate_groups(pairs, opts);
  for (const auto& w : report.warnings) err << "warning: " << w << "\n";

  fs::create_directories(a.out);
  write_text(fs::path(a.out) / "pairs.csv", report.pairs_csv());
  write_text(fs::path(a.out) / "aggregate.csv", report.aggregate_csv());
  write_text(fs::path(a.out) / "table.txt", report.table());
  write_run_config(a.out, cfg);
  out << report.table();
  return kOk;
}

// ---- heterogeneity ------------------------------------------------------------

struct HetArgs {
  Common common;
  std::string data;
  std::string group = "all";
  std::string split = "all";
  std::string out;
};

int heterogeneity_cmd(const HetArgs& a, std::ostream& out) {
  RunConfig cfg = resolve(a.common);
  set_num_threads(cfg.threads);
  const auto entries = read_manifest(fs::path(a.data) / "manifest.csv");
  std::vector<GroupLabel> groups;
  if (a.group == "all") {
    groups.assign(kAllGroups.begin(), kAllGroups.end());
  } else {
    groups.push_back(parse_group(a.group));
  }
  std::optional<Split> split;
  if (a.split != "all") split = parse_split(a.split);

  // Check every requested group before writing anything.
  std::map<GroupLabel, std::vector<ManifestEntry>> selected;
  for (GroupLabel g : groups) {
    auto& sel = selected[g];
    for (const auto& e : entries) {
      if (e.group == g && (!split || e.split == *split)) sel.push_back(e);
    }
    if (sel.size() < 2) {
      throw ConfigError(to_string(g) + " has " + std::to_string(sel.size()) + " target(s); at least 2 needed");
    }
  }

  fs::create_directories(a.out);
  std::string csv = "group,n,mean_std\n";
  for (GroupLabel g : groups) {
    std::vector<Volume3D> targets;
    for (const auto& e : selected[g]) targets.push_back(load_volume(target_path(a.data, e)));
    const auto map = voxelwise_std_map(targets);
    double mean = 0.0;
    for (float v : map.data()) mean += v;
    mean /= static_cast<double>(map.size());
    const std::string name = to_string(g);
    save_volume(map, fs::path(a.out) / (name + "_std.vvol"));
    write_text(fs::path(a.out) / (name + "_std_mid.pgm"), mid_axial_pgm(map));
    char line[96];
    std::snprintf(line, sizeof line, "%s,%zu,%.9g\n", name.c_str(), targets.size(), mean);
    csv += line;
    out << name << ": n=" << targets.size() << " mean voxelwise std " << mean << "\n";
  }
  write_text(fs::path(a.out) / "heterogeneity.csv", csv);
  write_run_config(a.out, cfg);
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"voxdiff: conditional volumetric diffusion on synthetic phantoms", "voxdiff"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Help for every subcommand");

  GenDataArgs gd;
  auto* gen = app.add_subcommand("gen-data", "Generate a paired phantom dataset");
  add_common(gen, gd.common, false);
  gen->add_option("--out", gd.out, "Dataset root")->required();
  gen->add_option("--seed", gd.seed, "Master seed (data.seed)");
  gen->add_option("--counts", gd.counts, "Group counts preset")->check(CLI::IsMember({"default", "paper-ratio"}));
  gen->add_option("--total", gd.total, "Total pairs for --counts paper-ratio")->check(CLI::PositiveNumber);

  TrainArgs tr;
  auto* trn = app.add_subcommand("train", "Train the denoiser on a dataset");
  add_common(trn, tr.common, true);
  trn->add_option("--data", tr.data, "Dataset root")->required();
  trn->add_option("--out", tr.out, "Run directory")->required();
  trn->add_option("--resume", tr.resume, "Checkpoint directory to continue from");
  trn->add_option("--epochs", tr.epochs, "Total epochs (train.epochs)");
  trn->add_option("--seed", tr.seed, "Training seed (train.seed)");
  trn->add_option("--lr", tr.lr, "Adam learning rate (train.lr)");
  trn->add_flag("--quiet", tr.quiet, "Only report validation epochs");

  SynthArgs sy;
  auto* syn = app.add_subcommand("synthesize", "Sample target volumes for condition volumes");
  add_common(syn, sy.common, true);
  syn->add_option("--checkpoint", sy.checkpoint, "Checkpoint directory")->required();
  syn->add_option("--out", sy.out, "Output directory")->required();
  syn->add_option("--seed", sy.seed, "Sampling seed");
  syn->add_option("inputs", sy.inputs, "Condition volumes, or directories of *_cond.vvol")->required();

  EvalArgs ev;
  auto* evl = app.add_subcommand("evaluate", "Group-stratified SSIM/PSNR with 95% CIs");
  add_common(evl, ev.common, false);
  evl->add_option("--ref", ev.ref, "Dataset root holding the reference targets")->required();
  evl->add_option("--synth", ev.synth, "Directory of synthesized volumes")->required();
  evl->add_option("--manifest", ev.manifest, "Manifest CSV (default <ref>/manifest.csv)");
  evl->add_option("--out", ev.out, "Report directory")->required();
  evl->add_option("--split", ev.split, "Split to evaluate")->check(CLI::IsMember({"train", "val", "test", "all"}));
  evl->add_option("--ci", ev.ci, "CI quantile: normal (1.96) or Student t")->check(CLI::IsMember({"normal", "t"}));
  evl->add_option("--window", ev.window, "SSIM box window edge (odd)");

  HetArgs he;
  auto* het = app.add_subcommand("heterogeneity", "Voxelwise across-subject std maps of targets");
  add_common(het, he.common, false);
  het->add_option("--data", he.data, "Dataset root")->required();
  het->add_option("--group", he.group, "GroupA/B/C, A/B/C, or all");
  het->add_option("--split", he.split, "Split to use")->check(CLI::IsMember({"train", "val", "test", "all"}));
  het->add_option("--out", he.out, "Output directory")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n";
    const auto subs = app.get_subcommands();
    err << (subs.empty() ? app.help() : subs.front()->help());
    return kUsage;
  }

  try {
    if (gen->parsed()) return gen_data(gd, out);
    if (trn->parsed()) return train_cmd(tr, out, err);
    if (syn->parsed()) return synthesize_cmd(sy, out);
    if (evl->parsed()) return evaluate_cmd(ev, out, err);
    if (het->parsed()) return heterogeneity_cmd(he, out);
  } catch (const NonFiniteGradient& e) {
    err << "numerical failure: " << e.what() << "\n";
    return kNumerical;
  } catch (const CheckpointMismatch& e) {
    err << "checkpoint mismatch: " << e.what() << "\n";
    return kCheckpoint;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const ShapeError& e) {
    err << "shape error: " << e.what() << "\n";
    return kUsage;
  } catch (const IoError& e) {
    err << "i/o error: " << e.what() << "\n";
    return kUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kFailure;
  } catch (const std::exception& e) {
    err << "unexpected error: " << e.what() << "\n";
    return kFailure;
  }
  return kUsage;
}

}  // namespace voxdiff::cli
