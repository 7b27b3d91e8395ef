#include "voxdiff/unet.hpp"

#include <charconv>
#include <cmath>
#include <sstream>

#include "voxdiff/error.hpp"

namespace voxdiff {

namespace {

constexpr int kDepth = 4;
constexpr int kUnitsPerBlock = 2;
constexpr double kNormEps = 1e-5;

std::string block(const char* kind, int i) { return std::string(kind) + std::to_string(i); }
std::string unit(const std::string& blk, int j) { return blk + ".res" + std::to_string(j); }

int parse_int(std::string_view s, std::string_view key) {
  int v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw ConfigError("bad integer for " + std::string(key) + ": '" + std::string(s) + "'");
  }
  return v;
}

}  // namespace

UNetConfig UNetConfig::paper_scale() {
  UNetConfig cfg;
  cfg.channel_widths = {128, 256, 512, 512};
  cfg.time_embed_dim = 128;
  return cfg;
}

int effective_groups(int channels, int groups) { return channels < groups ? channels : groups; }

void UNetConfig::validate() const {
  if (channel_widths.size() != kDepth) {
    throw ConfigError("channel_widths needs exactly 4 entries, got " +
                      std::to_string(channel_widths.size()));
  }
  if (in_channels != 2) throw ConfigError("in_channels must be 2 (noisy target + condition)");
  if (out_channels <= 0) throw ConfigError("out_channels must be positive");
  if (time_embed_dim <= 0 || time_embed_dim % 2 != 0) {
    throw ConfigError("time_embed_dim must be a positive even number");
  }
  if (groups <= 0) throw ConfigError("groups must be positive");
  auto check = [&](int channels) {
    if (channels <= 0) throw ConfigError("channel widths must be positive");
    const int g = effective_groups(channels, groups);
    if (channels % g != 0) {
      throw ConfigError("width " + std::to_string(channels) + " not divisible by " +
                        std::to_string(g) + " groups");
    }
  };
  // Every normalized width: block widths and the decoder's concatenations.
  const auto& w = channel_widths;
  for (int c : w) check(c);
  check(w[3] + w[3]);
  for (int i = 2; i >= 0; --i) check(w[static_cast<std::size_t>(i) + 1] + w[static_cast<std::size_t>(i)]);
}

std::string UNetConfig::to_text() const {
  std::ostringstream out;
  out << "channel_widths=";
  for (std::size_t i = 0; i < channel_widths.size(); ++i) {
    out << (i ? "," : "") << channel_widths[i];
  }
  out << "\nin_channels=" << in_channels << "\nout_channels=" << out_channels
      << "\ntime_embed_dim=" << time_embed_dim << "\ngroups=" << groups << "\n";
  return out.str();
}

UNetConfig UNetConfig::from_text(std::string_view text) {
  UNetConfig cfg;
  bool seen_widths = false;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("malformed config line: " + line);
    const std::string key = line.substr(0, eq);
    const std::string_view value = std::string_view(line).substr(eq + 1);
    if (key == "channel_widths") {
      cfg.channel_widths.clear();
      std::size_t start = 0;
      while (start <= value.size()) {
        const auto comma = value.find(',', start);
        const auto piece = value.substr(start, comma == std::string_view::npos ? value.npos : comma - start);
        cfg.channel_widths.push_back(parse_int(piece, key));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
      }
      seen_widths = true;
    } else if (key == "in_channels") {
      cfg.in_channels = parse_int(value, key);
    } else if (key == "out_channels") {
      cfg.out_channels = parse_int(value, key);
    } else if (key == "time_embed_dim") {
      cfg.time_embed_dim = parse_int(value, key);
    } else if (key == "groups") {
      cfg.groups = parse_int(value, key);
    } else {
      throw ConfigError("unknown UNet config key: " + key);
    }
  }
  if (!seen_widths) throw ConfigError("UNet config record lacks channel_widths");
  cfg.validate();
  return cfg;
}

// ---- construction ----------------------------------------------------------------

template <std::floating_point Real>
void UNet<Real>::add_conv(const std::string& name, int cin, int cout, int k, SeededRng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(cin) * k * k * k);
  const ad::Shape shape{cout, cin, k, k, k};
  std::vector<Real> w(shape.numel());
  for (auto& v : w) v = static_cast<Real>(rng.uniform(-bound, bound));
  std::vector<Real> b(static_cast<std::size_t>(cout));
  for (auto& v : b) v = static_cast<Real>(rng.uniform(-bound, bound));
  const auto uk = static_cast<std::uint32_t>(k);
  params_.add(name + ".weight", shape,
              {static_cast<std::uint32_t>(cout), static_cast<std::uint32_t>(cin), uk, uk, uk},
              std::move(w));
  params_.add(name + ".bias", ad::Shape{1, cout}, {static_cast<std::uint32_t>(cout)}, std::move(b));
}

template <std::floating_point Real>
void UNet<Real>::add_linear(const std::string& name, int in, int out, SeededRng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  std::vector<Real> w(static_cast<std::size_t>(in) * out);
  for (auto& v : w) v = static_cast<Real>(rng.uniform(-bound, bound));
  std::vector<Real> b(static_cast<std::size_t>(out));
  for (auto& v : b) v = static_cast<Real>(rng.uniform(-bound, bound));
  params_.add(name + ".weight", ad::Shape{out, in},
              {static_cast<std::uint32_t>(out), static_cast<std::uint32_t>(in)}, std::move(w));
  params_.add(name + ".bias", ad::Shape{1, out}, {static_cast<std::uint32_t>(out)}, std::move(b));
}

template <std::floating_point Real>
void UNet<Real>::add_norm(const std::string& name, int channels) {
  const auto dims = std::vector<std::uint32_t>{static_cast<std::uint32_t>(channels)};
  params_.add(name + ".scale", ad::Shape{1, channels}, dims,
              std::vector<Real>(static_cast<std::size_t>(channels), Real(1)));
  params_.add(name + ".shift", ad::Shape{1, channels}, dims,
              std::vector<Real>(static_cast<std::size_t>(channels), Real(0)));
}

template <std::floating_point Real>
void UNet<Real>::add_res_unit(const std::string& name, int cin, int cout, SeededRng& rng) {
  add_norm(name + ".norm1", cin);
  add_conv(name + ".conv1", cin, cout, 3, rng);
  add_linear(name + ".time", time_hidden_, cout, rng);
  add_norm(name + ".norm2", cout);
  add_conv(name + ".conv2", cout, cout, 3, rng);
  if (cin != cout) add_conv(name + ".skip", cin, cout, 1, rng);
}

template <std::floating_point Real>
UNet<Real>::UNet(UNetConfig cfg, SeededRng& rng) : cfg_(std::move(cfg)) {
  cfg_.validate();
  time_hidden_ = 4 * cfg_.time_embed_dim;
  const auto& w = cfg_.channel_widths;
  auto width = [&](int i) { return w[static_cast<std::size_t>(i)]; };

  add_linear("time.mlp0", cfg_.time_embed_dim, time_hidden_, rng);
  add_linear("time.mlp1", time_hidden_, time_hidden_, rng);
  add_conv("stem", cfg_.in_channels, width(0), 3, rng);

  int ch = width(0);
  for (int i = 0; i < kDepth; ++i) {
    const auto blk = block("down", i);
    for (int j = 0; j < kUnitsPerBlock; ++j) {
      add_res_unit(unit(blk, j), ch, width(i), rng);
      ch = width(i);
    }
    add_conv(blk + ".downsample", ch, ch, 3, rng);
  }
  for (int j = 0; j < kUnitsPerBlock; ++j) add_res_unit(unit("mid", j), ch, ch, rng);
  for (int i = 0; i < kDepth; ++i) {
    const auto blk = block("up", i);
    const int skip_width = width(kDepth - 1 - i);
    add_conv(blk + ".upsample", ch, ch, 3, rng);
    add_res_unit(unit(blk, 0), ch + skip_width, skip_width, rng);
    add_res_unit(unit(blk, 1), skip_width, skip_width, rng);
    ch = skip_width;
  }
  add_conv("head.conv", ch, cfg_.out_channels, 3, rng);
}

// ---- forward -----------------------------------------------------------------------

template <std::floating_point Real>
ad::Var<Real> UNet<Real>::conv(const std::string& name, const ad::Var<Real>& x, int stride,
                               int pad) const {
  return ad::conv3d(x, params_.get(name + ".weight"), params_.get(name + ".bias"), stride, pad);
}

template <std::floating_point Real>
ad::Var<Real> UNet<Real>::norm(const std::string& name, const ad::Var<Real>& x) const {
  return ad::group_norm(x, effective_groups(x->shape.c, cfg_.groups), params_.get(name + ".scale"),
                        params_.get(name + ".shift"), static_cast<Real>(kNormEps));
}

template <std::floating_point Real>
ad::Var<Real> UNet<Real>::res_unit(const std::string& name, const ad::Var<Real>& x,
                                   const ad::Var<Real>& temb) const {
  auto h = conv(name + ".conv1", ad::swish(norm(name + ".norm1", x)), 1, 1);
  h = ad::add_channel_bias(
      h, ad::linear(temb, params_.get(name + ".time.weight"), params_.get(name + ".time.bias")));
  h = conv(name + ".conv2", ad::swish(norm(name + ".norm2", h)), 1, 1);
  const auto shortcut = params_.contains(name + ".skip.weight") ? conv(name + ".skip", x, 1, 0) : x;
  return ad::add(h, shortcut);
}

template <std::floating_point Real>
ad::Var<Real> UNet<Real>::forward(const ad::Var<Real>& x_t, const ad::Var<Real>& y,
                                  std::span<const int> t) const {
  const ad::Shape s = x_t->shape;
  if (!(y->shape == s)) {
    throw ShapeError("x_t " + s.str() + " and condition " + y->shape.str() + " differ in shape");
  }
  if (s.c != 1) throw ShapeError("x_t must have one channel, got " + s.str());
  if (s.x % 16 != 0 || s.y % 16 != 0 || s.z % 16 != 0 || s.x == 0 || s.y == 0 || s.z == 0) {
    throw ShapeError("spatial dims must be positive multiples of 16, got " + s.str());
  }
  if (t.size() != static_cast<std::size_t>(s.n)) {
    throw ShapeError("need one timestep per batch item");
  }

  std::vector<Real> emb;
  emb.reserve(static_cast<std::size_t>(s.n) * cfg_.time_embed_dim);
  for (int step : t) {
    if (step < 1) throw IndexError("diffusion steps are 1-based, got " + std::to_string(step));
    const auto e = ad::sinusoidal_time_embedding<Real>(step - 1, cfg_.time_embed_dim);
    emb.insert(emb.end(), e.begin(), e.end());
  }
  auto temb = ad::constant<Real>(ad::Shape{s.n, cfg_.time_embed_dim}, std::move(emb));
  temb = ad::linear(temb, params_.get("time.mlp0.weight"), params_.get("time.mlp0.bias"));
  temb = ad::linear(ad::swish(temb), params_.get("time.mlp1.weight"), params_.get("time.mlp1.bias"));
  temb = ad::swish(temb);

  auto h = conv("stem", ad::concat_channels(x_t, y), 1, 1);
  std::vector<ad::Var<Real>> skips;
  for (int i = 0; i < kDepth; ++i) {
    const auto blk = block("down", i);
    for (int j = 0; j < kUnitsPerBlock; ++j) h = res_unit(unit(blk, j), h, temb);
    skips.push_back(h);
    h = conv(blk + ".downsample", h, 2, 1);
  }
  for (int j = 0; j < kUnitsPerBlock; ++j) h = res_unit(unit("mid", j), h, temb);
  for (int i = 0; i < kDepth; ++i) {
    const auto blk = block("up", i);
    h = conv(blk + ".upsample", ad::upsample_nearest2x(h), 1, 1);
    h = ad::concat_channels(h, skips[static_cast<std::size_t>(kDepth - 1 - i)]);
    for (int j = 0; j < kUnitsPerBlock; ++j) h = res_unit(unit(blk, j), h, temb);
  }
  // Plain conv head: the residual shortcuts carry the per-volume mean of x_t
  // through to the output, which a normalized head would strip.
  return conv("head.conv", h, 1, 1);
}

UNet<float> build_unet(const UNetConfig& cfg, SeededRng& rng) { return UNet<float>(cfg, rng); }

template class UNet<float>;
template class UNet<double>;

}  // namespace voxdiff
