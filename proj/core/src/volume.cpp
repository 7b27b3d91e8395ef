#include "voxdiff/volume.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "voxdiff/binary_io.hpp"
#include "voxdiff/error.hpp"

namespace voxdiff {

namespace {

constexpr std::uint32_t kVolumeVersion = 1;

std::string dims_str(const Dims3& d) {
  return std::to_string(d.nx) + "x" + std::to_string(d.ny) + "x" + std::to_string(d.nz);
}

bool fits(const PatchSpec& spec, const Dims3& dims) {
  const std::array<int, 3> size{spec.size.nx, spec.size.ny, spec.size.nz};
  const std::array<int, 3> bound{dims.nx, dims.ny, dims.nz};
  for (int a = 0; a < 3; ++a) {
    if (size[a] <= 0 || spec.origin[a] < 0 || spec.origin[a] + size[a] > bound[a]) return false;
  }
  return true;
}

}  // namespace

Volume3D::Volume3D(Dims3 dims, Spacing3 spacing, std::vector<float> data)
    : dims_(dims), spacing_(spacing), data_(std::move(data)) {
  if (dims_.nx <= 0 || dims_.ny <= 0 || dims_.nz <= 0) {
    throw InvalidVolume("volume dims must be positive, got " + dims_str(dims_));
  }
  if (!(spacing_.sx > 0.0f && spacing_.sy > 0.0f && spacing_.sz > 0.0f)) {
    throw InvalidVolume("voxel spacing must be strictly positive");
  }
  if (data_.size() != dims_.voxels()) {
    throw InvalidVolume("payload has " + std::to_string(data_.size()) + " voxels, dims " +
                        dims_str(dims_) + " need " + std::to_string(dims_.voxels()));
  }
  if (!std::ranges::all_of(data_, [](float x) { return std::isfinite(x); })) {
    throw InvalidVolume("volume contains non-finite values");
  }
}

Volume3D Volume3D::zeros(Dims3 dims, Spacing3 spacing) {
  return Volume3D(dims, spacing, std::vector<float>(dims.voxels(), 0.0f));
}

Volume3D normalize_intensity(const Volume3D& v, NormalizeMode mode) {
  const auto src = v.data();
  std::vector<float> out(src.size());
  if (mode == NormalizeMode::MinMax01) {
    const auto [lo_it, hi_it] = std::ranges::minmax_element(src);
    const double lo = *lo_it;
    const double hi = *hi_it;
    if (!(hi > lo)) throw DegenerateIntensityRange("constant volume has no intensity range");
    const double range = hi - lo;
    // Division rather than a reciprocal multiply so both endpoints land exactly.
    for (std::size_t i = 0; i < src.size(); ++i) {
      out[i] = static_cast<float>((src[i] - lo) / range);
    }
  } else {
    double mean = 0.0;
    for (float x : src) mean += x;
    mean /= static_cast<double>(src.size());
    double var = 0.0;
    for (float x : src) var += (x - mean) * (x - mean);
    var /= static_cast<double>(src.size());
    if (!(var > 0.0)) throw DegenerateIntensityRange("constant volume has zero variance");
    const double inv_std = 1.0 / std::sqrt(var);
    for (std::size_t i = 0; i < src.size(); ++i) {
      out[i] = static_cast<float>((src[i] - mean) * inv_std);
    }
  }
  return Volume3D(v.dims(), v.spacing(), std::move(out));
}

Volume3D extract_patch(const Volume3D& v, const PatchSpec& spec) {
  if (!fits(spec, v.dims())) {
    throw PatchOutOfBounds("patch " + dims_str(spec.size) + " at (" +
                           std::to_string(spec.origin[0]) + "," + std::to_string(spec.origin[1]) +
                           "," + std::to_string(spec.origin[2]) + ") exceeds volume " +
                           dims_str(v.dims()));
  }
  std::vector<float> out(spec.size.voxels());
  const auto src = v.data();
  auto dst = out.begin();
  for (int k = 0; k < spec.size.nz; ++k) {
    for (int j = 0; j < spec.size.ny; ++j) {
      const auto row = src.begin() + static_cast<std::ptrdiff_t>(
                                         v.index(spec.origin[0], spec.origin[1] + j, spec.origin[2] + k));
      dst = std::copy(row, row + spec.size.nx, dst);
    }
  }
  return Volume3D(spec.size, v.spacing(), std::move(out));
}

PatchSpec random_patch_spec(Dims3 dims, Dims3 size, SeededRng& rng) {
  if (size.nx <= 0 || size.ny <= 0 || size.nz <= 0 || size.nx > dims.nx || size.ny > dims.ny ||
      size.nz > dims.nz) {
    throw PatchOutOfBounds("patch " + dims_str(size) + " does not fit in " + dims_str(dims));
  }
  PatchSpec spec{size, {0, 0, 0}};
  spec.origin[0] = static_cast<int>(rng.uniform_int(0, dims.nx - size.nx));
  spec.origin[1] = static_cast<int>(rng.uniform_int(0, dims.ny - size.ny));
  spec.origin[2] = static_cast<int>(rng.uniform_int(0, dims.nz - size.nz));
  return spec;
}

std::vector<std::byte> encode_volume(const Volume3D& v) {
  io::ByteWriter w;
  w.magic("VOL3");
  w.put<std::uint32_t>(kVolumeVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(v.dims().nx));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(v.dims().ny));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(v.dims().nz));
  w.put<float>(v.spacing().sx);
  w.put<float>(v.spacing().sy);
  w.put<float>(v.spacing().sz);
  w.put_span(v.data());
  return std::move(w.bytes());
}

Volume3D decode_volume(std::span<const std::byte> bytes) {
  io::ByteReader r(bytes);
  if (!r.magic("VOL3")) throw BadMagic("not a VVOL file (magic mismatch)");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kVolumeVersion) {
    throw UnsupportedVersion("unsupported VVOL version " + std::to_string(version));
  }
  const auto nx = r.get<std::uint32_t>("nx");
  const auto ny = r.get<std::uint32_t>("ny");
  const auto nz = r.get<std::uint32_t>("nz");
  Spacing3 spacing;
  spacing.sx = r.get<float>("sx");
  spacing.sy = r.get<float>("sy");
  spacing.sz = r.get<float>("sz");
  constexpr std::uint64_t kMaxAxis = 1u << 15;
  if (nx == 0 || ny == 0 || nz == 0 || nx > kMaxAxis || ny > kMaxAxis || nz > kMaxAxis) {
    throw DimMismatch("implausible VVOL dims");
  }
  const Dims3 dims{static_cast<int>(nx), static_cast<int>(ny), static_cast<int>(nz)};
  const std::size_t want = dims.voxels() * sizeof(float);
  if (r.remaining() < want) {
    throw TruncatedPayload("VVOL header declares " + std::to_string(dims.voxels()) +
                           " voxels, payload holds " + std::to_string(r.remaining() / sizeof(float)));
  }
  if (r.remaining() > want) {
    throw DimMismatch("VVOL payload longer than declared dims " + dims_str(dims));
  }
  std::vector<float> data(dims.voxels());
  r.get_into(std::span<float>(data), "payload");
  return Volume3D(dims, spacing, std::move(data));
}

void save_volume(const Volume3D& v, const std::filesystem::path& path) {
  io::write_file(path, encode_volume(v));
}

Volume3D load_volume(const std::filesystem::path& path) {
  return decode_volume(io::read_file(path));
}

}  // namespace voxdiff
