#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "voxdiff/rng.hpp"

namespace voxdiff {

struct Dims3 {
  int nx = 0;
  int ny = 0;
  int nz = 0;

  [[nodiscard]] std::size_t voxels() const noexcept {
    return static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny) *
           static_cast<std::size_t>(nz);
  }
  friend bool operator==(const Dims3&, const Dims3&) = default;
};

struct Spacing3 {
  float sx = 1.0f;
  float sy = 1.0f;
  float sz = 1.0f;
  friend bool operator==(const Spacing3&, const Spacing3&) = default;
};

/// Dense scalar volume, x-fastest: index = (k * ny + j) * nx + i.
///
/// Immutable after construction. The constructor rejects wrong payload
/// lengths, non-positive dims or spacing, and non-finite voxels.
class Volume3D {
 public:
  Volume3D(Dims3 dims, Spacing3 spacing, std::vector<float> data);

  /// Zero-filled volume.
  static Volume3D zeros(Dims3 dims, Spacing3 spacing = {});

  [[nodiscard]] const Dims3& dims() const noexcept { return dims_; }
  [[nodiscard]] const Spacing3& spacing() const noexcept { return spacing_; }
  [[nodiscard]] std::span<const float> data() const noexcept { return data_; }
  [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }

  [[nodiscard]] std::size_t index(int i, int j, int k) const noexcept {
    return (static_cast<std::size_t>(k) * dims_.ny + j) * dims_.nx + i;
  }
  [[nodiscard]] float at(int i, int j, int k) const noexcept { return data_[index(i, j, k)]; }

 private:
  Dims3 dims_;
  Spacing3 spacing_;
  std::vector<float> data_;
};

struct PatchSpec {
  Dims3 size;
  std::array<int, 3> origin{0, 0, 0};
  friend bool operator==(const PatchSpec&, const PatchSpec&) = default;
};

enum class NormalizeMode { MinMax01, ZScore };

Volume3D normalize_intensity(const Volume3D& v, NormalizeMode mode);

Volume3D extract_patch(const Volume3D& v, const PatchSpec& spec);

/// Origin drawn uniformly over every position where the patch fits.
PatchSpec random_patch_spec(Dims3 dims, Dims3 size, SeededRng& rng);

// VVOL format, little-endian:
//   "VOL3" | u32 version=1 | u32 nx, ny, nz | f32 sx, sy, sz | f32[nx*ny*nz]
void save_volume(const Volume3D& v, const std::filesystem::path& path);
Volume3D load_volume(const std::filesystem::path& path);

/// In-memory encode/decode of the same format.
std::vector<std::byte> encode_volume(const Volume3D& v);
Volume3D decode_volume(std::span<const std::byte> bytes);

}  // namespace voxdiff
