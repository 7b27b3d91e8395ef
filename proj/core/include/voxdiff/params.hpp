#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "voxdiff/autodiff.hpp"

namespace voxdiff {

/// One named tensor as stored in a PRM1 file.
struct ParamRecord {
  std::string name;
  std::vector<std::uint32_t> dims;  // slowest-varying first
  std::vector<float> values;
};

// PRM1 format, little-endian:
//   "PRM1" | u32 count | count x (u16 name_len | name | u8 rank | u32 dims[rank] | f32 payload)
// Records are written sorted by name.
std::vector<std::byte> encode_prm(std::vector<ParamRecord> records);
std::vector<ParamRecord> decode_prm(std::span<const std::byte> bytes);
void write_prm(const std::filesystem::path& path, std::vector<ParamRecord> records);
std::vector<ParamRecord> read_prm(const std::filesystem::path& path);

/// Named trainable tensors, iterated in ascending name order.
template <std::floating_point Real>
class ParameterStore {
 public:
  struct Entry {
    std::vector<std::uint32_t> dims;
    ad::Var<Real> var;
  };

  /// Registers a leaf; throws ConfigError on a duplicate name.
  ad::Var<Real> add(const std::string& name, ad::Shape shape, std::vector<std::uint32_t> dims,
                    std::vector<Real> init);

  [[nodiscard]] const ad::Var<Real>& get(const std::string& name) const;
  [[nodiscard]] bool contains(const std::string& name) const { return entries_.contains(name); }
  [[nodiscard]] const std::map<std::string, Entry>& entries() const noexcept { return entries_; }
  [[nodiscard]] std::size_t size() const noexcept { return entries_.size(); }
  [[nodiscard]] std::size_t scalar_count() const noexcept;

  void zero_grad();

  [[nodiscard]] std::vector<ParamRecord> to_records() const;
  /// Copies values from records; names and dims must match exactly, else
  /// CheckpointMismatch.
  void assign_from(const std::vector<ParamRecord>& records);

  void save(const std::filesystem::path& path) const { write_prm(path, to_records()); }
  void load(const std::filesystem::path& path) { assign_from(read_prm(path)); }

 private:
  std::map<std::string, Entry> entries_;
};

}  // namespace voxdiff
