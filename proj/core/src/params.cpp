#include "voxdiff/params.hpp"

#include <algorithm>
#include <numeric>

#include "voxdiff/binary_io.hpp"
#include "voxdiff/error.hpp"

namespace voxdiff {

namespace {

std::size_t product(const std::vector<std::uint32_t>& dims) {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1},
                         [](std::size_t a, std::uint32_t d) { return a * d; });
}

std::string dims_str(const std::vector<std::uint32_t>& dims) {
  std::string s = "[";
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(dims[i]);
  }
  return s + "]";
}

}  // namespace

std::vector<std::byte> encode_prm(std::vector<ParamRecord> records) {
  std::ranges::sort(records, {}, &ParamRecord::name);
  io::ByteWriter w;
  w.magic("PRM1");
  w.put<std::uint32_t>(static_cast<std::uint32_t>(records.size()));
  for (const auto& rec : records) {
    if (rec.name.size() > 0xFFFF) throw FormatError("parameter name too long: " + rec.name);
    if (rec.dims.size() > 0xFF) throw FormatError("parameter rank too large: " + rec.name);
    if (product(rec.dims) != rec.values.size()) {
      throw ShapeError("parameter " + rec.name + " dims " + dims_str(rec.dims) +
                       " disagree with payload length");
    }
    w.put<std::uint16_t>(static_cast<std::uint16_t>(rec.name.size()));
    w.magic(rec.name);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(rec.dims.size()));
    for (auto d : rec.dims) w.put<std::uint32_t>(d);
    w.put_span(std::span<const float>(rec.values));
  }
  return std::move(w.bytes());
}

std::vector<ParamRecord> decode_prm(std::span<const std::byte> bytes) {
  io::ByteReader r(bytes);
  if (!r.magic("PRM1")) throw BadMagic("not a PRM1 parameter file (magic mismatch)");
  const auto count = r.get<std::uint32_t>("record count");
  std::vector<ParamRecord> records;
  for (std::uint32_t i = 0; i < count; ++i) {
    ParamRecord rec;
    const auto name_len = r.get<std::uint16_t>("name length");
    rec.name.resize(name_len);
    r.get_into(std::span<char>(rec.name), "name");
    const auto rank = r.get<std::uint8_t>("rank");
    rec.dims.resize(rank);
    for (auto& d : rec.dims) d = r.get<std::uint32_t>("dims");
    const std::size_t n = product(rec.dims);
    if (n * sizeof(float) > r.remaining()) {
      throw TruncatedPayload("parameter " + rec.name + " payload truncated");
    }
    rec.values.resize(n);
    r.get_into(std::span<float>(rec.values), "payload");
    if (!records.empty() && !(records.back().name < rec.name)) {
      throw FormatError("PRM1 records not in strictly ascending name order at " + rec.name);
    }
    records.push_back(std::move(rec));
  }
  if (r.remaining() != 0) throw DimMismatch("trailing bytes after last PRM1 record");
  return records;
}

void write_prm(const std::filesystem::path& path, std::vector<ParamRecord> records) {
  io::write_file(path, encode_prm(std::move(records)));
}

std::vector<ParamRecord> read_prm(const std::filesystem::path& path) {
  return decode_prm(io::read_file(path));
}

template <std::floating_point Real>
ad::Var<Real> ParameterStore<Real>::add(const std::string& name, ad::Shape shape,
                                        std::vector<std::uint32_t> dims, std::vector<Real> init) {
  if (entries_.contains(name)) throw ConfigError("duplicate parameter name " + name);
  if (product(dims) != shape.numel()) {
    throw ShapeError("parameter " + name + " dims " + dims_str(dims) + " vs shape " + shape.str());
  }
  auto var = ad::leaf<Real>(shape, std::move(init));
  entries_.emplace(name, Entry{std::move(dims), var});
  return var;
}

template <std::floating_point Real>
const ad::Var<Real>& ParameterStore<Real>::get(const std::string& name) const {
  const auto it = entries_.find(name);
  if (it == entries_.end()) throw ConfigError("unknown parameter " + name);
  return it->second.var;
}

template <std::floating_point Real>
std::size_t ParameterStore<Real>::scalar_count() const noexcept {
  std::size_t n = 0;
  for (const auto& [name, e] : entries_) n += e.var->numel();
  return n;
}

template <std::floating_point Real>
void ParameterStore<Real>::zero_grad() {
  for (auto& [name, e] : entries_) e.var->zero_grad();
}

template <std::floating_point Real>
std::vector<ParamRecord> ParameterStore<Real>::to_records() const {
  std::vector<ParamRecord> out;
  out.reserve(entries_.size());
  for (const auto& [name, e] : entries_) {
    out.push_back({name, e.dims, std::vector<float>(e.var->value.begin(), e.var->value.end())});
  }
  return out;
}

template <std::floating_point Real>
void ParameterStore<Real>::assign_from(const std::vector<ParamRecord>& records) {
  if (records.size() != entries_.size()) {
    throw CheckpointMismatch("checkpoint holds " + std::to_string(records.size()) +
                             " parameters, model has " + std::to_string(entries_.size()));
  }
  for (const auto& rec : records) {
    const auto it = entries_.find(rec.name);
    if (it == entries_.end()) throw CheckpointMismatch("unexpected parameter " + rec.name);
    if (it->second.dims != rec.dims) {
      throw CheckpointMismatch("parameter " + rec.name + " has dims " + dims_str(rec.dims) +
                               ", model expects " + dims_str(it->second.dims));
    }
  }
  for (const auto& rec : records) {
    auto& value = entries_.at(rec.name).var->value;
    std::ranges::transform(rec.values, value.begin(), [](float v) { return static_cast<Real>(v); });
  }
}

template class ParameterStore<float>;
template class ParameterStore<double>;

}  // namespace voxdiff
