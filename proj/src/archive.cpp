// SPDX-License-Identifier: Apache-2.0
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "tfn/parameters.hpp"

namespace tfn {

namespace {

constexpr std::size_t kMagicLen = sizeof(kArchiveMagic) - 1;

template <class U>
void put_le(std::ostream& os, U value) {
  char buf[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<char>((value >> (8 * i)) & 0xFF);
  os.write(buf, sizeof(U));
}

template <class U>
U get_le(std::istream& is, const char* what) {
  unsigned char buf[sizeof(U)];
  if (!is.read(reinterpret_cast<char*>(buf), sizeof(U))) {
    throw Error(std::string("archive truncated while reading ") + what);
  }
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(buf[i]) << (8 * i);
  return value;
}

}  // namespace

void write_archive(std::ostream& os, const Archive& archive) {
  os.write(kArchiveMagic, kMagicLen);
  put_le<std::uint64_t>(os, archive.size());
  for (const auto& [path, entry] : archive) {
    if (shape_numel(entry.shape) != entry.values.size()) {
      throw ShapeError("archive entry " + path + " has shape " + shape_str(entry.shape) +
                       " but " + std::to_string(entry.values.size()) + " values");
    }
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(path.size()));
    os.write(path.data(), static_cast<std::streamsize>(path.size()));
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(entry.shape.size()));
    for (auto d : entry.shape) put_le<std::uint64_t>(os, d);
    for (double v : entry.values) put_le<std::uint64_t>(os, std::bit_cast<std::uint64_t>(v));
  }
  if (!os) throw Error("archive write failed");
}

Archive read_archive(std::istream& is) {
  char magic[kMagicLen];
  if (!is.read(magic, kMagicLen) || std::memcmp(magic, kArchiveMagic, kMagicLen) != 0) {
    throw Error("not a TFNV1 archive (bad header)");
  }
  const auto count = get_le<std::uint64_t>(is, "entry count");
  Archive archive;
  for (std::uint64_t e = 0; e < count; ++e) {
    const auto len = get_le<std::uint32_t>(is, "path length");
    std::string path(len, '\0');
    if (!is.read(path.data(), len)) throw Error("archive truncated in path");
    ArchiveEntry entry;
    const auto rank = get_le<std::uint32_t>(is, "rank");
    for (std::uint32_t r = 0; r < rank; ++r) {
      entry.shape.push_back(static_cast<std::size_t>(get_le<std::uint64_t>(is, "extent")));
    }
    const std::size_t n = shape_numel(entry.shape);
    entry.values.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      entry.values[i] = std::bit_cast<double>(get_le<std::uint64_t>(is, "values"));
    }
    if (!archive.emplace(path, std::move(entry)).second) {
      throw Error("archive has duplicate path " + path);
    }
  }
  return archive;
}

void save_archive(const std::string& path, const Archive& archive) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot open " + path + " for writing");
  write_archive(os, archive);
}

Archive load_archive(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open checkpoint " + path);
  return read_archive(is);
}

Tensor& ParameterStore::create(const std::string& path, Shape shape, Init init,
                               std::mt19937_64& rng) {
  if (params_.count(path)) throw Error("parameter " + path + " registered twice");
  const std::size_t n = shape_numel(shape);
  std::vector<double> values(n, 0.0);
  if (init == Init::xavier_uniform) {
    const double fan_out = static_cast<double>(shape.back());
    const double fan_in = shape.size() >= 2 ? static_cast<double>(shape[shape.size() - 2]) : fan_out;
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& v : values) v = dist(rng);
  }
  auto [it, ok] = params_.emplace(path, Tensor(std::move(shape), std::move(values), true));
  return it->second;
}

Tensor& ParameterStore::get(const std::string& path) {
  auto it = params_.find(path);
  if (it == params_.end()) throw Error("unknown parameter " + path);
  return it->second;
}

const Tensor& ParameterStore::get(const std::string& path) const {
  auto it = params_.find(path);
  if (it == params_.end()) throw Error("unknown parameter " + path);
  return it->second;
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : params_) n += t.numel();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& [_, t] : params_) t.zero_grad();
}

Archive ParameterStore::to_archive() const {
  Archive a;
  for (const auto& [path, t] : params_) {
    a.emplace(path, ArchiveEntry{t.shape(), std::vector<double>(t.values().begin(), t.values().end())});
  }
  return a;
}

void ParameterStore::load(const Archive& archive) {
  if (archive.size() != params_.size()) {
    throw Error("checkpoint has " + std::to_string(archive.size()) + " parameters, model expects " +
                std::to_string(params_.size()));
  }
  for (auto& [path, t] : params_) {
    auto it = archive.find(path);
    if (it == archive.end()) throw Error("checkpoint is missing parameter " + path);
    if (it->second.shape != t.shape()) {
      throw ShapeError("checkpoint parameter " + path + " has shape " +
                       shape_str(it->second.shape) + ", model expects " + shape_str(t.shape()));
    }
    std::copy(it->second.values.begin(), it->second.values.end(), t.mutable_values().begin());
  }
}

}  // namespace tfn
