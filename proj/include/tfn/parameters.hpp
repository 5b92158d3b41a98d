// SPDX-License-Identifier: Apache-2.0
/**
 * @file   parameters.hpp
 * @brief  Named trainable parameters and the TFNV1 checkpoint archive.
 *
 * Archive layout (all integers and reals little-endian):
 *   "TFNV1"                     5 bytes
 *   u64 entry count
 *   per entry, in ascending path order:
 *     u32 path length, path bytes
 *     u32 rank, u64 extent per dimension
 *     f64 values, row-major
 */
#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "tfn/tensor.hpp"

namespace tfn {

struct ArchiveEntry {
  Shape shape;
  std::vector<double> values;
  bool operator==(const ArchiveEntry&) const = default;
};

using Archive = std::map<std::string, ArchiveEntry>;

inline constexpr char kArchiveMagic[] = "TFNV1";

void write_archive(std::ostream& os, const Archive& archive);
Archive read_archive(std::istream& is);
void save_archive(const std::string& path, const Archive& archive);
Archive load_archive(const std::string& path);

enum class Init { zeros, xavier_uniform };

class ParameterStore {
 public:
  /// Registers a parameter; xavier_uniform draws from +-sqrt(6 / (fan_in + fan_out))
  /// with fan_in/fan_out taken from the last two extents (or the single extent).
  Tensor& create(const std::string& path, Shape shape, Init init, std::mt19937_64& rng);
  Tensor& get(const std::string& path);
  const Tensor& get(const std::string& path) const;
  bool contains(const std::string& path) const { return params_.count(path) != 0; }

  std::map<std::string, Tensor>& all() { return params_; }
  const std::map<std::string, Tensor>& all() const { return params_; }
  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;

  void zero_grad();

  Archive to_archive() const;
  /// Copies values in; the archive must contain exactly the registered
  /// paths with matching shapes.
  void load(const Archive& archive);

 private:
  std::map<std::string, Tensor> params_;
};

}  // namespace tfn
