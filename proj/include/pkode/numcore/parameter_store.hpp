#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

namespace pkode::numcore {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Named collection of learnable arrays. Entries keep their insertion order so
/// that serialization and optimizer state line up deterministically.
class ParameterStore {
 public:
  struct Entry {
    std::string name;
    Matrix value;
  };

  void add(std::string name, Matrix value);

  bool contains(std::string_view name) const;
  const Matrix& get(std::string_view name) const;
  Matrix& get(std::string_view name);

  const std::vector<Entry>& entries() const noexcept { return entries_; }
  std::vector<Entry>& entries() noexcept { return entries_; }

  std::size_t size() const noexcept { return entries_.size(); }
  std::size_t total_count() const noexcept;

  friend bool operator==(const ParameterStore& a, const ParameterStore& b);

 private:
  std::size_t index_of(std::string_view name) const;

  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Checkpoint file layout (all integers and reals little-endian):
///
///   "PKODECKP"                       8-byte magic
///   u32 format version               currently 1
///   u64 header length, header bytes  free-form UTF-8 (JSON model config)
///   u64 entry count
///   per entry: u32 name length, name bytes, u32 ndim (=2),
///              u64 rows, u64 cols, f64 payload in row-major order
struct Checkpoint {
  std::string header;
  ParameterStore params;
};

inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::string_view bytes);

}  // namespace pkode::numcore
