#include "pkode/numcore/parameter_store.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "pkode/numcore/errors.hpp"

namespace pkode::numcore {

void ParameterStore::add(std::string name, Matrix value) {
  if (index_.contains(name)) throw ContractViolation("ParameterStore: duplicate entry '" + name + "'");
  index_.emplace(name, entries_.size());
  entries_.push_back(Entry{std::move(name), std::move(value)});
}

bool ParameterStore::contains(std::string_view name) const {
  return index_.contains(std::string(name));
}

std::size_t ParameterStore::index_of(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw ContractViolation("ParameterStore: no entry '" + std::string(name) + "'");
  return it->second;
}

const Matrix& ParameterStore::get(std::string_view name) const { return entries_[index_of(name)].value; }

Matrix& ParameterStore::get(std::string_view name) { return entries_[index_of(name)].value; }

std::size_t ParameterStore::total_count() const noexcept {
  std::size_t n = 0;
  for (const auto& e : entries_) n += static_cast<std::size_t>(e.value.size());
  return n;
}

bool operator==(const ParameterStore& a, const ParameterStore& b) {
  if (a.entries_.size() != b.entries_.size()) return false;
  for (std::size_t i = 0; i < a.entries_.size(); ++i) {
    const auto& x = a.entries_[i];
    const auto& y = b.entries_[i];
    if (x.name != y.name || x.value.rows() != y.value.rows() || x.value.cols() != y.value.cols()) {
      return false;
    }
    // Bitwise comparison: -0.0 vs 0.0 and NaN payloads count as different.
    if (std::memcmp(x.value.data(), y.value.data(), sizeof(double) * x.value.size()) != 0) return false;
  }
  return true;
}

namespace {

constexpr char kMagic[8] = {'P', 'K', 'O', 'D', 'E', 'C', 'K', 'P'};

template <class UInt>
void put_le(std::string& out, UInt v) {
  for (std::size_t i = 0; i < sizeof(UInt); ++i) {
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <class UInt>
  UInt get_le(const char* what) {
    need(sizeof(UInt), what);
    UInt v = 0;
    for (std::size_t i = 0; i < sizeof(UInt); ++i) {
      v |= static_cast<UInt>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(UInt);
    return v;
  }

  std::string_view take(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      throw ParseError(std::string("checkpoint truncated while reading ") + what);
    }
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const Checkpoint& ckpt) {
  std::string out(kMagic, sizeof(kMagic));
  put_le<std::uint32_t>(out, kCheckpointFormatVersion);
  put_le<std::uint64_t>(out, ckpt.header.size());
  out += ckpt.header;
  put_le<std::uint64_t>(out, ckpt.params.size());
  for (const auto& e : ckpt.params.entries()) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(e.name.size()));
    out += e.name;
    put_le<std::uint32_t>(out, 2);
    put_le<std::uint64_t>(out, static_cast<std::uint64_t>(e.value.rows()));
    put_le<std::uint64_t>(out, static_cast<std::uint64_t>(e.value.cols()));
    for (Eigen::Index r = 0; r < e.value.rows(); ++r) {
      for (Eigen::Index c = 0; c < e.value.cols(); ++c) {
        put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(e.value(r, c)));
      }
    }
  }
  return out;
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  Reader in(bytes);
  auto magic = in.take(sizeof(kMagic), "magic");
  if (std::memcmp(magic.data(), kMagic, sizeof(kMagic)) != 0) {
    throw ParseError("not a pkode checkpoint (bad magic)");
  }
  const auto version = in.get_le<std::uint32_t>("format version");
  if (version != kCheckpointFormatVersion) {
    throw ParseError("checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                     std::to_string(kCheckpointFormatVersion) + ")");
  }
  Checkpoint ckpt;
  const auto header_len = in.get_le<std::uint64_t>("header length");
  ckpt.header = std::string(in.take(header_len, "header"));
  const auto count = in.get_le<std::uint64_t>("entry count");
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = in.get_le<std::uint32_t>("entry name length");
    std::string name(in.take(name_len, "entry name"));
    const auto ndim = in.get_le<std::uint32_t>("entry rank");
    if (ndim != 2) throw ParseError("entry '" + name + "': unsupported rank " + std::to_string(ndim));
    const auto rows = in.get_le<std::uint64_t>("entry rows");
    const auto cols = in.get_le<std::uint64_t>("entry cols");
    Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) {
        m(r, c) = std::bit_cast<double>(in.get_le<std::uint64_t>("entry payload"));
      }
    }
    ckpt.params.add(std::move(name), std::move(m));
  }
  if (!in.at_end()) throw ParseError("checkpoint has trailing bytes");
  return ckpt;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  const std::string bytes = encode_checkpoint(ckpt);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing '" + path.string() + "'");
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace pkode::numcore
