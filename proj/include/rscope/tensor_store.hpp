#pragma once

#include <cstddef>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace rscope {

enum class DType : std::uint8_t { f32 = 0, f64 = 1, u8 = 2, i64 = 3 };

std::size_t dtype_width(DType dtype);
const char* dtype_name(DType dtype);

template <typename T>
struct dtype_of;
template <>
struct dtype_of<float> {
  static constexpr DType value = DType::f32;
};
template <>
struct dtype_of<double> {
  static constexpr DType value = DType::f64;
};
template <>
struct dtype_of<std::uint8_t> {
  static constexpr DType value = DType::u8;
};
template <>
struct dtype_of<std::int64_t> {
  static constexpr DType value = DType::i64;
};

// One named, shaped array. Data is a flat row-major little-endian buffer.
struct TensorRecord {
  std::string name;
  DType dtype = DType::f64;
  std::vector<std::uint64_t> shape;
  std::vector<std::byte> data;

  template <typename T>
  static TensorRecord from(std::string name, std::vector<std::uint64_t> shape,
                           std::span<const T> values);

  std::uint64_t element_count() const;

  // Throws ContractError when the buffer does not match name/shape/dtype.
  void validate() const;

  // Typed copy of the buffer; T must match dtype exactly.
  template <typename T>
  std::vector<T> values() const;

  // Any numeric dtype widened to double.
  std::vector<double> as_f64() const;

  bool operator==(const TensorRecord&) const = default;
};

struct TensorArchive {
  static constexpr std::uint32_t kFormatVersion = 1;

  std::uint32_t version = kFormatVersion;
  std::vector<TensorRecord> records;
  std::map<std::string, std::string> metadata;

  // Appends after validating; names must stay unique.
  void add(TensorRecord record);

  const TensorRecord* find(std::string_view name) const;
  // Throws ContractError naming the missing record.
  const TensorRecord& at(std::string_view name) const;

  bool operator==(const TensorArchive&) const = default;
};

inline constexpr char kArchiveMagic[8] = {'R', 'S', 'C', 'O', 'P', 'E', '0', '1'};

// Serializes the archive; returns the number of bytes written.
// Throws IoError carrying the bytes-written count if the sink fails.
std::uint64_t write_archive(const TensorArchive& archive, std::ostream& sink);

// Inverse of write_archive. Throws FormatError (bad magic), CorruptionError
// (truncation or inconsistent lengths, naming the record) or VersionError
// (unknown version or dtype code).
TensorArchive read_archive(std::istream& source);
TensorArchive read_archive(std::span<const std::byte> bytes);

std::vector<std::byte> encode_archive(const TensorArchive& archive);

void save_archive(const TensorArchive& archive, const std::filesystem::path& path);
TensorArchive load_archive(const std::filesystem::path& path);

// ---------------------------------------------------------------------------

template <typename T>
TensorRecord TensorRecord::from(std::string name, std::vector<std::uint64_t> shape,
                                std::span<const T> values) {
  TensorRecord r;
  r.name = std::move(name);
  r.dtype = dtype_of<T>::value;
  r.shape = std::move(shape);
  r.data.resize(values.size_bytes());
  if (!values.empty()) std::memcpy(r.data.data(), values.data(), values.size_bytes());
  r.validate();
  return r;
}

}  // namespace rscope
