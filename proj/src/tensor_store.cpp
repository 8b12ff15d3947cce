#include "rscope/tensor_store.hpp"

#include <algorithm>
#include <bit>
#include <fstream>
#include <istream>
#include <iterator>
#include <limits>
#include <ostream>
#include <sstream>

#include "rscope/errors.hpp"

namespace rscope {

static_assert(std::endian::native == std::endian::little,
              "tensor-store buffers are written in host order and must be little-endian");

namespace {

constexpr std::uint64_t kMaxRank = 32;

bool checked_mul(std::uint64_t a, std::uint64_t b, std::uint64_t& out) {
  if (a != 0 && b > std::numeric_limits<std::uint64_t>::max() / a) return false;
  out = a * b;
  return true;
}

bool valid_dtype_code(std::uint8_t code) { return code <= static_cast<std::uint8_t>(DType::i64); }

class Writer {
 public:
  explicit Writer(std::ostream& sink) : sink_(sink) {}

  void bytes(const void* p, std::size_t n) {
    if (n == 0) return;
    sink_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    if (!sink_) throw IoError("archive sink write failed after " + std::to_string(count_) + " bytes", count_);
    count_ += n;
  }
  template <typename T>
  void scalar(T v) {
    bytes(&v, sizeof v);
  }
  void string(const std::string& s) {
    scalar(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  std::uint64_t count() const { return count_; }

 private:
  std::ostream& sink_;
  std::uint64_t count_ = 0;
};

class Reader {
 public:
  explicit Reader(std::span<const std::byte> bytes) : bytes_(bytes) {}

  std::size_t remaining() const { return bytes_.size() - pos_; }

  void take(void* out, std::size_t n, const std::string& context) {
    if (n > remaining()) {
      throw CorruptionError("archive truncated while reading " + context + " at offset " +
                                std::to_string(pos_),
                            context);
    }
    if (n) std::memcpy(out, bytes_.data() + pos_, n);
    pos_ += n;
  }
  template <typename T>
  T scalar(const std::string& context) {
    T v{};
    take(&v, sizeof v, context);
    return v;
  }
  std::string string(const std::string& context) {
    const auto len = scalar<std::uint32_t>(context);
    if (len > remaining()) {
      throw CorruptionError("string length " + std::to_string(len) + " exceeds remaining " +
                                std::to_string(remaining()) + " bytes in " + context,
                            context);
    }
    std::string s(len, '\0');
    take(s.data(), len, context);
    return s;
  }

 private:
  std::span<const std::byte> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::size_t dtype_width(DType dtype) {
  switch (dtype) {
    case DType::f32:
      return 4;
    case DType::f64:
      return 8;
    case DType::u8:
      return 1;
    case DType::i64:
      return 8;
  }
  throw VersionError("unknown dtype code " + std::to_string(static_cast<int>(dtype)));
}

const char* dtype_name(DType dtype) {
  switch (dtype) {
    case DType::f32:
      return "f32";
    case DType::f64:
      return "f64";
    case DType::u8:
      return "u8";
    case DType::i64:
      return "i64";
  }
  return "?";
}

std::uint64_t TensorRecord::element_count() const {
  std::uint64_t n = 1;
  for (auto e : shape) {
    if (!checked_mul(n, e, n)) throw ContractError("record '" + name + "': element count overflows");
  }
  return n;
}

void TensorRecord::validate() const {
  if (name.empty()) throw ContractError("record name must be non-empty");
  if (!valid_dtype_code(static_cast<std::uint8_t>(dtype))) {
    throw ContractError("record '" + name + "': invalid dtype");
  }
  std::uint64_t bytes = 0;
  if (!checked_mul(element_count(), dtype_width(dtype), bytes) || bytes != data.size()) {
    throw ContractError("record '" + name + "': buffer holds " + std::to_string(data.size()) +
                        " bytes, shape requires " + std::to_string(bytes));
  }
}

template <typename T>
std::vector<T> TensorRecord::values() const {
  if (dtype != dtype_of<T>::value) {
    throw ContractError("record '" + name + "' has dtype " + dtype_name(dtype) + ", requested " +
                        dtype_name(dtype_of<T>::value));
  }
  std::vector<T> out(data.size() / sizeof(T));
  if (!out.empty()) std::memcpy(out.data(), data.data(), data.size());
  return out;
}

template std::vector<float> TensorRecord::values<float>() const;
template std::vector<double> TensorRecord::values<double>() const;
template std::vector<std::uint8_t> TensorRecord::values<std::uint8_t>() const;
template std::vector<std::int64_t> TensorRecord::values<std::int64_t>() const;

std::vector<double> TensorRecord::as_f64() const {
  auto widen = [](const auto& v) { return std::vector<double>(v.begin(), v.end()); };
  switch (dtype) {
    case DType::f32:
      return widen(values<float>());
    case DType::f64:
      return values<double>();
    case DType::u8:
      return widen(values<std::uint8_t>());
    case DType::i64:
      return widen(values<std::int64_t>());
  }
  throw ContractError("record '" + name + "': invalid dtype");
}

void TensorArchive::add(TensorRecord record) {
  record.validate();
  if (find(record.name)) throw ContractError("duplicate record name '" + record.name + "'");
  records.push_back(std::move(record));
}

const TensorRecord* TensorArchive::find(std::string_view name) const {
  auto it = std::find_if(records.begin(), records.end(), [&](const auto& r) { return r.name == name; });
  return it == records.end() ? nullptr : &*it;
}

const TensorRecord& TensorArchive::at(std::string_view name) const {
  if (const auto* r = find(name)) return *r;
  throw ContractError("archive has no record '" + std::string(name) + "'");
}

std::uint64_t write_archive(const TensorArchive& archive, std::ostream& sink) {
  {
    std::vector<std::string_view> names;
    for (const auto& r : archive.records) {
      r.validate();
      names.push_back(r.name);
    }
    std::sort(names.begin(), names.end());
    if (std::adjacent_find(names.begin(), names.end()) != names.end()) {
      throw ContractError("archive record names are not unique");
    }
  }
  Writer w(sink);
  w.bytes(kArchiveMagic, sizeof kArchiveMagic);
  w.scalar<std::uint32_t>(archive.version);
  w.scalar<std::uint32_t>(static_cast<std::uint32_t>(archive.metadata.size()));
  for (const auto& [key, value] : archive.metadata) {
    w.string(key);
    w.string(value);
  }
  w.scalar<std::uint64_t>(archive.records.size());
  for (const auto& r : archive.records) {
    w.string(r.name);
    w.scalar<std::uint8_t>(static_cast<std::uint8_t>(r.dtype));
    w.scalar<std::uint32_t>(static_cast<std::uint32_t>(r.shape.size()));
    for (auto e : r.shape) w.scalar<std::uint64_t>(e);
    w.bytes(r.data.data(), r.data.size());
  }
  sink.flush();
  if (!sink) throw IoError("archive sink flush failed", w.count());
  return w.count();
}

TensorArchive read_archive(std::span<const std::byte> bytes) {
  Reader in(bytes);
  char magic[sizeof kArchiveMagic];
  if (bytes.size() < sizeof magic) throw FormatError("input too short for archive magic");
  in.take(magic, sizeof magic, "magic");
  if (!std::equal(std::begin(magic), std::end(magic), std::begin(kArchiveMagic))) {
    throw FormatError("bad magic bytes; not an .rscope archive");
  }
  TensorArchive archive;
  archive.version = in.scalar<std::uint32_t>("version");
  if (archive.version != TensorArchive::kFormatVersion) {
    throw VersionError("unsupported archive version " + std::to_string(archive.version));
  }
  const auto n_meta = in.scalar<std::uint32_t>("metadata count");
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    auto key = in.string("metadata key " + std::to_string(i));
    auto value = in.string("metadata value '" + key + "'");
    if (!archive.metadata.emplace(std::move(key), std::move(value)).second) {
      throw CorruptionError("duplicate metadata key", "metadata");
    }
  }
  const auto n_records = in.scalar<std::uint64_t>("record count");
  for (std::uint64_t i = 0; i < n_records; ++i) {
    const std::string slot = "record #" + std::to_string(i);
    TensorRecord r;
    r.name = in.string(slot + " name");
    const std::string label = r.name.empty() ? slot : "record '" + r.name + "'";
    if (r.name.empty()) throw CorruptionError(slot + " has an empty name", slot);
    const auto code = in.scalar<std::uint8_t>(label + " dtype");
    if (!valid_dtype_code(code)) {
      throw VersionError(label + " has unknown dtype code " + std::to_string(code));
    }
    r.dtype = static_cast<DType>(code);
    const auto rank = in.scalar<std::uint32_t>(label + " rank");
    if (rank > kMaxRank) throw CorruptionError(label + " has implausible rank " + std::to_string(rank), r.name);
    r.shape.resize(rank);
    std::uint64_t n_bytes = dtype_width(r.dtype);
    for (auto& e : r.shape) {
      e = in.scalar<std::uint64_t>(label + " extents");
      if (!checked_mul(n_bytes, e, n_bytes)) throw CorruptionError(label + " extents overflow", r.name);
    }
    if (n_bytes > in.remaining()) {
      throw CorruptionError(label + " truncated: needs " + std::to_string(n_bytes) + " data bytes, " +
                                std::to_string(in.remaining()) + " remain",
                            r.name);
    }
    r.data.resize(n_bytes);
    in.take(r.data.data(), n_bytes, label + " data");
    if (archive.find(r.name)) throw CorruptionError("duplicate " + label, r.name);
    archive.records.push_back(std::move(r));
  }
  if (in.remaining() != 0) {
    throw CorruptionError(std::to_string(in.remaining()) + " trailing bytes after last record", "trailer");
  }
  return archive;
}

TensorArchive read_archive(std::istream& source) {
  std::vector<char> raw((std::istreambuf_iterator<char>(source)), std::istreambuf_iterator<char>());
  if (source.bad()) throw IoError("archive source read failed");
  return read_archive(std::as_bytes(std::span(raw)));
}

std::vector<std::byte> encode_archive(const TensorArchive& archive) {
  std::ostringstream os(std::ios::binary);
  write_archive(archive, os);
  const std::string s = std::move(os).str();
  std::vector<std::byte> out(s.size());
  std::memcpy(out.data(), s.data(), s.size());
  return out;
}

void save_archive(const TensorArchive& archive, const std::filesystem::path& path) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open '" + tmp.string() + "' for writing");
    write_archive(archive, os);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename '" + tmp.string() + "' to '" + path.string() + "': " + ec.message());
}

TensorArchive load_archive(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path.string() + "'");
  return read_archive(is);
}

}  // namespace rscope
