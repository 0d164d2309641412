#include "rpr/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace rpr {
namespace {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

constexpr char kDbMagic[] = "RPRDB1";
constexpr char kCkMagic[] = "RPRCK1";
constexpr std::size_t kMagicLen = 6;

class ByteWriter {
 public:
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }

  template <typename U>
  void le(U v) {
    static_assert(std::is_trivially_copyable_v<U>);
    std::uint8_t buf[sizeof(U)];
    std::memcpy(buf, &v, sizeof(U));
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(U));
    raw(buf, sizeof(U));
  }

  void i64(std::int64_t v) { le(v); }
  void u64(std::uint64_t v) { le(v); }
  void f32(float v) { le(v); }
  void f64(double v) { le(v); }

  void str(const std::string& s) {
    i64(static_cast<std::int64_t>(s.size()));
    raw(s.data(), s.size());
  }

  void blob(const TensorBlob& b) {
    str(b.name);
    i64(static_cast<std::int64_t>(b.shape.size()));
    for (auto d : b.shape) i64(d);
    i64(static_cast<std::int64_t>(b.values.size()));
    for (float v : b.values) f32(v);
  }

  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class ByteReader {
 public:
  explicit ByteReader(const std::vector<std::uint8_t>& in) : in_(in) {}

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return in_.size() - pos_; }

  void need(std::size_t n, const char* what) const {
    if (remaining() < n) throw FormatError(std::string("truncated file while reading ") + what, pos_);
  }

  template <typename U>
  U le(const char* what) {
    need(sizeof(U), what);
    std::uint8_t buf[sizeof(U)];
    std::memcpy(buf, in_.data() + pos_, sizeof(U));
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(U));
    pos_ += sizeof(U);
    U v;
    std::memcpy(&v, buf, sizeof(U));
    return v;
  }

  std::int64_t i64(const char* what) { return le<std::int64_t>(what); }
  std::uint64_t u64(const char* what) { return le<std::uint64_t>(what); }
  float f32(const char* what) { return le<float>(what); }
  double f64(const char* what) { return le<double>(what); }

  std::int64_t count(const char* what, std::size_t elem_size) {
    const std::size_t at = pos_;
    const std::int64_t n = i64(what);
    if (n < 0 || (elem_size > 0 && static_cast<std::uint64_t>(n) > remaining() / elem_size)) {
      throw FormatError(std::string("implausible ") + what + " " + std::to_string(n), at);
    }
    return n;
  }

  void magic(const char* expected) {
    need(kMagicLen, "magic");
    if (std::memcmp(in_.data() + pos_, expected, kMagicLen) != 0) {
      throw FormatError(std::string("bad magic, expected ") + expected, pos_);
    }
    pos_ += kMagicLen;
  }

  std::string str(const char* what) {
    const auto n = static_cast<std::size_t>(count(what, 1));
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  TensorBlob blob() {
    TensorBlob b;
    b.name = str("tensor name");
    const auto rank = count("tensor rank", 8);
    std::int64_t expect = 1;
    for (std::int64_t i = 0; i < rank; ++i) {
      const std::size_t at = pos_;
      const auto d = i64("tensor dim");
      if (d < 1) throw FormatError("non-positive tensor dimension", at);
      b.shape.push_back(d);
      expect *= d;
    }
    const std::size_t at = pos_;
    const auto n = count("tensor size", 4);
    if (n != expect) throw FormatError("tensor size does not match its shape", at);
    b.values.resize(static_cast<std::size_t>(n));
    for (auto& v : b.values) v = f32("tensor value");
    return b;
  }

  void expect_end() const {
    if (remaining() != 0) throw FormatError("trailing bytes after payload", pos_);
  }

 private:
  const std::vector<std::uint8_t>& in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidArgument("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InvalidArgument("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw InvalidArgument("write failed for " + path.string());
}

PointCloud<double> read_bin_cloud(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  if (bytes.empty() || bytes.size() % 24 != 0) {
    throw FormatError("cloud file length " + std::to_string(bytes.size()) + " is not a positive multiple of 24",
                      bytes.size() - bytes.size() % 24);
  }
  ByteReader r(bytes);
  const auto n = static_cast<Index>(bytes.size() / 24);
  PointCloud<double> cloud(n, 3);
  for (Index i = 0; i < cloud.size(); ++i) {
    const std::size_t at = r.offset();
    const double v = r.f64("coordinate");
    if (!std::isfinite(v)) throw FormatError("non-finite coordinate", at);
    cloud.data()[i] = v;
  }
  return cloud;
}

void write_bin_cloud(const std::filesystem::path& path, const PointCloud<double>& cloud) {
  ByteWriter w;
  for (Index i = 0; i < cloud.size(); ++i) w.f64(cloud.data()[i]);
  write_file_bytes(path, w.take());
}

std::filesystem::path DatasetManifest::resolve(const ManifestEntry& e) const {
  const std::filesystem::path p(e.path);
  return p.is_absolute() ? p : base_dir / p;
}

DatasetManifest read_manifest(const std::filesystem::path& path, bool check_paths) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open manifest " + path.string());
  DatasetManifest m;
  m.base_dir = path.parent_path();
  std::string line;
  std::size_t offset = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    const std::size_t at = offset;
    offset += line.size() + 1;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto eq = line.find("split=");
      if (eq != std::string::npos) m.split = line.substr(eq + 6);
      continue;
    }
    if (!header_seen) {
      header_seen = true;
      if (line.rfind("file", 0) == 0 || line.rfind("timestamp", 0) == 0) continue;
    }
    std::stringstream ss(line);
    std::string file, north, east;
    if (!std::getline(ss, file, ',') || !std::getline(ss, north, ',') || !std::getline(ss, east, ',')) {
      throw FormatError("manifest row needs file,northing,easting", at);
    }
    ManifestEntry e;
    e.path = file;
    try {
      std::size_t used = 0;
      e.northing = std::stod(north, &used);
      e.easting = std::stod(east);
    } catch (const std::exception&) {
      throw FormatError("manifest coordinates are not numbers", at);
    }
    if (!std::isfinite(e.northing) || !std::isfinite(e.easting)) throw FormatError("non-finite manifest coordinate", at);
    if (check_paths && !std::filesystem::exists(m.resolve(e))) {
      throw FormatError("manifest entry does not exist: " + m.resolve(e).string(), at);
    }
    m.entries.push_back(std::move(e));
  }
  return m;
}

void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw InvalidArgument("cannot write manifest " + path.string());
  if (!manifest.split.empty()) out << "# split=" << manifest.split << "\n";
  out << "file,northing,easting\n";
  out.precision(17);
  for (const auto& e : manifest.entries) out << e.path << ',' << e.northing << ',' << e.easting << "\n";
}

std::vector<std::uint8_t> encode_database(const PlaceDatabase& db) {
  ByteWriter w;
  w.raw(kDbMagic, kMagicLen);
  w.i64(db.size());
  w.i64(db.size() > 0 ? db.dim() : 0);
  for (Index i = 0; i < db.descriptors.size(); ++i) w.f32(db.descriptors.data()[i]);
  for (Index i = 0; i < db.positions.size(); ++i) w.f64(db.positions.data()[i]);
  return w.take();
}

PlaceDatabase decode_database(const std::vector<std::uint8_t>& bytes) {
  ByteReader r(bytes);
  r.magic(kDbMagic);
  const auto m = r.count("row count", 0);
  const std::size_t at = r.offset();
  const auto l = r.count("descriptor length", 0);
  const auto need = static_cast<unsigned __int128>(m) * static_cast<unsigned __int128>(l) * 4 +
                    static_cast<unsigned __int128>(m) * 16;
  if (need != r.remaining()) throw FormatError("database payload size does not match header", at);
  PlaceDatabase db;
  db.descriptors.resize(m, l);
  db.positions.resize(m, 2);
  for (Index i = 0; i < db.descriptors.size(); ++i) db.descriptors.data()[i] = r.f32("descriptor");
  for (Index i = 0; i < db.positions.size(); ++i) db.positions.data()[i] = r.f64("position");
  r.expect_end();
  return db;
}

void write_database(const std::filesystem::path& path, const PlaceDatabase& db) {
  write_file_bytes(path, encode_database(db));
}

PlaceDatabase read_database(const std::filesystem::path& path) { return decode_database(read_file_bytes(path)); }

void write_rif_dump(const std::filesystem::path& path, const RifTensor<double>& rifs) {
  ByteWriter w;
  w.i64(rifs.num_seeds);
  w.i64(rifs.k);
  w.i64(kRifChannels);
  for (Index i = 0; i < rifs.values.size(); ++i) w.f64(rifs.values.data()[i]);
  write_file_bytes(path, w.take());
}

RifTensor<double> read_rif_dump(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  ByteReader r(bytes);
  RifTensor<double> t;
  t.num_seeds = r.count("seed count", 0);
  t.k = r.count("group size", 0);
  const std::size_t at = r.offset();
  if (r.i64("channel count") != kRifChannels) throw FormatError("RIF dump must have 11 channels", at);
  if (static_cast<unsigned __int128>(t.num_seeds) * t.k * kRifChannels * 8 != r.remaining()) {
    throw FormatError("RIF dump payload size does not match header", r.offset());
  }
  t.values.resize(t.num_seeds * t.k, kRifChannels);
  for (Index i = 0; i < t.values.size(); ++i) t.values.data()[i] = r.f64("RIF value");
  return t;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck) {
  ByteWriter w;
  w.raw(kCkMagic, kMagicLen);
  w.u64(ck.version);
  w.str(ck.config_text);
  w.i64(ck.epoch);
  w.i64(ck.batch_size);
  w.i64(static_cast<std::int64_t>(ck.parameters.size()));
  for (const auto& b : ck.parameters) w.blob(b);
  w.i64(ck.optimizer_step);
  w.i64(static_cast<std::int64_t>(ck.optimizer_m.size()));
  for (const auto& b : ck.optimizer_m) w.blob(b);
  for (const auto& b : ck.optimizer_v) w.blob(b);
  return w.take();
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  ByteReader r(bytes);
  r.magic(kCkMagic);
  Checkpoint ck;
  const std::size_t vat = r.offset();
  ck.version = r.u64("version");
  if (ck.version != Checkpoint::kVersion) throw FormatError("unsupported checkpoint version " + std::to_string(ck.version), vat);
  ck.config_text = r.str("config text");
  ck.epoch = r.i64("epoch");
  ck.batch_size = r.i64("batch size");
  const auto np = r.count("parameter count", 1);
  for (std::int64_t i = 0; i < np; ++i) ck.parameters.push_back(r.blob());
  ck.optimizer_step = r.i64("optimizer step");
  const auto nm = r.count("moment count", 1);
  for (std::int64_t i = 0; i < nm; ++i) ck.optimizer_m.push_back(r.blob());
  for (std::int64_t i = 0; i < nm; ++i) ck.optimizer_v.push_back(r.blob());
  r.expect_end();
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  write_file_bytes(path, encode_checkpoint(ck));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file_bytes(path)); }

}  // namespace rpr
