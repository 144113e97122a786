#include "fedgimp/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "fedgimp/error.hpp"

namespace fedgimp::io {

static_assert(std::endian::native == std::endian::little, "formats assume a little-endian host");

namespace fs = std::filesystem;

std::string read_file(const fs::path& path) {
  if (!fs::exists(path)) throw Error(ErrorCode::kNotFound, path.string());
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& bytes) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path.string());
  out.write(bytes.data(), std::streamsize(bytes.size()));
  if (!out) throw Error(ErrorCode::kIoError, "short write to " + path.string());
}

nlohmann::json read_json(const fs::path& path) {
  try {
    return nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::kConfigError, path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const nlohmann::json& value) { write_file(path, value.dump(2) + "\n"); }

namespace {

fs::path with_suffix(const fs::path& stem, const char* suffix) {
  fs::path p = stem;
  p += suffix;
  return p;
}

template <typename T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T get(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw Error(ErrorCode::kIoError, "truncated data");
  T value;
  std::memcpy(&value, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return value;
}

}  // namespace

void write_ri_planes(const fs::path& stem, const std::vector<int>& shape,
                     const std::vector<imaging::cplx>& values) {
  if (shape_size(shape) != values.size()) throw Error(ErrorCode::kShapeError, "ri-planes shape");
  std::string bytes;
  bytes.reserve(values.size() * 16);
  for (const auto& v : values) put(bytes, v.real());
  for (const auto& v : values) put(bytes, v.imag());
  write_file(with_suffix(stem, ".bin"), bytes);
  write_json(with_suffix(stem, ".json"),
             {{"shape", shape}, {"dtype", "float64"}, {"layout", "ri-planes"}});
}

std::vector<imaging::cplx> read_ri_planes(const fs::path& stem, std::vector<int>* shape_out) {
  const auto meta = read_json(with_suffix(stem, ".json"));
  if (meta.value("layout", "") != "ri-planes" || meta.value("dtype", "") != "float64") {
    throw Error(ErrorCode::kIoError, stem.string() + ": unsupported array layout");
  }
  const auto shape = meta.at("shape").get<std::vector<int>>();
  const std::string bytes = read_file(with_suffix(stem, ".bin"));
  const std::size_t n = shape_size(shape);
  if (bytes.size() != n * 16) throw Error(ErrorCode::kIoError, stem.string() + ": size mismatch");
  std::vector<imaging::cplx> values(n);
  std::size_t pos = 0;
  for (std::size_t i = 0; i < n; ++i) values[i].real(get<double>(bytes, pos));
  for (std::size_t i = 0; i < n; ++i) values[i].imag(get<double>(bytes, pos));
  if (shape_out) *shape_out = shape;
  return values;
}

void write_image(const fs::path& stem, const imaging::ComplexImage& image) {
  write_ri_planes(stem, {image.height, image.width}, image.pixels);
}

imaging::ComplexImage read_image(const fs::path& stem) {
  std::vector<int> shape;
  auto values = read_ri_planes(stem, &shape);
  if (shape.size() != 2) throw Error(ErrorCode::kShapeError, stem.string() + ": expected a 2D image");
  imaging::ComplexImage img(shape[0], shape[1]);
  img.pixels = std::move(values);
  return img;
}

void write_stack(const fs::path& stem, const imaging::ComplexStack& stack) {
  write_ri_planes(stem, {stack.count, stack.height, stack.width}, stack.values);
}

imaging::ComplexStack read_stack(const fs::path& stem) {
  std::vector<int> shape;
  auto values = read_ri_planes(stem, &shape);
  if (shape.size() != 3) throw Error(ErrorCode::kShapeError, stem.string() + ": expected a 3D stack");
  imaging::ComplexStack s(shape[0], shape[1], shape[2]);
  s.values = std::move(values);
  return s;
}

std::string encode_mask(const imaging::SamplingMask& mask) {
  std::string out = "FGMK";
  put<std::uint32_t>(out, 1);
  put<std::uint32_t>(out, std::uint32_t(mask.height));
  put<std::uint32_t>(out, std::uint32_t(mask.width));
  put<double>(out, mask.rate);
  put<std::uint8_t>(out, static_cast<std::uint8_t>(mask.density));
  out.append(3, '\0');
  put<std::uint32_t>(out, std::uint32_t(mask.calibration_lines));
  put<std::uint64_t>(out, mask.seed);
  std::string bits((mask.pattern.size() + 7) / 8, '\0');
  for (std::size_t i = 0; i < mask.pattern.size(); ++i) {
    if (mask.pattern[i]) bits[i / 8] = char(std::uint8_t(bits[i / 8]) | (1u << (i % 8)));
  }
  return out + bits;
}

imaging::SamplingMask decode_mask(const std::string& bytes) {
  if (bytes.size() < 4 || bytes.compare(0, 4, "FGMK") != 0) throw Error(ErrorCode::kIoError, "not a mask file");
  std::size_t pos = 4;
  if (get<std::uint32_t>(bytes, pos) != 1) throw Error(ErrorCode::kIoError, "unsupported mask version");
  imaging::SamplingMask m;
  m.height = int(get<std::uint32_t>(bytes, pos));
  m.width = int(get<std::uint32_t>(bytes, pos));
  m.rate = get<double>(bytes, pos);
  const auto density = get<std::uint8_t>(bytes, pos);
  if (density > 1) throw Error(ErrorCode::kIoError, "bad density code");
  m.density = static_cast<imaging::Density>(density);
  pos += 3;
  m.calibration_lines = int(get<std::uint32_t>(bytes, pos));
  m.seed = get<std::uint64_t>(bytes, pos);
  const std::size_t n = std::size_t(m.height) * m.width;
  if (bytes.size() != pos + (n + 7) / 8) throw Error(ErrorCode::kIoError, "mask payload size");
  m.pattern.resize(n);
  for (std::size_t i = 0; i < n; ++i) m.pattern[i] = (std::uint8_t(bytes[pos + i / 8]) >> (i % 8)) & 1u;
  return m;
}

void write_mask(const fs::path& path, const imaging::SamplingMask& mask) { write_file(path, encode_mask(mask)); }
imaging::SamplingMask read_mask(const fs::path& path) { return decode_mask(read_file(path)); }

namespace {

constexpr char kArchiveMagic[] = "FGARCH01";

nlohmann::json decode_header(const std::string& bytes, std::size_t* payload_start) {
  if (bytes.size() < 16 || bytes.compare(0, 8, kArchiveMagic) != 0) {
    throw Error(ErrorCode::kIoError, "not an archive");
  }
  std::size_t pos = 8;
  const auto header_bytes = get<std::uint64_t>(bytes, pos);
  if (pos + header_bytes > bytes.size()) throw Error(ErrorCode::kIoError, "truncated archive header");
  auto header = nlohmann::json::parse(bytes.substr(pos, header_bytes));
  if (payload_start) *payload_start = pos + header_bytes;
  return header;
}

}  // namespace

std::string encode_archive(const Archive& archive) {
  nlohmann::json arrays = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& [name, t] : archive.arrays.entries()) {
    arrays.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
    offset += t.size();
  }
  const std::string header = nlohmann::json{{"metadata", archive.metadata}, {"arrays", arrays}}.dump();
  std::string out(kArchiveMagic, 8);
  put<std::uint64_t>(out, header.size());
  out += header;
  out.reserve(out.size() + offset * 8);
  for (const auto& [_, t] : archive.arrays.entries())
    out.append(reinterpret_cast<const char*>(t.data()), t.size() * sizeof(double));
  return out;
}

Archive decode_archive(const std::string& bytes) {
  std::size_t start = 0;
  const auto header = decode_header(bytes, &start);
  Archive archive;
  archive.metadata = header.at("metadata");
  for (const auto& entry : header.at("arrays")) {
    const auto shape = entry.at("shape").get<Shape>();
    const auto offset = entry.at("offset").get<std::size_t>();
    const std::size_t n = shape_size(shape);
    const std::size_t at = start + offset * sizeof(double);
    if (at + n * sizeof(double) > bytes.size()) throw Error(ErrorCode::kIoError, "truncated archive payload");
    std::vector<double> values(n);
    std::memcpy(values.data(), bytes.data() + at, n * sizeof(double));
    archive.arrays.add(entry.at("name").get<std::string>(), Tensor(shape, std::move(values)));
  }
  return archive;
}

std::vector<std::string> archive_manifest(const std::string& bytes) {
  const auto header = decode_header(bytes, nullptr);
  std::vector<std::string> names;
  for (const auto& entry : header.at("arrays")) names.push_back(entry.at("name").get<std::string>());
  return names;
}

void write_archive(const fs::path& path, const Archive& archive) { write_file(path, encode_archive(archive)); }
Archive read_archive(const fs::path& path) { return decode_archive(read_file(path)); }

}  // namespace fedgimp::io
