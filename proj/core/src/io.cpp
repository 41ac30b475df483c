#include "ttoreg/io.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <string>

namespace fs = std::filesystem;
using nlohmann::json;

namespace ttoreg {

namespace {

constexpr int kNiftiHeaderSize = 348;
constexpr int kNiftiVoxOffset = 352;

// NIfTI-1 header field offsets.
constexpr int kOffDim = 40;
constexpr int kOffIntentCode = 68;
constexpr int kOffDatatype = 70;
constexpr int kOffBitpix = 72;
constexpr int kOffPixdim = 76;
constexpr int kOffVoxOffset = 108;
constexpr int kOffSclSlope = 112;
constexpr int kOffSclInter = 116;
constexpr int kOffXyztUnits = 123;
constexpr int kOffDescrip = 148;
constexpr int kOffMagic = 344;

constexpr short kDtUint8 = 2, kDtInt16 = 4, kDtInt32 = 8, kDtFloat32 = 16, kDtFloat64 = 64, kDtInt8 = 256,
                kDtUint16 = 512, kDtUint32 = 768;
constexpr short kIntentVector = 1007;

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

std::string lower_name(const fs::path& p) {
  std::string s = p.filename().string();
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

template <typename T>
T byteswap_value(T v) {
  std::array<unsigned char, sizeof(T)> b;
  std::memcpy(b.data(), &v, sizeof(T));
  std::reverse(b.begin(), b.end());
  std::memcpy(&v, b.data(), sizeof(T));
  return v;
}

class HeaderView {
 public:
  HeaderView(unsigned char* bytes, bool swap) : bytes_(bytes), swap_(swap) {}

  template <typename T>
  T get(int off) const {
    T v;
    std::memcpy(&v, bytes_ + off, sizeof(T));
    return swap_ ? byteswap_value(v) : v;
  }
  template <typename T>
  void put(int off, T v) {
    if (swap_) v = byteswap_value(v);
    std::memcpy(bytes_ + off, &v, sizeof(T));
  }

 private:
  unsigned char* bytes_;
  bool swap_;
};

// gzip-transparent reader; zlib passes plain files through unchanged.
class GzReader {
 public:
  explicit GzReader(const fs::path& path) : f_(gzopen(path.string().c_str(), "rb")) {
    if (!f_) throw UserError("cannot open " + path.string());
  }
  ~GzReader() {
    if (f_) gzclose(f_);
  }
  GzReader(const GzReader&) = delete;
  GzReader& operator=(const GzReader&) = delete;

  void read_exact(void* dst, std::size_t n, const char* what) {
    auto* p = static_cast<unsigned char*>(dst);
    while (n > 0) {
      const unsigned chunk = static_cast<unsigned>(std::min<std::size_t>(n, 1u << 30));
      const int got = gzread(f_, p, chunk);
      if (got <= 0) throw UserError(std::string("truncated file while reading ") + what);
      p += got;
      n -= static_cast<std::size_t>(got);
    }
  }
  void skip(std::size_t n) {
    std::vector<unsigned char> tmp(std::min<std::size_t>(n, 4096));
    while (n > 0) {
      const std::size_t k = std::min(n, tmp.size());
      read_exact(tmp.data(), k, "header padding");
      n -= k;
    }
  }

 private:
  gzFile f_;
};

struct NiftiData {
  std::array<int, 8> dim{};
  std::array<float, 8> pixdim{};
  short intent = 0;
  std::vector<std::uint8_t> header;
  std::vector<double> values;  // x-fastest, all frames/components consecutively
};

std::size_t datatype_size(short dt) {
  switch (dt) {
    case kDtUint8:
    case kDtInt8: return 1;
    case kDtInt16:
    case kDtUint16: return 2;
    case kDtInt32:
    case kDtUint32:
    case kDtFloat32: return 4;
    case kDtFloat64: return 8;
    default: return 0;
  }
}

template <typename T>
void decode(const std::vector<unsigned char>& raw, bool swap, std::vector<double>& out) {
  const std::size_t n = raw.size() / sizeof(T);
  out.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    T v;
    std::memcpy(&v, raw.data() + i * sizeof(T), sizeof(T));
    if (swap) v = byteswap_value(v);
    out[i] = static_cast<double>(v);
  }
}

NiftiData read_nifti(const fs::path& path) {
  if (!fs::exists(path)) throw UserError("file not found: " + path.string());
  GzReader in(path);
  NiftiData nd;
  nd.header.resize(kNiftiHeaderSize);
  in.read_exact(nd.header.data(), kNiftiHeaderSize, "NIfTI header");

  int sizeof_hdr;
  std::memcpy(&sizeof_hdr, nd.header.data(), 4);
  bool swap = false;
  if (sizeof_hdr != kNiftiHeaderSize) {
    if (byteswap_value(sizeof_hdr) != kNiftiHeaderSize) throw UserError("not a NIfTI-1 file: " + path.string());
    swap = true;
  }
  HeaderView h(nd.header.data(), swap);
  const char* magic = reinterpret_cast<const char*>(nd.header.data() + kOffMagic);
  if (std::strncmp(magic, "n+1", 3) != 0) {
    throw UserError("unsupported NIfTI variant (expected single-file n+1): " + path.string());
  }
  for (int i = 0; i < 8; ++i) {
    nd.dim[i] = h.get<short>(kOffDim + 2 * i);
    nd.pixdim[i] = h.get<float>(kOffPixdim + 4 * i);
  }
  if (nd.dim[0] < 1 || nd.dim[0] > 7) throw UserError("malformed NIfTI header: dim[0] out of range");
  std::size_t count = 1;
  for (int i = 1; i <= nd.dim[0]; ++i) {
    if (nd.dim[i] < 1) throw UserError("malformed NIfTI header: non-positive dimension");
    count *= static_cast<std::size_t>(nd.dim[i]);
  }
  for (int i = nd.dim[0] + 1; i < 8; ++i) nd.dim[i] = 1;
  nd.intent = h.get<short>(kOffIntentCode);
  const short dt = h.get<short>(kOffDatatype);
  const std::size_t bytes = datatype_size(dt);
  if (bytes == 0) throw UserError("unsupported NIfTI datatype " + std::to_string(dt));
  const float vox_offset = h.get<float>(kOffVoxOffset);
  if (vox_offset < kNiftiHeaderSize) throw UserError("malformed NIfTI header: vox_offset < 348");
  in.skip(static_cast<std::size_t>(vox_offset) - kNiftiHeaderSize);

  std::vector<unsigned char> raw(count * bytes);
  in.read_exact(raw.data(), raw.size(), "NIfTI voxel data");
  switch (dt) {
    case kDtUint8: decode<std::uint8_t>(raw, swap, nd.values); break;
    case kDtInt8: decode<std::int8_t>(raw, swap, nd.values); break;
    case kDtInt16: decode<std::int16_t>(raw, swap, nd.values); break;
    case kDtUint16: decode<std::uint16_t>(raw, swap, nd.values); break;
    case kDtInt32: decode<std::int32_t>(raw, swap, nd.values); break;
    case kDtUint32: decode<std::uint32_t>(raw, swap, nd.values); break;
    case kDtFloat32: decode<float>(raw, swap, nd.values); break;
    case kDtFloat64: decode<double>(raw, swap, nd.values); break;
  }
  const float slope = h.get<float>(kOffSclSlope);
  const float inter = h.get<float>(kOffSclInter);
  if (slope != 0.0f && std::isfinite(slope) && !(slope == 1.0f && inter == 0.0f)) {
    for (auto& v : nd.values) v = v * slope + inter;
  }
  return nd;
}

Spacing3 nifti_spacing(const NiftiData& nd) {
  auto pick = [](float v) { return (v > 0.0f && std::isfinite(v)) ? static_cast<double>(v) : 1.0; };
  return {pick(nd.pixdim[1]), pick(nd.pixdim[2]), pick(nd.pixdim[3])};
}

void write_nifti(const fs::path& path, const Shape3& shape, const Spacing3& spacing, int components,
                 std::span<const float> data, const std::vector<std::uint8_t>& opaque) {
  std::vector<unsigned char> hdr(kNiftiVoxOffset, 0);
  if (opaque.size() == static_cast<std::size_t>(kNiftiHeaderSize)) {
    std::memcpy(hdr.data(), opaque.data(), kNiftiHeaderSize);
  }
  // Always write native-endian; an opaque header from a swapped file is
  // converted field by field below only for the fields we own.
  int sizeof_hdr;
  std::memcpy(&sizeof_hdr, hdr.data(), 4);
  if (sizeof_hdr != 0 && sizeof_hdr != kNiftiHeaderSize) std::fill(hdr.begin(), hdr.end(), 0);

  HeaderView h(hdr.data(), false);
  h.put<int>(0, kNiftiHeaderSize);
  for (int i = 0; i < 8; ++i) h.put<short>(kOffDim + 2 * i, 1);
  if (components == 1) {
    h.put<short>(kOffDim, 3);
  } else {
    h.put<short>(kOffDim, 5);
    h.put<short>(kOffDim + 2 * 5, static_cast<short>(components));
    h.put<short>(kOffIntentCode, kIntentVector);
  }
  h.put<short>(kOffDim + 2, static_cast<short>(shape.nx));
  h.put<short>(kOffDim + 4, static_cast<short>(shape.ny));
  h.put<short>(kOffDim + 6, static_cast<short>(shape.nz));
  h.put<short>(kOffDatatype, kDtFloat32);
  h.put<short>(kOffBitpix, 32);
  h.put<float>(kOffPixdim, h.get<float>(kOffPixdim) == 0.0f ? 1.0f : h.get<float>(kOffPixdim));
  h.put<float>(kOffPixdim + 4, static_cast<float>(spacing.sx));
  h.put<float>(kOffPixdim + 8, static_cast<float>(spacing.sy));
  h.put<float>(kOffPixdim + 12, static_cast<float>(spacing.sz));
  h.put<float>(kOffVoxOffset, static_cast<float>(kNiftiVoxOffset));
  h.put<float>(kOffSclSlope, 1.0f);
  h.put<float>(kOffSclInter, 0.0f);
  if (opaque.empty()) {
    hdr[kOffXyztUnits] = 2;  // millimetres
    const char* desc = "ttoreg";
    std::memcpy(hdr.data() + kOffDescrip, desc, std::strlen(desc));
  }
  std::memcpy(hdr.data() + kOffMagic, "n+1\0", 4);

  const std::string name = lower_name(path);
  const auto* payload = reinterpret_cast<const unsigned char*>(data.data());
  const std::size_t payload_bytes = data.size() * sizeof(float);
  static_assert(std::endian::native == std::endian::little, "writer assumes a little-endian host");

  if (ends_with(name, ".gz")) {
    gzFile f = gzopen(path.string().c_str(), "wb");
    if (!f) throw UserError("cannot write " + path.string());
    bool ok = gzwrite(f, hdr.data(), static_cast<unsigned>(hdr.size())) == static_cast<int>(hdr.size());
    std::size_t off = 0;
    while (ok && off < payload_bytes) {
      const unsigned chunk = static_cast<unsigned>(std::min<std::size_t>(payload_bytes - off, 1u << 30));
      ok = gzwrite(f, payload + off, chunk) == static_cast<int>(chunk);
      off += chunk;
    }
    if (gzclose(f) != Z_OK || !ok) throw std::runtime_error("I/O failure writing " + path.string());
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UserError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(hdr.data()), static_cast<std::streamsize>(hdr.size()));
  out.write(reinterpret_cast<const char*>(payload), static_cast<std::streamsize>(payload_bytes));
  if (!out) throw std::runtime_error("I/O failure writing " + path.string());
}

fs::path raw_stem(const fs::path& path) {
  fs::path p = path;
  const std::string ext = p.extension().string();
  if (ext == ".json" || ext == ".raw") p.replace_extension();
  return p;
}

struct RawHeader {
  Shape3 shape;
  Spacing3 spacing;
  int components = 1;
  json extra;
};

RawHeader read_raw_header(const fs::path& header_path) {
  if (!fs::exists(header_path)) throw UserError("file not found: " + header_path.string());
  std::ifstream in(header_path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw UserError("malformed raw+json header " + header_path.string() + ": " + e.what());
  }
  RawHeader h;
  try {
    const auto& s = j.at("shape");
    const auto& sp = j.at("spacing");
    if (!s.is_array() || s.size() != 3 || !sp.is_array() || sp.size() != 3) {
      throw UserError("raw+json header needs 3-element shape and spacing");
    }
    h.shape = {s[0].get<int>(), s[1].get<int>(), s[2].get<int>()};
    h.spacing = {sp[0].get<double>(), sp[1].get<double>(), sp[2].get<double>()};
    const std::string dtype = j.at("dtype").get<std::string>();
    if (dtype != "f32") throw UserError("unsupported raw+json dtype '" + dtype + "' (expected f32)");
    h.components = j.value("components", 1);
  } catch (const json::exception& e) {
    throw UserError("malformed raw+json header " + header_path.string() + ": " + e.what());
  }
  if (!h.shape.positive()) throw UserError("raw+json header has non-positive shape");
  if (!h.spacing.positive()) throw UserError("raw+json header has non-positive spacing");
  if (h.components != 1 && h.components != 3) throw UserError("raw+json components must be 1 or 3");
  h.extra = j;
  return h;
}

std::vector<float> read_raw_payload(const fs::path& raw_path, std::size_t expected) {
  if (!fs::exists(raw_path)) throw UserError("file not found: " + raw_path.string());
  const auto bytes = fs::file_size(raw_path);
  if (bytes != expected * sizeof(float)) {
    throw UserError("raw buffer size mismatch for " + raw_path.string() + ": " + std::to_string(bytes) +
                    " bytes, header implies " + std::to_string(expected * sizeof(float)));
  }
  std::vector<float> data(expected);
  std::ifstream in(raw_path, std::ios::binary);
  in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(bytes));
  if (!in) throw UserError("cannot read " + raw_path.string());
  return data;
}

void write_raw(const fs::path& path, const Shape3& shape, const Spacing3& spacing, int components,
               std::span<const float> data, const std::optional<NativeGeometry>& native) {
  const fs::path stem = raw_stem(path);
  json j;
  j["shape"] = {shape.nx, shape.ny, shape.nz};
  j["spacing"] = {spacing.sx, spacing.sy, spacing.sz};
  j["dtype"] = "f32";
  if (components != 1) j["components"] = components;
  if (native) {
    j["native_shape"] = {native->shape.nx, native->shape.ny, native->shape.nz};
    j["native_spacing"] = {native->spacing.sx, native->spacing.sy, native->spacing.sz};
  }
  {
    std::ofstream hout(fs::path(stem).concat(".json"));
    if (!hout) throw UserError("cannot write " + stem.string() + ".json");
    hout << j.dump(2) << '\n';
    if (!hout) throw std::runtime_error("I/O failure writing " + stem.string() + ".json");
  }
  std::ofstream out(fs::path(stem).concat(".raw"), std::ios::binary);
  if (!out) throw UserError("cannot write " + stem.string() + ".raw");
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(float)));
  if (!out) throw std::runtime_error("I/O failure writing " + stem.string() + ".raw");
}

}  // namespace

VolumeFormat format_from_path(const fs::path& path) {
  const std::string name = lower_name(path);
  if (ends_with(name, ".nii") || ends_with(name, ".nii.gz")) return VolumeFormat::Nifti;
  if (ends_with(name, ".json") || ends_with(name, ".raw")) return VolumeFormat::RawJson;
  throw UserError("cannot infer volume format from '" + path.string() + "' (use .nii, .nii.gz, .json or .raw)");
}

fs::path with_format_extension(fs::path path, VolumeFormat format) {
  const std::string name = lower_name(path);
  if (format == VolumeFormat::Nifti) {
    if (!ends_with(name, ".nii") && !ends_with(name, ".nii.gz")) path += ".nii.gz";
  } else if (!ends_with(name, ".json") && !ends_with(name, ".raw")) {
    path += ".json";
  }
  return path;
}

Volume3D load_volume(const fs::path& path) { return load_volume(path, format_from_path(path)); }

Volume3D load_volume(const fs::path& path, VolumeFormat format) {
  if (format == VolumeFormat::Nifti) {
    NiftiData nd = read_nifti(path);
    const Shape3 shape{nd.dim[1], nd.dim[2], nd.dim[3]};
    std::vector<float> data(shape.size());
    for (std::size_t i = 0; i < data.size(); ++i) data[i] = static_cast<float>(nd.values[i]);
    Volume3D v(shape, nifti_spacing(nd), std::move(data));
    v.set_opaque_header(std::move(nd.header));
    return v;
  }
  const fs::path stem = raw_stem(path);
  RawHeader h = read_raw_header(fs::path(stem).concat(".json"));
  if (h.components != 1) throw UserError(path.string() + " holds a vector field, not a scalar volume");
  Volume3D v(h.shape, h.spacing, read_raw_payload(fs::path(stem).concat(".raw"), h.shape.size()));
  if (h.extra.contains("native_shape") && h.extra.contains("native_spacing")) {
    const auto& s = h.extra["native_shape"];
    const auto& sp = h.extra["native_spacing"];
    v.set_native(NativeGeometry{{s[0].get<int>(), s[1].get<int>(), s[2].get<int>()},
                                {sp[0].get<double>(), sp[1].get<double>(), sp[2].get<double>()}});
  }
  return v;
}

void save_volume(const Volume3D& vol, const fs::path& path) { save_volume(vol, path, format_from_path(path)); }

void save_volume(const Volume3D& vol, const fs::path& path, VolumeFormat format) {
  if (format == VolumeFormat::Nifti) {
    write_nifti(path, vol.shape(), vol.spacing(), 1, vol.values(), vol.opaque_header());
  } else {
    write_raw(path, vol.shape(), vol.spacing(), 1, vol.values(), vol.native());
  }
}

Field3D load_field(const fs::path& path) {
  if (format_from_path(path) == VolumeFormat::Nifti) {
    NiftiData nd = read_nifti(path);
    const Shape3 shape{nd.dim[1], nd.dim[2], nd.dim[3]};
    if (nd.values.size() != 3 * shape.size()) throw UserError(path.string() + " is not a 3-component field");
    Field3D f(shape);
    for (std::size_t i = 0; i < nd.values.size(); ++i) f.values()[i] = static_cast<float>(nd.values[i]);
    return f;
  }
  const fs::path stem = raw_stem(path);
  RawHeader h = read_raw_header(fs::path(stem).concat(".json"));
  if (h.components != 3) throw UserError(path.string() + " is not a 3-component field");
  Field3D f(h.shape);
  auto data = read_raw_payload(fs::path(stem).concat(".raw"), 3 * h.shape.size());
  std::copy(data.begin(), data.end(), f.values().begin());
  return f;
}

void save_field(const Field3D& field, const Spacing3& spacing, const fs::path& path, VolumeFormat format) {
  if (format == VolumeFormat::Nifti) {
    write_nifti(path, field.shape(), spacing, 3, field.values(), {});
  } else {
    write_raw(path, field.shape(), spacing, 3, field.values(), std::nullopt);
  }
}

std::vector<fs::path> list_volume_files(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const std::string name = lower_name(e.path());
    if (ends_with(name, ".nii") || ends_with(name, ".nii.gz") || ends_with(name, ".json")) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

std::vector<Volume3D> load_series(const fs::path& path) {
  if (!fs::exists(path)) throw UserError("not found: " + path.string());
  std::vector<Volume3D> out;
  if (fs::is_directory(path)) {
    for (const auto& f : list_volume_files(path)) out.push_back(load_volume(f));
    if (out.empty()) throw UserError("no volumes in directory " + path.string());
    return out;
  }
  if (format_from_path(path) == VolumeFormat::Nifti) {
    NiftiData nd = read_nifti(path);
    const Shape3 shape{nd.dim[1], nd.dim[2], nd.dim[3]};
    const std::size_t n = shape.size();
    const std::size_t frames = nd.values.size() / n;
    for (std::size_t t = 0; t < frames; ++t) {
      std::vector<float> data(n);
      for (std::size_t i = 0; i < n; ++i) data[i] = static_cast<float>(nd.values[t * n + i]);
      out.emplace_back(shape, nifti_spacing(nd), std::move(data));
    }
    return out;
  }
  out.push_back(load_volume(path));
  return out;
}

}  // namespace ttoreg
