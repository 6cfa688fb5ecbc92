#include "mtseg/io.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <memory>
#include <regex>
#include <sstream>

#include "mtseg/error.hpp"

namespace mtseg {

namespace fs = std::filesystem;

namespace {

constexpr int kNiftiHeaderSize = 348;
constexpr int kNiftiVoxOffset = 352;

enum NiftiType : std::int16_t {
  kUint8 = 2,
  kInt16 = 4,
  kInt32 = 8,
  kFloat32 = 16,
  kFloat64 = 64,
  kInt8 = 256,
  kUint16 = 512,
  kUint32 = 768,
};

struct GzCloser {
  void operator()(gzFile f) const {
    if (f != nullptr) gzclose(f);
  }
};
using GzHandle = std::unique_ptr<gzFile_s, GzCloser>;

[[noreturn]] void fail(const fs::path& path, const std::string& what) {
  throw IngestionError(path.string() + ": " + what);
}

void read_exact(gzFile f, void* dst, std::size_t n, const fs::path& path, const char* what) {
  std::size_t done = 0;
  auto* out = static_cast<unsigned char*>(dst);
  while (done < n) {
    const unsigned chunk = static_cast<unsigned>(std::min<std::size_t>(n - done, 1u << 30));
    const int got = gzread(f, out + done, chunk);
    if (got < 0) {
      int errnum = 0;
      fail(path, std::string("read error in ") + what + ": " + gzerror(f, &errnum));
    }
    if (got == 0) fail(path, std::string("truncated file (") + what + ")");
    done += static_cast<std::size_t>(got);
  }
}

template <class T>
T load_field(const unsigned char* hdr, int offset, bool swap) {
  T v;
  std::memcpy(&v, hdr + offset, sizeof(T));
  if (swap) {
    auto* b = reinterpret_cast<unsigned char*>(&v);
    std::reverse(b, b + sizeof(T));
  }
  return v;
}

template <class T>
void store_field(unsigned char* hdr, int offset, T v) {
  std::memcpy(hdr + offset, &v, sizeof(T));
}

void swap_elements(std::vector<unsigned char>& raw, std::size_t width) {
  if (width <= 1) return;
  for (std::size_t i = 0; i + width <= raw.size(); i += width) std::reverse(raw.begin() + i, raw.begin() + i + width);
}

template <class T>
void convert(const std::vector<unsigned char>& raw, std::vector<float>& out) {
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) {
    T v;
    std::memcpy(&v, raw.data() + i * sizeof(T), sizeof(T));
    out[i] = static_cast<float>(v);
  }
}

bool ends_with_gz(const fs::path& path) {
  const std::string s = path.string();
  return s.size() >= 3 && s.compare(s.size() - 3, 3, ".gz") == 0;
}

}  // namespace

Volume load_volume(const fs::path& path) {
  if (!fs::exists(path)) fail(path, "file does not exist");
  GzHandle f(gzopen(path.string().c_str(), "rb"));
  if (!f) fail(path, "cannot open");

  unsigned char hdr[kNiftiHeaderSize];
  read_exact(f.get(), hdr, sizeof(hdr), path, "header");

  bool swap = false;
  std::int32_t sizeof_hdr = load_field<std::int32_t>(hdr, 0, false);
  if (sizeof_hdr != kNiftiHeaderSize) {
    swap = true;
    sizeof_hdr = load_field<std::int32_t>(hdr, 0, true);
    if (sizeof_hdr != kNiftiHeaderSize) fail(path, "not a NIfTI-1 file (bad sizeof_hdr)");
  }
  if (std::memcmp(hdr + 344, "n+1\0", 4) != 0) fail(path, "unsupported NIfTI variant (expected single-file n+1)");

  std::int16_t dim[8];
  for (int i = 0; i < 8; ++i) dim[i] = load_field<std::int16_t>(hdr, 40 + 2 * i, swap);
  if (dim[0] < 2 || dim[0] > 7) fail(path, "invalid dim[0]");
  for (int i = 4; i <= dim[0]; ++i) {
    if (dim[i] > 1) fail(path, "only 2D/3D volumes are supported");
  }
  const auto datatype = load_field<std::int16_t>(hdr, 70, swap);
  float pixdim[8];
  for (int i = 0; i < 8; ++i) pixdim[i] = load_field<float>(hdr, 76 + 4 * i, swap);
  const float vox_offset = load_field<float>(hdr, 108, swap);
  const float slope = load_field<float>(hdr, 112, swap);
  const float inter = load_field<float>(hdr, 116, swap);

  Volume v;
  v.nx = dim[1];
  v.ny = dim[2];
  v.nz = dim[0] >= 3 ? dim[3] : 1;
  if (v.nx <= 0 || v.ny <= 0 || v.nz <= 0) fail(path, "non-positive dimensions");
  for (int i = 0; i < 3; ++i) {
    const double s = std::abs(static_cast<double>(pixdim[i + 1]));
    v.spacing[i] = s > 0.0 ? s : 1.0;
  }

  std::size_t width = 0;
  switch (datatype) {
    case kUint8:
    case kInt8: width = 1; break;
    case kInt16:
    case kUint16: width = 2; break;
    case kInt32:
    case kUint32:
    case kFloat32: width = 4; break;
    case kFloat64: width = 8; break;
    default: fail(path, "unsupported datatype " + std::to_string(datatype));
  }

  const long skip = static_cast<long>(vox_offset) - kNiftiHeaderSize;
  if (skip < 0) fail(path, "invalid vox_offset");
  if (skip > 0) {
    std::vector<unsigned char> ext(static_cast<std::size_t>(skip));
    read_exact(f.get(), ext.data(), ext.size(), path, "extension");
  }

  const std::size_t count = static_cast<std::size_t>(v.nx) * v.ny * v.nz;
  std::vector<unsigned char> raw(count * width);
  read_exact(f.get(), raw.data(), raw.size(), path, "voxel data");
  if (swap) swap_elements(raw, width);

  v.voxels.resize(count);
  switch (datatype) {
    case kUint8: convert<std::uint8_t>(raw, v.voxels); break;
    case kInt8: convert<std::int8_t>(raw, v.voxels); break;
    case kInt16: convert<std::int16_t>(raw, v.voxels); break;
    case kUint16: convert<std::uint16_t>(raw, v.voxels); break;
    case kInt32: convert<std::int32_t>(raw, v.voxels); break;
    case kUint32: convert<std::uint32_t>(raw, v.voxels); break;
    case kFloat32: convert<float>(raw, v.voxels); break;
    case kFloat64: convert<double>(raw, v.voxels); break;
    default: break;
  }
  if (slope != 0.0f && std::isfinite(slope) && !(slope == 1.0f && inter == 0.0f)) {
    for (auto& x : v.voxels) x = x * slope + inter;
  }
  return v;
}

void save_volume(const fs::path& path, const Volume& v) {
  unsigned char hdr[kNiftiVoxOffset] = {};
  store_field<std::int32_t>(hdr, 0, kNiftiHeaderSize);
  const std::int16_t dims[8] = {3, static_cast<std::int16_t>(v.nx), static_cast<std::int16_t>(v.ny),
                                static_cast<std::int16_t>(v.nz), 1, 1, 1, 1};
  for (int i = 0; i < 8; ++i) store_field<std::int16_t>(hdr, 40 + 2 * i, dims[i]);
  store_field<std::int16_t>(hdr, 70, kFloat32);
  store_field<std::int16_t>(hdr, 72, 32);
  const float pixdim[8] = {1.0f, static_cast<float>(v.spacing[0]), static_cast<float>(v.spacing[1]),
                           static_cast<float>(v.spacing[2]), 1.0f, 1.0f, 1.0f, 1.0f};
  for (int i = 0; i < 8; ++i) store_field<float>(hdr, 76 + 4 * i, pixdim[i]);
  store_field<float>(hdr, 108, static_cast<float>(kNiftiVoxOffset));
  store_field<float>(hdr, 112, 1.0f);
  store_field<float>(hdr, 116, 0.0f);
  hdr[123] = 10;  // xyzt_units: mm, s
  std::memcpy(hdr + 344, "n+1\0", 4);

  const char* mode = ends_with_gz(path) ? "wb6" : "wbT";
  GzHandle f(gzopen(path.string().c_str(), mode));
  if (!f) throw IngestionError(path.string() + ": cannot open for writing");
  const auto write = [&](const void* p, std::size_t n) {
    if (gzwrite(f.get(), p, static_cast<unsigned>(n)) != static_cast<int>(n))
      throw IngestionError(path.string() + ": write failed");
  };
  write(hdr, sizeof(hdr));
  write(v.voxels.data(), v.voxels.size() * sizeof(float));
}

// ---------------------------------------------------------------------------

namespace {

void write_npy_raw(const fs::path& path, const std::vector<std::size_t>& shape, const char* descr, const void* data,
                   std::size_t bytes) {
  std::ostringstream dict;
  dict << "{'descr': '" << descr << "', 'fortran_order': False, 'shape': (";
  for (std::size_t i = 0; i < shape.size(); ++i) dict << shape[i] << (shape.size() == 1 || i + 1 < shape.size() ? "," : "");
  dict << "), }";
  std::string header = dict.str();
  const std::size_t total = 10 + header.size() + 1;
  header.append((64 - total % 64) % 64, ' ');
  header.push_back('\n');

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IngestionError(path.string() + ": cannot open for writing");
  const unsigned char magic[8] = {0x93, 'N', 'U', 'M', 'P', 'Y', 1, 0};
  out.write(reinterpret_cast<const char*>(magic), 8);
  const std::uint16_t len = static_cast<std::uint16_t>(header.size());
  const unsigned char len_le[2] = {static_cast<unsigned char>(len & 0xff), static_cast<unsigned char>(len >> 8)};
  out.write(reinterpret_cast<const char*>(len_le), 2);
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
  if (!out) throw IngestionError(path.string() + ": write failed");
}

}  // namespace

void write_npy(const fs::path& path, const std::vector<std::size_t>& shape, const std::vector<float>& data) {
  static_assert(std::endian::native == std::endian::little, "npy writer assumes a little-endian host");
  write_npy_raw(path, shape, "<f4", data.data(), data.size() * sizeof(float));
}

void write_npy(const fs::path& path, const std::vector<std::size_t>& shape, const std::vector<std::uint8_t>& data) {
  write_npy_raw(path, shape, "|u1", data.data(), data.size());
}

NpyArray read_npy(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(path, "cannot open");
  unsigned char magic[10];
  in.read(reinterpret_cast<char*>(magic), 10);
  if (!in || magic[0] != 0x93 || std::memcmp(magic + 1, "NUMPY", 5) != 0) fail(path, "not an .npy file");
  if (magic[6] != 1) fail(path, "unsupported .npy version");
  const std::size_t hlen = magic[8] | (static_cast<std::size_t>(magic[9]) << 8);
  std::string header(hlen, '\0');
  in.read(header.data(), static_cast<std::streamsize>(hlen));
  if (!in) fail(path, "truncated header");

  NpyArray arr;
  std::smatch m;
  if (!std::regex_search(header, m, std::regex("'descr':\\s*'([^']+)'"))) fail(path, "missing descr");
  arr.dtype = m[1];
  if (std::regex_search(header, m, std::regex("'fortran_order':\\s*True"))) fail(path, "fortran order unsupported");
  if (!std::regex_search(header, m, std::regex("'shape':\\s*\\(([^)]*)\\)"))) fail(path, "missing shape");
  const std::string dims = m[1];
  std::size_t count = 1;
  const std::regex digits("\\d+");
  for (std::sregex_iterator it(dims.begin(), dims.end(), digits), end; it != end; ++it) {
    arr.shape.push_back(std::stoull(it->str()));
    count *= arr.shape.back();
  }
  if (arr.dtype == "<f4") {
    arr.f32.resize(count);
    in.read(reinterpret_cast<char*>(arr.f32.data()), static_cast<std::streamsize>(count * sizeof(float)));
  } else if (arr.dtype == "|u1") {
    arr.u8.resize(count);
    in.read(reinterpret_cast<char*>(arr.u8.data()), static_cast<std::streamsize>(count));
  } else {
    fail(path, "unsupported dtype " + arr.dtype);
  }
  if (!in) fail(path, "truncated data");
  return arr;
}

}  // namespace mtseg
