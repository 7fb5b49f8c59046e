#include "ichseg/nifti.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <memory>

namespace ichseg {
namespace {

constexpr std::size_t kHeaderSize = 348;
constexpr std::size_t kDataOffset = 352;

// Byte offsets into the NIfTI-1 header.
constexpr std::size_t kDim = 40;
constexpr std::size_t kDatatype = 70;
constexpr std::size_t kBitpix = 72;
constexpr std::size_t kPixdim = 76;
constexpr std::size_t kVoxOffset = 108;
constexpr std::size_t kSclSlope = 112;
constexpr std::size_t kSclInter = 116;
constexpr std::size_t kXyztUnits = 123;
constexpr std::size_t kCalMax = 124;
constexpr std::size_t kCalMin = 128;
constexpr std::size_t kMagic = 344;

enum Datatype : std::int16_t {
  kUint8 = 2,
  kInt16 = 4,
  kInt32 = 8,
  kFloat32 = 16,
  kFloat64 = 64,
  kInt8 = 256,
  kUint16 = 512,
  kUint32 = 768,
};

using Header = std::array<std::uint8_t, kHeaderSize>;

template <class T>
T byteswap_value(T v) {
  std::array<std::uint8_t, sizeof(T)> b;
  std::memcpy(b.data(), &v, sizeof(T));
  std::reverse(b.begin(), b.end());
  std::memcpy(&v, b.data(), sizeof(T));
  return v;
}

template <class T>
T get(const Header& h, std::size_t off, bool swap) {
  T v;
  std::memcpy(&v, h.data() + off, sizeof(T));
  return swap ? byteswap_value(v) : v;
}

template <class T>
void put(Header& h, std::size_t off, T v) {
  static_assert(std::endian::native == std::endian::little, "writer assumes a little-endian host");
  std::memcpy(h.data() + off, &v, sizeof(T));
}

struct GzCloser {
  void operator()(gzFile f) const {
    if (f != nullptr) gzclose(f);
  }
};
using GzHandle = std::unique_ptr<std::remove_pointer_t<gzFile>, GzCloser>;

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

struct RawImage {
  Header header{};
  bool swap = false;
  Dims dims;
  Spacing spacing;
  std::vector<double> values;
};

void read_exact(gzFile f, void* dst, std::size_t n, const std::filesystem::path& path, const char* what) {
  auto* out = static_cast<std::uint8_t*>(dst);
  while (n > 0) {
    const unsigned chunk = static_cast<unsigned>(std::min<std::size_t>(n, 1u << 30));
    const int got = gzread(f, out, chunk);
    if (got <= 0) throw Error(path.string() + ": truncated file while reading " + what);
    out += got;
    n -= static_cast<std::size_t>(got);
  }
}

template <class T>
void decode(const std::vector<std::uint8_t>& bytes, bool swap, std::vector<double>& out) {
  const std::size_t n = bytes.size() / sizeof(T);
  out.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    T v;
    std::memcpy(&v, bytes.data() + i * sizeof(T), sizeof(T));
    if (swap) v = byteswap_value(v);
    out[i] = static_cast<double>(v);
  }
}

RawImage read_raw(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw Error(path.string() + ": file does not exist");
  GzHandle f(gzopen(path.string().c_str(), "rb"));
  if (!f) throw Error(path.string() + ": cannot open for reading");

  RawImage img;
  read_exact(f.get(), img.header.data(), kHeaderSize, path, "header");
  const auto sizeof_hdr = get<std::int32_t>(img.header, 0, false);
  if (sizeof_hdr == 348) {
    img.swap = false;
  } else if (byteswap_value(sizeof_hdr) == 348) {
    img.swap = true;
  } else {
    throw Error(path.string() + ": malformed header (sizeof_hdr != 348)");
  }
  const char* magic = reinterpret_cast<const char*>(img.header.data() + kMagic);
  if (std::strncmp(magic, "n+1", 3) != 0) {
    throw Error(path.string() + ": malformed header (expected single-file NIfTI-1 magic 'n+1')");
  }

  std::array<std::int16_t, 8> dim{};
  for (std::size_t i = 0; i < 8; ++i) dim[i] = get<std::int16_t>(img.header, kDim + 2 * i, img.swap);
  if (dim[0] < 1 || dim[0] > 7) throw Error(path.string() + ": malformed header (dim[0] out of range)");
  int effective = dim[0];
  while (effective > 3 && dim[static_cast<std::size_t>(effective)] == 1) --effective;
  if (effective != 3) {
    throw Error(path.string() + ": expected 3-dimensional volume, got " + std::to_string(effective) + " dimensions");
  }
  for (std::size_t i = 1; i <= 3; ++i)
    if (dim[i] < 1) throw Error(path.string() + ": malformed header (non-positive dimension)");
  img.dims = {static_cast<std::size_t>(dim[1]), static_cast<std::size_t>(dim[2]), static_cast<std::size_t>(dim[3])};

  auto pix = [&](std::size_t i) { return static_cast<double>(std::fabs(get<float>(img.header, kPixdim + 4 * i, img.swap))); };
  img.spacing = {pix(1), pix(2), pix(3)};
  if (!img.spacing.valid()) throw Error(path.string() + ": malformed header (non-positive voxel spacing)");

  const auto datatype = get<std::int16_t>(img.header, kDatatype, img.swap);
  std::size_t bytes_per = 0;
  switch (datatype) {
    case kUint8:
    case kInt8: bytes_per = 1; break;
    case kInt16:
    case kUint16: bytes_per = 2; break;
    case kInt32:
    case kUint32:
    case kFloat32: bytes_per = 4; break;
    case kFloat64: bytes_per = 8; break;
    default: throw Error(path.string() + ": unsupported NIfTI datatype " + std::to_string(datatype));
  }

  const auto vox_offset = static_cast<std::size_t>(get<float>(img.header, kVoxOffset, img.swap));
  if (vox_offset < kHeaderSize) throw Error(path.string() + ": malformed header (vox_offset < 348)");
  std::vector<std::uint8_t> skip(vox_offset - kHeaderSize);
  if (!skip.empty()) read_exact(f.get(), skip.data(), skip.size(), path, "extension block");

  std::vector<std::uint8_t> bytes(img.dims.voxels() * bytes_per);
  read_exact(f.get(), bytes.data(), bytes.size(), path, "voxel data");

  switch (datatype) {
    case kUint8: decode<std::uint8_t>(bytes, img.swap, img.values); break;
    case kInt8: decode<std::int8_t>(bytes, img.swap, img.values); break;
    case kInt16: decode<std::int16_t>(bytes, img.swap, img.values); break;
    case kUint16: decode<std::uint16_t>(bytes, img.swap, img.values); break;
    case kInt32: decode<std::int32_t>(bytes, img.swap, img.values); break;
    case kUint32: decode<std::uint32_t>(bytes, img.swap, img.values); break;
    case kFloat32: decode<float>(bytes, img.swap, img.values); break;
    case kFloat64: decode<double>(bytes, img.swap, img.values); break;
    default: break;
  }

  const double slope = get<float>(img.header, kSclSlope, img.swap);
  const double inter = get<float>(img.header, kSclInter, img.swap);
  if (slope != 0.0 && std::isfinite(slope) && (slope != 1.0 || inter != 0.0)) {
    for (double& v : img.values) v = v * slope + inter;
  }
  return img;
}

Header fresh_header() {
  Header h{};
  put<std::int32_t>(h, 0, 348);
  put<float>(h, kPixdim, 1.0f);  // qfac
  h[kXyztUnits] = 2;             // mm
  return h;
}

Header prepare_header(const ImageMeta& meta, const Dims& dims, const Spacing& spacing, std::int16_t datatype,
                      std::int16_t bitpix) {
  Header h = meta.nifti_header ? *meta.nifti_header : fresh_header();
  put<std::int32_t>(h, 0, 348);
  const std::array<std::int16_t, 8> dim{3, static_cast<std::int16_t>(dims.nx), static_cast<std::int16_t>(dims.ny),
                                        static_cast<std::int16_t>(dims.nz), 1, 1, 1, 1};
  for (std::size_t i = 0; i < 8; ++i) put<std::int16_t>(h, kDim + 2 * i, dim[i]);
  put<std::int16_t>(h, kDatatype, datatype);
  put<std::int16_t>(h, kBitpix, bitpix);
  put<float>(h, kPixdim + 4, static_cast<float>(spacing.dx));
  put<float>(h, kPixdim + 8, static_cast<float>(spacing.dy));
  put<float>(h, kPixdim + 12, static_cast<float>(spacing.dz));
  put<float>(h, kVoxOffset, static_cast<float>(kDataOffset));
  put<float>(h, kSclSlope, 1.0f);
  put<float>(h, kSclInter, 0.0f);
  put<float>(h, kCalMax, 0.0f);
  put<float>(h, kCalMin, 0.0f);
  std::memcpy(h.data() + kMagic, "n+1\0", 4);
  return h;
}

void write_file(const std::filesystem::path& path, const Header& header, const void* data, std::size_t bytes) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  const std::array<std::uint8_t, 4> extension{0, 0, 0, 0};
  const std::string name = path.string();
  if (ends_with(name, ".gz")) {
    GzHandle f(gzopen(name.c_str(), "wb6"));
    if (!f) throw Error(name + ": cannot open for writing");
    auto write = [&](const void* p, std::size_t n) {
      const auto* c = static_cast<const std::uint8_t*>(p);
      while (n > 0) {
        const unsigned chunk = static_cast<unsigned>(std::min<std::size_t>(n, 1u << 30));
        if (gzwrite(f.get(), c, chunk) != static_cast<int>(chunk)) throw Error(name + ": write failed");
        c += chunk;
        n -= chunk;
      }
    };
    write(header.data(), header.size());
    write(extension.data(), extension.size());
    write(data, bytes);
    if (gzclose(f.release()) != Z_OK) throw Error(name + ": write failed on close");
  } else {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(name + ": cannot open for writing");
    out.write(reinterpret_cast<const char*>(header.data()), static_cast<std::streamsize>(header.size()));
    out.write(reinterpret_cast<const char*>(extension.data()), static_cast<std::streamsize>(extension.size()));
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
    if (!out) throw Error(name + ": write failed");
  }
}

void check_dims_fit(const Dims& d, const std::string& what) {
  constexpr std::size_t kMax = 32767;
  if (d.nx == 0 || d.ny == 0 || d.nz == 0 || d.nx > kMax || d.ny > kMax || d.nz > kMax)
    throw Error(what + ": dimensions " + to_string(d) + " cannot be stored in a NIfTI-1 header");
}

}  // namespace

std::string volume_id_from_path(const std::filesystem::path& path) {
  std::string name = path.filename().string();
  for (std::string_view ext : {".nii.gz", ".nii"}) {
    if (ends_with(name, ext)) return name.substr(0, name.size() - ext.size());
  }
  return path.stem().string();
}

CTVolume load_volume(const std::filesystem::path& path) {
  RawImage raw = read_raw(path);
  CTVolume v;
  v.id = volume_id_from_path(path);
  v.spacing = raw.spacing;
  std::vector<float> data(raw.values.size());
  std::transform(raw.values.begin(), raw.values.end(), data.begin(), [](double x) { return static_cast<float>(x); });
  v.voxels = Grid3<float>(raw.dims, std::move(data));
  // Byte-swapped headers are not carried; the writer emits native order only.
  if (!raw.swap) v.meta.nifti_header = raw.header;
  return v;
}

BinaryMask load_mask(const std::filesystem::path& path) {
  RawImage raw = read_raw(path);
  BinaryMask m;
  m.id = volume_id_from_path(path);
  m.spacing = raw.spacing;
  std::vector<std::uint8_t> data(raw.values.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double v = raw.values[i];
    if (v != std::floor(v) || v < 0.0 || v > 255.0)
      throw Error(path.string() + ": label volume contains non-integer or out-of-range value " + std::to_string(v));
    data[i] = static_cast<std::uint8_t>(v);
  }
  m.voxels = Grid3<std::uint8_t>(raw.dims, std::move(data));
  if (!raw.swap) m.meta.nifti_header = raw.header;
  return m;
}

void save_volume(const CTVolume& volume, const std::filesystem::path& path) {
  check_dims_fit(volume.dims(), path.string());
  const Header h = prepare_header(volume.meta, volume.dims(), volume.spacing, kFloat32, 32);
  write_file(path, h, volume.voxels.data().data(), volume.voxels.size() * sizeof(float));
}

void save_mask(const BinaryMask& mask, const std::filesystem::path& path) {
  check_dims_fit(mask.dims(), path.string());
  if (mask.voxels.size() != mask.dims().voxels()) throw Error(path.string() + ": mask voxel count mismatch");
  if (mask.meta.nifti_header) {
    const Header& src = *mask.meta.nifti_header;
    for (std::size_t i = 1; i <= 3; ++i) {
      const auto d = static_cast<std::size_t>(get<std::int16_t>(src, kDim + 2 * i, false));
      const std::size_t want = i == 1 ? mask.dims().nx : i == 2 ? mask.dims().ny : mask.dims().nz;
      if (d != want)
        throw Error(path.string() + ": mask shape " + to_string(mask.dims()) +
                    " does not match its source volume metadata");
    }
    const std::array<double, 3> sp{mask.spacing.dx, mask.spacing.dy, mask.spacing.dz};
    for (std::size_t i = 1; i <= 3; ++i) {
      const double hs = std::fabs(get<float>(src, kPixdim + 4 * i, false));
      if (std::fabs(hs - static_cast<float>(sp[i - 1])) > 1e-6 * std::max(1.0, hs))
        throw Error(path.string() + ": mask spacing does not match its source volume metadata");
    }
  }
  const Header h = prepare_header(mask.meta, mask.dims(), mask.spacing, kUint8, 8);
  write_file(path, h, mask.voxels.data().data(), mask.voxels.size());
}

}  // namespace ichseg
