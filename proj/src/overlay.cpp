#include "ichseg/overlay.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include <png.h>

namespace ichseg::overlay {

void write_png(const std::filesystem::path& path, std::size_t width, std::size_t height,
               const std::vector<std::uint8_t>& rgb) {
  if (rgb.size() != width * height * 3) throw Error("png: pixel buffer does not match the image size");
  std::unique_ptr<FILE, int (*)(FILE*)> f(std::fopen(path.string().c_str(), "wb"), &std::fclose);
  if (!f) throw Error(path.string() + ": cannot open for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, nullptr);
    throw Error("png: cannot allocate writer");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error(path.string() + ": png write failed");
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t y = 0; y < height; ++y)
    png_write_row(png, const_cast<png_bytep>(rgb.data() + y * width * 3));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

namespace {

std::uint8_t byte(float v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)); }

bool on_edge(const BinaryMask& m, std::size_t x, std::size_t y, std::size_t z) {
  if (!m.voxels(x, y, z)) return false;
  const Dims d = m.dims();
  if (x == 0 || y == 0 || x + 1 == d.nx || y + 1 == d.ny) return true;
  return !m.voxels(x - 1, y, z) || !m.voxels(x + 1, y, z) || !m.voxels(x, y - 1, z) || !m.voxels(x, y + 1, z);
}

}  // namespace

std::size_t write_slices(const Panels& p, const std::filesystem::path& dir) {
  if (!p.image) throw Error("overlay: image panel is required");
  const Dims d = p.image->dims();
  auto check = [&](const Dims& o, const char* what) {
    if (!(o == d)) throw Error(std::string("overlay: ") + what + " is not aligned with the image");
  };
  if (p.cam) check(p.cam->dims(), "CAM");
  if (p.pseudo) check(p.pseudo->dims(), "pseudo-mask");
  if (p.prediction) check(p.prediction->dims(), "prediction");
  if (p.truth) check(p.truth->dims(), "ground truth");
  std::filesystem::create_directories(dir);

  const std::size_t w = 4 * d.nx, h = d.ny;
  std::vector<std::uint8_t> rgb(w * h * 3);
  for (std::size_t z = 0; z < d.nz; ++z) {
    std::fill(rgb.begin(), rgb.end(), 0);
    auto px = [&](std::size_t panel, std::size_t x, std::size_t y) { return rgb.data() + ((y * w) + panel * d.nx + x) * 3; };
    for (std::size_t y = 0; y < d.ny; ++y)
      for (std::size_t x = 0; x < d.nx; ++x) {
        const std::uint8_t g = byte(p.image->voxels(x, y, z));
        for (std::size_t panel : {0, 2, 3}) std::fill(px(panel, x, y), px(panel, x, y) + 3, g);
        if (p.cam) {
          const float s = (*p.cam)(x, y, z);
          std::uint8_t* c = px(1, x, y);
          c[0] = byte(std::min(1.0f, 2.0f * s));
          c[1] = byte(std::max(0.0f, 2.0f * s - 1.0f));
          c[2] = byte(0.5f * g / 255.0f);
        }
        if (p.pseudo && p.pseudo->voxels(x, y, z)) px(2, x, y)[1] = 255;
        if (p.prediction && p.prediction->voxels(x, y, z)) {
          std::uint8_t* c = px(3, x, y);
          c[0] = 255;
          c[2] = c[2] / 2;
        }
        if (p.truth && on_edge(*p.truth, x, y, z)) {
          std::uint8_t* c = px(3, x, y);
          c[0] = 0;
          c[1] = 255;
          c[2] = 255;
        }
      }
    char name[64];
    std::snprintf(name, sizeof name, "_z%03zu.png", z);
    write_png(dir / (p.image->id + name), w, h, rgb);
  }
  return d.nz;
}

}  // namespace ichseg::overlay
