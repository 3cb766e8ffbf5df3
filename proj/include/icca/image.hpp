#pragma once

#include <png.h>

#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "icca/util.hpp"

namespace icca {

// Decoded 8-bit RGB image, row-major, no padding.
struct Raster {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;  // width * height * 3 bytes

  static Raster solid(int w, int h, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    Raster out;
    out.width = w;
    out.height = h;
    out.rgb.resize(static_cast<std::size_t>(w) * h * 3);
    for (std::size_t i = 0; i < out.rgb.size(); i += 3) {
      out.rgb[i] = r;
      out.rgb[i + 1] = g;
      out.rgb[i + 2] = b;
    }
    return out;
  }

  std::array<std::uint8_t, 3> pixel(int x, int y) const {
    std::size_t off = (static_cast<std::size_t>(y) * width + x) * 3;
    return {rgb[off], rgb[off + 1], rgb[off + 2]};
  }

  bool is_uniform() const {
    if (rgb.size() < 3) return true;
    for (std::size_t i = 3; i < rgb.size(); i += 3) {
      if (rgb[i] != rgb[0] || rgb[i + 1] != rgb[1] || rgb[i + 2] != rgb[2]) return false;
    }
    return true;
  }

  friend bool operator==(const Raster& a, const Raster& b) {
    return a.width == b.width && a.height == b.height && a.rgb == b.rgb;
  }
};

namespace png {

inline Raster read_file(const std::filesystem::path& path) {
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.string().c_str())) {
    throw LoadError("png decode failed: " + path.string() + ": " + img.message);
  }
  img.format = PNG_FORMAT_RGB;
  Raster out;
  out.width = static_cast<int>(img.width);
  out.height = static_cast<int>(img.height);
  out.rgb.resize(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, out.rgb.data(), 0, nullptr)) {
    std::string msg = img.message;
    png_image_free(&img);
    throw LoadError("png decode failed: " + path.string() + ": " + msg);
  }
  return out;
}

inline std::vector<std::uint8_t> encode(const Raster& raster) {
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(raster.width);
  img.height = static_cast<png_uint_32>(raster.height);
  img.format = PNG_FORMAT_RGB;

  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&img, nullptr, &size, 0, raster.rgb.data(), 0, nullptr)) {
    throw Error(std::string("png encode sizing failed: ") + img.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&img, out.data(), &size, 0, raster.rgb.data(), 0, nullptr)) {
    throw Error(std::string("png encode failed: ") + img.message);
  }
  out.resize(size);
  return out;
}

inline void write_file(const std::filesystem::path& path, const Raster& raster) {
  auto bytes = encode(raster);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw LoadError("cannot open file for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw LoadError("write failed: " + path.string());
}

}  // namespace png

// Named colors for synthetic fixtures. Each entry is visually distinct so a
// color-word in a message identifies exactly one image.
struct NamedColor {
  std::string_view name;
  std::uint8_t r, g, b;
};

inline constexpr std::array<NamedColor, 10> kPalette = {{
    {"red", 220, 40, 40},
    {"green", 40, 180, 70},
    {"blue", 50, 90, 220},
    {"yellow", 235, 210, 50},
    {"purple", 140, 60, 180},
    {"orange", 240, 140, 30},
    {"teal", 30, 160, 160},
    {"pink", 240, 130, 180},
    {"brown", 140, 90, 50},
    {"gray", 128, 128, 128},
}};

inline const NamedColor* find_color(std::string_view name) {
  for (const auto& c : kPalette) {
    if (c.name == name) return &c;
  }
  return nullptr;
}

}  // namespace icca
