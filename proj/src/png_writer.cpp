#include "vgan/png_writer.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>

#include "vgan/errors.hpp"

namespace vgan {

SliceAxis parse_axis(const std::string& s) {
  if (s == "axial" || s == "0") return SliceAxis::Axial;
  if (s == "coronal" || s == "1") return SliceAxis::Coronal;
  if (s == "sagittal" || s == "2") return SliceAxis::Sagittal;
  throw ParameterError("unknown axis '" + s + "' (axial, coronal, sagittal)");
}

int64_t axis_extent(const Shape3& s, SliceAxis axis) {
  switch (axis) {
    case SliceAxis::Axial:
      return s.d1;
    case SliceAxis::Coronal:
      return s.d2;
    case SliceAxis::Sagittal:
      return s.d3;
  }
  return 0;
}

uint8_t to_gray8(float v) {
  if (!(v > 0.0f)) return 0;
  if (v >= 1.0f) return 255;
  return static_cast<uint8_t>(std::lround(v * 255.0f));
}

GrayImage extract_slice(const Volume& v, SliceAxis axis, int64_t index) {
  const auto& s = v.shape();
  if (index < 0 || index >= axis_extent(s, axis))
    throw NotFoundError("slice index " + std::to_string(index) + " outside 0.." + std::to_string(axis_extent(s, axis) - 1));
  GrayImage img;
  switch (axis) {
    case SliceAxis::Axial:
      img.height = s.d2, img.width = s.d3;
      for (int64_t j = 0; j < s.d2; ++j)
        for (int64_t k = 0; k < s.d3; ++k) img.pixels.push_back(to_gray8(v.at(index, j, k)));
      break;
    case SliceAxis::Coronal:
      img.height = s.d1, img.width = s.d3;
      for (int64_t i = 0; i < s.d1; ++i)
        for (int64_t k = 0; k < s.d3; ++k) img.pixels.push_back(to_gray8(v.at(i, index, k)));
      break;
    case SliceAxis::Sagittal:
      img.height = s.d1, img.width = s.d2;
      for (int64_t i = 0; i < s.d1; ++i)
        for (int64_t j = 0; j < s.d2; ++j) img.pixels.push_back(to_gray8(v.at(i, j, index)));
      break;
  }
  return img;
}

namespace {

void write_cb(png_structp png, png_bytep data, png_size_t len) {
  auto* out = static_cast<std::string*>(png_get_io_ptr(png));
  out->append(reinterpret_cast<const char*>(data), len);
}

void flush_cb(png_structp) {}

struct ReadCursor {
  const std::string* bytes;
  size_t pos;
};

void read_cb(png_structp png, png_bytep data, png_size_t len) {
  auto* cur = static_cast<ReadCursor*>(png_get_io_ptr(png));
  if (cur->pos + len > cur->bytes->size()) png_error(png, "truncated PNG");
  std::memcpy(data, cur->bytes->data() + cur->pos, len);
  cur->pos += len;
}

}  // namespace

std::string encode_png(const GrayImage& img) {
  if (img.width < 1 || img.height < 1 || static_cast<int64_t>(img.pixels.size()) != img.width * img.height)
    throw ShapeError("image buffer does not match its dimensions");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("libpng initialisation failed");
  }
  std::string out;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("PNG encoding failed");
  }
  png_set_write_fn(png, &out, write_cb, flush_cb);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
               PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int64_t r = 0; r < img.height; ++r)
    png_write_row(png, const_cast<png_bytep>(img.pixels.data() + r * img.width));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

GrayImage decode_png(const std::string& bytes) {
  if (bytes.size() < 8 || png_sig_cmp(reinterpret_cast<png_const_bytep>(bytes.data()), 0, 8) != 0)
    throw FormatError("not a PNG stream");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("libpng initialisation failed");
  }
  GrayImage img;
  ReadCursor cur{&bytes, 0};
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("PNG decoding failed");
  }
  png_set_read_fn(png, &cur, read_cb);
  png_read_info(png, info);
  if (png_get_color_type(png, info) != PNG_COLOR_TYPE_GRAY || png_get_bit_depth(png, info) != 8) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("expected an 8-bit grayscale PNG");
  }
  img.width = png_get_image_width(png, info);
  img.height = png_get_image_height(png, info);
  img.pixels.resize(static_cast<size_t>(img.width * img.height));
  for (int64_t r = 0; r < img.height; ++r) png_read_row(png, img.pixels.data() + r * img.width, nullptr);
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

}  // namespace vgan
