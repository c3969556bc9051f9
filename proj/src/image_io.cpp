#include "vismem/image_io.hpp"

#include <png.h>

#include <cstring>

#include "vismem/error.hpp"
#include "vismem/file_util.hpp"

namespace vismem {

namespace {

std::uint32_t png_format(std::uint32_t channels) {
  switch (channels) {
    case 1: return PNG_FORMAT_GRAY;
    case 3: return PNG_FORMAT_RGB;
    default: throw Error(Errc::usage, "PNG images must have 1 or 3 channels");
  }
}

}  // namespace

std::string encode_png(const Image8& image) {
  if (image.width == 0 || image.height == 0) throw Error(Errc::usage, "cannot encode an empty image");
  if (image.pixels.size() != std::size_t{image.width} * image.height * image.channels) {
    throw Error(Errc::invariant, "image buffer does not match its shape");
  }
  png_image png;
  std::memset(&png, 0, sizeof png);
  png.version = PNG_IMAGE_VERSION;
  png.width = image.width;
  png.height = image.height;
  png.format = png_format(image.channels);

  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&png, nullptr, &size, 0, image.pixels.data(), 0, nullptr)) {
    throw Error(Errc::io, std::string("PNG encode failed: ") + png.message);
  }
  std::string out(size, '\0');
  if (!png_image_write_to_memory(&png, out.data(), &size, 0, image.pixels.data(), 0, nullptr)) {
    throw Error(Errc::io, std::string("PNG encode failed: ") + png.message);
  }
  out.resize(size);
  return out;
}

Image8 decode_png(std::string_view bytes, std::uint32_t channels) {
  png_image png;
  std::memset(&png, 0, sizeof png);
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&png, bytes.data(), bytes.size())) {
    throw Error(Errc::format, std::string("not a readable PNG: ") + png.message);
  }
  png.format = png_format(channels);
  Image8 out{png.width, png.height, channels, {}};
  out.pixels.resize(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, out.pixels.data(), 0, nullptr)) {
    png_image_free(&png);
    throw Error(Errc::format, std::string("PNG decode failed: ") + png.message);
  }
  return out;
}

void write_png(const Image8& image, const std::filesystem::path& path) {
  write_file(path, encode_png(image));
}

Image8 read_png(const std::filesystem::path& path, std::uint32_t channels) {
  try {
    return decode_png(read_file(path), channels);
  } catch (const Error& e) {
    if (e.code() == Errc::io) throw;
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

Image8 mask_to_image(const LabelMask& mask) {
  Image8 img{mask.cols, mask.rows, 1, std::vector<std::uint8_t>(mask.cells())};
  for (std::size_t i = 0; i < mask.cells(); ++i) {
    const auto l = mask.labels[i];
    if (l == kIgnoreLabel) {
      img.pixels[i] = kIgnorePixel;
    } else if (l < 0 || l >= kIgnorePixel) {
      throw Error(Errc::invariant, "label " + std::to_string(l) + " cannot be stored in a mask PNG");
    } else {
      img.pixels[i] = static_cast<std::uint8_t>(l);
    }
  }
  return img;
}

LabelMask image_to_mask(const Image8& image) {
  if (image.channels != 1) throw Error(Errc::usage, "mask images are single-channel");
  LabelMask mask(image.height, image.width);
  for (std::size_t i = 0; i < mask.cells(); ++i) {
    mask.labels[i] = image.pixels[i] == kIgnorePixel ? kIgnoreLabel : image.pixels[i];
  }
  return mask;
}

void write_mask_png(const LabelMask& mask, const std::filesystem::path& path) {
  write_png(mask_to_image(mask), path);
}

LabelMask read_mask_png(const std::filesystem::path& path) {
  return image_to_mask(read_png(path, 1));
}

}  // namespace vismem
