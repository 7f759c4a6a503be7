#include "dpst/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <fstream>
#include <memory>
#include <string>

#include <jpeglib.h>
#include <png.h>

namespace dpst::image {
namespace {

std::string lower_extension(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext;
}

RgbImage read_png(const std::filesystem::path& path) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str())) {
    throw InputError("cannot read PNG " + path.string() + ": " + png.message);
  }
  png.format = PNG_FORMAT_RGB;
  RgbImage image{png.width, png.height, {}};
  image.pixels.resize(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, image.pixels.data(), 0, nullptr)) {
    png_image_free(&png);
    throw InputError("cannot decode PNG " + path.string() + ": " + png.message);
  }
  return image;
}

void write_png(const RgbImage& image, const std::filesystem::path& path) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.width);
  png.height = static_cast<png_uint_32>(image.height);
  png.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&png, path.c_str(), 0, image.pixels.data(), 0, nullptr)) {
    throw InputError("cannot write PNG " + path.string() + ": " + png.message);
  }
}

// Skips whitespace and '#' comments between PPM header tokens.
std::size_t read_ppm_number(std::istream& in, const std::filesystem::path& path) {
  int c = in.peek();
  while (c != EOF && (std::isspace(c) || c == '#')) {
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else {
      in.get();
    }
    c = in.peek();
  }
  std::size_t value = 0;
  if (!(in >> value)) throw FormatError(path.string() + ": malformed PPM header");
  return value;
}

RgbImage read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  std::string magic(2, '\0');
  in.read(magic.data(), 2);
  if (magic != "P6") throw FormatError(path.string() + ": only binary PPM (P6) is supported");
  RgbImage image;
  image.width = read_ppm_number(in, path);
  image.height = read_ppm_number(in, path);
  const std::size_t maxval = read_ppm_number(in, path);
  if (maxval != 255) throw FormatError(path.string() + ": PPM maxval must be 255");
  in.get();
  image.pixels.resize(image.width * image.height * 3);
  in.read(reinterpret_cast<char*>(image.pixels.data()),
          static_cast<std::streamsize>(image.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(image.pixels.size())) {
    throw TruncationError(path.string() + ": PPM pixel data truncated");
  }
  return image;
}

void write_ppm(const RgbImage& image, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write " + path.string());
  out << "P6\n" << image.width << " " << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()),
            static_cast<std::streamsize>(image.pixels.size()));
}

struct JpegErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr info) {
  auto* err = reinterpret_cast<JpegErrorManager*>(info->err);
  (*info->err->format_message)(info, err->message);
  std::longjmp(err->jump, 1);
}

RgbImage read_jpeg(const std::filesystem::path& path) {
  std::unique_ptr<std::FILE, int (*)(std::FILE*)> file(std::fopen(path.c_str(), "rb"),
                                                        &std::fclose);
  if (!file) throw InputError("cannot open " + path.string());

  jpeg_decompress_struct info{};
  JpegErrorManager err{};
  info.err = jpeg_std_error(&err.base);
  err.base.error_exit = jpeg_error_exit;
  RgbImage image;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&info);
    throw InputError("cannot decode JPEG " + path.string() + ": " + err.message);
  }
  jpeg_create_decompress(&info);
  jpeg_stdio_src(&info, file.get());
  jpeg_read_header(&info, TRUE);
  info.out_color_space = JCS_RGB;
  jpeg_start_decompress(&info);
  image.width = info.output_width;
  image.height = info.output_height;
  image.pixels.resize(image.width * image.height * 3);
  while (info.output_scanline < info.output_height) {
    JSAMPROW row = image.pixels.data() + info.output_scanline * image.width * 3;
    jpeg_read_scanlines(&info, &row, 1);
  }
  jpeg_finish_decompress(&info);
  jpeg_destroy_decompress(&info);
  return image;
}

}  // namespace

RgbImage read_image(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw InputError("no such file: " + path.string());
  const std::string ext = lower_extension(path);
  if (ext == ".png") return read_png(path);
  if (ext == ".ppm" || ext == ".pnm") return read_ppm(path);
  if (ext == ".jpg" || ext == ".jpeg") return read_jpeg(path);
  throw InputError("unsupported image format: " + path.string());
}

RgbImage read_lossless_image(const std::filesystem::path& path) {
  const std::string ext = lower_extension(path);
  if (ext == ".jpg" || ext == ".jpeg") {
    throw InputError(path.string() +
                     ": segmentation masks must be lossless (PNG or PPM); JPEG colors are "
                     "ambiguous against a palette");
  }
  return read_image(path);
}

void write_image(const RgbImage& image, const std::filesystem::path& path) {
  const std::string ext = lower_extension(path);
  if (ext == ".png") return write_png(image, path);
  if (ext == ".ppm" || ext == ".pnm") return write_ppm(image, path);
  throw InputError("unsupported output format (use .png or .ppm): " + path.string());
}

Tensor to_tensor(const RgbImage& image) {
  Tensor out({image.height, image.width, 3});
  for (std::size_t i = 0; i < image.pixels.size(); ++i) out[i] = image.pixels[i] / 255.0f;
  return out;
}

RgbImage from_tensor(const Tensor& image) {
  if (image.rank() != 3 || image.extent(2) != 3) {
    throw ShapeError("expected an {H, W, 3} image, got " + shape_to_string(image.shape()));
  }
  RgbImage out{image.extent(1), image.extent(0), std::vector<std::uint8_t>(image.size())};
  for (std::size_t i = 0; i < image.size(); ++i) {
    const float v = std::clamp(image[i], 0.0f, 1.0f);
    out.pixels[i] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
  }
  return out;
}

Tensor resize_bilinear(const Tensor& image, std::size_t height, std::size_t width) {
  if (image.rank() != 3) {
    throw ShapeError("resize expects an {H, W, C} image, got " + shape_to_string(image.shape()));
  }
  const std::size_t src_h = image.extent(0);
  const std::size_t src_w = image.extent(1);
  const std::size_t channels = image.extent(2);
  Tensor out({height, width, channels});
  const double scale_y = static_cast<double>(src_h) / static_cast<double>(height);
  const double scale_x = static_cast<double>(src_w) / static_cast<double>(width);
  auto sample = [](double pos, std::size_t extent, std::size_t& i0, std::size_t& i1, double& t) {
    pos = std::clamp(pos, 0.0, static_cast<double>(extent - 1));
    i0 = static_cast<std::size_t>(std::floor(pos));
    i1 = std::min(i0 + 1, extent - 1);
    t = pos - static_cast<double>(i0);
  };
  for (std::size_t y = 0; y < height; ++y) {
    std::size_t y0, y1;
    double ty;
    sample((static_cast<double>(y) + 0.5) * scale_y - 0.5, src_h, y0, y1, ty);
    for (std::size_t x = 0; x < width; ++x) {
      std::size_t x0, x1;
      double tx;
      sample((static_cast<double>(x) + 0.5) * scale_x - 0.5, src_w, x0, x1, tx);
      for (std::size_t c = 0; c < channels; ++c) {
        const double top = (1 - tx) * image(y0, x0, c) + tx * image(y0, x1, c);
        const double bottom = (1 - tx) * image(y1, x0, c) + tx * image(y1, x1, c);
        out(y, x, c) = static_cast<float>((1 - ty) * top + ty * bottom);
      }
    }
  }
  return out;
}

}  // namespace dpst::image
