#include "fpt/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace fpt {

namespace {

[[noreturn]] void io_error(const std::string& path, const std::string& what) {
  throw std::runtime_error(path + ": " + what);
}

int pnm_token(std::istream& is, const std::string& path) {
  // skips whitespace and '#' comments, returns a non-negative integer
  for (;;) {
    int ch = is.get();
    if (ch == EOF) io_error(path, "truncated header");
    if (std::isspace(ch)) continue;
    if (ch == '#') {
      while (ch != EOF && ch != '\n') ch = is.get();
      continue;
    }
    int value = 0;
    bool any = false;
    while (ch != EOF && std::isdigit(ch)) {
      value = value * 10 + (ch - '0');
      any = true;
      ch = is.get();
    }
    if (!any) io_error(path, "malformed header");
    return value;
  }
}

Image load_pnm(const std::string& path, int channels) {
  std::ifstream is(path, std::ios::binary);
  if (!is) io_error(path, "cannot open");
  char magic[2];
  is.read(magic, 2);
  int w = pnm_token(is, path);
  int h = pnm_token(is, path);
  int maxval = pnm_token(is, path);
  if (w <= 0 || h <= 0) io_error(path, "bad dimensions");
  if (maxval <= 0 || maxval > 255) io_error(path, "unsupported maxval");
  Image img;
  img.h = h;
  img.w = w;
  img.c = channels;
  size_t bytes = static_cast<size_t>(h) * w * channels;
  std::vector<unsigned char> raw(bytes);
  is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(bytes));
  if (static_cast<size_t>(is.gcount()) != bytes) io_error(path, "truncated pixel data");
  img.pix.resize(bytes);
  float inv = 1.0f / static_cast<float>(maxval);
  for (size_t i = 0; i < bytes; ++i) img.pix[i] = raw[i] * inv;
  return img;
}

Image load_png(const std::string& path) {
  FILE* fp = std::fopen(path.c_str(), "rb");
  if (!fp) io_error(path, "cannot open");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    if (png) png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    io_error(path, "libpng init failed");
  }
  std::vector<png_bytep> rows;
  std::vector<unsigned char> raw;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    io_error(path, "png decode failed");
  }
  png_init_io(png, fp);
  png_read_info(png, info);
  png_uint_32 w = png_get_image_width(png, info);
  png_uint_32 h = png_get_image_height(png, info);
  png_byte color = png_get_color_type(png, info);
  png_byte depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  int channels = png_get_channels(png, info);
  if (channels != 1 && channels != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    io_error(path, "unsupported channel count");
  }
  size_t stride = png_get_rowbytes(png, info);
  raw.resize(stride * h);
  rows.resize(h);
  for (png_uint_32 y = 0; y < h; ++y) rows[y] = raw.data() + y * stride;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);

  Image img;
  img.h = h;
  img.w = w;
  img.c = channels;
  img.pix.resize(static_cast<size_t>(h) * w * channels);
  for (png_uint_32 y = 0; y < h; ++y) {
    const unsigned char* src = raw.data() + y * stride;
    float* dst = img.pix.data() + static_cast<size_t>(y) * w * channels;
    for (size_t i = 0; i < static_cast<size_t>(w) * channels; ++i)
      dst[i] = src[i] * (1.0f / 255.0f);
  }
  return img;
}

void save_pnm(const std::string& path, const Image& img, const char* magic) {
  std::ofstream os(path, std::ios::binary);
  if (!os) io_error(path, "cannot open for write");
  os << magic << "\n" << img.w << " " << img.h << "\n255\n";
  std::vector<unsigned char> raw(img.pix.size());
  for (size_t i = 0; i < img.pix.size(); ++i) {
    float v = std::clamp(img.pix[i], 0.0f, 1.0f);
    raw[i] = static_cast<unsigned char>(std::lround(v * 255.0f));
  }
  os.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!os) io_error(path, "write failed");
}

}  // namespace

Image load_image(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) io_error(path, "cannot open");
  unsigned char magic[2] = {0, 0};
  is.read(reinterpret_cast<char*>(magic), 2);
  is.close();
  if (magic[0] == 0x89 && magic[1] == 'P') return load_png(path);
  if (magic[0] == 'P' && magic[1] == '5') return load_pnm(path, 1);
  if (magic[0] == 'P' && magic[1] == '6') return load_pnm(path, 3);
  io_error(path, "unrecognized image format");
}

void save_pgm(const std::string& path, const Image& img) {
  if (img.c != 1) throw std::invalid_argument("save_pgm: image must have 1 channel");
  save_pnm(path, img, "P5");
}

void save_ppm(const std::string& path, const Image& img) {
  if (img.c != 3) throw std::invalid_argument("save_ppm: image must have 3 channels");
  save_pnm(path, img, "P6");
}

Image resize_area(const Image& src, int64_t out_h, int64_t out_w) {
  if (out_h <= 0 || out_w <= 0) throw std::invalid_argument("resize_area: bad output size");
  Image dst;
  dst.h = out_h;
  dst.w = out_w;
  dst.c = src.c;
  dst.pix.assign(static_cast<size_t>(out_h) * out_w * src.c, 0.0f);
  double sy = static_cast<double>(src.h) / out_h;
  double sx = static_cast<double>(src.w) / out_w;
  std::vector<double> acc(static_cast<size_t>(src.c));
  for (int64_t oy = 0; oy < out_h; ++oy) {
    double fy0 = oy * sy, fy1 = (oy + 1) * sy;
    int64_t y0 = static_cast<int64_t>(std::floor(fy0));
    int64_t y1 = std::min<int64_t>(static_cast<int64_t>(std::ceil(fy1)), src.h);
    for (int64_t ox = 0; ox < out_w; ++ox) {
      double fx0 = ox * sx, fx1 = (ox + 1) * sx;
      int64_t x0 = static_cast<int64_t>(std::floor(fx0));
      int64_t x1 = std::min<int64_t>(static_cast<int64_t>(std::ceil(fx1)), src.w);
      std::fill(acc.begin(), acc.end(), 0.0);
      double area = 0.0;
      for (int64_t y = y0; y < y1; ++y) {
        double wy = std::min<double>(y + 1, fy1) - std::max<double>(y, fy0);
        for (int64_t x = x0; x < x1; ++x) {
          double wx = std::min<double>(x + 1, fx1) - std::max<double>(x, fx0);
          double wgt = wy * wx;
          area += wgt;
          for (int64_t ch = 0; ch < src.c; ++ch) acc[ch] += wgt * src.at(y, x, ch);
        }
      }
      for (int64_t ch = 0; ch < src.c; ++ch)
        dst.at(oy, ox, ch) = static_cast<float>(acc[ch] / area);
    }
  }
  return dst;
}

Image resize_bilinear(const Image& src, double y0, double x0, double y1, double x1,
                      int64_t out_h, int64_t out_w) {
  if (out_h <= 0 || out_w <= 0) throw std::invalid_argument("resize_bilinear: bad output size");
  if (!(y1 > y0) || !(x1 > x0)) throw std::invalid_argument("resize_bilinear: empty source rect");
  Image dst;
  dst.h = out_h;
  dst.w = out_w;
  dst.c = src.c;
  dst.pix.resize(static_cast<size_t>(out_h) * out_w * src.c);
  double sy = (y1 - y0) / out_h;
  double sx = (x1 - x0) / out_w;
  for (int64_t oy = 0; oy < out_h; ++oy) {
    double fy = y0 + (oy + 0.5) * sy - 0.5;
    fy = std::clamp(fy, 0.0, static_cast<double>(src.h - 1));
    int64_t iy = std::min<int64_t>(static_cast<int64_t>(fy), src.h - 2 >= 0 ? src.h - 2 : 0);
    double ty = fy - iy;
    int64_t iy1 = std::min<int64_t>(iy + 1, src.h - 1);
    for (int64_t ox = 0; ox < out_w; ++ox) {
      double fx = x0 + (ox + 0.5) * sx - 0.5;
      fx = std::clamp(fx, 0.0, static_cast<double>(src.w - 1));
      int64_t ix = std::min<int64_t>(static_cast<int64_t>(fx), src.w - 2 >= 0 ? src.w - 2 : 0);
      double tx = fx - ix;
      int64_t ix1 = std::min<int64_t>(ix + 1, src.w - 1);
      for (int64_t ch = 0; ch < src.c; ++ch) {
        double a = src.at(iy, ix, ch) * (1 - tx) + src.at(iy, ix1, ch) * tx;
        double b = src.at(iy1, ix, ch) * (1 - tx) + src.at(iy1, ix1, ch) * tx;
        dst.at(oy, ox, ch) = static_cast<float>(a * (1 - ty) + b * ty);
      }
    }
  }
  return dst;
}

Tensor image_to_tensor(const Image& img, float mean, float stddev) {
  Tensor t = Tensor::empty({img.h, img.w, img.c});
  float inv = 1.0f / stddev;
  for (size_t i = 0; i < img.pix.size(); ++i) t.data()[i] = (img.pix[i] - mean) * inv;
  return t;
}

}  // namespace fpt
