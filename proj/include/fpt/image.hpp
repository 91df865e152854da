#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fpt/tensor.hpp"

namespace fpt {

// Row-major [h][w][c] pixels in [0,1].
struct Image {
  int64_t h = 0;
  int64_t w = 0;
  int64_t c = 0;
  std::vector<float> pix;

  float& at(int64_t y, int64_t x, int64_t ch) { return pix[(y * w + x) * c + ch]; }
  float at(int64_t y, int64_t x, int64_t ch) const { return pix[(y * w + x) * c + ch]; }
};

// PNG (via libpng), binary PPM (P6) or PGM (P5), dispatched on magic bytes.
Image load_image(const std::string& path);
void save_pgm(const std::string& path, const Image& img);   // c must be 1
void save_ppm(const std::string& path, const Image& img);   // c must be 3

// Anti-aliased box-filter resample (the deterministic downscale).
Image resize_area(const Image& src, int64_t out_h, int64_t out_w);
// Center-aligned bilinear sample of a source sub-rectangle.
Image resize_bilinear(const Image& src, double y0, double x0, double y1, double x1,
                      int64_t out_h, int64_t out_w);

// (pix - mean) / stddev into a [h, w, c] tensor
Tensor image_to_tensor(const Image& img, float mean = 0.5f, float stddev = 0.5f);

}  // namespace fpt
