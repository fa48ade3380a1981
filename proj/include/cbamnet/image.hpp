#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "cbamnet/tensor.hpp"

namespace cbamnet {

/// Planar RGB float image, values in [0,1], layout (3, H, W).
struct ImageF {
  int height = 0;
  int width = 0;
  std::vector<float> data;

  static ImageF make(int h, int w, float fill = 0.0f) {
    return {h, w, std::vector<float>(static_cast<size_t>(3) * h * w, fill)};
  }
  float& at(int c, int y, int x) {
    return data[(static_cast<size_t>(c) * height + y) * width + x];
  }
  float at(int c, int y, int x) const {
    return data[(static_cast<size_t>(c) * height + y) * width + x];
  }
};

/// Decodes an 8-bit image file; grayscale is promoted to three channels.
/// Throws ValueError (carrying the path) on decode failure.
ImageF decode_image(const std::filesystem::path& path);

/// Bilinear resampling with half-pixel-center coordinates.
ImageF resize_bilinear(const ImageF& img, int out_h, int out_w);

ImageF flip_horizontal(const ImageF& img);
ImageF adjust_brightness(const ImageF& img, float factor);   // clamped to [0,1]
ImageF adjust_contrast(const ImageF& img, float factor);     // about the mean
ImageF rotate_bilinear(const ImageF& img, float degrees);    // zero fill

void write_png_rgb(const std::filesystem::path& path, const ImageF& img);
void write_png_gray(const std::filesystem::path& path,
                    const std::vector<float>& values, int h, int w);

/// (1, 3, H, W) tensor view of the image.
Tensor image_to_tensor(const ImageF& img);

}  // namespace cbamnet
