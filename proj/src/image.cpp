#include "cbamnet/image.hpp"

#include <algorithm>
#include <cmath>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

namespace cbamnet {

ImageF decode_image(const std::filesystem::path& path) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty())
    throw ValueError("cannot decode image " + path.string());
  ImageF img = ImageF::make(bgr.rows, bgr.cols);
  for (int y = 0; y < bgr.rows; ++y) {
    const cv::Vec3b* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < bgr.cols; ++x) {
      img.at(0, y, x) = row[x][2] / 255.0f;
      img.at(1, y, x) = row[x][1] / 255.0f;
      img.at(2, y, x) = row[x][0] / 255.0f;
    }
  }
  return img;
}

ImageF resize_bilinear(const ImageF& img, int out_h, int out_w) {
  if (img.height == out_h && img.width == out_w) return img;
  ImageF out = ImageF::make(out_h, out_w);
  const float sy = static_cast<float>(img.height) / out_h;
  const float sx = static_cast<float>(img.width) / out_w;
  for (int y = 0; y < out_h; ++y) {
    const float fy = std::clamp((y + 0.5f) * sy - 0.5f, 0.0f,
                                static_cast<float>(img.height - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, img.height - 1);
    const float wy = fy - y0;
    for (int x = 0; x < out_w; ++x) {
      const float fx = std::clamp((x + 0.5f) * sx - 0.5f, 0.0f,
                                  static_cast<float>(img.width - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, img.width - 1);
      const float wx = fx - x0;
      for (int c = 0; c < 3; ++c) {
        const float top = img.at(c, y0, x0) * (1 - wx) + img.at(c, y0, x1) * wx;
        const float bot = img.at(c, y1, x0) * (1 - wx) + img.at(c, y1, x1) * wx;
        out.at(c, y, x) = top * (1 - wy) + bot * wy;
      }
    }
  }
  return out;
}

ImageF flip_horizontal(const ImageF& img) {
  ImageF out = ImageF::make(img.height, img.width);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x)
        out.at(c, y, x) = img.at(c, y, img.width - 1 - x);
  return out;
}

ImageF adjust_brightness(const ImageF& img, float factor) {
  ImageF out = img;
  for (auto& v : out.data) v = std::clamp(v * factor, 0.0f, 1.0f);
  return out;
}

ImageF adjust_contrast(const ImageF& img, float factor) {
  double mean = 0;
  for (float v : img.data) mean += v;
  mean /= static_cast<double>(img.data.size());
  ImageF out = img;
  const float m = static_cast<float>(mean);
  for (auto& v : out.data) v = std::clamp((v - m) * factor + m, 0.0f, 1.0f);
  return out;
}

ImageF rotate_bilinear(const ImageF& img, float degrees) {
  ImageF out = ImageF::make(img.height, img.width);
  const float rad = degrees * 3.14159265358979323846f / 180.0f;
  const float cs = std::cos(rad), sn = std::sin(rad);
  const float cy = (img.height - 1) / 2.0f, cx = (img.width - 1) / 2.0f;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      // inverse-map the output pixel into the source
      const float dy = y - cy, dx = x - cx;
      const float sy = cs * dy + sn * dx + cy;
      const float sx = -sn * dy + cs * dx + cx;
      const int y0 = static_cast<int>(std::floor(sy));
      const int x0 = static_cast<int>(std::floor(sx));
      if (y0 < -1 || y0 >= img.height || x0 < -1 || x0 >= img.width) continue;
      const float wy = sy - y0, wx = sx - x0;
      for (int c = 0; c < 3; ++c) {
        auto sample = [&](int yy, int xx) -> float {
          if (yy < 0 || yy >= img.height || xx < 0 || xx >= img.width)
            return 0.0f;
          return img.at(c, yy, xx);
        };
        const float top = sample(y0, x0) * (1 - wx) + sample(y0, x0 + 1) * wx;
        const float bot =
            sample(y0 + 1, x0) * (1 - wx) + sample(y0 + 1, x0 + 1) * wx;
        out.at(c, y, x) = top * (1 - wy) + bot * wy;
      }
    }
  return out;
}

namespace {

std::uint8_t to_byte(float v) {
  return static_cast<std::uint8_t>(
      std::clamp(std::lround(v * 255.0f), 0L, 255L));
}

}  // namespace

void write_png_rgb(const std::filesystem::path& path, const ImageF& img) {
  cv::Mat bgr(img.height, img.width, CV_8UC3);
  for (int y = 0; y < img.height; ++y) {
    cv::Vec3b* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < img.width; ++x) {
      row[x][2] = to_byte(img.at(0, y, x));
      row[x][1] = to_byte(img.at(1, y, x));
      row[x][0] = to_byte(img.at(2, y, x));
    }
  }
  if (!cv::imwrite(path.string(), bgr))
    throw ValueError("cannot write image " + path.string());
}

void write_png_gray(const std::filesystem::path& path,
                    const std::vector<float>& values, int h, int w) {
  cv::Mat gray(h, w, CV_8UC1);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      gray.at<std::uint8_t>(y, x) = to_byte(values[static_cast<size_t>(y) * w + x]);
  if (!cv::imwrite(path.string(), gray))
    throw ValueError("cannot write image " + path.string());
}

Tensor image_to_tensor(const ImageF& img) {
  return Tensor::from_values({1, 3, img.height, img.width}, img.data);
}

}  // namespace cbamnet
