#include "cbamnet/gradcam.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

namespace cbamnet {

namespace {

// Align-corners bilinear upsample of a single-channel map.
std::vector<float> upsample_align_corners(const std::vector<float>& src,
                                          int sh, int sw, int oh, int ow) {
  std::vector<float> out(static_cast<size_t>(oh) * ow);
  const float sy = oh > 1 ? static_cast<float>(sh - 1) / (oh - 1) : 0.0f;
  const float sx = ow > 1 ? static_cast<float>(sw - 1) / (ow - 1) : 0.0f;
  for (int y = 0; y < oh; ++y) {
    const float fy = y * sy;
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, sh - 1);
    const float wy = fy - y0;
    for (int x = 0; x < ow; ++x) {
      const float fx = x * sx;
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, sw - 1);
      const float wx = fx - x0;
      const float top = src[y0 * sw + x0] * (1 - wx) + src[y0 * sw + x1] * wx;
      const float bot = src[y1 * sw + x0] * (1 - wx) + src[y1 * sw + x1] * wx;
      out[static_cast<size_t>(y) * ow + x] = top * (1 - wy) + bot * wy;
    }
  }
  return out;
}

}  // namespace

Heatmap compute_gradcam(Model& model, const Tensor& image, int target_class,
                        const std::string& layer) {
  const auto valid = model.capture_names();
  if (std::find(valid.begin(), valid.end(), layer) == valid.end()) {
    std::ostringstream os;
    os << "compute_gradcam: unknown layer \"" << layer << "\"; valid layers:";
    for (const auto& name : valid) os << " " << name;
    throw ValueError(os.str());
  }
  const int k = model.spec().num_classes;
  if (target_class < 0 || target_class >= k)
    throw ValueError("compute_gradcam: class " + std::to_string(target_class) +
                     " out of range for " + std::to_string(k) + " classes");
  if (image.shape().n != 1)
    throw ShapeError("compute_gradcam: expects a single image, got " +
                     image.shape().str());

  std::map<std::string, Tensor> capture;
  Tensor logits = model.forward(image, &capture);
  Tensor selector = Tensor::zeros(logits.shape());
  selector.values()[target_class] = 1.0f;
  backward(sum(mul(logits, selector)));

  Tensor a = capture.at(layer);
  const Shape& s = a.shape();
  const std::int64_t hw = s.h * s.w;
  Heatmap map;
  map.source_layer = layer;
  map.target_class = target_class;
  map.height = static_cast<int>(image.shape().h);
  map.width = static_cast<int>(image.shape().w);

  std::vector<float> raw(static_cast<size_t>(hw), 0.0f);
  if (!a.grad().empty()) {
    for (std::int64_t c = 0; c < s.c; ++c) {
      double alpha = 0;
      const float* g = a.grad().data() + c * hw;
      for (std::int64_t i = 0; i < hw; ++i) alpha += g[i];
      alpha /= static_cast<double>(hw);
      const float* v = a.values().data() + c * hw;
      for (std::int64_t i = 0; i < hw; ++i)
        raw[i] += static_cast<float>(alpha) * v[i];
    }
  }
  for (auto& v : raw) v = std::max(v, 0.0f);

  // The backward sweep above deposited gradients on the parameters too;
  // leave the model clean for its next caller.
  for (auto& e : model.registry()) e.tensor.zero_grad();

  map.values = upsample_align_corners(raw, static_cast<int>(s.h),
                                      static_cast<int>(s.w), map.height,
                                      map.width);
  const float mx = *std::max_element(map.values.begin(), map.values.end());
  if (mx > 0.0f) {
    for (auto& v : map.values) v /= mx;
  } else {
    std::fill(map.values.begin(), map.values.end(), 0.0f);
    map.all_zero = true;
  }
  return map;
}

std::array<float, 3> heat_color(float t) {
  t = std::clamp(t, 0.0f, 1.0f);
  static constexpr std::array<std::array<float, 3>, 4> kAnchors{{
      {0.0f, 0.0f, 1.0f},  // blue
      {0.0f, 1.0f, 0.0f},  // green
      {1.0f, 1.0f, 0.0f},  // yellow
      {1.0f, 0.0f, 0.0f},  // red
  }};
  const float pos = t * 3.0f;
  const int seg = std::min(static_cast<int>(pos), 2);
  const float f = pos - seg;
  std::array<float, 3> out{};
  for (int c = 0; c < 3; ++c)
    out[c] = kAnchors[seg][c] * (1 - f) + kAnchors[seg + 1][c] * f;
  return out;
}

ImageF overlay(const Heatmap& heatmap, const ImageF& original, float alpha) {
  if (alpha < 0.0f || alpha > 1.0f)
    throw ValueError("overlay: alpha must lie in [0,1]");
  if (heatmap.height != original.height || heatmap.width != original.width)
    throw ShapeError("overlay: heatmap " + std::to_string(heatmap.height) +
                     "x" + std::to_string(heatmap.width) + " vs image " +
                     std::to_string(original.height) + "x" +
                     std::to_string(original.width));
  ImageF out = ImageF::make(original.height, original.width);
  for (int y = 0; y < original.height; ++y)
    for (int x = 0; x < original.width; ++x) {
      const auto color = heat_color(heatmap.at(y, x));
      for (int c = 0; c < 3; ++c)
        out.at(c, y, x) =
            alpha * color[c] + (1 - alpha) * original.at(c, y, x);
    }
  return out;
}

std::vector<std::filesystem::path> write_explanation(
    const Heatmap& heatmap, const ImageF& original, float alpha,
    const std::filesystem::path& stem) {
  const std::filesystem::path heat_path =
      stem.parent_path() / (stem.filename().string() + "_heatmap.png");
  const std::filesystem::path over_path =
      stem.parent_path() / (stem.filename().string() + "_overlay.png");
  write_png_gray(heat_path, heatmap.values, heatmap.height, heatmap.width);
  write_png_rgb(over_path, overlay(heatmap, original, alpha));
  return {heat_path, over_path};
}

}  // namespace cbamnet
