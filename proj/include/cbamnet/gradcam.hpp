#pragma once

#include <array>
#include <string>
#include <vector>

#include "cbamnet/image.hpp"
#include "cbamnet/model.hpp"

namespace cbamnet {

/// Saliency map at image resolution, max-normalized unless identically zero.
struct Heatmap {
  int height = 0, width = 0;
  std::vector<float> values;  // in [0,1]
  std::string source_layer;
  int target_class = 0;
  bool all_zero = false;

  float at(int y, int x) const {
    return values[static_cast<size_t>(y) * width + x];
  }
};

/// Channel weights = spatial mean of d(logit)/dA over the chosen block's
/// post-attention maps; heatmap = ReLU of the weighted sum, bilinearly
/// upsampled (align-corners) to the input resolution and divided by its max.
/// Gradients are taken from the pre-softmax logit. Rejects unknown layer
/// names, listing the valid ones.
Heatmap compute_gradcam(Model& model, const Tensor& image, int target_class,
                        const std::string& layer = "block4");

/// Fixed piecewise-linear colormap with anchors at t = 0, 1/3, 2/3, 1:
/// blue (0,0,1) -> green (0,1,0) -> yellow (1,1,0) -> red (1,0,0).
std::array<float, 3> heat_color(float t);

/// alpha*color(heatmap) + (1-alpha)*original, per pixel.
/// Rejects a size mismatch between heatmap and image.
ImageF overlay(const Heatmap& heatmap, const ImageF& original, float alpha);

/// Writes `<stem>_heatmap.png` (grayscale) and `<stem>_overlay.png` next to
/// `stem`; returns the two paths written.
std::vector<std::filesystem::path> write_explanation(
    const Heatmap& heatmap, const ImageF& original, float alpha,
    const std::filesystem::path& stem);

}  // namespace cbamnet
