#pragma once

#include "xvpr/tensor.hpp"

#include <string>

namespace xvpr {

/// Images are [3, H, W] tensors with values in [0, 1].
struct ImageFrame {
  int width = 0;
  int height = 0;
  Tensor rgb;  // shape [3, H, W]
};

void save_image_ppm(const std::string& path, const ImageFrame& image);
ImageFrame load_image_ppm(const std::string& path);

/// Bilinear resize; used to bring higher-resolution images to the configured
/// input grid.
ImageFrame resize_bilinear(const ImageFrame& image, int width, int height);

/// Rec.601 luma, shape [H, W].
Tensor luminance(const ImageFrame& image);

}  // namespace xvpr
