#pragma once

#include "xvpr/event_io.hpp"
#include "xvpr/tensor.hpp"

#include <string>
#include <vector>

namespace xvpr {

/// Boolean pixel grid marking cells that hold at least one event.
struct OccupancyMask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> cells;  // row-major, 0/1

  OccupancyMask() = default;
  OccupancyMask(int w, int h) : width(w), height(h), cells(static_cast<std::size_t>(w) * h, 0) {}

  bool at(int x, int y) const { return cells[static_cast<std::size_t>(y) * width + x] != 0; }
  void set(int x, int y, bool v) { cells[static_cast<std::size_t>(y) * width + x] = v ? 1 : 0; }
  std::size_t count() const;
};

/// Dense intensity frame in [0,1]; 1.0 exactly at surviving event pixels.
struct EventFrame {
  int width = 0;
  int height = 0;
  Tensor intensity;  // shape [H, W]
  std::string source_id;
};

struct FrameOptions {
  int denoise_radius = 1;
  int denoise_min_neighbors = 1;
  double d_max = 12.0;  // pixels
};

/// Polarity-agnostic accumulation of a window into an occupancy mask.
OccupancyMask accumulate(const EventWindow& window);

/// A true cell survives iff at least min_neighbors other true cells lie
/// within Chebyshev distance `radius`. Pure filter: never adds cells.
OccupancyMask denoise(const OccupancyMask& mask, int radius, int min_neighbors);

/// Morphological closing with a 3x3 structuring element (dilate then erode
/// on the zero-padded plane). Never removes original cells.
OccupancyMask fill(const OccupancyMask& mask);

/// Exact Euclidean distance from each pixel center to the nearest true cell
/// (two-pass lower-envelope transform). An all-false mask yields d_max
/// everywhere.
Tensor distance_surface(const OccupancyMask& mask, double d_max);

/// intensity = max(0, 1 - d / d_max).
Tensor to_intensity(const Tensor& distances, double d_max);

/// Full pipeline: accumulate -> denoise -> fill -> distance -> intensity.
EventFrame window_to_frame(const EventWindow& window, const FrameOptions& opts,
                           const std::string& source_id);

/// Raw 64-bit frame sidecar ("XVFR" magic, u64 width/height, f64 row-major).
void save_frame_raw(const std::string& path, const EventFrame& frame);
EventFrame load_frame_raw(const std::string& path);

/// 8-bit P5 gray-map for inspection.
void save_frame_pgm(const std::string& path, const EventFrame& frame);

}  // namespace xvpr
