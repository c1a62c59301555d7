#include "xvpr/event_frame.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>

namespace xvpr {

std::size_t OccupancyMask::count() const {
  return static_cast<std::size_t>(std::accumulate(cells.begin(), cells.end(), std::size_t{0}));
}

OccupancyMask accumulate(const EventWindow& window) {
  if (window.sensor.width <= 0 || window.sensor.height <= 0)
    throw std::invalid_argument("accumulate: window has no sensor size");
  OccupancyMask mask(window.sensor.width, window.sensor.height);
  for (const Event& e : window.events) mask.set(e.x, e.y, true);
  return mask;
}

OccupancyMask denoise(const OccupancyMask& mask, int radius, int min_neighbors) {
  if (radius < 1) throw std::invalid_argument("denoise: radius must be >= 1");
  OccupancyMask out(mask.width, mask.height);
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x) {
      if (!mask.at(x, y)) continue;
      int neighbors = 0;
      const int y0 = std::max(0, y - radius), y1 = std::min(mask.height - 1, y + radius);
      const int x0 = std::max(0, x - radius), x1 = std::min(mask.width - 1, x + radius);
      for (int ny = y0; ny <= y1 && neighbors < min_neighbors; ++ny)
        for (int nx = x0; nx <= x1; ++nx) {
          if (nx == x && ny == y) continue;
          if (mask.at(nx, ny) && ++neighbors >= min_neighbors) break;
        }
      if (neighbors >= min_neighbors) out.set(x, y, true);
    }
  return out;
}

OccupancyMask fill(const OccupancyMask& mask) {
  // Closing on the zero-padded plane: the dilation is materialized one pixel
  // beyond the grid so the erosion sees the true plane values at the border.
  const int w = mask.width, h = mask.height;
  const int ew = w + 2, eh = h + 2;
  std::vector<std::uint8_t> dilated(static_cast<std::size_t>(ew) * eh, 0);
  for (int y = -1; y <= h; ++y)
    for (int x = -1; x <= w; ++x) {
      bool any = false;
      for (int ny = std::max(0, y - 1); ny <= std::min(h - 1, y + 1) && !any; ++ny)
        for (int nx = std::max(0, x - 1); nx <= std::min(w - 1, x + 1); ++nx)
          if (mask.at(nx, ny)) {
            any = true;
            break;
          }
      dilated[static_cast<std::size_t>(y + 1) * ew + (x + 1)] = any ? 1 : 0;
    }
  OccupancyMask out(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      bool all = true;
      for (int dy = -1; dy <= 1 && all; ++dy)
        for (int dx = -1; dx <= 1; ++dx)
          if (!dilated[static_cast<std::size_t>(y + dy + 1) * ew + (x + dx + 1)]) {
            all = false;
            break;
          }
      out.set(x, y, all);
    }
  return out;
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// 1-D squared distance transform over the first n entries of f (lower
// envelope of parabolas). Entries with f == inf contribute no parabola.
void dt_1d(const std::vector<double>& f, int n, std::vector<double>& d, std::vector<int>& v,
           std::vector<double>& z) {
  int q0 = 0;
  while (q0 < n && f[q0] == kInf) ++q0;
  if (q0 == n) {
    std::fill(d.begin(), d.begin() + n, kInf);
    return;
  }
  auto intersect = [&](int q, int p) {
    return ((f[q] + static_cast<double>(q) * q) - (f[p] + static_cast<double>(p) * p)) /
           (2.0 * (q - p));
  };
  int k = 0;
  v[0] = q0;
  z[0] = -kInf;
  z[1] = kInf;
  for (int q = q0 + 1; q < n; ++q) {
    if (f[q] == kInf) continue;
    double s = intersect(q, v[k]);
    while (s <= z[k]) {
      --k;
      s = intersect(q, v[k]);
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kInf;
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[k + 1] < q) ++k;
    const double dq = q - v[k];
    d[q] = dq * dq + f[v[k]];
  }
}

}  // namespace

Tensor distance_surface(const OccupancyMask& mask, double d_max) {
  if (d_max <= 0.0) throw std::invalid_argument("distance_surface: d_max must be positive");
  const int w = mask.width, h = mask.height;
  std::vector<double> grid(static_cast<std::size_t>(w) * h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      grid[static_cast<std::size_t>(y) * w + x] = mask.at(x, y) ? 0.0 : kInf;

  const int nmax = std::max(w, h);
  std::vector<double> f(nmax), d(nmax), z(nmax + 1);
  std::vector<int> v(nmax);

  // Columns first, then rows.
  for (int x = 0; x < w; ++x) {
    for (int y = 0; y < h; ++y) f[y] = grid[static_cast<std::size_t>(y) * w + x];
    dt_1d(f, h, d, v, z);
    for (int y = 0; y < h; ++y) grid[static_cast<std::size_t>(y) * w + x] = d[y];
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) f[x] = grid[static_cast<std::size_t>(y) * w + x];
    dt_1d(f, w, d, v, z);
    for (int x = 0; x < w; ++x) grid[static_cast<std::size_t>(y) * w + x] = d[x];
  }

  Tensor out({h, w});
  for (std::size_t i = 0; i < grid.size(); ++i)
    out[static_cast<Index>(i)] = grid[i] == kInf ? d_max : std::sqrt(grid[i]);
  return out;
}

Tensor to_intensity(const Tensor& distances, double d_max) {
  if (d_max <= 0.0) throw std::invalid_argument("to_intensity: d_max must be positive");
  return Tensor(distances.shape(), (1.0 - distances.array() / d_max).max(0.0));
}

EventFrame window_to_frame(const EventWindow& window, const FrameOptions& opts,
                           const std::string& source_id) {
  OccupancyMask mask = accumulate(window);
  mask = denoise(mask, opts.denoise_radius, opts.denoise_min_neighbors);
  mask = fill(mask);
  EventFrame frame;
  frame.width = mask.width;
  frame.height = mask.height;
  frame.intensity = to_intensity(distance_surface(mask, opts.d_max), opts.d_max);
  frame.source_id = source_id;
  return frame;
}

// ---- frame files ---------------------------------------------------------------

namespace {
constexpr char kFrameMagic[4] = {'X', 'V', 'F', 'R'};

void write_u64_le(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t read_u64_le(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[i]) << (8 * i);
  return v;
}
}  // namespace

void save_frame_raw(const std::string& path, const EventFrame& frame) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write frame: " + path);
  out.write(kFrameMagic, 4);
  write_u64_le(out, static_cast<std::uint64_t>(frame.width));
  write_u64_le(out, static_cast<std::uint64_t>(frame.height));
  for (Index i = 0; i < frame.intensity.size(); ++i) {
    std::uint64_t bits;
    const double v = frame.intensity[i];
    std::memcpy(&bits, &v, 8);
    write_u64_le(out, bits);
  }
  if (!out) throw DataError("write failure on frame: " + path);
}

EventFrame load_frame_raw(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open frame: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kFrameMagic, 4) != 0)
    throw DataError("frame: bad magic in " + path);
  EventFrame frame;
  frame.width = static_cast<int>(read_u64_le(in));
  frame.height = static_cast<int>(read_u64_le(in));
  if (!in || frame.width <= 0 || frame.height <= 0)
    throw DataError("frame: bad dimensions in " + path);
  ArrayX data(static_cast<Index>(frame.width) * frame.height);
  for (Index i = 0; i < data.size(); ++i) {
    const std::uint64_t bits = read_u64_le(in);
    double v;
    std::memcpy(&v, &bits, 8);
    data[i] = v;
  }
  if (!in) throw DataError("frame: truncated data in " + path);
  frame.intensity = Tensor({frame.height, frame.width}, std::move(data));
  return frame;
}

void save_frame_pgm(const std::string& path, const EventFrame& frame) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write pgm: " + path);
  out << "P5\n" << frame.width << " " << frame.height << "\n255\n";
  for (Index i = 0; i < frame.intensity.size(); ++i) {
    const double v = std::clamp(frame.intensity[i], 0.0, 1.0);
    out.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
  }
  if (!out) throw DataError("write failure on pgm: " + path);
}

}  // namespace xvpr
