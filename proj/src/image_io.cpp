#include "xvpr/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace xvpr {

void save_image_ppm(const std::string& path, const ImageFrame& image) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write ppm: " + path);
  const int w = image.width, h = image.height;
  out << "P6\n" << w << " " << h << "\n255\n";
  const Index plane = static_cast<Index>(w) * h;
  for (Index i = 0; i < plane; ++i)
    for (int c = 0; c < 3; ++c) {
      const double v = std::clamp(image.rgb[c * plane + i], 0.0, 1.0);
      out.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
    }
  if (!out) throw DataError("write failure on ppm: " + path);
}

namespace {

int read_pnm_int(std::istream& in, const std::string& path) {
  int c = in.peek();
  while (c == '#' || std::isspace(c)) {
    if (c == '#') {
      std::string comment;
      std::getline(in, comment);
    } else {
      in.get();
    }
    c = in.peek();
  }
  int v;
  if (!(in >> v)) throw DataError("ppm: malformed header in " + path);
  return v;
}

}  // namespace

ImageFrame load_image_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open ppm: " + path);
  char m0 = 0, m1 = 0;
  in.get(m0);
  in.get(m1);
  if (m0 != 'P' || m1 != '6') throw DataError("ppm: bad magic in " + path);
  const int w = read_pnm_int(in, path);
  const int h = read_pnm_int(in, path);
  const int maxval = read_pnm_int(in, path);
  if (w <= 0 || h <= 0 || maxval != 255) throw DataError("ppm: unsupported header in " + path);
  in.get();  // single whitespace after maxval
  const Index plane = static_cast<Index>(w) * h;
  std::vector<unsigned char> raw(static_cast<std::size_t>(plane) * 3);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!in) throw DataError("ppm: truncated pixel data in " + path);
  ImageFrame img;
  img.width = w;
  img.height = h;
  img.rgb = Tensor({3, h, w});
  for (Index i = 0; i < plane; ++i)
    for (int c = 0; c < 3; ++c)
      img.rgb[c * plane + i] = raw[static_cast<std::size_t>(i) * 3 + c] / 255.0;
  return img;
}

ImageFrame resize_bilinear(const ImageFrame& image, int width, int height) {
  if (width <= 0 || height <= 0) throw std::invalid_argument("resize: dimensions must be positive");
  if (width == image.width && height == image.height) return image;
  ImageFrame out;
  out.width = width;
  out.height = height;
  out.rgb = Tensor({3, height, width});
  const Index src_plane = static_cast<Index>(image.width) * image.height;
  const Index dst_plane = static_cast<Index>(width) * height;
  const double sx = static_cast<double>(image.width) / width;
  const double sy = static_cast<double>(image.height) / height;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, image.height - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, image.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, image.width - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, image.width - 1);
      const double wx = fx - x0;
      for (int c = 0; c < 3; ++c) {
        const double* p = image.rgb.data() + c * src_plane;
        const double top = p[y0 * image.width + x0] * (1.0 - wx) + p[y0 * image.width + x1] * wx;
        const double bot = p[y1 * image.width + x0] * (1.0 - wx) + p[y1 * image.width + x1] * wx;
        out.rgb[c * dst_plane + y * width + x] = top * (1.0 - wy) + bot * wy;
      }
    }
  }
  return out;
}

Tensor luminance(const ImageFrame& image) {
  const Index plane = static_cast<Index>(image.width) * image.height;
  Tensor out({image.height, image.width});
  for (Index i = 0; i < plane; ++i)
    out[i] = 0.299 * image.rgb[i] + 0.587 * image.rgb[plane + i] + 0.114 * image.rgb[2 * plane + i];
  return out;
}

}  // namespace xvpr
