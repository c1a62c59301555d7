#include "xvpr/evaluation.hpp"

#include "xvpr/image_io.hpp"
#include "xvpr/rng.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

namespace xvpr {

namespace {

constexpr double kMetersPerDegLat = 111320.0;

struct Bar {
  double cx, cy, angle, half_len, half_width, r, g, b;
};

struct Blob {
  double cx, cy, sigma, r, g, b;
};

struct Scene {
  double background = 0.1;
  std::vector<Bar> bars;
  std::vector<Blob> blobs;
};

void add_bars(Scene& scene, int count, int width, int height, Rng& rng) {
  for (int i = 0; i < count; ++i)
    scene.bars.push_back({rng.uniform(4.0, width - 4.0), rng.uniform(4.0, height - 4.0),
                          rng.uniform(0.0, std::numbers::pi), rng.uniform(6.0, 16.0),
                          rng.uniform(0.9, 1.9), rng.uniform(0.45, 1.0), rng.uniform(0.45, 1.0),
                          rng.uniform(0.45, 1.0)});
}

void add_blobs(Scene& scene, int count, int width, int height, Rng& rng) {
  for (int i = 0; i < count; ++i)
    scene.blobs.push_back({rng.uniform(4.0, width - 4.0), rng.uniform(4.0, height - 4.0),
                           rng.uniform(1.5, 3.5), rng.uniform(0.4, 0.9), rng.uniform(0.4, 0.9),
                           rng.uniform(0.4, 0.9)});
}

// Structure shared by every place along the route. Real traverses look alike
// at a glance (road, horizon, facades) and differ in details; the shared
// motif keeps coarse retrieval descriptors from trivially separating places.
Scene make_common_scene(int width, int height, Rng& rng) {
  Scene scene;
  scene.background = rng.uniform(0.05, 0.15);
  add_bars(scene, 3, width, height, rng);
  add_blobs(scene, 1, width, height, rng);
  return scene;
}

ImageFrame render_place_image(int width, int height, const Scene& common, Rng& rng) {
  Scene scene = common;
  add_bars(scene, 5 + static_cast<int>(rng.uniform_int(3)), width, height, rng);
  add_blobs(scene, 2 + static_cast<int>(rng.uniform_int(3)), width, height, rng);

  ImageFrame img;
  img.width = width;
  img.height = height;
  img.rgb = Tensor({3, height, width});
  const Index plane = static_cast<Index>(width) * height;
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      double r = scene.background, g = scene.background, b = scene.background;
      for (const Bar& bar : scene.bars) {
        const double dx = x - bar.cx, dy = y - bar.cy;
        const double along = dx * std::cos(bar.angle) + dy * std::sin(bar.angle);
        const double across = -dx * std::sin(bar.angle) + dy * std::cos(bar.angle);
        if (std::abs(along) <= bar.half_len && std::abs(across) <= bar.half_width) {
          r = std::max(r, bar.r);
          g = std::max(g, bar.g);
          b = std::max(b, bar.b);
        }
      }
      for (const Blob& blob : scene.blobs) {
        const double dx = x - blob.cx, dy = y - blob.cy;
        const double w = std::exp(-(dx * dx + dy * dy) / (2.0 * blob.sigma * blob.sigma));
        if (w > 0.2) {
          r = std::max(r, blob.r * w);
          g = std::max(g, blob.g * w);
          b = std::max(b, blob.b * w);
        }
      }
      const Index at = static_cast<Index>(y) * width + x;
      img.rgb[at] = r;
      img.rgb[plane + at] = g;
      img.rgb[2 * plane + at] = b;
    }
  return img;
}

double sample_bilinear(const Tensor& lum, int width, int height, double x, double y) {
  x = std::clamp(x, 0.0, width - 1.0);
  y = std::clamp(y, 0.0, height - 1.0);
  const int x0 = static_cast<int>(x), y0 = static_cast<int>(y);
  const int x1 = std::min(x0 + 1, width - 1), y1 = std::min(y0 + 1, height - 1);
  const double wx = x - x0, wy = y - y0;
  const double top = lum[y0 * width + x0] * (1.0 - wx) + lum[y0 * width + x1] * wx;
  const double bot = lum[y1 * width + x0] * (1.0 - wx) + lum[y1 * width + x1] * wx;
  return top * (1.0 - wy) + bot * wy;
}

/// Events fire where the brightness sampled under a small camera translation
/// changes by more than the threshold between consecutive substeps. The
/// translation alternates between two orthogonal directions so edges of every
/// orientation fire.
std::vector<Event> simulate_events(const Tensor& lum, int width, int height,
                                   std::int64_t delta_t_us, Rng& rng) {
  constexpr int kSubsteps = 6;
  constexpr double kThreshold = 0.04;
  // Narrow magnitude band: place-to-place event counts then track texture
  // density instead of camera motion.
  const double step = rng.uniform(2.0, 2.4) / kSubsteps;
  const double dir = rng.uniform(0.0, 2.0 * std::numbers::pi);

  std::vector<Event> events;
  double px = 0.0, py = 0.0;
  for (int s = 1; s <= kSubsteps; ++s) {
    const double phase = dir + (s % 2 == 0 ? std::numbers::pi / 2.0 : 0.0);
    const double nx = px + step * std::cos(phase);
    const double ny = py + step * std::sin(phase);
    const std::int64_t t = (2 * s - 1) * delta_t_us / (2 * kSubsteps);
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) {
        const double before = sample_bilinear(lum, width, height, x + px, y + py);
        const double after = sample_bilinear(lum, width, height, x + nx, y + ny);
        const double diff = after - before;
        if (std::abs(diff) > kThreshold)
          events.push_back({x, y, t, diff > 0.0 ? 1 : -1});
      }
    px = nx;
    py = ny;
  }
  return events;
}

ImageFrame apply_scenario(const ImageFrame& img, const std::string& scenario, Rng& rng) {
  ImageFrame out = img;
  auto gamma = [&out](double g) {
    for (Index i = 0; i < out.rgb.size(); ++i) out.rgb[i] = std::pow(out.rgb[i], g);
  };
  auto brightness = [&out](double f) { out.rgb.array() *= f; };
  auto tint = [&out](double fr, double fg, double fb) {
    const Index plane = static_cast<Index>(out.width) * out.height;
    Eigen::Map<ArrayX>(out.rgb.data(), plane) *= fr;
    Eigen::Map<ArrayX>(out.rgb.data() + plane, plane) *= fg;
    Eigen::Map<ArrayX>(out.rgb.data() + 2 * plane, plane) *= fb;
  };
  auto noise = [&out, &rng](double sigma) {
    const double half = sigma * std::sqrt(3.0);
    for (Index i = 0; i < out.rgb.size(); ++i) out.rgb[i] += rng.uniform(-half, half);
  };

  if (scenario == "daytime") {
    // identity
  } else if (scenario == "sunset") {
    gamma(1.2);
    tint(1.05, 1.0, 0.9);
  } else if (scenario == "sunrise") {
    gamma(0.9);
    tint(1.02, 1.0, 0.95);
  } else if (scenario == "morning") {
    brightness(0.85);
    noise(0.01);
  } else if (scenario == "night") {
    brightness(0.35);
    gamma(1.4);
    noise(0.02);
  } else {
    throw UsageError("unknown scenario '" + scenario + "'");
  }
  out.rgb.array() = out.rgb.array().max(0.0).min(1.0);
  return out;
}

void write_event_file(const std::string& path, const std::vector<Event>& events, int width,
                      int height) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write event file: " + path);
  out << width << ' ' << height << '\n';
  for (const Event& e : events) out << e.t << ' ' << e.x << ' ' << e.y << ' ' << e.p << '\n';
  if (!out) throw DataError("write failure on event file: " + path);
}

}  // namespace

const std::vector<std::string>& known_scenarios() {
  static const std::vector<std::string> kScenarios = {"daytime", "sunset", "sunrise", "morning",
                                                      "night"};
  return kScenarios;
}

SynthResult synth_generate(std::uint64_t seed, const SynthOptions& opts,
                           const std::string& out_dir) {
  if (opts.places < 10) throw std::invalid_argument("synth: at least 10 places required");
  if (opts.scenarios.empty()) throw UsageError("synth: at least one scenario required");
  for (const std::string& s : opts.scenarios)
    if (std::find(known_scenarios().begin(), known_scenarios().end(), s) == known_scenarios().end())
      throw UsageError("unknown scenario '" + s + "'");

  namespace fs = std::filesystem;
  fs::create_directories(fs::path(out_dir) / "images");
  fs::create_directories(fs::path(out_dir) / "events");
  fs::create_directories(fs::path(out_dir) / "frames");

  Rng route_rng = Rng(seed).fork(0x726f757465ull);
  std::vector<GeoTag> route;
  double lat = opts.start_lat, lon = opts.start_lon;
  for (int p = 0; p < opts.places; ++p) {
    route.push_back({lat, lon, 0});
    const double step = route_rng.uniform(42.0, 50.0);
    const double heading = route_rng.uniform(-20.0, 20.0) * std::numbers::pi / 180.0;
    const double east = step * std::cos(heading);
    const double north = step * std::sin(heading);
    lat += north / kMetersPerDegLat;
    lon += east / (kMetersPerDegLat * std::cos(lat * std::numbers::pi / 180.0));
  }

  Rng common_rng = Rng(seed).fork(0x636f6d6d6f6eull);
  const Scene common = make_common_scene(opts.width, opts.height, common_rng);

  SynthResult result;
  for (int p = 0; p < opts.places; ++p) {
    Rng place_rng = Rng(seed).fork(0x706c616365ull + static_cast<std::uint64_t>(p));
    const ImageFrame base = render_place_image(opts.width, opts.height, common, place_rng);
    const Tensor lum = luminance(base);

    char tag[16];
    std::snprintf(tag, sizeof(tag), "%04d", p);

    for (std::size_t si = 0; si < opts.scenarios.size(); ++si) {
      const std::string& scenario = opts.scenarios[si];
      Rng scen_rng = place_rng.fork(0x7363656eull + si);

      // Event stream + frame (the event side does not see the illumination transform).
      const std::vector<Event> events =
          simulate_events(lum, opts.width, opts.height, opts.delta_t_us, scen_rng);
      const std::string event_path =
          (fs::path(out_dir) / "events" / (scenario + "_e" + tag + ".txt")).string();
      write_event_file(event_path, events, opts.width, opts.height);

      EventStream stream;
      stream.sensor = {opts.width, opts.height};
      stream.events = events;
      const std::vector<EventWindow> windows = slice_windows(stream, opts.delta_t_us);
      if (windows.empty())
        throw DataError("synth: place " + std::string(tag) + " produced no complete window");
      const std::string frame_id = scenario + "/e" + tag;
      const EventFrame frame = window_to_frame(windows.front(), opts.frame, frame_id);
      const std::string frame_stem =
          (fs::path(out_dir) / "frames" / (scenario + "_e" + tag)).string();
      save_frame_raw(frame_stem + ".xvfr", frame);
      save_frame_pgm(frame_stem + ".pgm", frame);

      Rng img_rng = place_rng.fork(0x696d67ull + si);
      const ImageFrame img = apply_scenario(base, scenario, img_rng);
      const std::string image_path =
          (fs::path(out_dir) / "images" / (scenario + "_i" + tag + ".ppm")).string();
      save_image_ppm(image_path, img);

      result.manifest.push_back(
          {frame_id, Modality::kEvent, frame_stem + ".xvfr", route[p], Split::kNone});
      result.manifest.push_back(
          {scenario + "/i" + tag, Modality::kImage, image_path, route[p], Split::kNone});
    }
  }

  result.manifest_path = (fs::path(out_dir) / "manifest.csv").string();
  save_manifest(result.manifest_path, result.manifest);
  return result;
}

}  // namespace xvpr
