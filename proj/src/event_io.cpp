#include "xvpr/event_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

namespace xvpr {

std::string to_string(Modality m) { return m == Modality::kEvent ? "event" : "image"; }

Modality modality_from_string(const std::string& s) {
  if (s == "event") return Modality::kEvent;
  if (s == "image") return Modality::kImage;
  throw DataError("unknown modality '" + s + "'");
}

std::string to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
    default: return "none";
  }
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kVal;
  if (s == "test") return Split::kTest;
  if (s == "none") return Split::kNone;
  throw DataError("unknown split '" + s + "'");
}

// ---- event stream parsing ----------------------------------------------------

EventStream parse_events(std::istream& in, const std::string& origin) {
  EventStream stream;
  std::string line;
  std::size_t line_no = 0;

  auto fail = [&](const std::string& what) {
    throw DataError(origin + ":" + std::to_string(line_no) + ": " + what);
  };

  if (!std::getline(in, line)) throw DataError(origin + ": empty file, expected header");
  line_no = 1;
  {
    std::istringstream hs(line);
    std::string extra;
    if (!(hs >> stream.sensor.width >> stream.sensor.height) || (hs >> extra))
      fail("malformed header, expected 'width height'");
    if (stream.sensor.width <= 0 || stream.sensor.height <= 0)
      fail("sensor dimensions must be positive");
  }

  std::int64_t prev_t = std::numeric_limits<std::int64_t>::min();
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ls(line);
    Event e;
    std::string extra;
    if (!(ls >> e.t >> e.x >> e.y >> e.p) || (ls >> extra))
      fail("malformed event line, expected 't x y p'");
    if (e.x < 0 || e.x >= stream.sensor.width || e.y < 0 || e.y >= stream.sensor.height)
      fail("event coordinates (" + std::to_string(e.x) + "," + std::to_string(e.y) +
           ") out of sensor bounds");
    if (e.p != -1 && e.p != 1) fail("polarity must be -1 or 1");
    if (e.t < prev_t) fail("timestamp ordering violation");
    prev_t = e.t;
    stream.events.push_back(e);
  }
  return stream;
}

EventStream parse_events(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open event file: " + path);
  return parse_events(in, path);
}

std::vector<GeoTag> parse_geotags(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open geotag file: " + path);
  std::vector<GeoTag> track;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    GeoTag g;
    std::string extra;
    if (!(ls >> g.t >> g.lat >> g.lon) || (ls >> extra))
      throw DataError(path + ":" + std::to_string(line_no) + ": malformed geotag, expected 't lat lon'");
    if (g.lat < -90.0 || g.lat > 90.0 || g.lon < -180.0 || g.lon > 180.0)
      throw DataError(path + ":" + std::to_string(line_no) + ": coordinates out of range");
    if (!track.empty() && g.t < track.back().t)
      throw DataError(path + ":" + std::to_string(line_no) + ": timestamp ordering violation");
    track.push_back(g);
  }
  if (track.empty()) throw DataError(path + ": no geotag fixes");
  return track;
}

// ---- windows -----------------------------------------------------------------

std::vector<EventWindow> slice_windows(const EventStream& stream, std::int64_t delta_t_us) {
  if (delta_t_us <= 0) throw std::invalid_argument("slice_windows: window length must be positive");
  std::vector<EventWindow> windows;
  if (stream.events.empty()) return windows;

  const std::int64_t t_first = stream.events.front().t;
  const std::int64_t t_last = stream.events.back().t;
  const std::int64_t span = t_last - t_first;
  const std::int64_t count = (span + delta_t_us - 1) / delta_t_us;  // ceil; 0 when span < dt... see below
  if (count == 0) return windows;

  windows.resize(static_cast<std::size_t>(count));
  for (std::int64_t k = 0; k < count; ++k) {
    windows[static_cast<std::size_t>(k)].t_start = t_first + k * delta_t_us;
    windows[static_cast<std::size_t>(k)].t_end = t_first + (k + 1) * delta_t_us;
    windows[static_cast<std::size_t>(k)].sensor = stream.sensor;
  }
  const std::int64_t limit = t_first + count * delta_t_us;
  for (const Event& e : stream.events) {
    if (e.t >= limit) break;  // dropped tail (events at exactly k*dt past the last full window)
    const std::int64_t k = (e.t - t_first) / delta_t_us;
    windows[static_cast<std::size_t>(k)].events.push_back(e);
  }
  return windows;
}

// ---- geodesy -------------------------------------------------------------------

double geo_distance(const GeoTag& a, const GeoTag& b) {
  constexpr double kEarthRadiusM = 6371000.0;
  constexpr double kDeg2Rad = std::numbers::pi / 180.0;
  const double lat1 = a.lat * kDeg2Rad, lat2 = b.lat * kDeg2Rad;
  const double dlat = (b.lat - a.lat) * kDeg2Rad;
  const double dlon = (b.lon - a.lon) * kDeg2Rad;
  const double sa = std::sin(dlat / 2.0);
  const double sb = std::sin(dlon / 2.0);
  const double h = sa * sa + std::cos(lat1) * std::cos(lat2) * sb * sb;
  return 2.0 * kEarthRadiusM * std::asin(std::sqrt(std::min(1.0, h)));
}

GeoTag interpolate_geotag(const std::vector<GeoTag>& track, std::int64_t t) {
  if (track.empty()) throw std::invalid_argument("interpolate_geotag: empty track");
  if (t <= track.front().t) return {track.front().lat, track.front().lon, t};
  if (t >= track.back().t) return {track.back().lat, track.back().lon, t};
  const auto it = std::lower_bound(track.begin(), track.end(), t,
                                   [](const GeoTag& g, std::int64_t v) { return g.t < v; });
  const GeoTag& hi = *it;
  const GeoTag& lo = *(it - 1);
  if (hi.t == lo.t) return {hi.lat, hi.lon, t};
  const double f = static_cast<double>(t - lo.t) / static_cast<double>(hi.t - lo.t);
  return {lo.lat + f * (hi.lat - lo.lat), lo.lon + f * (hi.lon - lo.lon), t};
}

// ---- splits --------------------------------------------------------------------

Manifest make_splits(const Manifest& records, const SplitFractions& fractions, double buffer_m) {
  const double sum = fractions.train + fractions.val + fractions.test;
  if (fractions.train <= 0.0 || fractions.val <= 0.0 || fractions.test <= 0.0 ||
      std::abs(sum - 1.0) > 1e-9)
    throw std::invalid_argument("make_splits: fractions must be positive and sum to 1");
  const std::size_t n = records.size();
  if (n < 3) throw DataError("make_splits: traverse too short to form three buffered splits");

  // Contiguous cuts along traverse order, snapped forward so that co-located
  // records (distance 0) never straddle a cut.
  auto snap = [&](std::size_t i) {
    while (i > 0 && i < n && geo_distance(records[i - 1].geo, records[i].geo) <= 0.0) ++i;
    return i;
  };
  const std::size_t cut1 = snap(static_cast<std::size_t>(std::llround(fractions.train * n)));
  const std::size_t cut2 =
      snap(static_cast<std::size_t>(std::llround((fractions.train + fractions.val) * n)));
  if (cut1 == 0 || cut1 >= cut2 || cut2 >= n)
    throw DataError("make_splits: traverse too short to form three buffered splits");

  Manifest out = records;
  for (std::size_t i = 0; i < n; ++i)
    out[i].split = i < cut1 ? Split::kTrain : (i < cut2 ? Split::kVal : Split::kTest);

  // Drop every record within buffer_m of a record assigned to another split.
  std::vector<bool> keep(n, true);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (out[i].split == out[j].split) continue;
      if (geo_distance(out[i].geo, out[j].geo) <= buffer_m) {
        keep[i] = false;
        keep[j] = false;
      }
    }
  }
  Manifest kept;
  kept.reserve(n);
  bool have[3] = {false, false, false};
  for (std::size_t i = 0; i < n; ++i) {
    if (!keep[i]) continue;
    kept.push_back(out[i]);
    have[static_cast<int>(kept.back().split)] = true;
  }
  if (!have[0] || !have[1] || !have[2])
    throw DataError("make_splits: buffering emptied a split; traverse too short or too dense");
  return kept;
}

// ---- manifest io ---------------------------------------------------------------

Manifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest: " + path);
  Manifest records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    SampleRecord r;
    std::string modality, lat, lon, split;
    auto field = [&](std::string& dst) {
      if (!std::getline(ls, dst, ','))
        throw DataError(path + ":" + std::to_string(line_no) + ": malformed manifest row");
    };
    field(r.id);
    field(modality);
    field(r.path);
    field(lat);
    field(lon);
    if (!std::getline(ls, split))
      throw DataError(path + ":" + std::to_string(line_no) + ": malformed manifest row");
    r.modality = modality_from_string(modality);
    try {
      r.geo.lat = std::stod(lat);
      r.geo.lon = std::stod(lon);
    } catch (const std::exception&) {
      throw DataError(path + ":" + std::to_string(line_no) + ": bad coordinates");
    }
    r.split = split_from_string(split);
    records.push_back(std::move(r));
  }
  return records;
}

void save_manifest(const std::string& path, const Manifest& records) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write manifest: " + path);
  out.precision(17);
  for (const SampleRecord& r : records)
    out << r.id << ',' << to_string(r.modality) << ',' << r.path << ',' << r.geo.lat << ','
        << r.geo.lon << ',' << to_string(r.split) << '\n';
  if (!out) throw DataError("write failure on manifest: " + path);
}

std::vector<const SampleRecord*> filter(const Manifest& m, Modality mod, Split split) {
  std::vector<const SampleRecord*> out;
  for (const SampleRecord& r : m)
    if (r.modality == mod && r.split == split) out.push_back(&r);
  return out;
}

std::vector<const SampleRecord*> filter(const Manifest& m, Modality mod) {
  std::vector<const SampleRecord*> out;
  for (const SampleRecord& r : m)
    if (r.modality == mod) out.push_back(&r);
  return out;
}

std::string scenario_of(const std::string& sample_id) {
  const auto pos = sample_id.find('/');
  return pos == std::string::npos ? "all" : sample_id.substr(0, pos);
}

}  // namespace xvpr
