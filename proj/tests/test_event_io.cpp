#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "xvpr/event_io.hpp"
#include "xvpr/rng.hpp"

#include <cmath>
#include <sstream>

using namespace xvpr;

namespace {

EventStream parse_text(const std::string& body) {
  std::istringstream in(body);
  return parse_events(in, "fixture");
}

GeoTag offset_m(const GeoTag& base, double east_m, double north_m) {
  GeoTag g = base;
  g.lat += north_m / 111320.0;
  g.lon += east_m / (111320.0 * std::cos(base.lat * M_PI / 180.0));
  return g;
}

}  // namespace

TEST_CASE("parse_events: header only yields an empty stream") {
  const EventStream s = parse_text("320 240\n");
  CHECK(s.sensor.width == 320);
  CHECK(s.sensor.height == 240);
  CHECK(s.events.empty());
}

TEST_CASE("parse_events: three-line fixture echoes exact fields") {
  const EventStream s = parse_text("100 80\n10 5 6 1\n20 0 0 -1\n20 99 79 1\n");
  REQUIRE(s.events.size() == 3);
  CHECK(s.events[0].t == 10);
  CHECK(s.events[0].x == 5);
  CHECK(s.events[0].y == 6);
  CHECK(s.events[0].p == 1);
  CHECK(s.events[1].p == -1);
  CHECK(s.events[2].x == 99);
  CHECK(s.events[2].y == 79);
}

TEST_CASE("parse_events: shuffled timestamps are rejected") {
  CHECK_THROWS_WITH_AS(parse_text("100 80\n20 1 1 1\n10 2 2 1\n"),
                       doctest::Contains("ordering violation"), DataError);
}

TEST_CASE("parse_events: malformed line reports its line number") {
  CHECK_THROWS_WITH_AS(parse_text("100 80\n10 1 1 1\nbogus\n"), doctest::Contains("fixture:3"),
                       DataError);
}

TEST_CASE("parse_events: out-of-range coordinates and polarity rejected") {
  CHECK_THROWS_AS(parse_text("10 10\n5 10 0 1\n"), DataError);
  CHECK_THROWS_AS(parse_text("10 10\n5 0 -1 1\n"), DataError);
  CHECK_THROWS_AS(parse_text("10 10\n5 0 0 2\n"), DataError);
}

TEST_CASE("parse_events: blank body lines are malformed, so count = lines - header") {
  CHECK_THROWS_AS(parse_text("10 10\n5 0 0 1\n\n6 1 1 1\n"), DataError);
  const EventStream s = parse_text("10 10\n5 0 0 1\n6 1 1 1\n");
  CHECK(s.events.size() == 2);
}

TEST_CASE("slice_windows: paper window length splits the 3-event fixture") {
  EventStream s;
  s.sensor = {10, 10};
  s.events = {{0, 0, 0, 1}, {1, 1, 10000, 1}, {2, 2, 30000, 1}};
  const auto windows = slice_windows(s, 25000);
  REQUIRE(windows.size() == 2);
  CHECK(windows[0].events.size() == 2);  // t=0 and t=10000
  CHECK(windows[0].t_start == 0);
  CHECK(windows[0].t_end == 25000);
  CHECK(windows[1].events.size() == 1);
  CHECK(windows[1].t_end - windows[1].t_start == 25000);
}

TEST_CASE("slice_windows: single event has no complete window") {
  EventStream s;
  s.sensor = {10, 10};
  s.events = {{0, 0, 12345, 1}};
  CHECK(slice_windows(s, 25000).empty());
}

TEST_CASE("slice_windows: uniform 1 kHz stream over 1 s gives 40 windows of 25") {
  EventStream s;
  s.sensor = {4, 4};
  for (int i = 0; i < 1000; ++i) s.events.push_back({i % 4, (i / 4) % 4, i * 1000, 1});
  const auto windows = slice_windows(s, 25000);
  REQUIRE(windows.size() == 40);
  for (const EventWindow& w : windows) CHECK(w.events.size() == 25);
}

TEST_CASE("slice_windows: partition reproduces the stream minus the dropped tail") {
  Rng rng(8);
  EventStream s;
  s.sensor = {16, 16};
  std::int64_t t = 0;
  for (int i = 0; i < 500; ++i) {
    t += rng.uniform_int(800);
    s.events.push_back({static_cast<int>(rng.uniform_int(16)), static_cast<int>(rng.uniform_int(16)),
                        t, rng.coin() ? 1 : -1});
  }
  const std::int64_t dt = 10000;
  const auto windows = slice_windows(s, dt);
  std::vector<Event> glued;
  for (const EventWindow& w : windows) {
    for (const Event& e : w.events) {
      CHECK(e.t >= w.t_start);
      CHECK(e.t < w.t_end);
      glued.push_back(e);
    }
    CHECK(w.t_end - w.t_start == dt);
  }
  REQUIRE(glued.size() <= s.events.size());
  for (std::size_t i = 0; i < glued.size(); ++i) {
    CHECK(glued[i].t == s.events[i].t);
    CHECK(glued[i].x == s.events[i].x);
  }
  // Dropped tail lies beyond the last window.
  for (std::size_t i = glued.size(); i < s.events.size(); ++i)
    CHECK(s.events[i].t >= windows.back().t_end);
}

TEST_CASE("geo_distance anchors") {
  const GeoTag a{12.5, -33.25, 0};
  CHECK(geo_distance(a, a) == 0.0);

  const GeoTag eq0{0.0, 0.0, 0};
  const GeoTag eq1{1.0, 0.0, 0};
  CHECK(std::abs(geo_distance(eq0, eq1) - 111194.9) < 0.5);  // pi*R/180
}

TEST_CASE("geo_distance is exactly symmetric on random pairs") {
  Rng rng(17);
  for (int i = 0; i < 200; ++i) {
    const GeoTag a{rng.uniform(-80, 80), rng.uniform(-179, 179), 0};
    const GeoTag b{rng.uniform(-80, 80), rng.uniform(-179, 179), 0};
    CHECK(geo_distance(a, b) == geo_distance(b, a));
  }
}

TEST_CASE("geo_distance satisfies the triangle inequality") {
  Rng rng(23);
  for (int i = 0; i < 200; ++i) {
    const GeoTag a{rng.uniform(-60, 60), rng.uniform(-120, 120), 0};
    const GeoTag b{rng.uniform(-60, 60), rng.uniform(-120, 120), 0};
    const GeoTag c{rng.uniform(-60, 60), rng.uniform(-120, 120), 0};
    const double ab = geo_distance(a, b), bc = geo_distance(b, c), ac = geo_distance(a, c);
    CHECK(ac <= (ab + bc) * (1.0 + 1e-6));
  }
}

TEST_CASE("interpolate_geotag clamps and interpolates") {
  const std::vector<GeoTag> track = {{0.0, 10.0, 1000}, {1.0, 11.0, 2000}};
  CHECK(interpolate_geotag(track, 500).lat == 0.0);
  CHECK(interpolate_geotag(track, 5000).lon == 11.0);
  const GeoTag mid = interpolate_geotag(track, 1500);
  CHECK(mid.lat == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(mid.lon == doctest::Approx(10.5).epsilon(1e-12));
}

TEST_CASE("make_splits: straight line splits with a verified 35 m buffer") {
  const GeoTag origin{-27.5, 153.0, 0};
  Manifest records;
  for (int i = 0; i < 1000; ++i) {
    SampleRecord r;
    r.id = "s" + std::to_string(i);
    r.modality = i % 2 == 0 ? Modality::kEvent : Modality::kImage;
    r.geo = offset_m(origin, i * 10.0, 0.0);  // 10 m spacing forces boundary drops
    records.push_back(r);
  }
  const Manifest tagged = make_splits(records, {0.8, 0.1, 0.1}, 35.0);

  std::size_t n_train = 0, n_val = 0, n_test = 0;
  for (const SampleRecord& r : tagged) {
    if (r.split == Split::kTrain) ++n_train;
    else if (r.split == Split::kVal) ++n_val;
    else ++n_test;
  }
  CHECK(n_train > 780);
  CHECK(n_val > 80);
  CHECK(n_test > 80);
  CHECK(tagged.size() < records.size());  // buffer dropped boundary records

  // Exhaustive pairwise check across splits.
  double min_cross = 1e18;
  for (std::size_t i = 0; i < tagged.size(); ++i)
    for (std::size_t j = i + 1; j < tagged.size(); ++j)
      if (tagged[i].split != tagged[j].split)
        min_cross = std::min(min_cross, geo_distance(tagged[i].geo, tagged[j].geo));
  CHECK(min_cross > 35.0);
}

TEST_CASE("make_splits rejects degenerate traverses") {
  const GeoTag origin{10.0, 20.0, 0};
  Manifest three;
  for (int i = 0; i < 3; ++i) {
    SampleRecord r;
    r.id = "s" + std::to_string(i);
    r.geo = offset_m(origin, i * 10.0, 0.0);
    three.push_back(r);
  }
  CHECK_THROWS_AS(make_splits(three, {0.34, 0.33, 0.33}, 35.0), DataError);

  Manifest same_spot;
  for (int i = 0; i < 100; ++i) {
    SampleRecord r;
    r.id = "s" + std::to_string(i);
    r.geo = origin;
    same_spot.push_back(r);
  }
  CHECK_THROWS_AS(make_splits(same_spot, {0.8, 0.1, 0.1}, 35.0), DataError);
}

TEST_CASE("make_splits validates fractions") {
  Manifest records(10);
  CHECK_THROWS_AS(make_splits(records, {0.5, 0.2, 0.2}, 35.0), std::invalid_argument);
  CHECK_THROWS_AS(make_splits(records, {1.2, -0.1, -0.1}, 35.0), std::invalid_argument);
}

TEST_CASE("manifest round-trips through save/load") {
  Manifest records;
  records.push_back({"daytime/e0001", Modality::kEvent, "frames/a.xvfr",
                     {-27.5001, 153.0002, 0}, Split::kTrain});
  records.push_back({"night/i0001", Modality::kImage, "images/b.ppm",
                     {-27.5, 153.0, 0}, Split::kNone});
  const std::string path = "manifest_roundtrip_test.csv";
  save_manifest(path, records);
  const Manifest loaded = load_manifest(path);
  REQUIRE(loaded.size() == 2);
  CHECK(loaded[0].id == "daytime/e0001");
  CHECK(loaded[0].modality == Modality::kEvent);
  CHECK(loaded[0].split == Split::kTrain);
  CHECK(loaded[0].geo.lat == records[0].geo.lat);
  CHECK(loaded[0].geo.lon == records[0].geo.lon);
  CHECK(loaded[1].split == Split::kNone);
  std::remove(path.c_str());
}

TEST_CASE("scenario grouping comes from the id prefix") {
  CHECK(scenario_of("night/e0042") == "night");
  CHECK(scenario_of("plain_id") == "all");
}
