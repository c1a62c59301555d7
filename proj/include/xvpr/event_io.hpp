#pragma once

#include "xvpr/tensor.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace xvpr {

struct Event {
  int x = 0;
  int y = 0;
  std::int64_t t = 0;  // microseconds
  int p = 1;           // polarity, -1 or +1
};

struct SensorSize {
  int width = 0;
  int height = 0;
};

struct EventStream {
  SensorSize sensor;
  std::vector<Event> events;  // non-decreasing in t
};

struct EventWindow {
  std::vector<Event> events;
  std::int64_t t_start = 0;
  std::int64_t t_end = 0;  // t_end - t_start == the configured window length
  SensorSize sensor;
};

struct GeoTag {
  double lat = 0.0;  // degrees
  double lon = 0.0;  // degrees
  std::int64_t t = 0;
};

enum class Modality { kEvent, kImage };

std::string to_string(Modality m);
Modality modality_from_string(const std::string& s);

enum class Split { kTrain, kVal, kTest, kNone };

std::string to_string(Split s);
Split split_from_string(const std::string& s);

struct SampleRecord {
  std::string id;
  Modality modality = Modality::kEvent;
  std::string path;
  GeoTag geo;
  Split split = Split::kNone;
};

using Manifest = std::vector<SampleRecord>;

/// Parse the text event format: first line "width height", then "t x y p"
/// per line with t in microseconds and p in {-1, 1}. Timestamps must be
/// non-decreasing. Malformed input raises DataError naming the line.
EventStream parse_events(const std::string& path);
EventStream parse_events(std::istream& in, const std::string& origin);

/// Parse "t lat lon" lines into a time-ordered geotag track.
std::vector<GeoTag> parse_geotags(const std::string& path);

/// Slice into contiguous windows of exactly delta_t_us starting at the first
/// event; the trailing window that would extend past the data is dropped.
std::vector<EventWindow> slice_windows(const EventStream& stream, std::int64_t delta_t_us);

/// Haversine great-circle distance in meters (mean Earth radius 6371000 m).
double geo_distance(const GeoTag& a, const GeoTag& b);

/// Geotag at time t, linearly interpolated between fixes (clamped outside).
GeoTag interpolate_geotag(const std::vector<GeoTag>& track, std::int64_t t);

struct SplitFractions {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

/// Assign contiguous train/val/test runs along the record order, then drop
/// every record lying within `buffer_m` of a record in another split so the
/// splits are geographically non-overlapping.
Manifest make_splits(const Manifest& records, const SplitFractions& fractions,
                     double buffer_m = 35.0);

/// Manifest file: one "id,modality,path,lat,lon,split" line per record.
Manifest load_manifest(const std::string& path);
void save_manifest(const std::string& path, const Manifest& records);

std::vector<const SampleRecord*> filter(const Manifest& m, Modality mod, Split split);
std::vector<const SampleRecord*> filter(const Manifest& m, Modality mod);

/// Scenario tag embedded in sample ids as "<scenario>/<rest>"; records
/// without a '/' fall into the "all" group.
std::string scenario_of(const std::string& sample_id);

}  // namespace xvpr
