#pragma once

#include "xvpr/event_frame.hpp"
#include "xvpr/event_io.hpp"
#include "xvpr/retrieval.hpp"

#include <map>
#include <string>
#include <unordered_map>
#include <vector>

namespace xvpr {

/// Recall@N per scenario column; values are non-decreasing in N.
struct RecallTable {
  std::vector<int> ns;
  std::vector<std::string> scenarios;            // sorted
  std::vector<std::vector<double>> values;       // [scenario][n index]

  double at(const std::string& scenario, int n) const;
  bool non_decreasing() const;
};

using GeoIndex = std::unordered_map<std::string, GeoTag>;

GeoIndex geo_index(const Manifest& manifest);

/// Recall@N = fraction of queries whose top-N final ranking holds at least
/// one candidate within radius_m of the query geotag. Queries are grouped
/// into scenario columns via scenario_of(query id).
RecallTable recall_at_n(const std::vector<QueryResult>& results, const GeoIndex& db_geo,
                        const GeoIndex& query_geo, const std::vector<int>& ns, double radius_m);

enum class EvalMode { kRetrievalOnly, kHybrid };

EvalMode eval_mode_from_string(const std::string& s);

struct EvalOptions {
  std::vector<int> ns = {1, 5, 10, 15, 20, 30};
  double radius_m = 35.0;
  int top_n = 30;
  Modality query_modality = Modality::kEvent;
  int threads = 1;
};

/// Run every matching query record against the database and tabulate recall.
/// The model fingerprint must match the database fingerprint.
RecallTable evaluate(PipelineModel& model, const PlaceDatabase& db, const Manifest& queries,
                     const Digest& checkpoint_fingerprint, EvalMode mode,
                     const EvalOptions& opts = {});

std::string recall_table_csv(const RecallTable& table);
RecallTable parse_recall_csv(const std::string& text);
std::string recall_table_markdown(const RecallTable& table);

// ---- synthetic benchmark ----------------------------------------------------

struct SynthOptions {
  int places = 200;
  std::vector<std::string> scenarios = {"daytime"};
  int width = 64;
  int height = 48;
  std::int64_t delta_t_us = 25000;
  FrameOptions frame;
  double start_lat = -27.47;
  double start_lon = 153.02;
};

struct SynthResult {
  Manifest manifest;
  std::string manifest_path;
};

/// Procedural cross-modal dataset: per place a textured image, a simulated
/// event stream per scenario (events fire where the translated image changes
/// brightness), per-scenario illumination transforms on the images only, and
/// a manifest tying everything together. Deterministic per seed.
SynthResult synth_generate(std::uint64_t seed, const SynthOptions& opts,
                           const std::string& out_dir);

const std::vector<std::string>& known_scenarios();

}  // namespace xvpr
