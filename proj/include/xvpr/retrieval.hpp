#pragma once

#include "xvpr/checkpoint.hpp"
#include "xvpr/event_io.hpp"
#include "xvpr/model.hpp"
#include "xvpr/tensor.hpp"

#include <optional>
#include <string>
#include <vector>

namespace xvpr {

struct DbEntry {
  std::string id;
  GeoTag geo;
  Tensor retrieval;  // unit norm
  Tensor cls;
};

/// Immutable after build; every entry carries both descriptors, and the
/// fingerprint pins the checkpoint that produced them.
struct PlaceDatabase {
  Digest fingerprint{};
  std::vector<DbEntry> entries;
};

struct Candidate {
  std::string id;
  double distance = 0.0;  // retrieval-space Euclidean distance
};

struct RankedCandidate {
  std::string id;
  double distance = 0.0;
  std::optional<double> score;  // similarity; absent in retrieval-only rankings
  int final_rank = 0;           // 1-based
};

struct QueryResult {
  std::string query_id;
  std::vector<RankedCandidate> candidates;  // sorted by final rank
};

/// Encode every image record into a database entry. Deterministic; entries
/// follow the record order.
PlaceDatabase build_db(PipelineModel& model, const std::vector<const SampleRecord*>& images,
                       const Digest& checkpoint_fingerprint, int threads = 1);

/// Database file ("XVDB" magic, version, count, fingerprint, entries).
void save_db(const std::string& path, const PlaceDatabase& db);
PlaceDatabase load_db(const std::string& path);

/// Exhaustive Euclidean scan, ascending distance (ties by id). Returns at
/// most top_n candidates.
std::vector<Candidate> search(const PlaceDatabase& db, const Tensor& query_retrieval, int top_n);

/// Score each candidate with cbp_fuse + mlp_similarity and re-sort by score
/// descending (ties: distance ascending, then id). The candidate set is
/// preserved. Throws DataError when the model fingerprint differs from the
/// database fingerprint.
QueryResult rerank(PipelineModel& model, const PlaceDatabase& db, const std::string& query_id,
                   const Tensor& query_cls, Modality query_modality,
                   const std::vector<Candidate>& candidates,
                   const Digest& checkpoint_fingerprint);

/// Retrieval-order ranking without classifier scores.
QueryResult retrieval_ranking(const std::string& query_id, const std::vector<Candidate>& candidates);

/// encode -> search -> rerank for an event-frame query.
QueryResult query(PipelineModel& model, const PlaceDatabase& db, const EventFrame& frame,
                  int top_n, const Digest& checkpoint_fingerprint, const std::string& query_id);

/// "query_id,rank,candidate_id,distance,score" rows.
std::string query_result_csv(const QueryResult& result);

}  // namespace xvpr
