#include "xvpr/retrieval.hpp"

#include "xvpr/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <unordered_map>

namespace xvpr {

PlaceDatabase build_db(PipelineModel& model, const std::vector<const SampleRecord*>& images,
                       const Digest& checkpoint_fingerprint, int threads) {
  PlaceDatabase db;
  db.fingerprint = checkpoint_fingerprint;
  db.entries.resize(images.size());
  parallel_for_indexed(images.size(), threads, [&](std::size_t i) {
    const SampleRecord& rec = *images[i];
    if (rec.modality != Modality::kImage)
      throw std::invalid_argument("build_db: record '" + rec.id + "' is not an image sample");
    Descriptors d = encode_sample(model, rec);
    db.entries[i] = DbEntry{rec.id, rec.geo, std::move(d.retrieval), std::move(d.cls)};
  });
  return db;
}

// ---- database file -------------------------------------------------------------

namespace {

constexpr char kDbMagic[4] = {'X', 'V', 'D', 'B'};
constexpr unsigned char kDbVersion = 1;

void write_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t read_u64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  if (!in) throw DataError("database: truncated integer field");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[i]) << (8 * i);
  return v;
}

void write_f64(std::ostream& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  write_u64(out, bits);
}

double read_f64(std::istream& in) {
  const std::uint64_t bits = read_u64(in);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

void write_vector(std::ostream& out, const Tensor& t) {
  write_u64(out, static_cast<std::uint64_t>(t.size()));
  for (Index i = 0; i < t.size(); ++i) write_f64(out, t[i]);
}

Tensor read_vector(std::istream& in) {
  const Index n = static_cast<Index>(read_u64(in));
  ArrayX data(n);
  for (Index i = 0; i < n; ++i) data[i] = read_f64(in);
  return Tensor({n}, std::move(data));
}

}  // namespace

void save_db(const std::string& path, const PlaceDatabase& db) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write database: " + path);
  out.write(kDbMagic, 4);
  out.put(static_cast<char>(kDbVersion));
  write_u64(out, db.entries.size());
  out.write(reinterpret_cast<const char*>(db.fingerprint.data()),
            static_cast<std::streamsize>(db.fingerprint.size()));
  for (const DbEntry& e : db.entries) {
    write_u64(out, e.id.size());
    out.write(e.id.data(), static_cast<std::streamsize>(e.id.size()));
    write_f64(out, e.geo.lat);
    write_f64(out, e.geo.lon);
    write_vector(out, e.retrieval);
    write_vector(out, e.cls);
  }
  if (!out) throw DataError("write failure on database: " + path);
}

PlaceDatabase load_db(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open database: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kDbMagic, 4) != 0) throw DataError("database: bad magic in " + path);
  const int version = in.get();
  if (version != kDbVersion)
    throw DataError("database: unsupported version " + std::to_string(version));
  const std::uint64_t count = read_u64(in);
  PlaceDatabase db;
  in.read(reinterpret_cast<char*>(db.fingerprint.data()),
          static_cast<std::streamsize>(db.fingerprint.size()));
  if (!in) throw DataError("database: truncated fingerprint");
  db.entries.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    DbEntry e;
    const std::uint64_t id_len = read_u64(in);
    e.id.resize(id_len);
    in.read(e.id.data(), static_cast<std::streamsize>(id_len));
    if (!in) throw DataError("database: truncated id");
    e.geo.lat = read_f64(in);
    e.geo.lon = read_f64(in);
    e.retrieval = read_vector(in);
    e.cls = read_vector(in);
    db.entries.push_back(std::move(e));
  }
  return db;
}

// ---- search / rerank -------------------------------------------------------------

std::vector<Candidate> search(const PlaceDatabase& db, const Tensor& query_retrieval, int top_n) {
  if (top_n < 1) throw std::invalid_argument("search: top_n must be >= 1");
  std::vector<Candidate> all;
  all.reserve(db.entries.size());
  for (const DbEntry& e : db.entries) {
    if (!same_shape(e.retrieval, query_retrieval))
      throw DataError("search: descriptor length mismatch for entry '" + e.id + "'");
    const double d = std::sqrt((e.retrieval.array() - query_retrieval.array()).square().sum());
    all.push_back({e.id, d});
  }
  std::sort(all.begin(), all.end(), [](const Candidate& a, const Candidate& b) {
    if (a.distance != b.distance) return a.distance < b.distance;
    return a.id < b.id;
  });
  if (static_cast<std::size_t>(top_n) < all.size()) all.resize(static_cast<std::size_t>(top_n));
  return all;
}

namespace {

void require_fingerprint(const PlaceDatabase& db, const Digest& fp, const char* op) {
  if (db.fingerprint != fp)
    throw DataError(std::string(op) +
                    ": checkpoint fingerprint does not match the database fingerprint "
                    "(descriptors are incomparable)");
}

}  // namespace

QueryResult rerank(PipelineModel& model, const PlaceDatabase& db, const std::string& query_id,
                   const Tensor& query_cls, Modality query_modality,
                   const std::vector<Candidate>& candidates,
                   const Digest& checkpoint_fingerprint) {
  if (candidates.empty()) throw std::invalid_argument("rerank: empty candidate list");
  require_fingerprint(db, checkpoint_fingerprint, "rerank");

  std::unordered_map<std::string, const DbEntry*> by_id;
  by_id.reserve(db.entries.size());
  for (const DbEntry& e : db.entries) by_id[e.id] = &e;

  const CountSketchParams& qs = query_sketch(model, query_modality);
  QueryResult result;
  result.query_id = query_id;
  result.candidates.reserve(candidates.size());
  for (const Candidate& c : candidates) {
    const auto it = by_id.find(c.id);
    if (it == by_id.end()) throw DataError("rerank: candidate '" + c.id + "' not in database");
    Tape tape;
    Var fused = cbp_fuse(tape.leaf(query_cls), tape.leaf(it->second->cls), qs, model.sketch_image);
    const double score = mlp_similarity(fused, tape, model.cls).value()[0];
    result.candidates.push_back({c.id, c.distance, score, 0});
  }
  std::sort(result.candidates.begin(), result.candidates.end(),
            [](const RankedCandidate& a, const RankedCandidate& b) {
              if (*a.score != *b.score) return *a.score > *b.score;
              if (a.distance != b.distance) return a.distance < b.distance;
              return a.id < b.id;
            });
  for (std::size_t i = 0; i < result.candidates.size(); ++i)
    result.candidates[i].final_rank = static_cast<int>(i + 1);
  return result;
}

QueryResult retrieval_ranking(const std::string& query_id,
                              const std::vector<Candidate>& candidates) {
  QueryResult result;
  result.query_id = query_id;
  result.candidates.reserve(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i)
    result.candidates.push_back(
        {candidates[i].id, candidates[i].distance, std::nullopt, static_cast<int>(i + 1)});
  return result;
}

QueryResult query(PipelineModel& model, const PlaceDatabase& db, const EventFrame& frame,
                  int top_n, const Digest& checkpoint_fingerprint, const std::string& query_id) {
  require_fingerprint(db, checkpoint_fingerprint, "query");
  if (db.entries.empty()) return QueryResult{query_id, {}};
  Descriptors d = encode(model, frame_to_tensor(frame), Modality::kEvent);
  const std::vector<Candidate> candidates = search(db, d.retrieval, top_n);
  return rerank(model, db, query_id, d.cls, Modality::kEvent, candidates, checkpoint_fingerprint);
}

std::string query_result_csv(const QueryResult& result) {
  std::ostringstream out;
  out << "query_id,rank,candidate_id,distance,score\n";
  out.precision(17);
  for (const RankedCandidate& c : result.candidates) {
    out << result.query_id << ',' << c.final_rank << ',' << c.id << ',' << c.distance << ',';
    if (c.score) out << *c.score;
    out << '\n';
  }
  return out.str();
}

}  // namespace xvpr
