#include "xvpr/evaluation.hpp"

#include "xvpr/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <set>
#include <sstream>

namespace xvpr {

double RecallTable::at(const std::string& scenario, int n) const {
  for (std::size_t s = 0; s < scenarios.size(); ++s) {
    if (scenarios[s] != scenario) continue;
    for (std::size_t i = 0; i < ns.size(); ++i)
      if (ns[i] == n) return values[s][i];
  }
  throw std::invalid_argument("recall table: no cell (" + scenario + ", " + std::to_string(n) + ")");
}

bool RecallTable::non_decreasing() const {
  for (const std::vector<double>& col : values)
    for (std::size_t i = 1; i < col.size(); ++i)
      if (col[i] < col[i - 1]) return false;
  return true;
}

GeoIndex geo_index(const Manifest& manifest) {
  GeoIndex idx;
  for (const SampleRecord& r : manifest) idx[r.id] = r.geo;
  return idx;
}

RecallTable recall_at_n(const std::vector<QueryResult>& results, const GeoIndex& db_geo,
                        const GeoIndex& query_geo, const std::vector<int>& ns, double radius_m) {
  std::vector<int> sorted_ns = ns;
  std::sort(sorted_ns.begin(), sorted_ns.end());
  if (sorted_ns.empty() || sorted_ns.front() < 1)
    throw std::invalid_argument("recall_at_n: N values must be >= 1");

  // hit_depth per query: smallest rank whose candidate lies within the radius.
  std::map<std::string, std::vector<int>> depth_by_scenario;
  for (const QueryResult& qr : results) {
    const auto qg = query_geo.find(qr.query_id);
    if (qg == query_geo.end())
      throw DataError("recall_at_n: unknown query id '" + qr.query_id + "'");
    int depth = std::numeric_limits<int>::max();
    for (const RankedCandidate& c : qr.candidates) {
      const auto cg = db_geo.find(c.id);
      if (cg == db_geo.end()) throw DataError("recall_at_n: unknown candidate id '" + c.id + "'");
      if (geo_distance(qg->second, cg->second) < radius_m) {
        depth = c.final_rank;
        break;
      }
    }
    depth_by_scenario[scenario_of(qr.query_id)].push_back(depth);
  }

  RecallTable table;
  table.ns = sorted_ns;
  for (const auto& [scenario, depths] : depth_by_scenario) {
    table.scenarios.push_back(scenario);
    std::vector<double> col;
    col.reserve(sorted_ns.size());
    for (const int n : sorted_ns) {
      int hits = 0;
      for (const int d : depths)
        if (d <= n) ++hits;
      col.push_back(static_cast<double>(hits) / static_cast<double>(depths.size()));
    }
    table.values.push_back(std::move(col));
  }
  return table;
}

EvalMode eval_mode_from_string(const std::string& s) {
  if (s == "retrieval-only" || s == "retrieval") return EvalMode::kRetrievalOnly;
  if (s == "hybrid") return EvalMode::kHybrid;
  throw UsageError("unknown eval mode '" + s + "' (expected retrieval-only or hybrid)");
}

RecallTable evaluate(PipelineModel& model, const PlaceDatabase& db, const Manifest& queries,
                     const Digest& checkpoint_fingerprint, EvalMode mode, const EvalOptions& opts) {
  if (db.fingerprint != checkpoint_fingerprint)
    throw DataError("evaluate: checkpoint fingerprint does not match the database fingerprint");
  const std::vector<const SampleRecord*> query_records = filter(queries, opts.query_modality);
  if (query_records.empty()) throw DataError("evaluate: no query records of the requested modality");

  GeoIndex db_geo;
  for (const DbEntry& e : db.entries) db_geo[e.id] = e.geo;
  GeoIndex query_geo;
  for (const SampleRecord* r : query_records) query_geo[r->id] = r->geo;

  std::vector<QueryResult> results(query_records.size());
  parallel_for_indexed(query_records.size(), opts.threads, [&](std::size_t i) {
    const SampleRecord& rec = *query_records[i];
    Descriptors d = encode_sample(model, rec);
    const std::vector<Candidate> candidates = search(db, d.retrieval, opts.top_n);
    if (mode == EvalMode::kHybrid && !candidates.empty()) {
      results[i] = rerank(model, db, rec.id, d.cls, rec.modality, candidates,
                          checkpoint_fingerprint);
    } else {
      results[i] = retrieval_ranking(rec.id, candidates);
    }
  });
  return recall_at_n(results, db_geo, query_geo, opts.ns, opts.radius_m);
}

// ---- report -------------------------------------------------------------------

std::string recall_table_csv(const RecallTable& table) {
  std::ostringstream out;
  out.precision(17);
  out << "scenario,N,recall\n";
  for (std::size_t s = 0; s < table.scenarios.size(); ++s)
    for (std::size_t i = 0; i < table.ns.size(); ++i)
      out << table.scenarios[s] << ',' << table.ns[i] << ',' << table.values[s][i] << '\n';
  return out.str();
}

RecallTable parse_recall_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "scenario,N,recall")
    throw DataError("recall csv: missing header");
  std::map<std::string, std::map<int, double>> cells;
  std::set<int> ns;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string scenario, n_str, v_str;
    if (!std::getline(ls, scenario, ',') || !std::getline(ls, n_str, ',') ||
        !std::getline(ls, v_str))
      throw DataError("recall csv: malformed row '" + line + "'");
    const int n = std::stoi(n_str);
    cells[scenario][n] = std::stod(v_str);
    ns.insert(n);
  }
  RecallTable table;
  table.ns.assign(ns.begin(), ns.end());
  for (const auto& [scenario, col] : cells) {
    table.scenarios.push_back(scenario);
    std::vector<double> values;
    for (const int n : table.ns) {
      const auto it = col.find(n);
      if (it == col.end()) throw DataError("recall csv: missing cell for N=" + std::to_string(n));
      values.push_back(it->second);
    }
    table.values.push_back(std::move(values));
  }
  return table;
}

std::string recall_table_markdown(const RecallTable& table) {
  std::ostringstream out;
  out << "| N |";
  for (const std::string& s : table.scenarios) out << ' ' << s << " |";
  out << "\n|---|";
  for (std::size_t s = 0; s < table.scenarios.size(); ++s) out << "---|";
  out << '\n';
  char buf[32];
  for (std::size_t i = 0; i < table.ns.size(); ++i) {
    out << "| " << table.ns[i] << " |";
    for (std::size_t s = 0; s < table.scenarios.size(); ++s) {
      std::snprintf(buf, sizeof(buf), "%.2f", table.values[s][i]);
      out << ' ' << buf << " |";
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace xvpr
