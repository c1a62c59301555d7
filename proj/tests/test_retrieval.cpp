#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "xvpr/retrieval.hpp"
#include "xvpr/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

using namespace xvpr;
namespace fs = std::filesystem;

namespace {

Tensor random_unit(Index n, Rng& rng) {
  Tensor t({n});
  for (Index i = 0; i < n; ++i) t[i] = rng.uniform(-1, 1);
  const double norm = std::sqrt(t.array().square().sum());
  t.array() /= norm;
  return t;
}

PlaceDatabase random_db(std::size_t entries, Index dim, Rng& rng, const Digest& fp = {}) {
  PlaceDatabase db;
  db.fingerprint = fp;
  for (std::size_t i = 0; i < entries; ++i) {
    char tag[16];
    std::snprintf(tag, sizeof(tag), "p%05zu", i);
    DbEntry e;
    e.id = tag;
    e.geo = {rng.uniform(-30, -27), rng.uniform(152, 154), 0};
    e.retrieval = random_unit(dim, rng);
    e.cls = random_unit(dim, rng);
    db.entries.push_back(std::move(e));
  }
  return db;
}

}  // namespace

TEST_CASE("search: the query itself ranks first with distance zero") {
  Rng rng(1);
  PlaceDatabase db = random_db(50, 16, rng);
  const Tensor q = db.entries[17].retrieval;
  const std::vector<Candidate> out = search(db, q, 5);
  REQUIRE(out.size() == 5);
  CHECK(out[0].id == "p00017");
  CHECK(out[0].distance == 0.0);
  for (std::size_t i = 1; i < out.size(); ++i) CHECK(out[i].distance >= out[i - 1].distance);
}

TEST_CASE("search: top_n larger than the database returns everything sorted") {
  Rng rng(2);
  PlaceDatabase db = random_db(7, 8, rng);
  const std::vector<Candidate> out = search(db, random_unit(8, rng), 100);
  CHECK(out.size() == 7);
  for (std::size_t i = 1; i < out.size(); ++i) CHECK(out[i].distance >= out[i - 1].distance);
  CHECK(search(PlaceDatabase{}, random_unit(8, rng), 3).empty());
}

TEST_CASE("search matches an independent sort-by-distance oracle on 1000 entries") {
  Rng rng(3);
  PlaceDatabase db = random_db(1000, 12, rng);
  const Tensor q = random_unit(12, rng);
  const std::vector<Candidate> got = search(db, q, 1000);

  std::vector<std::pair<double, std::string>> oracle;
  for (const DbEntry& e : db.entries)
    oracle.emplace_back(std::sqrt((e.retrieval.array() - q.array()).square().sum()), e.id);
  std::sort(oracle.begin(), oracle.end());
  REQUIRE(got.size() == oracle.size());
  for (std::size_t i = 0; i < got.size(); ++i) {
    CHECK(got[i].id == oracle[i].second);
    CHECK(got[i].distance == oracle[i].first);
  }
}

TEST_CASE("search results are a no-duplicate prefix of the database") {
  Rng rng(4);
  PlaceDatabase db = random_db(200, 8, rng);
  const std::vector<Candidate> out = search(db, random_unit(8, rng), 30);
  REQUIRE(out.size() == 30);
  std::set<std::string> seen;
  for (const Candidate& c : out) {
    CHECK(seen.insert(c.id).second);
    CHECK(std::any_of(db.entries.begin(), db.entries.end(),
                      [&](const DbEntry& e) { return e.id == c.id; }));
  }
}

TEST_CASE("database file round-trips bit-exactly") {
  Rng rng(5);
  Digest fp;
  for (std::size_t i = 0; i < fp.size(); ++i) fp[i] = static_cast<unsigned char>(i * 7);
  PlaceDatabase db = random_db(10, 16, rng, fp);
  const std::string path = (fs::temp_directory_path() / "xvpr_db_roundtrip.xvdb").string();
  save_db(path, db);
  const PlaceDatabase back = load_db(path);
  CHECK(back.fingerprint == fp);
  REQUIRE(back.entries.size() == db.entries.size());
  for (std::size_t i = 0; i < db.entries.size(); ++i) {
    CHECK(back.entries[i].id == db.entries[i].id);
    CHECK(back.entries[i].geo.lat == db.entries[i].geo.lat);
    CHECK(back.entries[i].geo.lon == db.entries[i].geo.lon);
    CHECK((back.entries[i].retrieval.array() == db.entries[i].retrieval.array()).all());
    CHECK((back.entries[i].cls.array() == db.entries[i].cls.array()).all());
  }

  // Saving again produces byte-identical files.
  const std::string path2 = (fs::temp_directory_path() / "xvpr_db_roundtrip2.xvdb").string();
  save_db(path2, back);
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(b1 == b2);
  fs::remove(path);
  fs::remove(path2);

  // Empty database is a valid file.
  const std::string path3 = (fs::temp_directory_path() / "xvpr_db_empty.xvdb").string();
  save_db(path3, PlaceDatabase{});
  CHECK(load_db(path3).entries.empty());
  fs::remove(path3);
}

TEST_CASE("build_db encodes deterministically and respects thread counts") {
  EncoderConfig cfg;
  cfg.input_width = 16;
  cfg.input_height = 12;
  cfg.backbone_channels = {4, 8};
  cfg.clusters = 2;
  cfg.local_dim = 8;
  cfg.cls_dim = 8;
  cfg.cbp_dim = 16;
  cfg.cls_hidden = {8, 4};
  cfg.seed = 9;
  PipelineModel model = PipelineModel::init(cfg);

  // Tiny on-disk images.
  const std::string dir = (fs::temp_directory_path() / "xvpr_builddb_test").string();
  fs::create_directories(dir);
  Manifest manifest;
  Rng rng(10);
  for (int i = 0; i < 6; ++i) {
    ImageFrame img;
    img.width = 16;
    img.height = 12;
    img.rgb = Tensor({3, 12, 16});
    for (Index j = 0; j < img.rgb.size(); ++j) img.rgb[j] = rng.uniform();
    const std::string path = dir + "/img" + std::to_string(i) + ".ppm";
    save_image_ppm(path, img);
    manifest.push_back({"i" + std::to_string(i), Modality::kImage, path,
                        {-27.5 + i * 0.001, 153.0, 0}, Split::kNone});
  }

  Digest fp{};
  const PlaceDatabase a = build_db(model, filter(manifest, Modality::kImage), fp, 1);
  const PlaceDatabase b = build_db(model, filter(manifest, Modality::kImage), fp, 2);
  REQUIRE(a.entries.size() == 6);
  REQUIRE(b.entries.size() == 6);
  for (std::size_t i = 0; i < a.entries.size(); ++i) {
    CHECK(a.entries[i].id == b.entries[i].id);
    CHECK((a.entries[i].retrieval.array() == b.entries[i].retrieval.array()).all());
    CHECK((a.entries[i].cls.array() == b.entries[i].cls.array()).all());
  }
  // Unit-norm retrieval descriptors.
  for (const DbEntry& e : a.entries)
    CHECK(std::abs(std::sqrt(e.retrieval.array().square().sum()) - 1.0) < 1e-6);
  fs::remove_all(dir);
}

TEST_CASE("rerank: single candidate keeps rank 1; zero classifier falls back to distance") {
  EncoderConfig cfg;
  cfg.input_width = 16;
  cfg.input_height = 12;
  cfg.backbone_channels = {4};
  cfg.clusters = 2;
  cfg.local_dim = 4;
  cfg.cls_dim = 8;
  cfg.cbp_dim = 16;
  cfg.cls_hidden = {4, 3};
  cfg.seed = 21;
  PipelineModel model = PipelineModel::init(cfg);
  Rng rng(22);
  PlaceDatabase db = random_db(20, 8, rng);

  const Tensor query_cls = random_unit(8, rng);
  const std::vector<Candidate> single = {{db.entries[3].id, 0.25}};
  const QueryResult one = rerank(model, db, "q", query_cls, Modality::kEvent, single, db.fingerprint);
  REQUIRE(one.candidates.size() == 1);
  CHECK(one.candidates[0].final_rank == 1);

  for (Parameter* p : model.cls.parameters()) p->value.array().setZero();
  std::vector<Candidate> candidates = search(db, random_unit(8, rng), 10);
  const QueryResult r = rerank(model, db, "q", query_cls, Modality::kEvent, candidates, db.fingerprint);
  REQUIRE(r.candidates.size() == candidates.size());
  for (std::size_t i = 0; i < r.candidates.size(); ++i) {
    CHECK(*r.candidates[i].score == 0.5);
    CHECK(r.candidates[i].id == candidates[i].id);  // distance tie-break preserves order
    CHECK(r.candidates[i].final_rank == static_cast<int>(i + 1));
  }
}

TEST_CASE("rerank orders by score and is a permutation of its input") {
  EncoderConfig cfg;
  cfg.input_width = 16;
  cfg.input_height = 12;
  cfg.backbone_channels = {4};
  cfg.clusters = 2;
  cfg.local_dim = 4;
  cfg.cls_dim = 8;
  cfg.cbp_dim = 16;
  cfg.cls_hidden = {4, 3};
  cfg.seed = 23;
  PipelineModel model = PipelineModel::init(cfg);
  Rng rng(24);
  PlaceDatabase db = random_db(20, 8, rng);
  const Tensor query_cls = random_unit(8, rng);
  const std::vector<Candidate> candidates = search(db, random_unit(8, rng), 20);
  const QueryResult r = rerank(model, db, "q", query_cls, Modality::kEvent, candidates, db.fingerprint);

  REQUIRE(r.candidates.size() == 20);
  // Permutation of the input id multiset.
  std::multiset<std::string> in_ids, out_ids;
  for (const Candidate& c : candidates) in_ids.insert(c.id);
  for (const RankedCandidate& c : r.candidates) out_ids.insert(c.id);
  CHECK(in_ids == out_ids);

  // Order equals independently sorting by (score desc, distance asc, id asc).
  std::vector<RankedCandidate> sorted = r.candidates;
  std::sort(sorted.begin(), sorted.end(), [](const RankedCandidate& a, const RankedCandidate& b) {
    if (*a.score != *b.score) return *a.score > *b.score;
    if (a.distance != b.distance) return a.distance < b.distance;
    return a.id < b.id;
  });
  for (std::size_t i = 0; i < sorted.size(); ++i) CHECK(sorted[i].id == r.candidates[i].id);
}

TEST_CASE("rerank rejects a fingerprint mismatch and unknown candidates") {
  EncoderConfig cfg;
  cfg.input_width = 16;
  cfg.input_height = 12;
  cfg.backbone_channels = {4};
  cfg.clusters = 2;
  cfg.local_dim = 4;
  cfg.cls_dim = 8;
  cfg.cbp_dim = 16;
  cfg.cls_hidden = {4, 3};
  cfg.seed = 25;
  PipelineModel model = PipelineModel::init(cfg);
  Rng rng(26);
  PlaceDatabase db = random_db(5, 8, rng);
  Digest other{};
  other[0] = 0xff;
  const std::vector<Candidate> candidates = {{db.entries[0].id, 0.1}};
  CHECK_THROWS_WITH_AS(
      rerank(model, db, "q", random_unit(8, rng), Modality::kEvent, candidates, other),
      doctest::Contains("fingerprint"), DataError);
  const std::vector<Candidate> ghost = {{"nope", 0.1}};
  CHECK_THROWS_AS(rerank(model, db, "q", random_unit(8, rng), Modality::kEvent, ghost, db.fingerprint),
                  DataError);
  CHECK_THROWS_AS(rerank(model, db, "q", random_unit(8, rng), Modality::kEvent, {}, db.fingerprint),
                  std::invalid_argument);
}

TEST_CASE("query result csv carries the header and one row per candidate") {
  QueryResult r;
  r.query_id = "q7";
  r.candidates = {{"a", 0.5, 0.9, 1}, {"b", 0.25, 0.4, 2}};
  const std::string csv = query_result_csv(r);
  CHECK(csv.find("query_id,rank,candidate_id,distance,score\n") == 0);
  CHECK(csv.find("q7,1,a,0.5,0.9") != std::string::npos);
  CHECK(csv.find("q7,2,b,0.25,0.4") != std::string::npos);
}
