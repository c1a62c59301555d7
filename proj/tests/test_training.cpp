#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "xvpr/evaluation.hpp"
#include "xvpr/model.hpp"
#include "xvpr/rng.hpp"
#include "xvpr/training.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace xvpr;
namespace fs = std::filesystem;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

double triplet_value(std::initializer_list<double> a, std::initializer_list<double> p,
                     std::initializer_list<double> n, double alpha) {
  std::vector<double> av(a), pv(p), nv(n);
  Tensor fa({static_cast<Index>(av.size())});
  Tensor fp(fa.shape()), fn(fa.shape());
  for (Index i = 0; i < fa.size(); ++i) {
    fa[i] = av[static_cast<std::size_t>(i)];
    fp[i] = pv[static_cast<std::size_t>(i)];
    fn[i] = nv[static_cast<std::size_t>(i)];
  }
  return triplet_loss_value(fa, fp, fn, alpha);
}

GeoTag offset_m(const GeoTag& base, double east_m) {
  GeoTag g = base;
  g.lon += east_m / (111320.0 * std::cos(base.lat * M_PI / 180.0));
  return g;
}

Manifest geo_manifest(int places, double spacing_m, Split split = Split::kTrain) {
  const GeoTag origin{-27.5, 153.0, 0};
  Manifest m;
  for (int i = 0; i < places; ++i) {
    const GeoTag g = offset_m(origin, i * spacing_m);
    char tag[8];
    std::snprintf(tag, sizeof(tag), "%03d", i);
    m.push_back({std::string("e") + tag, Modality::kEvent, "", g, split});
    m.push_back({std::string("i") + tag, Modality::kImage, "", g, split});
  }
  return m;
}

EncoderConfig desk_test_config(std::uint64_t seed) {
  EncoderConfig cfg;
  cfg.input_width = 32;
  cfg.input_height = 24;
  cfg.backbone_channels = {4, 8};
  cfg.clusters = 4;
  cfg.local_dim = 16;
  cfg.cls_dim = 16;
  cfg.cbp_dim = 64;
  cfg.cls_hidden = {16, 8};
  cfg.seed = seed;
  return cfg;
}

struct TrainFixture {
  std::string dir;
  Manifest manifest;

  TrainFixture(int places, std::uint64_t seed) {
    dir = (fs::temp_directory_path() / ("xvpr_train_test_" + std::to_string(seed))).string();
    fs::remove_all(dir);
    SynthOptions opts;
    opts.places = places;
    opts.scenarios = {"daytime"};
    opts.width = 32;
    opts.height = 24;
    const SynthResult synth = synth_generate(seed, opts, dir);
    manifest = make_splits(synth.manifest, {0.7, 0.15, 0.15}, 35.0);
  }
  ~TrainFixture() { fs::remove_all(dir); }
};

}  // namespace

TEST_CASE("triplet_loss anchors") {
  // Tie case: identical positive and negative forces the margin exactly.
  CHECK(triplet_value({1, 0}, {0, 1}, {0, 1}, 0.1) == 0.1);
  // Hinge boundary: d_ap=0, d_an=0.1, alpha=0.1 -> 0.
  CHECK(triplet_value({0.1, 0}, {0.1, 0}, {0.2, 0}, 0.1) == 0.0);
  // Hand case: max(sqrt(2) - 2 + 0.1, 0) = 0.
  CHECK(triplet_value({1, 0}, {0, 1}, {-1, 0}, 0.1) == 0.0);
  CHECK_THROWS_AS(triplet_loss_value(Tensor::zeros({2}), Tensor::zeros({3}), Tensor::zeros({2}), 0.1),
                  std::invalid_argument);
}

TEST_CASE("triplet_loss is nonnegative and respects the margin band") {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const Tensor fa = random_tensor({4}, rng);
    const Tensor fp = random_tensor({4}, rng);
    const Tensor fn = random_tensor({4}, rng);
    const double loss = triplet_loss_value(fa, fp, fn, 0.1);
    CHECK(loss >= 0.0);
    const double d_ap = std::sqrt((fa.array() - fp.array()).square().sum());
    const double d_an = std::sqrt((fa.array() - fn.array()).square().sum());
    if (d_an >= d_ap + 0.1) CHECK(loss == 0.0);
  }
}

TEST_CASE("cls_loss anchors") {
  CHECK(cls_loss_value(1.0 - 1e-15, 1e-15) < 1e-9);
  CHECK(cls_loss_value(0.5, 0.5) == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-12));
  CHECK(cls_loss_value(0.9, 0.1) == doctest::Approx(-2.0 * std::log(0.9)).epsilon(1e-12));
  // Saturated scores are clamped, not infinite.
  CHECK(std::isfinite(cls_loss_value(0.0, 1.0)));
  CHECK(cls_loss_value(0.0, 1.0) > 20.0);
}

TEST_CASE("cls_loss is monotone in both scores") {
  CHECK(cls_loss_value(0.8, 0.3) < cls_loss_value(0.7, 0.3));
  CHECK(cls_loss_value(0.7, 0.4) > cls_loss_value(0.7, 0.3));
}

TEST_CASE("total_loss adds the pieces") {
  Tape tape;
  Var a = tape.leaf(Tensor::vector({0.1}));
  Var b = tape.leaf(Tensor::vector({1.3862943611198906}));
  CHECK(total_loss(a, b).value()[0] == doctest::Approx(1.4862943611198906).epsilon(1e-15));
  Tape t2;
  CHECK(total_loss(t2.leaf(Tensor::vector({0.0})), t2.leaf(Tensor::vector({0.0}))).value()[0] == 0.0);
}

TEST_CASE("sgd_step anchors") {
  Parameter w("w", Tensor::vector({1.0}));
  w.gradient = Tensor::vector({2.0});
  sgd_step({&w}, 0.1);
  CHECK(w.value[0] == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(w.gradient[0] == 0.0);  // zeroed after the step

  Parameter frozen("f", Tensor::vector({3.0}));
  sgd_step({&frozen}, 0.5);
  CHECK(frozen.value[0] == 3.0);

  Parameter bad("bad", Tensor::vector({1.0}));
  bad.gradient[0] = std::nan("");
  CHECK_THROWS_WITH_AS(sgd_step({&bad}, 0.1), doctest::Contains("bad"), DataError);
}

TEST_CASE("sgd on a quadratic bowl converges geometrically") {
  Parameter w("w", Tensor::vector({1.0}));
  for (int step = 0; step < 50; ++step) {
    Tape tape;
    Var x = tape.watch(w);
    tape.backward(sum(mul(x, x)));
    sgd_step({&w}, 0.1);
  }
  CHECK(std::abs(w.value[0]) < 1e-4);
}

TEST_CASE("mine_triplets: two co-located pairs 1 km apart force the assignment") {
  const GeoTag a{-27.5, 153.0, 0};
  const GeoTag b = offset_m(a, 1000.0);
  Manifest m;
  m.push_back({"ea", Modality::kEvent, "", a, Split::kTrain});
  m.push_back({"ia", Modality::kImage, "", a, Split::kTrain});
  m.push_back({"eb", Modality::kEvent, "", b, Split::kTrain});
  m.push_back({"ib", Modality::kImage, "", b, Split::kTrain});
  TrainConfig cfg;
  const std::vector<Triplet> triplets = mine_triplets(m, cfg, 9);
  REQUIRE(triplets.size() == 2);
  for (const Triplet& t : triplets) {
    if (t.anchor == "ea") {
      CHECK(t.positive == "ia");
      CHECK(t.negative == "ib");
    } else {
      CHECK(t.anchor == "eb");
      CHECK(t.positive == "ib");
      CHECK(t.negative == "ia");
    }
  }
}

TEST_CASE("mine_triplets: no negatives in a tight cluster yields zero triplets with warnings") {
  const Manifest m = geo_manifest(5, 5.0);  // all within 25 m
  TrainConfig cfg;
  std::ostringstream log;
  const std::vector<Triplet> triplets = mine_triplets(m, cfg, 1, &log);
  CHECK(triplets.empty());
  CHECK(log.str().find("no negative") != std::string::npos);
}

TEST_CASE("mine_triplets: 100-place manifest satisfies both radii exhaustively") {
  const Manifest m = geo_manifest(100, 50.0);
  GeoIndex geo = geo_index(m);
  TrainConfig cfg;
  const std::vector<Triplet> triplets = mine_triplets(m, cfg, 77);
  CHECK(triplets.size() == 100);
  for (const Triplet& t : triplets) {
    CHECK(geo_distance(geo.at(t.anchor), geo.at(t.positive)) < cfg.pos_radius_m);
    CHECK(geo_distance(geo.at(t.anchor), geo.at(t.negative)) > cfg.neg_radius_m);
  }
  // Reproducible under the same epoch seed, reshuffled under another.
  const std::vector<Triplet> again = mine_triplets(m, cfg, 77);
  REQUIRE(again.size() == triplets.size());
  for (std::size_t i = 0; i < triplets.size(); ++i) {
    CHECK(again[i].anchor == triplets[i].anchor);
    CHECK(again[i].negative == triplets[i].negative);
  }
}

TEST_CASE("one sgd_step with a tiny rate does not increase a triplet's loss") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    PipelineModel model = PipelineModel::init(desk_test_config(seed));
    // Fresh init parks the fused vector near the signed-sqrt kink where the
    // curvature dwarfs any step size; check the descent property at a
    // better-conditioned point.
    for (Parameter* p : model.enc.parameters())
      if (p->value.rank() >= 2) p->value.array() *= 2.5;
    Rng rng(seed * 131);
    const Tensor anchor = random_tensor({1, 24, 32}, rng, 0.0, 1.0);
    const Tensor positive = random_tensor({3, 24, 32}, rng, 0.0, 1.0);
    const Tensor negative = random_tensor({3, 24, 32}, rng, 0.0, 1.0);

    auto loss_of = [&](bool backward) {
      Tape tape;
      Var fm_a = backbone_forward(tape, model.enc, anchor, Modality::kEvent);
      Var fm_p = backbone_forward(tape, model.enc, positive, Modality::kImage);
      Var fm_n = backbone_forward(tape, model.enc, negative, Modality::kImage);
      Var l_tri = triplet_loss(retrieval_head(tape, model.enc, fm_a),
                               retrieval_head(tape, model.enc, fm_p),
                               retrieval_head(tape, model.enc, fm_n), 0.1);
      Var s_ap = mlp_similarity(cbp_fuse(cls_head(tape, model.enc, fm_a),
                                         cls_head(tape, model.enc, fm_p), model.sketch_event,
                                         model.sketch_image),
                                tape, model.cls);
      Var s_an = mlp_similarity(cbp_fuse(cls_head(tape, model.enc, fm_a),
                                         cls_head(tape, model.enc, fm_n), model.sketch_event,
                                         model.sketch_image),
                                tape, model.cls);
      Var loss = total_loss(l_tri, cls_loss(s_ap, s_an));
      const double v = loss.value()[0];
      if (backward) tape.backward(loss);
      return v;
    };

    const std::vector<Parameter*> params = model.parameters();
    for (Parameter* p : params) p->reset_gradient();
    const double before = loss_of(true);
    sgd_step(params, 1e-4);
    const double after = loss_of(false);
    CHECK(after <= before + 1e-8);
  }
}

TEST_CASE("train: losses shrink, logs are reproducible, checkpoints load back") {
  TrainFixture fx(50, 2025);
  TrainConfig tcfg;
  tcfg.epochs = 5;
  tcfg.batch = 8;
  tcfg.seed = 90210;

  auto run = [&](const std::string& tag) {
    PipelineModel model = PipelineModel::init(desk_test_config(90210));
    const std::string ckpt = fx.dir + "/" + tag + ".ckpt";
    const std::string log = fx.dir + "/" + tag + "_loss.csv";
    const TrainResult r = train(model, fx.manifest, tcfg, ckpt, log);
    return std::make_tuple(r, ckpt, log);
  };

  const auto [r1, ckpt1, log1] = run("a");
  REQUIRE(r1.log.size() == 5);
  // Mean epoch loss non-increasing over the first three epochs (5% slack).
  CHECK(r1.log[1].mean_total <= r1.log[0].mean_total * 1.05);
  CHECK(r1.log[2].mean_total <= r1.log[1].mean_total * 1.05);

  const auto [r2, ckpt2, log2] = run("b");
  std::ifstream f1(log1), f2(log2);
  std::stringstream s1, s2;
  s1 << f1.rdbuf();
  s2 << f2.rdbuf();
  CHECK(s1.str() == s2.str());
  CHECK(!s1.str().empty());

  // The persisted checkpoint reloads into an identical model.
  PipelineModel loaded = PipelineModel::load(ckpt1);
  CHECK(loaded.config().cls_dim == 16);
  PipelineModel loaded2 = PipelineModel::load(ckpt2);
  const auto p1 = loaded.parameters();
  const auto p2 = loaded2.parameters();
  REQUIRE(p1.size() == p2.size());
  for (std::size_t i = 0; i < p1.size(); ++i)
    CHECK((p1[i]->value.array() == p2[i]->value.array()).all());
}

TEST_CASE("train: lr=0 leaves parameters bit-identical") {
  TrainFixture fx(20, 31337);
  TrainConfig tcfg;
  tcfg.epochs = 2;
  tcfg.lr = 0.0;
  tcfg.kmeans_warmup = false;  // isolate the optimizer path
  tcfg.seed = 5;

  PipelineModel model = PipelineModel::init(desk_test_config(5));
  std::vector<Tensor> before;
  for (Parameter* p : model.parameters()) before.push_back(p->value);
  train(model, fx.manifest, tcfg, fx.dir + "/frozen.ckpt", "");
  const std::vector<Parameter*> params = model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i)
    CHECK((params[i]->value.array() == before[i].array()).all());
}

TEST_CASE("train: rejects manifests without usable triplets") {
  Manifest empty_train = geo_manifest(5, 50.0, Split::kTest);
  TrainConfig tcfg;
  PipelineModel model = PipelineModel::init(desk_test_config(1));
  CHECK_THROWS_AS(train(model, empty_train, tcfg, "unused.ckpt", ""), DataError);
}

TEST_CASE("loss log csv has the expected header and rows") {
  std::vector<EpochStats> stats = {{0, 0.5, 1.0, 1.5, 0.25}, {1, 0.4, 0.9, 1.3, 0.5}};
  const std::string csv = loss_log_csv(stats);
  CHECK(csv.find("epoch,mean_triplet,mean_cls,mean_total,val_recall1\n") == 0);
  CHECK(csv.find("\n0,") != std::string::npos);
  CHECK(csv.find("\n1,") != std::string::npos);
}
