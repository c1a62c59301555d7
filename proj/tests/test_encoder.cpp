#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "xvpr/encoder.hpp"
#include "xvpr/grad_check.hpp"
#include "xvpr/model.hpp"
#include "xvpr/rng.hpp"
#include "xvpr/validation.hpp"

#include <cmath>

using namespace xvpr;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

EncoderConfig small_config(std::uint64_t seed = 7) {
  EncoderConfig cfg;
  cfg.input_width = 16;
  cfg.input_height = 12;
  cfg.backbone_channels = {4, 8};
  cfg.clusters = 3;
  cfg.local_dim = 6;
  cfg.cls_dim = 10;
  cfg.cbp_dim = 16;
  cfg.cls_hidden = {8, 4};
  cfg.seed = seed;
  return cfg;
}

// Straight-loop NetVLAD evaluation, kept independent of the tape ops.
Tensor netvlad_oracle(const Tensor& x, const Tensor& c, const Tensor& w, const Tensor& b) {
  const Index d = x.dim(0), m = x.dim(1), k = c.dim(0);
  // Soft assignment per local feature.
  std::vector<std::vector<double>> assign(static_cast<std::size_t>(k),
                                          std::vector<double>(static_cast<std::size_t>(m)));
  for (Index j = 0; j < m; ++j) {
    std::vector<double> logits(static_cast<std::size_t>(k));
    double mx = -1e300;
    for (Index r = 0; r < k; ++r) {
      double acc = b[r];
      for (Index q = 0; q < d; ++q) acc += w[r * d + q] * x[q * m + j];
      logits[static_cast<std::size_t>(r)] = acc;
      mx = std::max(mx, acc);
    }
    double z = 0.0;
    for (double& l : logits) {
      l = std::exp(l - mx);
      z += l;
    }
    for (Index r = 0; r < k; ++r) assign[static_cast<std::size_t>(r)][static_cast<std::size_t>(j)] =
        logits[static_cast<std::size_t>(r)] / z;
  }
  // Residual accumulation, intra-normalization, global normalization.
  Tensor v({k, d});
  for (Index r = 0; r < k; ++r)
    for (Index q = 0; q < d; ++q) {
      double acc = 0.0;
      for (Index j = 0; j < m; ++j)
        acc += assign[static_cast<std::size_t>(r)][static_cast<std::size_t>(j)] *
               (x[q * m + j] - c[r * d + q]);
      v[r * d + q] = acc;
    }
  for (Index r = 0; r < k; ++r) {
    double n = 0.0;
    for (Index q = 0; q < d; ++q) n += v[r * d + q] * v[r * d + q];
    n = std::sqrt(n);
    if (n >= 1e-12)
      for (Index q = 0; q < d; ++q) v[r * d + q] /= n;
    else
      for (Index q = 0; q < d; ++q) v[r * d + q] = 0.0;
  }
  double g = std::sqrt(v.array().square().sum());
  Tensor out = v.reshaped({k * d});
  if (g >= 1e-12) out.array() /= g;
  else out.array().setZero();
  return out;
}

Tensor run_netvlad(const Tensor& x, const Tensor& c, const Tensor& w, const Tensor& b) {
  Tape tape;
  return netvlad_aggregate(tape, tape.leaf(x), tape.leaf(c), tape.leaf(w), tape.leaf(b)).value();
}

}  // namespace

TEST_CASE("backbone: zero input with zero parameters yields a zero feature map") {
  EncoderParams enc = EncoderParams::init(small_config());
  for (ConvLayer& l : enc.backbone_event) {
    l.w.value.array().setZero();
    l.b.value.array().setZero();
  }
  Tape tape;
  Var out = backbone_forward(tape, enc, Tensor::zeros({1, 12, 16}), Modality::kEvent);
  CHECK(out.value().array().abs().maxCoeff() == 0.0);
  const SpatialDims dims = backbone_output_dims(enc.cfg);
  CHECK(out.value().shape() == Shape{8, dims.height, dims.width});
}

TEST_CASE("backbone: deterministic given parameters, rejects wrong input size") {
  EncoderParams enc = EncoderParams::init(small_config());
  Rng rng(3);
  const Tensor frame = random_tensor({1, 12, 16}, rng, 0.0, 1.0);
  Tape t1, t2;
  const Tensor a = backbone_forward(t1, enc, frame, Modality::kEvent).value();
  const Tensor b = backbone_forward(t2, enc, frame, Modality::kEvent).value();
  CHECK((a.array() == b.array()).all());

  Tape t3;
  CHECK_THROWS_AS(backbone_forward(t3, enc, Tensor::zeros({1, 10, 16}), Modality::kEvent),
                  std::invalid_argument);
  Tape t4;
  CHECK_THROWS_AS(backbone_forward(t4, enc, Tensor::zeros({1, 12, 16}), Modality::kImage),
                  std::invalid_argument);
}

TEST_CASE("netvlad: zero residual under a concentrated assignment") {
  // All local features equal to cluster 0; a strong affinity bias picks it.
  const Index d = 3, m = 4, k = 2;
  Tensor x({d, m});
  Tensor c({k, d});
  for (Index q = 0; q < d; ++q) {
    c[q] = 0.3 * static_cast<double>(q + 1);  // cluster 0
    c[d + q] = -5.0;                          // cluster 1, far away
    for (Index j = 0; j < m; ++j) x[q * m + j] = c[q];
  }
  Tensor w = Tensor::zeros({k, d});
  Tensor b = Tensor::vector({200.0, -200.0});  // effectively hard assignment to cluster 0
  const Tensor out = run_netvlad(x, c, w, b);
  // Residual block 0 is exactly zero; block 1 receives ~zero mass, and the
  // zero-norm guard returns the zero vector for it.
  for (Index q = 0; q < d; ++q) CHECK(out[q] == 0.0);
  CHECK(out.array().abs().maxCoeff() == 0.0);
}

TEST_CASE("netvlad: single cluster, single feature is the normalized residual") {
  Tensor x = Tensor::from({3, 1}, {1.0, 2.0, 2.0});
  Tensor c = Tensor::from({1, 3}, {0.0, 0.0, 0.0});
  Tensor w = Tensor::zeros({1, 3});
  Tensor b = Tensor::zeros({1});
  const Tensor out = run_netvlad(x, c, w, b);
  CHECK(out[0] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(out[1] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(out[2] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("netvlad matches the direct-formula oracle within 1e-10") {
  Rng rng(11);
  for (int trial = 0; trial < 25; ++trial) {
    const Tensor x = random_tensor({3, 4}, rng);
    const Tensor c = random_tensor({2, 3}, rng);
    const Tensor w = random_tensor({2, 3}, rng);
    const Tensor b = random_tensor({2}, rng);
    const Tensor got = run_netvlad(x, c, w, b);
    const Tensor want = netvlad_oracle(x, c, w, b);
    CHECK((got.array() - want.array()).abs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("netvlad: assignment weights per feature sum to one") {
  Rng rng(13);
  const Tensor x = random_tensor({4, 6}, rng);
  const Tensor w = random_tensor({3, 4}, rng);
  const Tensor b = random_tensor({3}, rng);
  Tape tape;
  Var aff = add_rowwise(matmul(tape.leaf(w), tape.leaf(x)), tape.leaf(b));
  const Tensor a = softmax(aff, 0).value();
  for (Index j = 0; j < 6; ++j) {
    double s = 0.0;
    for (Index r = 0; r < 3; ++r) s += a[r * 6 + j];
    CHECK(std::abs(s - 1.0) < 1e-9);
  }
}

TEST_CASE("netvlad is invariant to permuting the local features") {
  Rng rng(17);
  const Tensor x = random_tensor({5, 7}, rng);
  const Tensor c = random_tensor({3, 5}, rng);
  const Tensor w = random_tensor({3, 5}, rng);
  const Tensor b = random_tensor({3}, rng);
  const Tensor base = run_netvlad(x, c, w, b);

  // Reversed column order.
  Tensor shuffled({5, 7});
  for (Index q = 0; q < 5; ++q)
    for (Index j = 0; j < 7; ++j) shuffled[q * 7 + j] = x[q * 7 + (6 - j)];
  const Tensor perm = run_netvlad(shuffled, c, w, b);
  CHECK((base.array() - perm.array()).abs().maxCoeff() < 1e-10);
}

TEST_CASE("netvlad rejects K/D mismatches") {
  Tape tape;
  Var x = tape.leaf(Tensor::zeros({3, 4}));
  Var c = tape.leaf(Tensor::zeros({2, 5}));  // D mismatch
  Var w = tape.leaf(Tensor::zeros({2, 3}));
  Var b = tape.leaf(Tensor::zeros({2}));
  CHECK_THROWS_AS(netvlad_aggregate(tape, x, c, w, b), std::invalid_argument);
}

TEST_CASE("retrieval head: unit norm and expected length on random inputs") {
  EncoderConfig cfg = small_config();
  EncoderParams enc = EncoderParams::init(cfg);
  Rng rng(19);
  for (int trial = 0; trial < 100; ++trial) {
    Tape tape;
    Var fmap = backbone_forward(tape, enc, random_tensor({1, 12, 16}, rng, 0.0, 1.0),
                                Modality::kEvent);
    const Tensor out = retrieval_head(tape, enc, fmap).value();
    REQUIRE(out.size() == cfg.clusters * cfg.local_dim);
    const double norm = std::sqrt(out.array().square().sum());
    CHECK(std::abs(norm - 1.0) < 1e-6);
  }
}

TEST_CASE("cls head: expected length, zero model maps zero input to zero") {
  EncoderConfig cfg = small_config();
  EncoderParams enc = EncoderParams::init(cfg);
  Tape tape;
  Var fmap = backbone_forward(tape, enc, Tensor::zeros({3, 12, 16}), Modality::kImage);
  const Tensor out = cls_head(tape, enc, fmap).value();
  CHECK(out.size() == cfg.cls_dim);

  for (Parameter* p : enc.parameters()) p->value.array().setZero();
  Tape t2;
  Var fz = backbone_forward(t2, enc, Tensor::zeros({3, 12, 16}), Modality::kImage);
  CHECK(cls_head(t2, enc, fz).value().array().abs().maxCoeff() == 0.0);
}

TEST_CASE("modalities keep separate backbones: image weights do not affect events") {
  EncoderConfig cfg = small_config();
  EncoderParams enc = EncoderParams::init(cfg);
  Rng rng(23);
  const Tensor frame = random_tensor({1, 12, 16}, rng, 0.0, 1.0);
  Tape t1;
  const Tensor before = retrieval_head(t1, enc, backbone_forward(t1, enc, frame, Modality::kEvent)).value();
  for (ConvLayer& l : enc.backbone_image) l.w.value.array() += 0.37;
  Tape t2;
  const Tensor after = retrieval_head(t2, enc, backbone_forward(t2, enc, frame, Modality::kEvent)).value();
  CHECK((before.array() == after.array()).all());
}

TEST_CASE("retrieval and cls heads pass grad_check through the full stack") {
  EncoderConfig cfg = small_config(29);
  EncoderParams enc = EncoderParams::init(cfg);
  for (Parameter* p : enc.parameters())
    if (p->value.rank() >= 2) p->value.array() *= 2.0;
  Rng rng(31);
  const Tensor frame = random_tensor({1, 12, 16}, rng, 0.0, 1.0);
  Rng probe_rng(37);
  const Tensor probe_r = random_tensor({cfg.clusters * cfg.local_dim}, probe_rng);
  const Tensor probe_c = random_tensor({cfg.cls_dim}, probe_rng);

  const std::vector<Parameter*> params = enc.parameters();
  auto forward = [&](bool backward) {
    Tape tape;
    Var fmap = backbone_forward(tape, enc, frame, Modality::kEvent);
    Var r = retrieval_head(tape, enc, fmap);
    Var c = cls_head(tape, enc, fmap);
    Var loss = add(sum(mul(r, tape.leaf(probe_r))), sum(mul(c, tape.leaf(probe_c))));
    if (backward) tape.backward(loss);
    return loss.value()[0];
  };
  ScalarField f;
  f.value = [&](const Tensor& point) {
    unpack_parameters(point, params);
    return forward(false);
  };
  f.gradient = [&](const Tensor& point) {
    unpack_parameters(point, params);
    for (Parameter* p : params) p->reset_gradient();
    forward(true);
    std::vector<Tensor> grads;
    Index total = 0;
    for (Parameter* p : params) total += p->gradient.size();
    Tensor flat({total});
    Index at = 0;
    for (Parameter* p : params) {
      for (Index i = 0; i < p->gradient.size(); ++i) flat[at + i] = p->gradient[i];
      at += p->gradient.size();
    }
    return flat;
  };
  const double err = grad_check(f, pack_parameters(params), 1e-5);
  CHECK(err < 1e-4);
}

TEST_CASE("kmeans: deterministic, centers come from the data") {
  Rng data_rng(41);
  std::vector<ArrayX> feats;
  for (int i = 0; i < 40; ++i) {
    ArrayX f(3);
    const double base = i < 20 ? -2.0 : 2.0;
    for (int q = 0; q < 3; ++q) f[q] = base + data_rng.uniform(-0.1, 0.1);
    feats.push_back(f);
  }
  const Tensor c1 = kmeans_clusters(feats, 2, 10, Rng(5));
  const Tensor c2 = kmeans_clusters(feats, 2, 10, Rng(5));
  CHECK((c1.array() == c2.array()).all());
  // The two centers land near -2 and 2.
  const double lo = std::min(c1[0], c1[3]);
  const double hi = std::max(c1[0], c1[3]);
  CHECK(lo == doctest::Approx(-2.0).epsilon(0.1));
  CHECK(hi == doctest::Approx(2.0).epsilon(0.1));
}

TEST_CASE("encoder config validation") {
  EncoderConfig cfg = small_config();
  cfg.cbp_dim = 100;  // not a power of two
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = small_config();
  cfg.input_width = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = small_config();
  cfg.backbone_channels.clear();
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}
