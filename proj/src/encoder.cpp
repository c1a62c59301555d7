#include "xvpr/encoder.hpp"

#include "xvpr/fft.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace xvpr {

void EncoderConfig::validate() const {
  if (input_width <= 0 || input_height <= 0)
    throw std::invalid_argument("config: input dimensions must be positive");
  if (backbone_channels.empty())
    throw std::invalid_argument("config: at least one backbone layer required");
  for (Index c : backbone_channels)
    if (c <= 0) throw std::invalid_argument("config: backbone channels must be positive");
  if (clusters <= 0 || local_dim <= 0 || cls_dim <= 0 || cbp_dim <= 0)
    throw std::invalid_argument("config: dimensions must be positive");
  if (!is_power_of_two(static_cast<std::size_t>(cbp_dim)))
    throw std::invalid_argument("config: cbp_dim must be a power of two");
  if (cls_hidden.size() != 2 || cls_hidden[0] <= 0 || cls_hidden[1] <= 0)
    throw std::invalid_argument("config: cls_hidden must hold two positive widths");
  const SpatialDims dims = backbone_output_dims(*this);
  if (dims.height < 1 || dims.width < 1)
    throw std::invalid_argument("config: input too small for the backbone depth");
}

SpatialDims backbone_output_dims(const EncoderConfig& cfg) {
  Index h = cfg.input_height, w = cfg.input_width;
  for (std::size_t i = 0; i < cfg.backbone_channels.size(); ++i) {
    h = (h + 2 - 3) / 2 + 1;  // k=3, pad=1, stride=2
    w = (w + 2 - 3) / 2 + 1;
    if (h < 1 || w < 1) return {0, 0};
  }
  return {h, w};
}

namespace {

// Uniform He init: variance 2/fan_in keeps relu activations from decaying
// through the stack (a plain sqrt(1/fan_in) bound attenuates the signal by
// roughly sqrt(6) per layer and stalls SGD at the paper's learning rate).
Parameter conv_weights(std::string name, Index out_ch, Index in_ch, Index k, Rng& rng) {
  const double s = std::sqrt(6.0 / static_cast<double>(in_ch * k * k));
  Tensor w({out_ch, in_ch, k, k});
  for (Index i = 0; i < w.size(); ++i) w[i] = rng.uniform(-s, s);
  return Parameter(std::move(name), std::move(w));
}

Parameter fc_weights(std::string name, Index out_dim, Index in_dim, Rng& rng) {
  const double s = std::sqrt(6.0 / static_cast<double>(in_dim));
  Tensor w({out_dim, in_dim});
  for (Index i = 0; i < w.size(); ++i) w[i] = rng.uniform(-s, s);
  return Parameter(std::move(name), std::move(w));
}

std::vector<ConvLayer> make_backbone(const std::string& prefix, Index in_ch,
                                     const std::vector<Index>& channels, Rng& rng) {
  std::vector<ConvLayer> layers;
  Index prev = in_ch;
  for (std::size_t i = 0; i < channels.size(); ++i) {
    const std::string tag = prefix + "." + std::to_string(i);
    layers.push_back({conv_weights(tag + ".w", channels[i], prev, 3, rng),
                      Parameter(tag + ".b", Tensor({channels[i]})), 2, 1});
    prev = channels[i];
  }
  return layers;
}

std::vector<ConvLayer> make_head_convs(const std::string& prefix, Index in_ch, Index dim,
                                       int layers_count, Rng& rng) {
  std::vector<ConvLayer> layers;
  Index prev = in_ch;
  for (int i = 0; i < layers_count; ++i) {
    const std::string tag = prefix + "." + std::to_string(i);
    layers.push_back({conv_weights(tag + ".w", dim, prev, 3, rng),
                      Parameter(tag + ".b", Tensor({dim})), 1, 1});
    prev = dim;
  }
  return layers;
}

void derive_assignment(EncoderParams& p) {
  const Index k = p.cfg.clusters, d = p.cfg.local_dim;
  p.vlad_assign_w.value.array() = 2.0 * p.vlad_clusters.value.array();
  for (Index r = 0; r < k; ++r) {
    double sq = 0.0;
    for (Index c = 0; c < d; ++c) {
      const double v = p.vlad_clusters.value[r * d + c];
      sq += v * v;
    }
    p.vlad_assign_b.value[r] = -sq;
  }
}

}  // namespace

EncoderParams EncoderParams::init(const EncoderConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  EncoderParams p;
  p.cfg = cfg;
  const Index bb_out = cfg.backbone_channels.back();
  const SpatialDims dims = backbone_output_dims(cfg);

  p.backbone_event = make_backbone("backbone.event", 1, cfg.backbone_channels, rng);
  p.backbone_image = make_backbone("backbone.image", 3, cfg.backbone_channels, rng);
  p.retr_convs = make_head_convs("retr", bb_out, cfg.local_dim, 3, rng);

  const double cs = std::sqrt(1.0 / static_cast<double>(cfg.local_dim));
  Tensor clusters({cfg.clusters, cfg.local_dim});
  for (Index i = 0; i < clusters.size(); ++i) clusters[i] = rng.uniform(-cs, cs);
  p.vlad_clusters = Parameter("netvlad.clusters", std::move(clusters));
  p.vlad_assign_w = Parameter("netvlad.assign_w", Tensor({cfg.clusters, cfg.local_dim}));
  p.vlad_assign_b = Parameter("netvlad.assign_b", Tensor({cfg.clusters}));
  derive_assignment(p);

  // A single full-width conv keeps the classification features close to the
  // metric-trained backbone map; deeper rectified stacks at random init wash
  // out the fine candidate margins the re-ranker depends on.
  p.cls_convs = make_head_convs("clsh", bb_out, bb_out, 1, rng);
  p.cls_fc_w = fc_weights("clsh.fc.w", cfg.cls_dim, bb_out * dims.count(), rng);
  p.cls_fc_b = Parameter("clsh.fc.b", Tensor({cfg.cls_dim}));
  return p;
}

std::vector<Parameter*> EncoderParams::parameters() {
  std::vector<Parameter*> out;
  auto push_layers = [&out](std::vector<ConvLayer>& layers) {
    for (ConvLayer& l : layers) {
      out.push_back(&l.w);
      out.push_back(&l.b);
    }
  };
  push_layers(backbone_event);
  push_layers(backbone_image);
  push_layers(retr_convs);
  out.push_back(&vlad_clusters);
  out.push_back(&vlad_assign_w);
  out.push_back(&vlad_assign_b);
  push_layers(cls_convs);
  out.push_back(&cls_fc_w);
  out.push_back(&cls_fc_b);
  return out;
}

Var backbone_forward(Tape& tape, EncoderParams& params, const Tensor& frame, Modality modality) {
  const Index expect_ch = modality == Modality::kEvent ? 1 : 3;
  if (frame.rank() != 3 || frame.dim(0) != expect_ch || frame.dim(1) != params.cfg.input_height ||
      frame.dim(2) != params.cfg.input_width)
    throw std::invalid_argument("backbone: frame shape " + shape_str(frame.shape()) +
                                " does not match configured " + std::to_string(expect_ch) + "x" +
                                std::to_string(params.cfg.input_height) + "x" +
                                std::to_string(params.cfg.input_width));
  if (!frame.all_finite()) throw std::invalid_argument("backbone: non-finite frame input");

  std::vector<ConvLayer>& layers =
      modality == Modality::kEvent ? params.backbone_event : params.backbone_image;
  Var h = tape.leaf(frame);
  for (ConvLayer& l : layers)
    h = relu(channel_bias(conv2d(h, tape.watch(l.w), l.stride, l.pad), tape.watch(l.b)));
  return h;
}

Var netvlad_aggregate(Tape&, Var local_features, Var clusters, Var assign_w, Var assign_b) {
  const Tensor& x = local_features.value();
  const Tensor& c = clusters.value();
  if (x.rank() != 2 || c.rank() != 2 || assign_w.value().rank() != 2)
    throw std::invalid_argument("netvlad: rank-2 inputs required");
  const Index d = x.dim(0), k = c.dim(0);
  if (c.dim(1) != d || assign_w.value().dim(0) != k || assign_w.value().dim(1) != d ||
      assign_b.value().dim(0) != k)
    throw std::invalid_argument("netvlad: K/D mismatch between features " + shape_str(x.shape()) +
                                " and clusters " + shape_str(c.shape()));

  Var affinities = add_rowwise(matmul(assign_w, local_features), assign_b);  // [K, M]
  Var assign = softmax(affinities, 0);                                       // columns sum to 1
  Var weighted = matmul(assign, transpose(local_features));                  // [K, D]
  Var mass = row_sum(assign);                                                // [K]
  Var residual = sub(weighted, scale_rows(clusters, mass));
  return l2_normalize(reshape(normalize_rows(residual), {k * d}));
}

Var retrieval_head(Tape& tape, EncoderParams& params, Var feature_map) {
  Var h = feature_map;
  for (ConvLayer& l : params.retr_convs)
    h = relu(channel_bias(conv2d(h, tape.watch(l.w), l.stride, l.pad), tape.watch(l.b)));
  const Tensor& v = h.value();
  Var locals = reshape(h, {v.dim(0), v.dim(1) * v.dim(2)});
  return netvlad_aggregate(tape, locals, tape.watch(params.vlad_clusters),
                           tape.watch(params.vlad_assign_w), tape.watch(params.vlad_assign_b));
}

Var cls_head(Tape& tape, EncoderParams& params, Var feature_map) {
  Var h = feature_map;
  for (ConvLayer& l : params.cls_convs)
    h = relu(channel_bias(conv2d(h, tape.watch(l.w), l.stride, l.pad), tape.watch(l.b)));
  // Channel centering removes the rectifier's common offset, which would
  // otherwise dwarf the place-specific signal in the bilinear fusion.
  Var centered = center_channels(h);
  Var flat = reshape(centered, {centered.value().size()});
  return linear(flat, tape.watch(params.cls_fc_w), tape.watch(params.cls_fc_b));
}

Tensor kmeans_clusters(const std::vector<ArrayX>& features, Index k, int iterations, Rng rng) {
  if (features.empty()) throw std::invalid_argument("kmeans: no features");
  const Index d = features.front().size();
  const Index n = static_cast<Index>(features.size());
  Tensor centers({k, d});
  for (Index j = 0; j < k; ++j) {
    const Index pick = rng.uniform_int(n);
    Eigen::Map<ArrayX>(centers.data() + j * d, d) = features[static_cast<std::size_t>(pick)];
  }

  std::vector<Index> owner(static_cast<std::size_t>(n), 0);
  for (int it = 0; it < iterations; ++it) {
    for (Index i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      Index best_j = 0;
      for (Index j = 0; j < k; ++j) {
        const double dist =
            (features[static_cast<std::size_t>(i)] - Eigen::Map<const ArrayX>(centers.data() + j * d, d))
                .square()
                .sum();
        if (dist < best) {
          best = dist;
          best_j = j;
        }
      }
      owner[static_cast<std::size_t>(i)] = best_j;
    }
    Tensor sums({k, d});
    std::vector<Index> counts(static_cast<std::size_t>(k), 0);
    for (Index i = 0; i < n; ++i) {
      const Index j = owner[static_cast<std::size_t>(i)];
      Eigen::Map<ArrayX>(sums.data() + j * d, d) += features[static_cast<std::size_t>(i)];
      ++counts[static_cast<std::size_t>(j)];
    }
    for (Index j = 0; j < k; ++j) {
      if (counts[static_cast<std::size_t>(j)] == 0) continue;  // empty cluster keeps its center
      Eigen::Map<ArrayX>(centers.data() + j * d, d) =
          Eigen::Map<const ArrayX>(sums.data() + j * d, d) /
          static_cast<double>(counts[static_cast<std::size_t>(j)]);
    }
  }
  return centers;
}

void reinit_clusters_from(EncoderParams& params, const std::vector<ArrayX>& features) {
  Rng rng(params.cfg.seed ^ 0x6b6d65616e73ull);  // cluster-init stream
  params.vlad_clusters.value = kmeans_clusters(features, params.cfg.clusters, 10, rng);
  derive_assignment(params);

  // Temper the assignment so the softmax starts soft: with data-scaled
  // clusters the raw logits grow with ||x||^2 and can saturate the
  // assignment, freezing the whole retrieval branch at some seeds.
  const Index k = params.cfg.clusters, d = params.cfg.local_dim;
  double sum = 0.0, sum_sq = 0.0;
  std::size_t count = 0;
  for (const ArrayX& x : features) {
    for (Index r = 0; r < k; ++r) {
      const Eigen::Map<const ArrayX> c(params.vlad_assign_w.value.data() + r * d, d);
      const double logit = (c * x).sum() + params.vlad_assign_b.value[r];
      sum += logit;
      sum_sq += logit * logit;
      ++count;
    }
  }
  if (count > 1) {
    const double mean = sum / static_cast<double>(count);
    const double var = sum_sq / static_cast<double>(count) - mean * mean;
    const double sd = std::sqrt(std::max(var, 0.0));
    constexpr double kTargetSpread = 3.0;  // structured assignments, no saturation
    if (sd > kTargetSpread) {
      params.vlad_assign_w.value.array() *= kTargetSpread / sd;
      params.vlad_assign_b.value.array() *= kTargetSpread / sd;
    }
  }
}

}  // namespace xvpr
