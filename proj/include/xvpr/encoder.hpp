#pragma once

#include "xvpr/event_io.hpp"
#include "xvpr/rng.hpp"
#include "xvpr/tape.hpp"
#include "xvpr/tensor.hpp"

#include <cstdint>
#include <vector>

namespace xvpr {

/// Desk-scale defaults; full-scale values (346x260 input, VGG-like channels,
/// K=64, D=512, 4096-dim classification descriptors) are plain config.
struct EncoderConfig {
  Index input_width = 64;
  Index input_height = 48;
  std::vector<Index> backbone_channels = {8, 16, 32, 64};
  Index clusters = 8;     // K
  Index local_dim = 64;   // D, dimension of the aggregated local features
  Index cls_dim = 1024;
  Index cbp_dim = 1024;   // fused descriptor length, must be a power of two
  std::vector<Index> cls_hidden = {512, 128};
  std::uint64_t seed = 42;

  void validate() const;
};

struct ConvLayer {
  Parameter w;  // [out, in, k, k]
  Parameter b;  // [out]
  int stride = 1;
  int pad = 1;
};

/// Backbone + head parameters of the two-branch encoder: each modality has
/// its own backbone, the retrieval and classification heads are shared.
struct EncoderParams {
  EncoderConfig cfg;
  std::vector<ConvLayer> backbone_event;
  std::vector<ConvLayer> backbone_image;
  std::vector<ConvLayer> retr_convs;  // 3 conv+relu layers ahead of NetVLAD
  Parameter vlad_clusters;            // [K, D]
  Parameter vlad_assign_w;            // [K, D]
  Parameter vlad_assign_b;            // [K]
  std::vector<ConvLayer> cls_convs;   // 3 conv+relu layers ahead of the FC
  Parameter cls_fc_w;                 // [cls_dim, D*M]
  Parameter cls_fc_b;                 // [cls_dim]

  std::vector<Parameter*> parameters();
  static EncoderParams init(const EncoderConfig& cfg);
};

/// Spatial size of the backbone output feature map.
struct SpatialDims {
  Index height = 0;
  Index width = 0;
  Index count() const { return height * width; }
};
SpatialDims backbone_output_dims(const EncoderConfig& cfg);

/// Frame tensors: events are [1, H, W], images [3, H, W].
Var backbone_forward(Tape& tape, EncoderParams& params, const Tensor& frame, Modality modality);

/// Soft-assignment VLAD aggregation: per-feature softmax assignment over K
/// clusters, residual accumulation, intra-normalization per cluster block,
/// then global L2 normalization. Output length K*D.
Var netvlad_aggregate(Tape& tape, Var local_features, Var clusters, Var assign_w, Var assign_b);

/// f_phi (3 conv+relu) followed by NetVLAD; unit-norm output of length K*D.
Var retrieval_head(Tape& tape, EncoderParams& params, Var feature_map);

/// f_omega (3 conv+relu) followed by one fully connected layer to cls_dim.
Var cls_head(Tape& tape, EncoderParams& params, Var feature_map);

/// Seeded k-means (Lloyd) over feature vectors; returns [K, D] centers.
Tensor kmeans_clusters(const std::vector<ArrayX>& features, Index k, int iterations, Rng rng);

/// Reset NetVLAD clusters from k-means over the given local features and
/// re-derive the assignment parameters from the new centers.
void reinit_clusters_from(EncoderParams& params, const std::vector<ArrayX>& features);

}  // namespace xvpr
