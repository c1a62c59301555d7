#pragma once

#include "xvpr/rng.hpp"
#include "xvpr/tape.hpp"
#include "xvpr/tensor.hpp"

#include <cstdint>
#include <vector>

namespace xvpr {

/// Frozen Count Sketch projection: index map h: [n] -> [m] and sign map
/// s: [n] -> {-1, +1}, both drawn uniformly from `seed` at construction.
struct CountSketchParams {
  Index input_dim = 0;
  Index output_dim = 0;
  std::vector<Index> index_map;
  std::vector<double> sign_map;
  std::uint64_t seed = 0;

  static CountSketchParams make(Index input_dim, Index output_dim, std::uint64_t seed);
};

/// out[j] = sum_{i: h(i)=j} s(i) * v[i]; linear in v.
Var count_sketch(Var v, const CountSketchParams& params);
Tensor count_sketch_forward(const Tensor& v, const CountSketchParams& params);

/// Circular convolution of two equal-length vectors computed in the
/// frequency domain (length must be a power of two).
Var circular_convolve(Var a, Var b);
Tensor circular_convolve_forward(const Tensor& a, const Tensor& b);

/// Compact-bilinear fusion: sketch u and v with their own projections and
/// circularly convolve. With ssr_normalize (default), the fused vector is
/// passed through signed square root and L2 normalization.
Var cbp_fuse(Var u, Var v, const CountSketchParams& pu, const CountSketchParams& pv,
             bool ssr_normalize = true);

/// 3-layer perceptron similarity classifier: two relu hidden layers, one
/// sigmoid output in (0,1).
struct ClassifierParams {
  Parameter w1, b1;
  Parameter w2, b2;
  Parameter w3, b3;

  static ClassifierParams init(Index input_dim, Index hidden1, Index hidden2, Rng& rng);
  std::vector<Parameter*> parameters();
};

Var mlp_similarity(Var fused, Tape& tape, ClassifierParams& params);

}  // namespace xvpr
