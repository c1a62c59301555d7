#pragma once

#include "xvpr/grad_check.hpp"
#include "xvpr/tensor.hpp"

#include <string>
#include <vector>

namespace xvpr {

struct GradCheckReport {
  std::string name;
  double max_rel_err = 0.0;
  bool pass = false;
};

constexpr double kGradCheckLimit = 1e-4;
constexpr double kGradCheckEps = 1e-5;

/// Finite-difference validation of every differentiable stage on tiny,
/// deterministic instances: conv, linear, NetVLAD aggregation, count sketch
/// + FFT fusion, the similarity classifier, both losses, and the full
/// pipeline loss end to end.
std::vector<GradCheckReport> run_gradcheck_suite();

Tensor pack_parameters(const std::vector<Parameter*>& params);
void unpack_parameters(const Tensor& flat, const std::vector<Parameter*>& params);

}  // namespace xvpr
