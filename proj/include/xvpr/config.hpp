#pragma once

#include "xvpr/encoder.hpp"
#include "xvpr/evaluation.hpp"
#include "xvpr/event_frame.hpp"
#include "xvpr/training.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace xvpr {

/// Merged settings: config-file keys overridden by command-line flags.
/// Unknown keys are rejected.
struct RunConfig {
  EncoderConfig encoder;
  TrainConfig train;
  FrameOptions frame;
  SplitFractions fractions;
  std::int64_t delta_t_us = 25000;
  int top_n = 30;
  int threads = 1;
  double radius_m = 35.0;
  std::vector<int> recall_ns = {1, 5, 10, 15, 20, 30};
  int synth_places = 200;
  std::vector<std::string> scenarios = {"daytime"};
  std::uint64_t seed = 42;

  void set(const std::string& key, const std::string& value);
  void set_seed(std::uint64_t s);
  void validate() const;
};

RunConfig load_run_config(const std::string& path);

}  // namespace xvpr
