#pragma once

#include "xvpr/event_io.hpp"
#include "xvpr/model.hpp"
#include "xvpr/tape.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace xvpr {

struct TrainConfig {
  double alpha = 0.1;  // triplet margin
  double lr = 0.1;
  int epochs = 10;
  int batch = 8;
  double pos_radius_m = 35.0;
  double neg_radius_m = 75.0;
  std::uint64_t seed = 42;
  bool kmeans_warmup = true;

  void validate() const;
};

struct Triplet {
  std::string anchor;    // event sample id
  std::string positive;  // image sample id
  std::string negative;  // image sample id
};

/// One triplet per anchor event of the train split: a positive image within
/// pos_radius_m, a negative beyond neg_radius_m, both drawn uniformly from
/// the epoch seed. Anchors without a valid positive or negative are skipped
/// (reported on `log` when given).
std::vector<Triplet> mine_triplets(const Manifest& manifest, const TrainConfig& cfg,
                                   std::uint64_t epoch_seed, std::ostream* log = nullptr);

/// max(d(fa, fp) - d(fa, fn) + alpha, 0) with Euclidean d.
Var triplet_loss(Var fa, Var fp, Var fn, double alpha);
double triplet_loss_value(const Tensor& fa, const Tensor& fp, const Tensor& fn, double alpha);

/// -ln(s_ap) - ln(1 - s_an); scores clamped into [1e-12, 1 - 1e-12].
Var cls_loss(Var s_ap, Var s_an);
double cls_loss_value(double s_ap, double s_an);

Var total_loss(Var triplet, Var classification);

/// value -= lr * gradient for every parameter, then gradients are zeroed.
/// A non-finite gradient aborts with a diagnostic naming the parameter.
void sgd_step(const std::vector<Parameter*>& params, double lr);

struct EpochStats {
  int epoch = 0;
  double mean_triplet = 0.0;
  double mean_cls = 0.0;
  double mean_total = 0.0;
  double val_recall1 = 0.0;
};

struct TrainResult {
  std::vector<EpochStats> log;
  int best_epoch = -1;
  double best_val_recall1 = 0.0;
};

/// End-to-end loop: k-means cluster warm-up, per-epoch triplet mining,
/// batched SGD on L_triplet + L_cls, per-epoch validation Recall@1, and the
/// best-validation checkpoint written to checkpoint_path.
TrainResult train(PipelineModel& model, const Manifest& manifest, const TrainConfig& cfg,
                  const std::string& checkpoint_path, const std::string& loss_log_path,
                  std::ostream* log = nullptr);

/// Loss log CSV ("epoch,mean_triplet,mean_cls,mean_total,val_recall1").
std::string loss_log_csv(const std::vector<EpochStats>& stats);

}  // namespace xvpr
