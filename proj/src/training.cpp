#include "xvpr/training.hpp"

#include "xvpr/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <ostream>
#include <sstream>
#include <unordered_map>

namespace xvpr {

void TrainConfig::validate() const {
  if (alpha <= 0.0) throw std::invalid_argument("train config: alpha must be positive");
  if (lr < 0.0) throw std::invalid_argument("train config: learning rate must be >= 0");
  if (epochs < 1) throw std::invalid_argument("train config: epochs must be >= 1");
  if (batch < 1) throw std::invalid_argument("train config: batch must be >= 1");
  if (pos_radius_m <= 0.0 || neg_radius_m <= pos_radius_m)
    throw std::invalid_argument("train config: need 0 < pos_radius_m < neg_radius_m");
}

std::vector<Triplet> mine_triplets(const Manifest& manifest, const TrainConfig& cfg,
                                   std::uint64_t epoch_seed, std::ostream* log) {
  cfg.validate();
  const std::vector<const SampleRecord*> anchors = filter(manifest, Modality::kEvent, Split::kTrain);
  const std::vector<const SampleRecord*> images = filter(manifest, Modality::kImage, Split::kTrain);
  if (anchors.empty() || images.empty())
    throw DataError("mine_triplets: train split needs both event and image samples");

  Rng rng(epoch_seed);
  std::vector<std::size_t> order(anchors.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(i)))]);

  std::vector<Triplet> triplets;
  triplets.reserve(anchors.size());
  std::vector<const SampleRecord*> positives, negatives;
  for (const std::size_t idx : order) {
    const SampleRecord& a = *anchors[idx];
    positives.clear();
    negatives.clear();
    for (const SampleRecord* img : images) {
      const double d = geo_distance(a.geo, img->geo);
      if (d < cfg.pos_radius_m)
        positives.push_back(img);
      else if (d > cfg.neg_radius_m)
        negatives.push_back(img);
    }
    if (positives.empty()) {
      if (log) *log << "mine_triplets: anchor '" << a.id << "' has no positive within "
                    << cfg.pos_radius_m << " m, skipped\n";
      continue;
    }
    if (negatives.empty()) {
      if (log) *log << "mine_triplets: anchor '" << a.id << "' has no negative beyond "
                    << cfg.neg_radius_m << " m, skipped\n";
      continue;
    }
    const SampleRecord* p = positives[static_cast<std::size_t>(
        rng.uniform_int(static_cast<std::int64_t>(positives.size())))];
    const SampleRecord* n = negatives[static_cast<std::size_t>(
        rng.uniform_int(static_cast<std::int64_t>(negatives.size())))];
    triplets.push_back({a.id, p->id, n->id});
  }
  return triplets;
}

Var triplet_loss(Var fa, Var fp, Var fn, double alpha) {
  Var d_ap = euclidean_distance(fa, fp);
  Var d_an = euclidean_distance(fa, fn);
  return relu(add_const(sub(d_ap, d_an), alpha));
}

double triplet_loss_value(const Tensor& fa, const Tensor& fp, const Tensor& fn, double alpha) {
  if (!same_shape(fa, fp) || !same_shape(fa, fn))
    throw std::invalid_argument("triplet_loss: descriptor length mismatch");
  const double d_ap = std::sqrt((fa.array() - fp.array()).square().sum());
  const double d_an = std::sqrt((fa.array() - fn.array()).square().sum());
  return std::max(d_ap - d_an + alpha, 0.0);
}

Var cls_loss(Var s_ap, Var s_an) {
  Var pos = log(clamp_unit(s_ap));
  Var neg = log(clamp_unit(add_const(scale(s_an, -1.0), 1.0)));
  return scale(add(pos, neg), -1.0);
}

double cls_loss_value(double s_ap, double s_an) {
  const double a = std::clamp(s_ap, 1e-12, 1.0 - 1e-12);
  const double b = std::clamp(s_an, 1e-12, 1.0 - 1e-12);
  return -std::log(a) - std::log(1.0 - b);
}

Var total_loss(Var triplet, Var classification) { return add(triplet, classification); }

void sgd_step(const std::vector<Parameter*>& params, double lr) {
  for (Parameter* p : params) {
    if (!p->gradient.all_finite())
      throw DataError("sgd_step: non-finite gradient in parameter '" + p->name + "'");
    p->value.array() -= lr * p->gradient.array();
    p->reset_gradient();
  }
}

namespace {

struct SampleCache {
  std::unordered_map<std::string, const SampleRecord*> records;
  std::unordered_map<std::string, Tensor> inputs;

  const SampleRecord& record(const std::string& id) const {
    const auto it = records.find(id);
    if (it == records.end()) throw DataError("train: unknown sample id '" + id + "'");
    return *it->second;
  }

  const Tensor& input(PipelineModel& model, const std::string& id) {
    const auto it = inputs.find(id);
    if (it != inputs.end()) return it->second;
    const SampleRecord& rec = record(id);
    Tensor t = rec.modality == Modality::kEvent
                   ? frame_to_tensor(load_frame_raw(rec.path))
                   : image_to_tensor(load_image_ppm(rec.path), model.config());
    return inputs.emplace(id, std::move(t)).first->second;
  }
};

// Local features of a [D, H, W] head output as spatial columns.
void collect_local_features(const Tensor& fmap, std::vector<ArrayX>& out) {
  const Index d = fmap.dim(0), m = fmap.dim(1) * fmap.dim(2);
  for (Index j = 0; j < m; ++j) {
    ArrayX col(d);
    for (Index c = 0; c < d; ++c) col[c] = fmap[c * m + j];
    out.push_back(std::move(col));
  }
}

void kmeans_warmup(PipelineModel& model, const Manifest& manifest, SampleCache& cache) {
  std::vector<const SampleRecord*> warm;
  for (Modality mod : {Modality::kEvent, Modality::kImage}) {
    int taken = 0;
    for (const SampleRecord* r : filter(manifest, mod, Split::kTrain)) {
      warm.push_back(r);
      if (++taken >= 8) break;
    }
  }
  std::vector<ArrayX> feats;
  for (const SampleRecord* r : warm) {
    Tape tape;
    Var fmap = backbone_forward(tape, model.enc, cache.input(model, r->id), r->modality);
    Var h = fmap;
    for (ConvLayer& l : model.enc.retr_convs)
      h = relu(channel_bias(conv2d(h, tape.watch(l.w), l.stride, l.pad), tape.watch(l.b)));
    collect_local_features(h.value(), feats);
  }
  reinit_clusters_from(model.enc, feats);
}

double validation_recall1(PipelineModel& model, const Manifest& manifest, SampleCache& cache,
                          double radius_m) {
  const std::vector<const SampleRecord*> val_images = filter(manifest, Modality::kImage, Split::kVal);
  const std::vector<const SampleRecord*> val_events = filter(manifest, Modality::kEvent, Split::kVal);
  if (val_images.empty() || val_events.empty()) return 0.0;

  PlaceDatabase db;
  for (const SampleRecord* r : val_images) {
    Descriptors d = encode(model, cache.input(model, r->id), Modality::kImage);
    db.entries.push_back({r->id, r->geo, std::move(d.retrieval), std::move(d.cls)});
  }
  int hits = 0;
  for (const SampleRecord* r : val_events) {
    Descriptors d = encode(model, cache.input(model, r->id), Modality::kEvent);
    const std::vector<Candidate> top = search(db, d.retrieval, 1);
    if (top.empty()) continue;
    const auto entry = std::find_if(db.entries.begin(), db.entries.end(),
                                    [&](const DbEntry& e) { return e.id == top.front().id; });
    if (geo_distance(r->geo, entry->geo) < radius_m) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(val_events.size());
}

}  // namespace

TrainResult train(PipelineModel& model, const Manifest& manifest, const TrainConfig& cfg,
                  const std::string& checkpoint_path, const std::string& loss_log_path,
                  std::ostream* log) {
  cfg.validate();

  SampleCache cache;
  for (const SampleRecord& r : manifest)
    if (r.split == Split::kTrain || r.split == Split::kVal) cache.records[r.id] = &r;

  {
    const std::vector<Triplet> probe = mine_triplets(manifest, cfg, cfg.seed, nullptr);
    if (probe.empty()) throw DataError("train: empty triplet set, nothing to learn from");
  }
  if (cfg.kmeans_warmup) kmeans_warmup(model, manifest, cache);

  const std::vector<Parameter*> params = model.parameters();
  for (Parameter* p : params) p->reset_gradient();

  TrainResult result;
  PipelineModel best = model;
  const Rng base(cfg.seed);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const std::uint64_t epoch_seed = base.fork(static_cast<std::uint64_t>(epoch) + 1).next_u64();
    const std::vector<Triplet> triplets = mine_triplets(manifest, cfg, epoch_seed, log);

    double sum_triplet = 0.0, sum_cls = 0.0;
    std::size_t done = 0;
    while (done < triplets.size()) {
      const std::size_t batch_end = std::min(triplets.size(), done + static_cast<std::size_t>(cfg.batch));
      const double inv_batch = 1.0 / static_cast<double>(batch_end - done);
      for (std::size_t i = done; i < batch_end; ++i) {
        const Triplet& tr = triplets[i];
        Tape tape;
        Var fm_a = backbone_forward(tape, model.enc, cache.input(model, tr.anchor), Modality::kEvent);
        Var fm_p = backbone_forward(tape, model.enc, cache.input(model, tr.positive), Modality::kImage);
        Var fm_n = backbone_forward(tape, model.enc, cache.input(model, tr.negative), Modality::kImage);

        Var fa = retrieval_head(tape, model.enc, fm_a);
        Var fp = retrieval_head(tape, model.enc, fm_p);
        Var fn = retrieval_head(tape, model.enc, fm_n);
        Var l_tri = triplet_loss(fa, fp, fn, cfg.alpha);

        Var ca = cls_head(tape, model.enc, fm_a);
        Var cp = cls_head(tape, model.enc, fm_p);
        Var cn = cls_head(tape, model.enc, fm_n);
        Var s_ap = mlp_similarity(cbp_fuse(ca, cp, model.sketch_event, model.sketch_image), tape, model.cls);
        Var s_an = mlp_similarity(cbp_fuse(ca, cn, model.sketch_event, model.sketch_image), tape, model.cls);
        Var l_cls = cls_loss(s_ap, s_an);

        Var loss = total_loss(l_tri, l_cls);
        sum_triplet += l_tri.value()[0];
        sum_cls += l_cls.value()[0];
        tape.backward(loss, inv_batch);
      }
      sgd_step(params, cfg.lr);
      done = batch_end;
    }

    EpochStats stats;
    stats.epoch = epoch;
    const double n = static_cast<double>(triplets.size());
    stats.mean_triplet = sum_triplet / n;
    stats.mean_cls = sum_cls / n;
    stats.mean_total = stats.mean_triplet + stats.mean_cls;
    stats.val_recall1 = validation_recall1(model, manifest, cache, 35.0);
    result.log.push_back(stats);
    if (log)
      *log << "epoch " << epoch << ": triplet " << stats.mean_triplet << " cls " << stats.mean_cls
           << " total " << stats.mean_total << " val_recall1 " << stats.val_recall1 << "\n";

    if (result.best_epoch < 0 || stats.val_recall1 > result.best_val_recall1) {
      result.best_epoch = epoch;
      result.best_val_recall1 = stats.val_recall1;
      best = model;
    }
  }

  best.save(checkpoint_path);
  if (!loss_log_path.empty()) {
    std::ofstream out(loss_log_path, std::ios::trunc);
    if (!out) throw DataError("cannot write loss log: " + loss_log_path);
    out << loss_log_csv(result.log);
  }
  return result;
}

std::string loss_log_csv(const std::vector<EpochStats>& stats) {
  std::ostringstream out;
  out.precision(17);
  out << "epoch,mean_triplet,mean_cls,mean_total,val_recall1\n";
  for (const EpochStats& s : stats)
    out << s.epoch << ',' << s.mean_triplet << ',' << s.mean_cls << ',' << s.mean_total << ','
        << s.val_recall1 << '\n';
  return out.str();
}

}  // namespace xvpr
