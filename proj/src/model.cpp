#include "xvpr/model.hpp"

#include "xvpr/checkpoint.hpp"

#include <cmath>

namespace xvpr {

namespace {

constexpr std::uint64_t kSketchEventStream = 0x65766e74ull;
constexpr std::uint64_t kSketchImageStream = 0x696d6167ull;

Tensor encode_config(const EncoderConfig& cfg) {
  std::vector<double> v = {1.0,
                           static_cast<double>(cfg.input_width),
                           static_cast<double>(cfg.input_height),
                           static_cast<double>(cfg.clusters),
                           static_cast<double>(cfg.local_dim),
                           static_cast<double>(cfg.cls_dim),
                           static_cast<double>(cfg.cbp_dim),
                           static_cast<double>(cfg.cls_hidden[0]),
                           static_cast<double>(cfg.cls_hidden[1]),
                           static_cast<double>(cfg.seed),
                           static_cast<double>(cfg.backbone_channels.size())};
  for (Index c : cfg.backbone_channels) v.push_back(static_cast<double>(c));
  ArrayX data(static_cast<Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) data[static_cast<Index>(i)] = v[i];
  return Tensor({static_cast<Index>(v.size())}, std::move(data));
}

EncoderConfig decode_config(const Tensor& meta) {
  if (meta.size() < 11 || meta[0] != 1.0) throw DataError("checkpoint: unsupported meta layout");
  EncoderConfig cfg;
  cfg.input_width = static_cast<Index>(meta[1]);
  cfg.input_height = static_cast<Index>(meta[2]);
  cfg.clusters = static_cast<Index>(meta[3]);
  cfg.local_dim = static_cast<Index>(meta[4]);
  cfg.cls_dim = static_cast<Index>(meta[5]);
  cfg.cbp_dim = static_cast<Index>(meta[6]);
  cfg.cls_hidden = {static_cast<Index>(meta[7]), static_cast<Index>(meta[8])};
  cfg.seed = static_cast<std::uint64_t>(meta[9]);
  const Index layers = static_cast<Index>(meta[10]);
  if (meta.size() != 11 + layers) throw DataError("checkpoint: truncated meta layout");
  cfg.backbone_channels.clear();
  for (Index i = 0; i < layers; ++i) cfg.backbone_channels.push_back(static_cast<Index>(meta[11 + i]));
  return cfg;
}

Tensor sketch_indices(const CountSketchParams& p) {
  Tensor t({p.input_dim});
  for (Index i = 0; i < p.input_dim; ++i) t[i] = static_cast<double>(p.index_map[static_cast<std::size_t>(i)]);
  return t;
}

Tensor sketch_signs(const CountSketchParams& p) {
  Tensor t({p.input_dim});
  for (Index i = 0; i < p.input_dim; ++i) t[i] = p.sign_map[static_cast<std::size_t>(i)];
  return t;
}

CountSketchParams sketch_from(const Tensor& idx, const Tensor& sign, Index output_dim) {
  if (!same_shape(idx, sign)) throw DataError("checkpoint: sketch index/sign shape mismatch");
  CountSketchParams p;
  p.input_dim = idx.size();
  p.output_dim = output_dim;
  p.index_map.resize(static_cast<std::size_t>(idx.size()));
  p.sign_map.resize(static_cast<std::size_t>(idx.size()));
  for (Index i = 0; i < idx.size(); ++i) {
    const Index j = static_cast<Index>(idx[i]);
    if (j < 0 || j >= output_dim) throw DataError("checkpoint: sketch index out of range");
    p.index_map[static_cast<std::size_t>(i)] = j;
    p.sign_map[static_cast<std::size_t>(i)] = sign[i] < 0.0 ? -1.0 : 1.0;
  }
  return p;
}

}  // namespace

namespace {

// Direction in fused space that estimates u^T diag(weights) v: the tensor
// sketch of a diagonal matrix under the paired projections. Seeding the first
// classifier layer with a bank of such directions hands the MLP a basis of
// weighted inner products, so the similarity scorer is useful from the first
// step — the desk-scale epoch budget is far too small to discover these
// directions from uniform noise.
Tensor sketched_diagonal(const CountSketchParams& pu, const CountSketchParams& pv,
                         const std::vector<double>& weights) {
  Tensor d({pu.output_dim});
  for (Index i = 0; i < pu.input_dim; ++i) {
    const Index j = (pu.index_map[static_cast<std::size_t>(i)] +
                     pv.index_map[static_cast<std::size_t>(i)]) %
                    pu.output_dim;
    d[j] += weights[static_cast<std::size_t>(i)] * pu.sign_map[static_cast<std::size_t>(i)] *
            pv.sign_map[static_cast<std::size_t>(i)];
  }
  return d;
}

void seed_similarity_bank(ClassifierParams& cls, const CountSketchParams& pu,
                          const CountSketchParams& pv, std::uint64_t seed) {
  const Index hidden = cls.w1.value.dim(0);
  const Index mdim = cls.w1.value.dim(1);
  const Index n = pu.input_dim;
  Rng rng(seed);
  auto set_row = [&](Index row, const Tensor& direction, double sign) {
    const double norm = std::sqrt(direction.array().square().sum());
    if (norm < 1e-12) return;
    const double scale = sign * std::sqrt(2.0) / norm;  // match the He row scale
    for (Index j = 0; j < mdim; ++j) cls.w1.value[row * mdim + j] = scale * direction[j];
  };

  // Rows 0/1: plain inner-product detectors of both polarities; half of the
  // remaining rows: random sign-diagonal detectors.
  const std::vector<double> ones(static_cast<std::size_t>(n), 1.0);
  if (hidden >= 1) set_row(0, sketched_diagonal(pu, pv, ones), 1.0);
  if (hidden >= 2) set_row(1, sketched_diagonal(pu, pv, ones), -1.0);
  const Index bank = std::min<Index>(hidden / 2, hidden - 2);
  for (Index b = 0; b < bank; ++b) {
    std::vector<double> weights(static_cast<std::size_t>(n));
    for (double& w : weights) w = rng.coin() ? 1.0 : -1.0;
    set_row(2 + b, sketched_diagonal(pu, pv, weights), 1.0);
  }
}

}  // namespace

PipelineModel PipelineModel::init(const EncoderConfig& cfg) {
  cfg.validate();
  PipelineModel m;
  m.enc = EncoderParams::init(cfg);
  Rng cls_rng = Rng(cfg.seed).fork(0x636c73ull);
  m.cls = ClassifierParams::init(cfg.cbp_dim, cfg.cls_hidden[0], cfg.cls_hidden[1], cls_rng);
  m.sketch_event = CountSketchParams::make(cfg.cls_dim, cfg.cbp_dim, cfg.seed ^ kSketchEventStream);
  m.sketch_image = CountSketchParams::make(cfg.cls_dim, cfg.cbp_dim, cfg.seed ^ kSketchImageStream);
  seed_similarity_bank(m.cls, m.sketch_event, m.sketch_image, cfg.seed ^ 0x62616e6bull);
  return m;
}

std::vector<Parameter*> PipelineModel::parameters() {
  std::vector<Parameter*> out = enc.parameters();
  for (Parameter* p : cls.parameters()) out.push_back(p);
  return out;
}

std::vector<const Parameter*> PipelineModel::parameters() const {
  std::vector<const Parameter*> out;
  for (Parameter* p : const_cast<PipelineModel*>(this)->enc.parameters()) out.push_back(p);
  for (Parameter* p : const_cast<PipelineModel*>(this)->cls.parameters()) out.push_back(p);
  return out;
}

void PipelineModel::save(const std::string& path) const {
  std::vector<NamedTensor> tensors;
  tensors.push_back({"meta.config", encode_config(enc.cfg)});
  for (const Parameter* p : parameters()) tensors.push_back({p->name, p->value});
  tensors.push_back({"sketch.event.h", sketch_indices(sketch_event)});
  tensors.push_back({"sketch.event.s", sketch_signs(sketch_event)});
  tensors.push_back({"sketch.image.h", sketch_indices(sketch_image)});
  tensors.push_back({"sketch.image.s", sketch_signs(sketch_image)});
  save_checkpoint(path, tensors);
}

PipelineModel PipelineModel::load(const std::string& path) {
  const std::vector<NamedTensor> tensors = load_checkpoint(path);
  const EncoderConfig cfg = decode_config(find_tensor(tensors, "meta.config"));
  PipelineModel m = init(cfg);
  for (Parameter* p : m.parameters()) {
    const Tensor& stored = find_tensor(tensors, p->name);
    if (!same_shape(stored, p->value))
      throw DataError("checkpoint: tensor '" + p->name + "' has shape " +
                      shape_str(stored.shape()) + ", expected " + shape_str(p->value.shape()));
    p->value = stored;
  }
  m.sketch_event = sketch_from(find_tensor(tensors, "sketch.event.h"),
                               find_tensor(tensors, "sketch.event.s"), cfg.cbp_dim);
  m.sketch_image = sketch_from(find_tensor(tensors, "sketch.image.h"),
                               find_tensor(tensors, "sketch.image.s"), cfg.cbp_dim);
  return m;
}

Tensor frame_to_tensor(const EventFrame& frame) {
  return frame.intensity.reshaped({1, frame.height, frame.width});
}

Tensor image_to_tensor(const ImageFrame& image, const EncoderConfig& cfg) {
  if (image.width == cfg.input_width && image.height == cfg.input_height) return image.rgb;
  return resize_bilinear(image, static_cast<int>(cfg.input_width),
                         static_cast<int>(cfg.input_height))
      .rgb;
}

Descriptors encode(PipelineModel& model, const Tensor& frame, Modality modality) {
  Tape tape;
  Var fmap = backbone_forward(tape, model.enc, frame, modality);
  Var retr = retrieval_head(tape, model.enc, fmap);
  Var cls = cls_head(tape, model.enc, fmap);
  return {retr.value(), cls.value()};
}

Descriptors encode_sample(PipelineModel& model, const SampleRecord& record) {
  if (record.modality == Modality::kEvent) {
    const EventFrame frame = load_frame_raw(record.path);
    return encode(model, frame_to_tensor(frame), Modality::kEvent);
  }
  const ImageFrame image = load_image_ppm(record.path);
  return encode(model, image_to_tensor(image, model.config()), Modality::kImage);
}

const CountSketchParams& query_sketch(const PipelineModel& model, Modality modality) {
  return modality == Modality::kEvent ? model.sketch_event : model.sketch_image;
}

}  // namespace xvpr
