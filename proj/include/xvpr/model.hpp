#pragma once

#include "xvpr/cbp.hpp"
#include "xvpr/encoder.hpp"
#include "xvpr/event_frame.hpp"
#include "xvpr/image_io.hpp"

#include <string>

namespace xvpr {

/// Everything inference and training need: both encoder branches, the
/// similarity classifier and the two frozen sketch projections.
struct PipelineModel {
  EncoderParams enc;
  ClassifierParams cls;
  CountSketchParams sketch_event;
  CountSketchParams sketch_image;

  static PipelineModel init(const EncoderConfig& cfg);

  const EncoderConfig& config() const { return enc.cfg; }
  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;

  void save(const std::string& path) const;
  static PipelineModel load(const std::string& path);
};

/// [1, H, W] view of an event frame, checked against the configured size.
Tensor frame_to_tensor(const EventFrame& frame);

/// [3, H, W] image tensor, bilinearly resized to the configured input grid
/// when the source resolution differs.
Tensor image_to_tensor(const ImageFrame& image, const EncoderConfig& cfg);

struct Descriptors {
  Tensor retrieval;  // unit norm, length K*D
  Tensor cls;        // length cls_dim
};

/// Forward pass through backbone + both heads with frozen parameters.
Descriptors encode(PipelineModel& model, const Tensor& frame, Modality modality);

/// Load the sample's payload (raw frame or ppm image) and encode it.
Descriptors encode_sample(PipelineModel& model, const SampleRecord& record);

/// Query-side sketch: events and images each use their own projection.
const CountSketchParams& query_sketch(const PipelineModel& model, Modality modality);

}  // namespace xvpr
