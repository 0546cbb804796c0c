#pragma once

// Whole-subject inference with a trained segmenter (batch norm in inference
// mode). Labels of the subject only position the crop window and serve as
// the reference returned alongside the prediction.

#include <vector>

#include "uda/eval.hpp"
#include "uda/nets.hpp"
#include "uda/pointcloud.hpp"
#include "uda/synthdata.hpp"

namespace uda::infer {

struct VolumePrediction {
  eval::Dims dims;
  eval::Spacing spacing{1.0, 1.0, 1.0};
  std::vector<uint8_t> pred;          // argmax labels, cropped frame
  std::vector<uint8_t> gt;            // reference labels, same frame
  std::vector<float> image;           // preprocessed input slices
  std::vector<float> entropy;         // per-pixel entropy of the softmax, nats
  std::vector<pc::PointCloud> clouds; // predicted cloud per slice
};

/// Gray slice replicated into a [1,3,H,W] block at batch position b.
void put_image(Tensor& batch, int64_t b, const synth::Image& img);

VolumePrediction predict_volume(const nets::Segmenter& g, const synth::SubjectVolume& vol, int crop_size);

}  // namespace uda::infer
