#include "uda/inference.hpp"

#include <algorithm>
#include <cmath>

#include "uda/losses.hpp"

namespace uda::infer {

void put_image(Tensor& batch, int64_t b, const synth::Image& img) {
  const int64_t plane = static_cast<int64_t>(img.height) * img.width;
  if (batch.dim(2) * batch.dim(3) != plane) throw ShapeError("put_image: slice does not fit the batch");
  for (int64_t c = 0; c < batch.dim(1); ++c) {
    float* dst = batch.data() + (b * batch.dim(1) + c) * plane;
    std::copy(img.px.begin(), img.px.end(), dst);
  }
}

VolumePrediction predict_volume(const nets::Segmenter& g, const synth::SubjectVolume& vol, int crop_size) {
  if (vol.labels.empty()) throw std::invalid_argument("predict_volume: subject " + vol.subject_id + " has no labels");
  const int n = vol.n_slices;
  const int64_t plane = static_cast<int64_t>(crop_size) * crop_size;
  VolumePrediction out;
  out.dims = {n, crop_size, crop_size};
  out.spacing = vol.spacing_mm;
  out.pred.resize(static_cast<size_t>(n * plane));
  out.gt.resize(out.pred.size());
  out.image.resize(out.pred.size());
  out.entropy.resize(out.pred.size());
  Tensor x({n, g.spec().in_channels, crop_size, crop_size});
  for (int z = 0; z < n; ++z) {
    auto [img, mask] = synth::preprocess(synth::slice_image(vol, z), synth::slice_labels(vol, z), crop_size);
    put_image(x, z, img);
    std::copy(mask.px.begin(), mask.px.end(), out.gt.begin() + z * plane);
    std::copy(img.px.begin(), img.px.end(), out.image.begin() + z * plane);
  }
  const auto res = g.forward(Var(x), {false, false});
  const Tensor& p = res.prob.value();
  const int64_t c = p.dim(1);
  for (int z = 0; z < n; ++z)
    for (int64_t i = 0; i < plane; ++i) {
      int best = 0;
      double ent = 0.0;
      for (int64_t k = 0; k < c; ++k) {
        const float v = p[(z * c + k) * plane + i];
        if (v > p[(z * c + best) * plane + i]) best = static_cast<int>(k);
        ent -= v * std::log(std::max(static_cast<double>(v), losses::kClamp));
      }
      out.pred[static_cast<size_t>(z * plane + i)] = static_cast<uint8_t>(best);
      out.entropy[static_cast<size_t>(z * plane + i)] = static_cast<float>(ent);
    }
  const Tensor& cl = res.cloud.value();
  const int64_t np = cl.dim(1);
  for (int z = 0; z < n; ++z) {
    pc::PointCloud cloud;
    cloud.points.resize(static_cast<size_t>(np));
    for (int64_t k = 0; k < np; ++k)
      for (int a = 0; a < 3; ++a) cloud.points[k][a] = cl[(z * np + k) * 3 + a];
    out.clouds.push_back(std::move(cloud));
  }
  return out;
}

}  // namespace uda::infer
