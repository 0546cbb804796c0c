#pragma once

// Loss terms. Pure formula-level functions operate on plain arrays (templated
// where finite-difference checks need double precision); the Var wrappers
// plug the same arithmetic into the autograd graph.
//
// Probability maps use the batch layout [b][c][p]: batch, class, pixel.

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "uda/core/ops.hpp"
#include "uda/pointcloud.hpp"

namespace uda::losses {

inline constexpr double kClamp = 1e-7;
/// Additive smoothing of the soft Jaccard ratio (keeps classes absent from
/// both maps at a perfect score).
inline constexpr double kJaccardSmooth = 1.0;

struct LossWeights {
  std::array<double, 3> adv{1.0, 1.0, 1.0};
  std::array<double, 3> disc{0.2, 0.2, 0.2};
  double clamp = kClamp;

  void validate() const;
};

struct SegGeom {
  int64_t batch = 1;
  int64_t classes = 2;
  int64_t pixels = 1;

  int64_t size() const { return batch * classes * pixels; }
  int64_t index(int64_t b, int64_t c, int64_t p) const { return (b * classes + c) * pixels + p; }
};

/// Mean binary cross-entropy over every (pixel, class) entry plus the mean
/// over classes of (1 - soft Jaccard), with class sums pooled over the batch.
template <typename T>
T seg_loss(std::span<const T> s, std::span<const T> y, const SegGeom& g, double eps = kClamp,
           double smooth = kJaccardSmooth);

/// d seg_loss / d s, written into grad (overwritten).
template <typename T>
void seg_loss_grad(std::span<const T> s, std::span<const T> y, const SegGeom& g, std::span<T> grad,
                   double eps = kClamp, double smooth = kJaccardSmooth);

struct SelfInfoMap {
  std::vector<double> map;      // -S log S, same layout as S
  double scalar_entropy = 0.0;  // mean over pixels of the per-pixel entropy
};

SelfInfoMap self_information(std::span<const double> s, const SegGeom& g, double eps = kClamp);

/// mean log(1 - clamp(d)) over target-side discriminator probabilities.
double adv_loss(std::span<const double> d_target, double eps = kClamp);

/// mean log clamp(d_t) + mean log(1 - clamp(d_s)), the quantity the
/// discriminator ascends in its literal form.
double disc_loss(std::span<const double> d_source, std::span<const double> d_target, double eps = kClamp);

struct LossParts {
  double seg = 0.0;
  double emd = 0.0;
  std::array<double, 3> adv{0.0, 0.0, 0.0};
  std::array<double, 3> disc{0.0, 0.0, 0.0};
};

struct Objective {
  double total = 0.0;
  LossParts parts;
};

/// seg + emd + sum_i (adv_w[i] * adv[i] - disc_w[i] * disc[i]). Throws
/// std::domain_error naming the first non-finite part.
Objective total_objective(const LossParts& parts, const LossWeights& w);

/// Zeroes both weights of every disabled discriminator.
LossWeights ablate(LossWeights w, const std::array<bool, 3>& enabled);

// --------------------------------------------------------- autograd wrappers

/// prob [B,C,H,W]; labels [B][H][W] class ids < C.
Var seg_loss(const Var& prob, std::span<const uint8_t> labels, double eps = kClamp);

/// Element-wise -S log clamp(S); same shape as prob.
Var entropy_map(const Var& prob, double eps = kClamp);

/// Mean over the batch of the exact EMD between cloud[b] ([B,N,3]) and gt[b].
Var emd_loss(const Var& cloud, const std::vector<pc::PointCloud>& gt);

/// Generator term on target logits (D is the source-class probability).
/// Non-saturating: -mean log sigmoid(z). Saturating: mean log(1 - sigmoid(z)).
Var generator_adv(const Var& target_logits, bool saturating = false);

/// Discriminator cross-entropy with source labelled 1 and target 0.
Var discriminator_bce(const Var& source_logits, const Var& target_logits);

/// Ascent form for logging: mean log sigmoid(z_s) + mean log(1 - sigmoid(z_t)).
double discriminator_objective(const Tensor& source_logits, const Tensor& target_logits);

}  // namespace uda::losses
