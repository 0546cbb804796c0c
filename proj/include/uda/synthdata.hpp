#pragma once

// Synthetic cardiac-like phantoms, a parametric appearance shift between a
// "source" and a "target" domain, and the slice preprocessing pipeline.

#include <array>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace uda::synth {

class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Class ids of the phantom: background, LV blood pool, myocardium, RV blood pool.
enum Label : uint8_t { kBackground = 0, kLV = 1, kMyo = 2, kRV = 3 };
inline constexpr int kPhantomClasses = 4;

enum class Domain { source, target };
std::string to_string(Domain d);
Domain parse_domain(std::string_view s);

struct ClassIntensity {
  double mean = 0.0;
  double stddev = 0.0;
};

struct PhantomParams {
  int image_size = 72;
  int n_slices = 8;
  double lv_radius = 0.12;
  double myo_thickness = 0.05;
  double rv_extent = 0.17;
  double apex_taper = 0.55;
  // background, LV, Myo, RV
  std::array<ClassIntensity, kPhantomClasses> intensity{{{0.22, 0.04}, {0.85, 0.04}, {0.45, 0.04}, {0.78, 0.04}}};
  std::array<double, 3> spacing_mm{8.0, 1.25, 1.25};  // dz, dy, dx
  uint64_t seed = 1;

  /// Throws ValidationError naming the violated bound.
  void validate() const;
};

/// Slice-major grayscale stack with per-pixel labels.
struct SubjectVolume {
  std::string subject_id;
  Domain domain = Domain::source;
  int n_slices = 0;
  int height = 0;
  int width = 0;
  int n_classes = kPhantomClasses;
  std::array<double, 3> spacing_mm{1.0, 1.0, 1.0};
  std::vector<float> image;    // [n_slices][height][width], values in [0,1]
  std::vector<uint8_t> labels;  // same layout

  size_t plane() const { return static_cast<size_t>(height) * static_cast<size_t>(width); }
  std::span<const float> slice(int z) const { return {image.data() + z * plane(), plane()}; }
  std::span<float> slice(int z) { return {image.data() + z * plane(), plane()}; }
  std::span<const uint8_t> label_slice(int z) const { return {labels.data() + z * plane(), plane()}; }
  void validate() const;
};

/// Analytic geometry of one phantom, exposed for geometry oracles.
struct PhantomGeometry {
  double cx = 0.0;
  double cy = 0.0;
  std::vector<double> lv_radius_px;   // per slice
  std::vector<double> myo_outer_px;   // per slice
  std::vector<double> rv_radius_px;   // per slice
  double rv_angle = 0.0;              // direction from LV centre to RV centre
};

PhantomGeometry phantom_geometry(const PhantomParams& params, std::string_view subject_id);
SubjectVolume gen_subject(const PhantomParams& params, std::string_view subject_id);

struct DomainShiftConfig {
  /// Piecewise-linear intensity map given by (input, output) knots with
  /// strictly increasing inputs spanning [0,1] and outputs in [0,1].
  std::vector<std::pair<double, double>> remap{{0.0, 0.0}, {1.0, 1.0}};
  double blur_sigma = 0.0;
  double noise_std = 0.0;
  double contrast_gamma = 1.0;
  uint64_t seed = 1;

  static DomainShiftConfig identity();
  /// Defaults used for the toy experiments: myocardium nulled below the
  /// background, blood pools compressed, gamma 1.6, blur 1 px, noise 0.05.
  static DomainShiftConfig lge_like();
  double map_intensity(double v) const;
  void validate() const;
};

SubjectVolume apply_domain_shift(const SubjectVolume& vol, const DomainShiftConfig& cfg);

struct Image {
  int height = 0;
  int width = 0;
  std::vector<float> px;
  float at(int y, int x) const { return px[static_cast<size_t>(y) * width + x]; }
};

struct LabelMap {
  int height = 0;
  int width = 0;
  std::vector<uint8_t> px;
  uint8_t at(int y, int x) const { return px[static_cast<size_t>(y) * width + x]; }
};

Image slice_image(const SubjectVolume& vol, int z);
LabelMap slice_labels(const SubjectVolume& vol, int z);

inline constexpr int kHistogramBins = 256;

/// 256-bin histogram equalisation; output in [0,1], monotone in the input.
Image histogram_equalize(const Image& in);
/// Affine map of [min,max] onto [0,1]; a constant slice maps to zeros.
Image minmax_normalize(const Image& in);

struct CropWindow {
  int y0 = 0;
  int x0 = 0;
};
/// Window of crop_size centred on the foreground centroid, clamped to the
/// image; an empty mask falls back to the image centre.
CropWindow centroid_window(const LabelMap& mask, int crop_size);
std::pair<Image, LabelMap> centroid_crop(const Image& img, const LabelMap& mask, int crop_size);

enum class AugPolicy { none, light, heavy };
AugPolicy parse_aug_policy(std::string_view s);
std::string to_string(AugPolicy p);

/// Geometric transforms act identically on image (bilinear) and mask
/// (nearest); sampling clamps at the border.
std::pair<Image, LabelMap> augment(const Image& img, const LabelMap& mask, AugPolicy policy, uint64_t seed);

/// Rotation about the image centre by angle_deg (bilinear / nearest).
std::pair<Image, LabelMap> rotate(const Image& img, const LabelMap& mask, double angle_deg);

/// Histogram equalisation, min-max normalisation, then centroid crop.
std::pair<Image, LabelMap> preprocess(const Image& img, const LabelMap& mask, int crop_size);

}  // namespace uda::synth
