#pragma once

// Segmentation metrics and agreement statistics.
//
// Volumes are label arrays in slice-major order [z][y][x]; spacing is
// (dz, dy, dx) in millimetres.

#include <array>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace uda::eval {

class MetricError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Dims {
  int nz = 1;
  int ny = 1;
  int nx = 1;
  size_t size() const { return static_cast<size_t>(nz) * ny * nx; }
};

using Spacing = std::array<double, 3>;

/// 2|A n B| / (|A| + |B|) for voxels equal to class_id; both empty -> 1.
double dice(std::span<const uint8_t> pred, std::span<const uint8_t> gt, uint8_t class_id);

/// Foreground voxels with at least one face-adjacent background neighbour;
/// voxels outside the volume count as background.
std::vector<uint8_t> boundary(std::span<const uint8_t> mask, const Dims& d);

struct SurfaceDistances {
  double hd = 0.0;    // symmetric Hausdorff distance
  double asd = 0.0;   // mean of all boundary-to-boundary nearest distances, both directions pooled
  double hd95 = 0.0;  // 95th percentile of the same pooled distances
};

/// Binary masks (nonzero = foreground). Throws MetricError naming subject_id
/// when either mask is empty.
SurfaceDistances surface_distances(std::span<const uint8_t> pred, std::span<const uint8_t> gt, const Dims& d,
                                   const Spacing& spacing, const std::string& subject_id = "");

/// Class-selecting convenience overload.
SurfaceDistances surface_distances(std::span<const uint8_t> pred, std::span<const uint8_t> gt, const Dims& d,
                                   const Spacing& spacing, uint8_t class_id, const std::string& subject_id);

/// Exact anisotropic Euclidean distance (mm) from every voxel to the nearest
/// nonzero voxel of `sites`; +inf when sites is empty.
std::vector<double> distance_transform(std::span<const uint8_t> sites, const Dims& d, const Spacing& spacing);

enum class Region { apex, mid, base };
std::string to_string(Region r);

/// Slice counts (apex, mid, base): equal thirds, remainder to the apex.
std::array<int, 3> region_sizes(int n_slices);

struct RegionMetrics {
  double dice = 0.0;
  double hd = 0.0;
  int slices = 0;       // slices contributing to dice
  int hd_slices = 0;    // slices contributing to hd
};

struct SlicewiseReport {
  std::array<RegionMetrics, 3> regions;
  std::vector<std::string> notes;
};

/// Per slice: Dice averaged over foreground classes present in either map,
/// and 2D Hausdorff (in-plane spacing) averaged over classes present in both.
/// Region values average their slices; background-only slices are skipped.
SlicewiseReport slicewise_report(std::span<const uint8_t> pred, std::span<const uint8_t> gt, const Dims& d,
                                 const Spacing& spacing, int n_classes);

double lv_volume_ml(std::span<const uint8_t> mask, const Spacing& spacing, uint8_t class_id);

struct Regression {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
  double p_value = 1.0;  // two-sided, zero-slope null
  int n = 0;
};

/// Least squares pred = slope * gt + intercept.
Regression linear_regression(std::span<const double> pred, std::span<const double> gt);

struct BlandAltman {
  double mean_diff = 0.0;
  double sd = 0.0;  // sample (n-1) standard deviation of pred - gt
  double loa_low = 0.0;
  double loa_high = 0.0;
};

BlandAltman bland_altman(std::span<const double> pred, std::span<const double> gt);

}  // namespace uda::eval
