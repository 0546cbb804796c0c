#pragma once

// Ground-truth point clouds from label masks and the Earth Mover's Distance
// between equal-size clouds (exact optimal one-to-one assignment).

#include <array>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "uda/synthdata.hpp"

namespace uda::pc {

inline constexpr int kDefaultPoints = 300;
/// Exhaustive oracle refuses sizes above this (n! blow-up).
inline constexpr size_t kBruteForceLimit = 8;

class PointCloudError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

using Point3 = std::array<double, 3>;

struct Point2 {
  double x = 0.0;  // column
  double y = 0.0;  // row
};

/// N x 3 points; x, y normalised over the crop and z the normalised slice index.
struct PointCloud {
  std::vector<Point3> points;

  size_t size() const { return points.size(); }
  /// True when every coordinate is finite and inside [0,1].
  bool in_unit_cube() const;
};

struct Matching {
  std::vector<int> perm;  // prediction index -> ground-truth index
  double cost = 0.0;
};

/// Marching-squares iso-contour (level 0.5) of a binary mask. Points lie on
/// pixel-centre grid edges; each closed loop is returned in traversal order,
/// loops concatenated in scan order.
std::vector<Point2> mask_to_contour(std::span<const uint8_t> mask, int height, int width);

/// Same, but keeps the loops separate.
std::vector<std::vector<Point2>> mask_to_loops(std::span<const uint8_t> mask, int height, int width);

/// Greedy max-min sampling over row-major points of dimension `dim`. Starts at
/// index 0; ties go to the lowest index. Returns selected indices in order.
std::vector<size_t> farthest_point_sample(std::span<const double> coords, int dim, size_t k);

/// Union of all foreground classes -> contour -> (arc-length upsampling) ->
/// FPS to n_points -> normalised coordinates.
PointCloud make_gt_pointcloud(const synth::LabelMap& labels, int slice_index, int n_slices,
                              int n_points = kDefaultPoints);

/// Exact EMD via the O(n^3) Hungarian method on the Euclidean cost matrix.
Matching emd(const PointCloud& a, const PointCloud& b);

/// Minimum over all permutations; size must not exceed kBruteForceLimit.
double emd_bruteforce(const PointCloud& a, const PointCloud& b);

/// d cost / d pred with the optimal matching held fixed; zero where a matched
/// pair coincides.
std::vector<Point3> emd_gradient(const PointCloud& pred, const PointCloud& gt);
std::vector<Point3> emd_gradient(const PointCloud& pred, const PointCloud& gt, const Matching& m);

/// Sum over both directions of the mean nearest-neighbour distance.
double chamfer(const PointCloud& a, const PointCloud& b);

/// Plain-text table, one "x y z" triple per line, 9 significant digits.
void write_cloud(std::ostream& os, const PointCloud& cloud);
PointCloud read_cloud(std::istream& is);
void save_cloud(const std::string& path, const PointCloud& cloud);
PointCloud load_cloud(const std::string& path);

}  // namespace uda::pc
