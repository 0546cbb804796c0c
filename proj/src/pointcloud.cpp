#include "uda/pointcloud.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>
#include <unordered_map>

namespace uda::pc {
namespace {

double dist(const Point3& a, const Point3& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

void require_same_size(const PointCloud& a, const PointCloud& b) {
  if (a.size() != b.size()) {
    throw PointCloudError("point clouds differ in size: " + std::to_string(a.size()) + " vs " +
                          std::to_string(b.size()));
  }
}

// Grid-edge crossing identifiers on the zero-padded grid of pixel centres.
struct EdgeCrossing {
  int64_t key;
  Point2 at;
};

}  // namespace

bool PointCloud::in_unit_cube() const {
  for (const auto& p : points) {
    for (double v : p) {
      if (!std::isfinite(v) || v < 0.0 || v > 1.0) return false;
    }
  }
  return true;
}

std::vector<std::vector<Point2>> mask_to_loops(std::span<const uint8_t> mask, int height, int width) {
  if (mask.size() != static_cast<size_t>(height) * width) throw PointCloudError("mask size mismatch");
  // Padded node grid: node (r, c) covers pixel (r - 1, c - 1).
  const int ph = height + 2, pw = width + 2;
  auto inside = [&](int r, int c) {
    const int y = r - 1, x = c - 1;
    if (y < 0 || y >= height || x < 0 || x >= width) return false;
    return mask[static_cast<size_t>(y) * width + x] != 0;
  };
  // Horizontal edge (r,c)-(r,c+1) and vertical edge (r,c)-(r+1,c).
  auto hkey = [&](int r, int c) { return (static_cast<int64_t>(r) * pw + c) * 2; };
  auto vkey = [&](int r, int c) { return (static_cast<int64_t>(r) * pw + c) * 2 + 1; };
  auto hpt = [](int r, int c) { return Point2{c - 0.5, r - 1.0}; };
  auto vpt = [](int r, int c) { return Point2{c - 1.0, r - 0.5}; };

  std::unordered_map<int64_t, std::vector<int64_t>> adj;
  std::unordered_map<int64_t, Point2> where;
  std::vector<int64_t> order;  // first-seen order for deterministic starts
  auto link = [&](const EdgeCrossing& a, const EdgeCrossing& b) {
    for (const auto& e : {a, b}) {
      if (!where.count(e.key)) {
        where.emplace(e.key, e.at);
        order.push_back(e.key);
      }
    }
    adj[a.key].push_back(b.key);
    adj[b.key].push_back(a.key);
  };

  for (int r = 0; r + 1 < ph; ++r) {
    for (int c = 0; c + 1 < pw; ++c) {
      const bool tl = inside(r, c), tr = inside(r, c + 1), br = inside(r + 1, c + 1), bl = inside(r + 1, c);
      const int idx = (tl ? 8 : 0) | (tr ? 4 : 0) | (br ? 2 : 0) | (bl ? 1 : 0);
      if (idx == 0 || idx == 15) continue;
      const EdgeCrossing top{hkey(r, c), hpt(r, c)};
      const EdgeCrossing bottom{hkey(r + 1, c), hpt(r + 1, c)};
      const EdgeCrossing left{vkey(r, c), vpt(r, c)};
      const EdgeCrossing right{vkey(r, c + 1), vpt(r, c + 1)};
      switch (idx) {
        case 1: case 14: link(left, bottom); break;
        case 2: case 13: link(bottom, right); break;
        case 3: case 12: link(left, right); break;
        case 4: case 11: link(top, right); break;
        case 6: case 9: link(top, bottom); break;
        case 7: case 8: link(left, top); break;
        // Saddles: diagonal foreground pixels stay separate.
        case 5: link(top, right); link(left, bottom); break;
        case 10: link(left, top); link(bottom, right); break;
        default: break;
      }
    }
  }

  std::vector<std::vector<Point2>> loops;
  std::unordered_map<int64_t, bool> used;
  for (int64_t start : order) {
    if (used[start]) continue;
    std::vector<Point2> loop;
    int64_t prev = -1, cur = start;
    while (true) {
      used[cur] = true;
      loop.push_back(where.at(cur));
      int64_t next = -1;
      for (int64_t n : adj[cur]) {
        if (n != prev && !used[n]) {
          next = n;
          break;
        }
      }
      if (next < 0) break;
      prev = cur;
      cur = next;
    }
    loops.push_back(std::move(loop));
  }
  return loops;
}

std::vector<Point2> mask_to_contour(std::span<const uint8_t> mask, int height, int width) {
  std::vector<Point2> out;
  for (auto& loop : mask_to_loops(mask, height, width)) out.insert(out.end(), loop.begin(), loop.end());
  return out;
}

std::vector<size_t> farthest_point_sample(std::span<const double> coords, int dim, size_t k) {
  if (dim <= 0 || coords.size() % static_cast<size_t>(dim) != 0) throw PointCloudError("bad point dimension");
  const size_t m = coords.size() / static_cast<size_t>(dim);
  if (k > m) {
    throw PointCloudError("cannot sample " + std::to_string(k) + " points from " + std::to_string(m));
  }
  std::vector<size_t> picked;
  if (k == 0) return picked;
  picked.reserve(k);
  std::vector<double> mind(m, std::numeric_limits<double>::infinity());
  size_t current = 0;
  for (size_t s = 0; s < k; ++s) {
    picked.push_back(current);
    const double* c = coords.data() + current * dim;
    size_t best = 0;
    double best_d = -1.0;
    for (size_t i = 0; i < m; ++i) {
      const double* p = coords.data() + i * dim;
      double d2 = 0.0;
      for (int j = 0; j < dim; ++j) {
        const double d = p[j] - c[j];
        d2 += d * d;
      }
      if (d2 < mind[i]) mind[i] = d2;
      if (mind[i] > best_d) {
        best_d = mind[i];
        best = i;
      }
    }
    current = best;
  }
  return picked;
}

namespace {

// Uniform arc-length resampling of a closed loop into `count` points.
std::vector<Point2> resample_loop(const std::vector<Point2>& loop, size_t count) {
  std::vector<Point2> out;
  if (loop.empty() || count == 0) return out;
  if (loop.size() == 1) return std::vector<Point2>(count, loop.front());
  std::vector<double> cum(loop.size() + 1, 0.0);
  for (size_t i = 0; i < loop.size(); ++i) {
    const auto& a = loop[i];
    const auto& b = loop[(i + 1) % loop.size()];
    cum[i + 1] = cum[i] + std::hypot(b.x - a.x, b.y - a.y);
  }
  const double total = cum.back();
  size_t seg = 0;
  for (size_t j = 0; j < count; ++j) {
    const double s = total * static_cast<double>(j) / static_cast<double>(count);
    while (seg + 1 < loop.size() && cum[seg + 1] <= s) ++seg;
    const auto& a = loop[seg];
    const auto& b = loop[(seg + 1) % loop.size()];
    const double len = cum[seg + 1] - cum[seg];
    const double t = len > 0 ? (s - cum[seg]) / len : 0.0;
    out.push_back({a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)});
  }
  return out;
}

}  // namespace

PointCloud make_gt_pointcloud(const synth::LabelMap& labels, int slice_index, int n_slices, int n_points) {
  if (n_points <= 0) throw PointCloudError("n_points must be positive");
  if (n_slices < 1 || slice_index < 0 || slice_index >= n_slices) throw PointCloudError("slice index out of range");
  std::vector<uint8_t> binary(labels.px.size());
  for (size_t i = 0; i < binary.size(); ++i) binary[i] = labels.px[i] != 0 ? 1 : 0;
  auto loops = mask_to_loops(binary, labels.height, labels.width);
  size_t total = 0;
  for (const auto& l : loops) total += l.size();
  if (total == 0) throw PointCloudError("slice has no foreground; skip background-only slices");

  std::vector<Point2> pts;
  const size_t want = static_cast<size_t>(n_points);
  if (total < want) {
    double perimeter = 0.0;
    std::vector<double> lens;
    for (const auto& l : loops) {
      double len = 0.0;
      for (size_t i = 0; i < l.size(); ++i) {
        const auto& a = l[i];
        const auto& b = l[(i + 1) % l.size()];
        len += std::hypot(b.x - a.x, b.y - a.y);
      }
      lens.push_back(len);
      perimeter += len;
    }
    const size_t dense = 2 * want;
    for (size_t i = 0; i < loops.size(); ++i) {
      const double share = perimeter > 0 ? lens[i] / perimeter : 1.0 / static_cast<double>(loops.size());
      const size_t cnt = std::max<size_t>(1, static_cast<size_t>(std::ceil(share * static_cast<double>(dense))));
      auto r = resample_loop(loops[i], cnt);
      pts.insert(pts.end(), r.begin(), r.end());
    }
  } else {
    for (auto& l : loops) pts.insert(pts.end(), l.begin(), l.end());
  }

  std::vector<double> flat;
  flat.reserve(pts.size() * 2);
  for (const auto& p : pts) {
    flat.push_back(p.x);
    flat.push_back(p.y);
  }
  const auto idx = farthest_point_sample(flat, 2, want);
  const double sx = labels.width > 1 ? 1.0 / (labels.width - 1) : 0.0;
  const double sy = labels.height > 1 ? 1.0 / (labels.height - 1) : 0.0;
  const double z = n_slices > 1 ? static_cast<double>(slice_index) / (n_slices - 1) : 0.0;
  PointCloud cloud;
  cloud.points.reserve(want);
  for (size_t i : idx) {
    cloud.points.push_back({std::clamp(pts[i].x * sx, 0.0, 1.0), std::clamp(pts[i].y * sy, 0.0, 1.0), z});
  }
  return cloud;
}

Matching emd(const PointCloud& a, const PointCloud& b) {
  require_same_size(a, b);
  const size_t n = a.size();
  Matching m;
  if (n == 0) return m;
  std::vector<double> cost(n * n);
  for (size_t i = 0; i < n; ++i)
    for (size_t j = 0; j < n; ++j) cost[i * n + j] = dist(a.points[i], b.points[j]);

  // Shortest augmenting path Hungarian method with row/column potentials,
  // 1-based internally; col_match[j] is the row assigned to column j.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<size_t> col_match(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (size_t i = 1; i <= n; ++i) {
    col_match[0] = i;
    size_t j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const size_t i0 = col_match[j0];
      double delta = inf;
      size_t j1 = 0;
      const double* row = cost.data() + (i0 - 1) * n;
      const double ui = u[i0];
      for (size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = row[j - 1] - ui - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[col_match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (col_match[j0] != 0);
    do {
      const size_t j1 = way[j0];
      col_match[j0] = col_match[j1];
      j0 = j1;
    } while (j0);
  }
  m.perm.assign(n, 0);
  for (size_t j = 1; j <= n; ++j) m.perm[col_match[j] - 1] = static_cast<int>(j - 1);
  // Sum the matched distances directly rather than trusting the potentials.
  double total = 0.0;
  for (size_t i = 0; i < n; ++i) total += cost[i * n + static_cast<size_t>(m.perm[i])];
  m.cost = total;
  return m;
}

double emd_bruteforce(const PointCloud& a, const PointCloud& b) {
  require_same_size(a, b);
  if (a.size() > kBruteForceLimit) {
    throw PointCloudError("emd_bruteforce limited to " + std::to_string(kBruteForceLimit) + " points");
  }
  std::vector<int> perm(a.size());
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  if (a.size() == 0) return 0.0;
  do {
    double s = 0.0;
    for (size_t i = 0; i < perm.size(); ++i) s += dist(a.points[i], b.points[static_cast<size_t>(perm[i])]);
    best = std::min(best, s);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

std::vector<Point3> emd_gradient(const PointCloud& pred, const PointCloud& gt) {
  return emd_gradient(pred, gt, emd(pred, gt));
}

std::vector<Point3> emd_gradient(const PointCloud& pred, const PointCloud& gt, const Matching& m) {
  require_same_size(pred, gt);
  if (m.perm.size() != pred.size()) throw PointCloudError("matching does not fit the clouds");
  std::vector<Point3> g(pred.size(), Point3{0.0, 0.0, 0.0});
  for (size_t i = 0; i < pred.size(); ++i) {
    const auto& x = pred.points[i];
    const auto& y = gt.points[static_cast<size_t>(m.perm[i])];
    const double d = dist(x, y);
    if (d <= 0.0) continue;
    for (int k = 0; k < 3; ++k) g[i][static_cast<size_t>(k)] = (x[static_cast<size_t>(k)] - y[static_cast<size_t>(k)]) / d;
  }
  return g;
}

double chamfer(const PointCloud& a, const PointCloud& b) {
  if (a.size() == 0 || b.size() == 0) throw PointCloudError("chamfer distance needs non-empty clouds");
  auto directed = [](const PointCloud& p, const PointCloud& q) {
    double s = 0.0;
    for (const auto& x : p.points) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& y : q.points) best = std::min(best, dist(x, y));
      s += best;
    }
    return s / static_cast<double>(p.size());
  };
  return directed(a, b) + directed(b, a);
}

void write_cloud(std::ostream& os, const PointCloud& cloud) {
  os << std::setprecision(9);
  for (const auto& p : cloud.points) os << p[0] << ' ' << p[1] << ' ' << p[2] << '\n';
}

PointCloud read_cloud(std::istream& is) {
  PointCloud c;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ss(line);
    Point3 p{};
    if (!(ss >> p[0] >> p[1] >> p[2])) throw PointCloudError("malformed point on line " + std::to_string(lineno));
    c.points.push_back(p);
  }
  return c;
}

void save_cloud(const std::string& path, const PointCloud& cloud) {
  std::ofstream os(path);
  if (!os) throw PointCloudError("cannot write " + path);
  write_cloud(os, cloud);
}

PointCloud load_cloud(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw PointCloudError("cannot read " + path);
  return read_cloud(is);
}

}  // namespace uda::pc
