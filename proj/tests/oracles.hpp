#pragma once

// Independent brute-force reference implementations. They share no code with
// the library and favour obviousness over speed.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

namespace oracle {

using P3 = std::array<double, 3>;

inline double dist(const P3& a, const P3& b) {
  return std::sqrt((a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1]) + (a[2] - b[2]) * (a[2] - b[2]));
}

/// Minimum over all n! bijections of the summed Euclidean distances.
inline double emd(const std::vector<P3>& a, const std::vector<P3>& b) {
  std::vector<int> perm(a.size());
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double c = 0.0;
    for (size_t i = 0; i < a.size(); ++i) c += dist(a[i], b[perm[i]]);
    best = std::min(best, c);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

/// Greedy max-min selection recomputing every distance from scratch.
inline std::vector<size_t> fps(const std::vector<double>& coords, int dim, size_t k) {
  const size_t n = coords.size() / dim;
  auto d2 = [&](size_t i, size_t j) {
    double s = 0.0;
    for (int c = 0; c < dim; ++c) s += (coords[i * dim + c] - coords[j * dim + c]) * (coords[i * dim + c] - coords[j * dim + c]);
    return s;
  };
  std::vector<size_t> chosen;
  if (k == 0) return chosen;
  chosen.push_back(0);
  while (chosen.size() < k) {
    size_t arg = 0;
    double best = -1.0;
    for (size_t i = 0; i < n; ++i) {
      double m = std::numeric_limits<double>::infinity();
      for (size_t j : chosen) m = std::min(m, d2(i, j));
      if (m > best) {
        best = m;
        arg = i;
      }
    }
    chosen.push_back(arg);
  }
  return chosen;
}

struct Vox {
  int z, y, x;
};

/// Foreground voxels with a background (or out-of-volume) face neighbour.
inline std::vector<Vox> boundary(const std::vector<uint8_t>& m, int nz, int ny, int nx) {
  auto fg = [&](int z, int y, int x) {
    if (z < 0 || y < 0 || x < 0 || z >= nz || y >= ny || x >= nx) return false;
    return m[(static_cast<size_t>(z) * ny + y) * nx + x] != 0;
  };
  std::vector<Vox> out;
  for (int z = 0; z < nz; ++z)
    for (int y = 0; y < ny; ++y)
      for (int x = 0; x < nx; ++x) {
        if (!fg(z, y, x)) continue;
        if (!fg(z - 1, y, x) || !fg(z + 1, y, x) || !fg(z, y - 1, x) || !fg(z, y + 1, x) || !fg(z, y, x - 1) ||
            !fg(z, y, x + 1))
          out.push_back({z, y, x});
      }
  return out;
}

struct Surface {
  double hd = 0.0;
  double asd = 0.0;
};

/// All-pairs nearest boundary distances, pooled over both directions.
inline Surface surface(const std::vector<uint8_t>& a, const std::vector<uint8_t>& b, int nz, int ny, int nx,
                       const std::array<double, 3>& sp) {
  const auto ba = boundary(a, nz, ny, nx), bb = boundary(b, nz, ny, nx);
  auto d = [&](const Vox& p, const Vox& q) {
    const double dz = (p.z - q.z) * sp[0], dy = (p.y - q.y) * sp[1], dx = (p.x - q.x) * sp[2];
    return std::sqrt(dz * dz + dy * dy + dx * dx);
  };
  std::vector<double> all;
  for (const auto* pair : {&ba, &bb}) {
    const auto& from = *pair;
    const auto& to = pair == &ba ? bb : ba;
    for (const auto& p : from) {
      double m = std::numeric_limits<double>::infinity();
      for (const auto& q : to) m = std::min(m, d(p, q));
      all.push_back(m);
    }
  }
  Surface s;
  for (double v : all) {
    s.hd = std::max(s.hd, v);
    s.asd += v;
  }
  s.asd /= static_cast<double>(all.size());
  return s;
}

inline double dice(const std::vector<uint8_t>& a, const std::vector<uint8_t>& b, uint8_t cls) {
  double na = 0, nb = 0, both = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    na += a[i] == cls;
    nb += b[i] == cls;
    both += a[i] == cls && b[i] == cls;
  }
  return na + nb == 0 ? 1.0 : 2.0 * both / (na + nb);
}

/// Mean over pixels of -sum_c s log s, probabilities laid out [b][c][p].
inline double entropy(const std::vector<double>& s, int batch, int classes, int pixels) {
  double total = 0.0;
  for (int b = 0; b < batch; ++b)
    for (int p = 0; p < pixels; ++p) {
      double h = 0.0;
      for (int c = 0; c < classes; ++c) {
        const double v = s[(static_cast<size_t>(b) * classes + c) * pixels + p];
        h -= v * std::log(std::max(v, 1e-7));
      }
      total += h;
    }
  return total / (static_cast<double>(batch) * pixels);
}

/// Clamped BCE averaged over all entries plus mean class (1 - smoothed soft IoU).
inline double seg_loss(const std::vector<double>& s, const std::vector<double>& y, int batch, int classes, int pixels,
                       double eps = 1e-7, double smooth = 1.0) {
  double bce = 0.0;
  for (size_t i = 0; i < s.size(); ++i) {
    const double v = std::min(std::max(s[i], eps), 1.0 - eps);
    bce += -(y[i] * std::log(v) + (1.0 - y[i]) * std::log(1.0 - v));
  }
  bce /= static_cast<double>(s.size());
  double jac = 0.0;
  for (int c = 0; c < classes; ++c) {
    double inter = 0, ss = 0, sy = 0;
    for (int b = 0; b < batch; ++b)
      for (int p = 0; p < pixels; ++p) {
        const size_t i = (static_cast<size_t>(b) * classes + c) * pixels + p;
        inter += s[i] * y[i];
        ss += s[i];
        sy += y[i];
      }
    jac += 1.0 - (inter + smooth) / (ss + sy - inter + smooth);
  }
  return bce + jac / classes;
}

}  // namespace oracle
