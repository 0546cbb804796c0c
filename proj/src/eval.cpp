#include "uda/eval.hpp"

#include <algorithm>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <limits>
#include <numeric>

namespace uda::eval {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void check_sizes(size_t a, size_t b, const Dims* d = nullptr) {
  if (a != b) throw MetricError("volume size mismatch: " + std::to_string(a) + " vs " + std::to_string(b));
  if (d && a != d->size()) throw MetricError("volume size does not match dimensions");
}

// Squared distance transform along one line (Felzenszwalb-Huttenlocher lower
// envelope) with sample spacing w. Infinite entries are not sites.
void edt_line(const double* f, double* out, int n, double w, std::vector<int>& v, std::vector<double>& z) {
  v.resize(static_cast<size_t>(n));
  z.resize(static_cast<size_t>(n) + 1);
  int k = -1;
  const double w2 = w * w;
  for (int q = 0; q < n; ++q) {
    if (f[q] == kInf) continue;
    double s = -kInf;
    while (k >= 0) {
      const int p = v[k];
      s = ((f[q] + w2 * q * q) - (f[p] + w2 * p * p)) / (2.0 * w2 * (q - p));
      if (s > z[k]) break;
      --k;
    }
    ++k;
    v[k] = q;
    z[k] = k == 0 ? -kInf : s;
    z[k + 1] = kInf;
  }
  if (k < 0) {
    std::fill(out, out + n, kInf);
    return;
  }
  int j = 0;
  for (int q = 0; q < n; ++q) {
    while (z[j + 1] < q) ++j;
    const double dq = w * (q - v[j]);
    out[q] = dq * dq + f[v[j]];
  }
}

std::vector<double> squared_edt(std::span<const uint8_t> sites, const Dims& d, const Spacing& sp) {
  std::vector<double> g(d.size());
  for (size_t i = 0; i < g.size(); ++i) g[i] = sites[i] ? 0.0 : kInf;
  std::vector<int> v;
  std::vector<double> z, in, out;
  auto pass = [&](int n, int count, auto index, double w) {
    in.resize(static_cast<size_t>(n));
    out.resize(static_cast<size_t>(n));
    for (int line = 0; line < count; ++line) {
      for (int i = 0; i < n; ++i) in[i] = g[index(line, i)];
      edt_line(in.data(), out.data(), n, w, v, z);
      for (int i = 0; i < n; ++i) g[index(line, i)] = out[i];
    }
  };
  const size_t nx = static_cast<size_t>(d.nx), ny = static_cast<size_t>(d.ny);
  pass(d.nx, d.nz * d.ny, [&](int line, int i) { return static_cast<size_t>(line) * nx + i; }, sp[2]);
  pass(d.ny, d.nz * d.nx, [&](int line, int i) {
    const size_t zz = static_cast<size_t>(line) / nx, xx = static_cast<size_t>(line) % nx;
    return (zz * ny + i) * nx + xx;
  }, sp[1]);
  pass(d.nz, d.ny * d.nx, [&](int line, int i) { return static_cast<size_t>(i) * ny * nx + line; }, sp[0]);
  return g;
}

}  // namespace

double dice(std::span<const uint8_t> pred, std::span<const uint8_t> gt, uint8_t class_id) {
  check_sizes(pred.size(), gt.size());
  size_t a = 0, b = 0, both = 0;
  for (size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] == class_id, g = gt[i] == class_id;
    a += p;
    b += g;
    both += p && g;
  }
  if (a + b == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(a + b);
}

std::vector<uint8_t> boundary(std::span<const uint8_t> mask, const Dims& d) {
  check_sizes(mask.size(), d.size(), &d);
  std::vector<uint8_t> out(mask.size(), 0);
  auto fg = [&](int z, int y, int x) {
    if (z < 0 || y < 0 || x < 0 || z >= d.nz || y >= d.ny || x >= d.nx) return false;
    return mask[(static_cast<size_t>(z) * d.ny + y) * d.nx + x] != 0;
  };
  for (int z = 0; z < d.nz; ++z)
    for (int y = 0; y < d.ny; ++y)
      for (int x = 0; x < d.nx; ++x) {
        if (!fg(z, y, x)) continue;
        const bool edge = !fg(z - 1, y, x) || !fg(z + 1, y, x) || !fg(z, y - 1, x) || !fg(z, y + 1, x) ||
                          !fg(z, y, x - 1) || !fg(z, y, x + 1);
        out[(static_cast<size_t>(z) * d.ny + y) * d.nx + x] = edge;
      }
  return out;
}

std::vector<double> distance_transform(std::span<const uint8_t> sites, const Dims& d, const Spacing& spacing) {
  check_sizes(sites.size(), d.size(), &d);
  auto g = squared_edt(sites, d, spacing);
  for (auto& v : g) v = std::sqrt(v);
  return g;
}

SurfaceDistances surface_distances(std::span<const uint8_t> pred, std::span<const uint8_t> gt, const Dims& d,
                                   const Spacing& spacing, const std::string& subject_id) {
  check_sizes(pred.size(), gt.size(), &d);
  const std::string who = subject_id.empty() ? std::string() : " (subject " + subject_id + ")";
  auto nonempty = [](std::span<const uint8_t> m) { return std::any_of(m.begin(), m.end(), [](uint8_t v) { return v; }); };
  if (!nonempty(pred)) throw MetricError("surface distance: empty prediction mask" + who);
  if (!nonempty(gt)) throw MetricError("surface distance: empty reference mask" + who);
  const auto bp = boundary(pred, d), bg = boundary(gt, d);
  const auto dist_to_gt = distance_transform(bg, d, spacing);
  const auto dist_to_pred = distance_transform(bp, d, spacing);
  std::vector<double> pooled;
  for (size_t i = 0; i < bp.size(); ++i) {
    if (bp[i]) pooled.push_back(dist_to_gt[i]);
    if (bg[i]) pooled.push_back(dist_to_pred[i]);
  }
  SurfaceDistances r;
  r.hd = *std::max_element(pooled.begin(), pooled.end());
  r.asd = std::accumulate(pooled.begin(), pooled.end(), 0.0) / static_cast<double>(pooled.size());
  std::sort(pooled.begin(), pooled.end());
  const double pos = 0.95 * static_cast<double>(pooled.size() - 1);
  const size_t lo = static_cast<size_t>(std::floor(pos));
  const size_t hi = std::min(lo + 1, pooled.size() - 1);
  r.hd95 = pooled[lo] + (pos - static_cast<double>(lo)) * (pooled[hi] - pooled[lo]);
  return r;
}

SurfaceDistances surface_distances(std::span<const uint8_t> pred, std::span<const uint8_t> gt, const Dims& d,
                                   const Spacing& spacing, uint8_t class_id, const std::string& subject_id) {
  check_sizes(pred.size(), gt.size(), &d);
  std::vector<uint8_t> p(pred.size()), g(gt.size());
  for (size_t i = 0; i < p.size(); ++i) {
    p[i] = pred[i] == class_id;
    g[i] = gt[i] == class_id;
  }
  return surface_distances(p, g, d, spacing, subject_id);
}

std::string to_string(Region r) {
  switch (r) {
    case Region::apex:
      return "Apex";
    case Region::mid:
      return "Mid";
    case Region::base:
      return "Base";
  }
  return "Apex";
}

std::array<int, 3> region_sizes(int n) {
  if (n < 3) throw MetricError("slice-wise regions need at least 3 slices");
  const int third = n / 3;
  return {n - 2 * third, third, third};
}

SlicewiseReport slicewise_report(std::span<const uint8_t> pred, std::span<const uint8_t> gt, const Dims& d,
                                 const Spacing& spacing, int n_classes) {
  check_sizes(pred.size(), gt.size(), &d);
  const auto sizes = region_sizes(d.nz);
  SlicewiseReport rep;
  const size_t plane = static_cast<size_t>(d.ny) * d.nx;
  const Dims pd{1, d.ny, d.nx};
  const Spacing psp{1.0, spacing[1], spacing[2]};
  int z = 0;
  for (int r = 0; r < 3; ++r) {
    double dsum = 0.0, hsum = 0.0;
    int dn = 0, hn = 0;
    for (int k = 0; k < sizes[r]; ++k, ++z) {
      const auto ps = pred.subspan(z * plane, plane);
      const auto gs = gt.subspan(z * plane, plane);
      double sd = 0.0, sh = 0.0;
      int cd = 0, ch = 0;
      for (int c = 1; c < n_classes; ++c) {
        const auto cls = static_cast<uint8_t>(c);
        const bool in_p = std::find(ps.begin(), ps.end(), cls) != ps.end();
        const bool in_g = std::find(gs.begin(), gs.end(), cls) != gs.end();
        if (!in_p && !in_g) continue;
        sd += dice(ps, gs, cls);
        ++cd;
        if (in_p && in_g) {
          sh += surface_distances(ps, gs, pd, psp, cls, "").hd;
          ++ch;
        }
      }
      if (cd == 0) {
        rep.notes.push_back("slice " + std::to_string(z) + " (" + to_string(static_cast<Region>(r)) +
                            ") is background-only and was skipped");
        continue;
      }
      dsum += sd / cd;
      ++dn;
      if (ch > 0) {
        hsum += sh / ch;
        ++hn;
      }
    }
    auto& m = rep.regions[r];
    m.slices = dn;
    m.hd_slices = hn;
    m.dice = dn ? dsum / dn : 0.0;
    m.hd = hn ? hsum / hn : 0.0;
  }
  return rep;
}

double lv_volume_ml(std::span<const uint8_t> mask, const Spacing& spacing, uint8_t class_id) {
  const auto n = std::count(mask.begin(), mask.end(), class_id);
  return static_cast<double>(n) * spacing[0] * spacing[1] * spacing[2] / 1000.0;
}

Regression linear_regression(std::span<const double> pred, std::span<const double> gt) {
  check_sizes(pred.size(), gt.size());
  const size_t n = gt.size();
  if (n < 3) throw MetricError("linear regression needs at least 3 points");
  double mx = 0.0, my = 0.0;
  for (size_t i = 0; i < n; ++i) {
    mx += gt[i];
    my += pred[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double dx = gt[i] - mx, dy = pred[i] - my;
    sxx += dx * dx;
    sxy += dx * dy;
    syy += dy * dy;
  }
  if (sxx == 0.0) throw MetricError("linear regression: reference values have zero variance");
  Regression r;
  r.n = static_cast<int>(n);
  r.slope = sxy / sxx;
  r.intercept = my - r.slope * mx;
  r.r2 = syy == 0.0 ? 0.0 : std::min(1.0, (sxy * sxy) / (sxx * syy));
  const double df = static_cast<double>(n) - 2.0;
  if (syy == 0.0) {
    r.p_value = 1.0;
  } else if (r.r2 >= 1.0) {
    r.p_value = 0.0;
  } else {
    const double t = std::sqrt(r.r2 * df / (1.0 - r.r2));
    boost::math::students_t dist(df);
    r.p_value = 2.0 * boost::math::cdf(boost::math::complement(dist, t));
  }
  return r;
}

BlandAltman bland_altman(std::span<const double> pred, std::span<const double> gt) {
  check_sizes(pred.size(), gt.size());
  const size_t n = gt.size();
  if (n < 2) throw MetricError("Bland-Altman needs at least 2 pairs");
  double mean = 0.0;
  for (size_t i = 0; i < n; ++i) mean += pred[i] - gt[i];
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double e = pred[i] - gt[i] - mean;
    ss += e * e;
  }
  BlandAltman b;
  b.mean_diff = mean;
  b.sd = std::sqrt(ss / static_cast<double>(n - 1));
  b.loa_low = mean - 1.96 * b.sd;
  b.loa_high = mean + 1.96 * b.sd;
  return b;
}

}  // namespace uda::eval
