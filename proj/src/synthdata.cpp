#include "uda/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "uda/core/rng.hpp"

namespace uda::synth {
namespace {

constexpr double kPi = std::numbers::pi;

void require(bool ok, const std::string& what) {
  if (!ok) throw ValidationError(what);
}

std::vector<float> gaussian_kernel(double sigma) {
  const int r = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<float> k(static_cast<size_t>(2 * r + 1));
  double s = 0.0;
  for (int i = -r; i <= r; ++i) {
    const double v = std::exp(-0.5 * i * i / (sigma * sigma));
    k[static_cast<size_t>(i + r)] = static_cast<float>(v);
    s += v;
  }
  for (auto& v : k) v = static_cast<float>(v / s);
  return k;
}

// Separable blur with clamped borders.
void blur_plane(float* px, int h, int w, double sigma) {
  if (sigma <= 0.0) return;
  const auto k = gaussian_kernel(sigma);
  const int r = static_cast<int>(k.size() / 2);
  std::vector<float> tmp(static_cast<size_t>(h) * w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int i = -r; i <= r; ++i) s += k[static_cast<size_t>(i + r)] * px[y * w + std::clamp(x + i, 0, w - 1)];
      tmp[static_cast<size_t>(y) * w + x] = static_cast<float>(s);
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int i = -r; i <= r; ++i) s += k[static_cast<size_t>(i + r)] * tmp[std::clamp(y + i, 0, h - 1) * w + x];
      px[y * w + x] = static_cast<float>(s);
    }
  }
}

float sample_bilinear(const Image& img, double y, double x) {
  y = std::clamp(y, 0.0, static_cast<double>(img.height - 1));
  x = std::clamp(x, 0.0, static_cast<double>(img.width - 1));
  const int y0 = static_cast<int>(std::floor(y)), x0 = static_cast<int>(std::floor(x));
  const int y1 = std::min(y0 + 1, img.height - 1), x1 = std::min(x0 + 1, img.width - 1);
  const double fy = y - y0, fx = x - x0;
  const double top = img.at(y0, x0) * (1 - fx) + img.at(y0, x1) * fx;
  const double bot = img.at(y1, x0) * (1 - fx) + img.at(y1, x1) * fx;
  return static_cast<float>(top * (1 - fy) + bot * fy);
}

uint8_t sample_nearest(const LabelMap& m, double y, double x) {
  const int yi = std::clamp(static_cast<int>(std::lround(y)), 0, m.height - 1);
  const int xi = std::clamp(static_cast<int>(std::lround(x)), 0, m.width - 1);
  return m.at(yi, xi);
}

// Inverse-mapped warp: out(p) = in(source(p)).
template <typename SourceFn>
std::pair<Image, LabelMap> warp(const Image& img, const LabelMap& mask, SourceFn source) {
  Image out{img.height, img.width, std::vector<float>(img.px.size())};
  LabelMap lab{mask.height, mask.width, std::vector<uint8_t>(mask.px.size())};
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const auto [sy, sx] = source(static_cast<double>(y), static_cast<double>(x));
      out.px[static_cast<size_t>(y) * img.width + x] = sample_bilinear(img, sy, sx);
      lab.px[static_cast<size_t>(y) * img.width + x] = sample_nearest(mask, sy, sx);
    }
  }
  return {std::move(out), std::move(lab)};
}

// Smooth random displacement field component (sum of low-frequency waves).
struct SmoothField {
  struct Wave {
    double ky, kx, phase, amp;
  };
  std::vector<Wave> waves;
  SmoothField(Rng& rng, int n, double amplitude, double max_freq) {
    for (int i = 0; i < n; ++i) {
      waves.push_back({rng.uniform(-max_freq, max_freq), rng.uniform(-max_freq, max_freq), rng.uniform(0, 2 * kPi),
                       amplitude * rng.uniform(0.5, 1.0) / n});
    }
  }
  double operator()(double y, double x) const {
    double s = 0.0;
    for (const auto& w : waves) s += w.amp * std::sin(w.ky * y + w.kx * x + w.phase);
    return s;
  }
};

}  // namespace

std::string to_string(Domain d) { return d == Domain::source ? "source" : "target"; }

Domain parse_domain(std::string_view s) {
  if (s == "source") return Domain::source;
  if (s == "target") return Domain::target;
  throw ValidationError("unknown domain '" + std::string(s) + "'");
}

void PhantomParams::validate() const {
  require(image_size >= 16, "image_size must be >= 16");
  require(n_slices >= 3, "n_slices must be >= 3");
  require(lv_radius > 0.0 && lv_radius < 0.5, "lv_radius must lie in (0, 0.5)");
  require(myo_thickness > 0.0 && myo_thickness < 0.5, "myo_thickness must lie in (0, 0.5)");
  require(rv_extent > 0.0 && rv_extent < 0.5, "rv_extent must lie in (0, 0.5)");
  require(lv_radius + myo_thickness < 0.5, "lv_radius + myo_thickness must be < 0.5");
  require(apex_taper > 0.0 && apex_taper <= 1.0, "apex_taper must lie in (0, 1]");
  for (const auto& ci : intensity) {
    require(ci.mean >= 0.0 && ci.mean <= 1.0, "intensity mean must lie in [0, 1]");
    require(ci.stddev >= 0.0 && ci.stddev <= 1.0, "intensity stddev must lie in [0, 1]");
  }
  for (double s : spacing_mm) require(s > 0.0, "spacing components must be > 0");
}

void SubjectVolume::validate() const {
  require(n_slices > 0 && height > 0 && width > 0, "volume dimensions must be positive");
  const size_t n = static_cast<size_t>(n_slices) * plane();
  require(image.size() == n, "image size does not match dimensions");
  require(labels.size() == n, "label size does not match dimensions");
  for (auto l : labels) require(l < n_classes, "label value out of range");
  for (double s : spacing_mm) require(s > 0.0, "spacing components must be > 0");
}

PhantomGeometry phantom_geometry(const PhantomParams& params, std::string_view subject_id) {
  params.validate();
  Rng rng(derive_seed(params.seed, std::string("phantom/") + std::string(subject_id)));
  const double s = params.image_size;
  PhantomGeometry g;
  const double lv = params.lv_radius * s * rng.uniform(0.9, 1.1);
  const double myo = params.myo_thickness * s * rng.uniform(0.9, 1.1);
  const double rv = params.rv_extent * s * rng.uniform(0.9, 1.1);
  g.rv_angle = kPi + rng.uniform(-0.35, 0.35);
  // Keep the LV/myo disc and most of the RV inside the frame.
  const double margin = std::max(lv + myo, 0.5 * rv) + 2.0;
  const double jitter = std::max(0.0, std::min(0.08 * s, 0.5 * s - margin - 0.55 * rv));
  g.cx = (s - 1) / 2.0 + 0.35 * rv * std::cos(g.rv_angle + kPi) + rng.uniform(-jitter, jitter);
  g.cy = (s - 1) / 2.0 + 0.35 * rv * std::sin(g.rv_angle + kPi) + rng.uniform(-jitter, jitter);
  const int n = params.n_slices;
  for (int z = 0; z < n; ++z) {
    const double t = static_cast<double>(z) / (n - 1);
    const double f = params.apex_taper + (1.0 - params.apex_taper) * t;
    g.lv_radius_px.push_back(lv * f);
    g.myo_outer_px.push_back(lv * f + myo * std::sqrt(f));
    g.rv_radius_px.push_back(rv * f);
  }
  return g;
}

SubjectVolume gen_subject(const PhantomParams& params, std::string_view subject_id) {
  const PhantomGeometry geo = phantom_geometry(params, subject_id);
  Rng rng(derive_seed(params.seed, std::string("pixels/") + std::string(subject_id)));
  const int s = params.image_size;
  SubjectVolume vol;
  vol.subject_id = std::string(subject_id);
  vol.domain = Domain::source;
  vol.n_slices = params.n_slices;
  vol.height = s;
  vol.width = s;
  vol.spacing_mm = params.spacing_mm;
  vol.image.assign(static_cast<size_t>(vol.n_slices) * vol.plane(), 0.0f);
  vol.labels.assign(vol.image.size(), kBackground);

  // Background: smooth texture plus two organ-like ellipses away from the heart.
  SmoothField texture(rng, 6, 0.10, 0.25);
  struct Blob {
    double cy, cx, ry, rx, angle, value;
  };
  std::vector<Blob> blobs;
  for (int i = 0; i < 2; ++i) {
    const double ang = geo.rv_angle + kPi + rng.uniform(-1.2, 1.2);
    const double dist = geo.myo_outer_px.back() + rng.uniform(0.12, 0.2) * s;
    blobs.push_back({geo.cy + dist * std::sin(ang), geo.cx + dist * std::cos(ang), rng.uniform(0.06, 0.12) * s,
                     rng.uniform(0.06, 0.12) * s, rng.uniform(0, kPi), rng.uniform(0.5, 0.7)});
  }

  const double rvx = std::cos(geo.rv_angle), rvy = std::sin(geo.rv_angle);
  for (int z = 0; z < vol.n_slices; ++z) {
    const double r_lv = geo.lv_radius_px[static_cast<size_t>(z)];
    const double r_out = geo.myo_outer_px[static_cast<size_t>(z)];
    const double r_rv = geo.rv_radius_px[static_cast<size_t>(z)];
    const double rcx = geo.cx + rvx * (r_out + 0.25 * r_rv);
    const double rcy = geo.cy + rvy * (r_out + 0.25 * r_rv);
    float* img = vol.image.data() + z * vol.plane();
    uint8_t* lab = vol.labels.data() + z * vol.plane();
    for (int y = 0; y < s; ++y) {
      for (int x = 0; x < s; ++x) {
        const double d = std::hypot(x - geo.cx, y - geo.cy);
        const double drv = std::hypot(x - rcx, y - rcy);
        uint8_t l = kBackground;
        if (d < r_lv) {
          l = kLV;
        } else if (d < r_out) {
          l = kMyo;
        } else if (drv < r_rv) {
          l = kRV;
        }
        double mean = params.intensity[l].mean;
        if (l == kBackground) {
          mean += texture(y, x);
          for (const auto& b : blobs) {
            const double dy = y - b.cy, dx = x - b.cx;
            const double u = (dx * std::cos(b.angle) + dy * std::sin(b.angle)) / b.rx;
            const double v = (-dx * std::sin(b.angle) + dy * std::cos(b.angle)) / b.ry;
            if (u * u + v * v < 1.0) mean = b.value;
          }
        }
        const double v = mean + rng.normal(0.0, params.intensity[l].stddev);
        img[y * s + x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
        lab[y * s + x] = l;
      }
    }
  }
  return vol;
}

DomainShiftConfig DomainShiftConfig::identity() { return DomainShiftConfig{}; }

DomainShiftConfig DomainShiftConfig::lge_like() {
  DomainShiftConfig c;
  c.remap = {{0.0, 0.30}, {0.20, 0.42}, {0.40, 0.12}, {0.55, 0.10}, {0.75, 0.62}, {1.0, 0.72}};
  c.contrast_gamma = 1.6;
  c.blur_sigma = 1.0;
  c.noise_std = 0.05;
  c.seed = 17;
  return c;
}

void DomainShiftConfig::validate() const {
  require(remap.size() >= 2, "intensity_remap needs at least two knots");
  require(remap.front().first == 0.0 && remap.back().first == 1.0, "intensity_remap knots must span [0, 1]");
  for (size_t i = 0; i < remap.size(); ++i) {
    require(remap[i].second >= 0.0 && remap[i].second <= 1.0, "intensity_remap outputs must lie in [0, 1]");
    if (i) require(remap[i].first > remap[i - 1].first, "intensity_remap inputs must be strictly increasing");
  }
  require(blur_sigma >= 0.0, "blur_sigma must be >= 0");
  require(noise_std >= 0.0, "noise_std must be >= 0");
  require(contrast_gamma > 0.0, "contrast_gamma must be > 0");
}

double DomainShiftConfig::map_intensity(double v) const {
  v = std::clamp(v, 0.0, 1.0);
  for (size_t i = 1; i < remap.size(); ++i) {
    if (v <= remap[i].first) {
      const auto [x0, y0] = remap[i - 1];
      const auto [x1, y1] = remap[i];
      return y0 + (y1 - y0) * (v - x0) / (x1 - x0);
    }
  }
  return remap.back().second;
}

SubjectVolume apply_domain_shift(const SubjectVolume& vol, const DomainShiftConfig& cfg) {
  cfg.validate();
  if (vol.domain != Domain::source) throw ValidationError("apply_domain_shift expects a source-domain volume");
  SubjectVolume out = vol;
  out.domain = Domain::target;
  Rng rng(derive_seed(cfg.seed, "shift/" + vol.subject_id));
  for (int z = 0; z < out.n_slices; ++z) {
    auto px = out.slice(z);
    for (auto& v : px) v = static_cast<float>(cfg.map_intensity(std::pow(static_cast<double>(v), cfg.contrast_gamma)));
    blur_plane(px.data(), out.height, out.width, cfg.blur_sigma);
    if (cfg.noise_std > 0.0) {
      for (auto& v : px) v = static_cast<float>(std::clamp(v + rng.normal(0.0, cfg.noise_std), 0.0, 1.0));
    }
  }
  return out;
}

Image slice_image(const SubjectVolume& vol, int z) {
  auto s = vol.slice(z);
  return Image{vol.height, vol.width, std::vector<float>(s.begin(), s.end())};
}

LabelMap slice_labels(const SubjectVolume& vol, int z) {
  auto s = vol.label_slice(z);
  return LabelMap{vol.height, vol.width, std::vector<uint8_t>(s.begin(), s.end())};
}

Image histogram_equalize(const Image& in) {
  std::array<int64_t, kHistogramBins> hist{};
  auto bin_of = [](float v) {
    const int b = static_cast<int>(std::floor(static_cast<double>(v) * kHistogramBins));
    return std::clamp(b, 0, kHistogramBins - 1);
  };
  for (float v : in.px) ++hist[static_cast<size_t>(bin_of(v))];
  std::array<double, kHistogramBins> cdf{};
  int64_t run = 0;
  const double n = static_cast<double>(in.px.size());
  for (int b = 0; b < kHistogramBins; ++b) {
    run += hist[static_cast<size_t>(b)];
    cdf[static_cast<size_t>(b)] = static_cast<double>(run) / n;
  }
  Image out = in;
  for (auto& v : out.px) v = static_cast<float>(cdf[static_cast<size_t>(bin_of(v))]);
  return out;
}

Image minmax_normalize(const Image& in) {
  Image out = in;
  if (in.px.empty()) return out;
  const auto [lo, hi] = std::minmax_element(in.px.begin(), in.px.end());
  const double a = *lo, b = *hi;
  if (b <= a) {
    std::fill(out.px.begin(), out.px.end(), 0.0f);
    return out;
  }
  for (auto& v : out.px) v = static_cast<float>((v - a) / (b - a));
  return out;
}

CropWindow centroid_window(const LabelMap& mask, int crop_size) {
  if (crop_size > mask.height || crop_size > mask.width || crop_size <= 0) {
    throw ValidationError("crop_size " + std::to_string(crop_size) + " exceeds slice dimensions");
  }
  double sy = 0.0, sx = 0.0;
  int64_t count = 0;
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) {
      if (mask.at(y, x) != kBackground) {
        sy += y;
        sx += x;
        ++count;
      }
    }
  }
  if (count == 0) return {(mask.height - crop_size) / 2, (mask.width - crop_size) / 2};
  const double half = (crop_size - 1) / 2.0;
  const int y0 = static_cast<int>(std::lround(sy / count - half));
  const int x0 = static_cast<int>(std::lround(sx / count - half));
  return {std::clamp(y0, 0, mask.height - crop_size), std::clamp(x0, 0, mask.width - crop_size)};
}

std::pair<Image, LabelMap> centroid_crop(const Image& img, const LabelMap& mask, int crop_size) {
  if (img.height != mask.height || img.width != mask.width) throw ValidationError("image/mask size mismatch");
  const CropWindow w = centroid_window(mask, crop_size);
  Image out{crop_size, crop_size, std::vector<float>(static_cast<size_t>(crop_size) * crop_size)};
  LabelMap lab{crop_size, crop_size, std::vector<uint8_t>(out.px.size())};
  for (int y = 0; y < crop_size; ++y) {
    for (int x = 0; x < crop_size; ++x) {
      out.px[static_cast<size_t>(y) * crop_size + x] = img.at(w.y0 + y, w.x0 + x);
      lab.px[static_cast<size_t>(y) * crop_size + x] = mask.at(w.y0 + y, w.x0 + x);
    }
  }
  return {std::move(out), std::move(lab)};
}

AugPolicy parse_aug_policy(std::string_view s) {
  if (s == "none") return AugPolicy::none;
  if (s == "light") return AugPolicy::light;
  if (s == "heavy") return AugPolicy::heavy;
  throw ValidationError("unknown augmentation policy '" + std::string(s) + "'");
}

std::string to_string(AugPolicy p) {
  switch (p) {
    case AugPolicy::none:
      return "none";
    case AugPolicy::light:
      return "light";
    case AugPolicy::heavy:
      return "heavy";
  }
  return "none";
}

std::pair<Image, LabelMap> rotate(const Image& img, const LabelMap& mask, double angle_deg) {
  const double a = angle_deg * kPi / 180.0;
  const double c = std::cos(a), s = std::sin(a);
  const double cy = (img.height - 1) / 2.0, cx = (img.width - 1) / 2.0;
  return warp(img, mask, [=](double y, double x) {
    const double dy = y - cy, dx = x - cx;
    return std::pair{cy - s * dx + c * dy, cx + c * dx + s * dy};
  });
}

std::pair<Image, LabelMap> augment(const Image& img, const LabelMap& mask, AugPolicy policy, uint64_t seed) {
  if (img.height != mask.height || img.width != mask.width) throw ValidationError("image/mask size mismatch");
  if (policy == AugPolicy::none) return {img, mask};
  Rng rng(seed);
  if (policy == AugPolicy::light) {
    static constexpr double kAngles[] = {0.0, 30.0, 60.0, -30.0, -60.0};
    return rotate(img, mask, kAngles[rng.uniform_int(0, 4)]);
  }
  // heavy: affine + translation + elastic, then intensity noise and contrast.
  const double angle = rng.uniform(-60.0, 60.0) * kPi / 180.0;
  const double zoom = rng.uniform(0.85, 1.15);
  const double shear = rng.uniform(-0.1, 0.1);
  const double ty = rng.uniform(-0.08, 0.08) * img.height;
  const double tx = rng.uniform(-0.08, 0.08) * img.width;
  SmoothField ey(rng, 4, 2.0, 0.35), ex(rng, 4, 2.0, 0.35);
  const double c = std::cos(angle) / zoom, s = std::sin(angle) / zoom;
  const double cy = (img.height - 1) / 2.0, cx = (img.width - 1) / 2.0;
  auto [out, lab] = warp(img, mask, [&](double y, double x) {
    const double dy = y - cy - ty, dx = x - cx - tx;
    const double sx = c * dx + s * dy + shear * dy;
    const double sy = -s * dx + c * dy;
    return std::pair{cy + sy + ey(y, x), cx + sx + ex(y, x)};
  });
  const double gamma = std::exp(rng.uniform(std::log(0.7), std::log(1.5)));
  const double noise = rng.uniform(0.0, 0.05);
  for (auto& v : out.px) {
    const double g = std::pow(std::clamp(static_cast<double>(v), 0.0, 1.0), gamma);
    const double eps = noise > 0.0 ? rng.normal(0.0, noise) : 0.0;
    v = static_cast<float>(std::clamp(g + eps, 0.0, 1.0));
  }
  return {std::move(out), std::move(lab)};
}

std::pair<Image, LabelMap> preprocess(const Image& img, const LabelMap& mask, int crop_size) {
  return centroid_crop(minmax_normalize(histogram_equalize(img)), mask, crop_size);
}

}  // namespace uda::synth
