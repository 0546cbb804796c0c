#include "uda/plots.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace uda::plots {
namespace {

constexpr double kW = 560, kH = 420, kLeft = 70, kRight = 20, kTop = 40, kBottom = 60;

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '&') out += "&amp;";
    else out += c;
  }
  return out;
}

struct Axis {
  double lo = 0.0, hi = 1.0;
  void include(double v) {
    if (!std::isfinite(v)) return;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  void pad() {
    if (hi <= lo) {
      lo -= 0.5;
      hi += 0.5;
    }
    const double m = 0.05 * (hi - lo);
    lo -= m;
    hi += m;
  }
};

Axis fresh() { return {std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()}; }

class Canvas {
 public:
  Canvas(const std::string& title, Axis x, Axis y) : x_(x), y_(y) {
    os_ << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH << "\">\n"
        << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
        << "<text x=\"" << kW / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" << escape(title)
        << "</text>\n"
        << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << kW - kLeft - kRight << "\" height=\""
        << kH - kTop - kBottom << "\" fill=\"none\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; ++i) {
      const double yv = y_.lo + (y_.hi - y_.lo) * i / 4.0;
      os_ << "<text x=\"" << kLeft - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\" font-size=\"11\">"
          << num(yv) << "</text>\n";
    }
  }
  double px(double v) const { return kLeft + (v - x_.lo) / (x_.hi - x_.lo) * (kW - kLeft - kRight); }
  double py(double v) const { return kH - kBottom - (v - y_.lo) / (y_.hi - y_.lo) * (kH - kTop - kBottom); }
  std::ostringstream& os() { return os_; }
  void xticks() {
    for (int i = 0; i <= 4; ++i) {
      const double xv = x_.lo + (x_.hi - x_.lo) * i / 4.0;
      os_ << "<text x=\"" << px(xv) << "\" y=\"" << kH - kBottom + 16 << "\" text-anchor=\"middle\" font-size=\"11\">"
          << num(xv) << "</text>\n";
    }
  }
  void labels(const std::string& xl, const std::string& yl) {
    os_ << "<text x=\"" << (kLeft + kW - kRight) / 2 << "\" y=\"" << kH - 16
        << "\" text-anchor=\"middle\" font-size=\"13\">" << escape(xl) << "</text>\n"
        << "<text x=\"18\" y=\"" << (kTop + kH - kBottom) / 2 << "\" text-anchor=\"middle\" font-size=\"13\" "
        << "transform=\"rotate(-90 18 " << (kTop + kH - kBottom) / 2 << ")\">" << escape(yl) << "</text>\n";
  }
  void save(const std::filesystem::path& path) {
    os_ << "</svg>\n";
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    f << os_.str();
  }

 private:
  Axis x_, y_;
  std::ostringstream os_;
};

}  // namespace

void scatter_svg(const std::filesystem::path& path, const std::string& title, const std::string& xlabel,
                 const std::string& ylabel, const Series& points, const std::vector<Line>& lines) {
  Axis ax = fresh(), ay = fresh();
  for (double v : points.x) ax.include(v);
  for (double v : points.y) ay.include(v);
  for (const auto& l : lines) {
    ax.include(l.x0), ax.include(l.x1);
    ay.include(l.y0), ay.include(l.y1);
  }
  if (!std::isfinite(ax.lo)) ax = {0, 1};
  if (!std::isfinite(ay.lo)) ay = {0, 1};
  ax.pad();
  ay.pad();
  Canvas c(title, ax, ay);
  c.xticks();
  c.labels(xlabel, ylabel);
  for (const auto& l : lines) {
    c.os() << "<line x1=\"" << c.px(l.x0) << "\" y1=\"" << c.py(l.y0) << "\" x2=\"" << c.px(l.x1) << "\" y2=\""
           << c.py(l.y1) << "\" stroke=\"" << (l.dashed ? "gray" : "crimson") << "\""
           << (l.dashed ? " stroke-dasharray=\"6 4\"" : "") << "/>\n";
  }
  for (size_t i = 0; i < points.x.size() && i < points.y.size(); ++i) {
    c.os() << "<circle cx=\"" << c.px(points.x[i]) << "\" cy=\"" << c.py(points.y[i])
           << "\" r=\"4\" fill=\"steelblue\" fill-opacity=\"0.8\"/>\n";
  }
  c.save(path);
}

std::array<double, 3> quartiles(std::vector<double> v) {
  if (v.empty()) return {0.0, 0.0, 0.0};
  std::sort(v.begin(), v.end());
  auto q = [&](double f) {
    const double pos = f * static_cast<double>(v.size() - 1);
    const size_t i = static_cast<size_t>(pos);
    const double t = pos - static_cast<double>(i);
    return i + 1 < v.size() ? v[i] * (1 - t) + v[i + 1] * t : v[i];
  };
  return {q(0.25), q(0.5), q(0.75)};
}

void boxplot_svg(const std::filesystem::path& path, const std::string& title, const std::string& ylabel,
                 const std::vector<std::string>& names, const std::vector<std::vector<double>>& groups) {
  Axis ay = fresh();
  for (const auto& g : groups)
    for (double v : g) ay.include(v);
  if (!std::isfinite(ay.lo)) ay = {0, 1};
  ay.pad();
  const double n = std::max<double>(1.0, static_cast<double>(groups.size()));
  Canvas c(title, {0.0, n}, ay);
  c.labels("", ylabel);
  for (size_t i = 0; i < groups.size(); ++i) {
    const double cx = c.px(i + 0.5), half = 0.3 * (kW - kLeft - kRight) / n;
    if (i < names.size()) {
      c.os() << "<text x=\"" << cx << "\" y=\"" << kH - kBottom + 16 << "\" text-anchor=\"middle\" font-size=\"11\">"
             << escape(names[i]) << "</text>\n";
    }
    if (groups[i].empty()) continue;
    const auto q = quartiles(groups[i]);
    const double iqr = q[2] - q[0];
    double lo = q[0], hi = q[2];
    for (double v : groups[i]) {
      if (v >= q[0] - 1.5 * iqr) lo = std::min(lo, v);
      if (v <= q[2] + 1.5 * iqr) hi = std::max(hi, v);
    }
    c.os() << "<line x1=\"" << cx << "\" y1=\"" << c.py(lo) << "\" x2=\"" << cx << "\" y2=\"" << c.py(hi)
           << "\" stroke=\"black\"/>\n"
           << "<rect x=\"" << cx - half << "\" y=\"" << c.py(q[2]) << "\" width=\"" << 2 * half << "\" height=\""
           << std::max(0.5, c.py(q[0]) - c.py(q[2])) << "\" fill=\"lightsteelblue\" stroke=\"black\"/>\n"
           << "<line x1=\"" << cx - half << "\" y1=\"" << c.py(q[1]) << "\" x2=\"" << cx + half << "\" y2=\""
           << c.py(q[1]) << "\" stroke=\"crimson\" stroke-width=\"2\"/>\n";
    for (double v : groups[i]) {
      if (v < lo || v > hi) c.os() << "<circle cx=\"" << cx << "\" cy=\"" << c.py(v) << "\" r=\"3\" fill=\"none\" stroke=\"black\"/>\n";
    }
  }
  c.save(path);
}

void write_ppm(const std::filesystem::path& path, int height, int width, const std::vector<Rgb>& px) {
  if (px.size() != static_cast<size_t>(height) * width) throw std::invalid_argument("write_ppm: size mismatch");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << "P6\n" << width << ' ' << height << "\n255\n";
  for (const auto& p : px) f.put(static_cast<char>(p.r)).put(static_cast<char>(p.g)).put(static_cast<char>(p.b));
}

std::vector<Rgb> label_overlay(const std::vector<float>& gray, const std::vector<uint8_t>& labels) {
  static const Rgb palette[] = {{0, 0, 0}, {230, 60, 60}, {60, 200, 80}, {70, 110, 240}, {240, 200, 40}, {200, 80, 220}};
  std::vector<Rgb> out(gray.size());
  for (size_t i = 0; i < gray.size(); ++i) {
    const auto g = static_cast<uint8_t>(std::clamp(gray[i], 0.0f, 1.0f) * 255.0f + 0.5f);
    const uint8_t l = i < labels.size() ? labels[i] : 0;
    if (l == 0) {
      out[i] = {g, g, g};
      continue;
    }
    const Rgb c = palette[l % 6 == 0 ? 5 : l % 6];
    auto mix = [&](uint8_t a, uint8_t b) { return static_cast<uint8_t>((a * 2 + b * 3) / 5); };
    out[i] = {mix(g, c.r), mix(g, c.g), mix(g, c.b)};
  }
  return out;
}

std::vector<Rgb> heat_map(const std::vector<float>& values, double vmax) {
  std::vector<Rgb> out(values.size());
  for (size_t i = 0; i < values.size(); ++i) {
    const double t = vmax > 0 ? std::clamp(values[i] / vmax, 0.0, 1.0) : 0.0;
    const double r = std::clamp(3.0 * t, 0.0, 1.0), g = std::clamp(3.0 * t - 1.0, 0.0, 1.0),
                 b = std::clamp(3.0 * t - 2.0, 0.0, 1.0);
    out[i] = {static_cast<uint8_t>(r * 255), static_cast<uint8_t>(g * 255), static_cast<uint8_t>(b * 255)};
  }
  return out;
}

}  // namespace uda::plots
