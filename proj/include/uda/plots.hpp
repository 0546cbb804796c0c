#pragma once

// Dependency-free figure writers: SVG charts and binary PPM images.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace uda::plots {

struct Series {
  std::vector<double> x;
  std::vector<double> y;
};

struct Line {
  double x0, y0, x1, y1;
  bool dashed = false;
};

/// Scatter plot with optional overlay lines; axes fit the data and lines.
void scatter_svg(const std::filesystem::path& path, const std::string& title, const std::string& xlabel,
                 const std::string& ylabel, const Series& points, const std::vector<Line>& lines);

/// One box (quartiles, 1.5 IQR whiskers, outliers) per group.
void boxplot_svg(const std::filesystem::path& path, const std::string& title, const std::string& ylabel,
                 const std::vector<std::string>& names, const std::vector<std::vector<double>>& groups);

struct Rgb {
  uint8_t r = 0, g = 0, b = 0;
};

/// Binary P6 image, row-major.
void write_ppm(const std::filesystem::path& path, int height, int width, const std::vector<Rgb>& px);

/// Gray image with label colours blended on top (label 0 left unchanged).
std::vector<Rgb> label_overlay(const std::vector<float>& gray, const std::vector<uint8_t>& labels);

/// Scalar map in [0, vmax] through a black-red-yellow-white ramp.
std::vector<Rgb> heat_map(const std::vector<float>& values, double vmax);

/// Quartiles by linear interpolation between order statistics.
std::array<double, 3> quartiles(std::vector<double> v);

}  // namespace uda::plots
