#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "uda/plots.hpp"
#include "uda/report.hpp"

using namespace uda;
using nlohmann::json;

namespace {

constexpr int kZ = 4, kN = 16;

/// Square of side `s` for `cls` centred in each slice, optionally shifted in x.
std::vector<uint8_t> squares(int s, uint8_t cls, int shift = 0) {
  std::vector<uint8_t> v(static_cast<size_t>(kZ) * kN * kN, 0);
  const int lo = (kN - s) / 2;
  for (int z = 0; z < kZ; ++z)
    for (int y = lo; y < lo + s; ++y)
      for (int x = lo + shift; x < lo + s + shift; ++x) v[(z * kN + y) * kN + x] = cls;
  return v;
}

report::SubjectPrediction subject(const std::string& id, int gt_side, int pred_side) {
  report::SubjectPrediction s;
  s.id = id;
  auto& p = s.pred;
  p.dims = {kZ, kN, kN};
  p.spacing = {8.0, 1.25, 1.25};
  p.gt = squares(gt_side, synth::kLV);
  p.pred = squares(pred_side, synth::kLV);
  p.image.assign(p.gt.size(), 0.5f);
  p.entropy.assign(p.gt.size(), 0.1f);
  return s;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Report, SubjectMetricsMatchIndependentCounts) {
  const std::vector<report::SubjectPrediction> subs{subject("a", 6, 6), subject("b", 8, 6), subject("c", 10, 8),
                                                     subject("d", 4, 6)};
  const json r = report::evaluate_predictions(subs, 4, 16);
  ASSERT_NO_THROW(report::validate_report(r));
  ASSERT_EQ(r["subjects"].size(), 4u);
  const double voxel_ml = 8.0 * 1.25 * 1.25 / 1000.0;
  std::vector<double> lp, lg;
  for (size_t i = 0; i < subs.size(); ++i) {
    const auto& s = r["subjects"][i];
    const auto& p = subs[i].pred;
    EXPECT_NEAR(s["dice"][0].get<double>(), oracle::dice(p.pred, p.gt, 1), 1e-12);
    // Myocardium and RV are absent from both maps: Dice 1, no surface distances.
    EXPECT_EQ(s["dice"][1].get<double>(), 1.0);
    EXPECT_TRUE(s["hd"][1].is_null());
    const auto o = oracle::surface(p.pred, p.gt, kZ, kN, kN, p.spacing);
    EXPECT_NEAR(s["hd"][0].get<double>(), o.hd, 1e-9);
    EXPECT_NEAR(s["asd"][0].get<double>(), o.asd, 1e-9);
    const double ng = std::count(p.gt.begin(), p.gt.end(), 1), np = std::count(p.pred.begin(), p.pred.end(), 1);
    EXPECT_NEAR(s["lv_ml_gt"].get<double>(), ng * voxel_ml, 1e-12);
    EXPECT_NEAR(s["lv_ml_pred"].get<double>(), np * voxel_ml, 1e-12);
    lp.push_back(np * voxel_ml);
    lg.push_back(ng * voxel_ml);
    EXPECT_TRUE(s["regions"].contains("Apex"));
    EXPECT_EQ(s["emd"].size(), 0u);  // no predicted clouds supplied
  }
  // Least-squares slope of pred on gt, computed directly.
  double mx = 0, my = 0;
  for (size_t i = 0; i < 4; ++i) mx += lg[i] / 4, my += lp[i] / 4;
  double sxy = 0, sxx = 0;
  for (size_t i = 0; i < 4; ++i) sxy += (lg[i] - mx) * (lp[i] - my), sxx += (lg[i] - mx) * (lg[i] - mx);
  ASSERT_TRUE(r["summary"]["regression"].is_object());
  EXPECT_NEAR(r["summary"]["regression"]["slope"].get<double>(), sxy / sxx, 1e-9);
  EXPECT_NEAR(r["summary"]["bland_altman"]["mean_diff"].get<double>(), my - mx, 1e-12);
}

TEST(Report, EmptyPredictionIsNotedNotInvented) {
  auto s = subject("e", 6, 6);
  std::fill(s.pred.pred.begin(), s.pred.pred.end(), 0);
  const json r = report::evaluate_predictions({s}, 4, 16);
  const auto& j = r["subjects"][0];
  EXPECT_EQ(j["dice"][0].get<double>(), 0.0);
  EXPECT_TRUE(j["hd"][0].is_null());
  EXPECT_FALSE(j["notes"].empty());
  // One subject: both agreement statistics are skipped with a note.
  EXPECT_TRUE(r["summary"]["regression"].is_null());
  EXPECT_TRUE(r["summary"]["bland_altman"].is_null());
  EXPECT_GE(r["notes"].size(), 2u);
}

TEST(Report, RenderWritesMarkdownAndPlots) {
  const auto dir = fixtures::temp_dir("render");
  const json r = report::evaluate_predictions({subject("a", 6, 6), subject("b", 8, 6), subject("c", 10, 8)}, 4, 16);
  const std::string md = report::render_report(r, dir);
  EXPECT_EQ(slurp(dir / "report.md"), md);
  EXPECT_NE(md.find("Dice"), std::string::npos);
  for (const char* f : {"regression.svg", "bland_altman.svg", "emd_box.svg"}) {
    ASSERT_TRUE(std::filesystem::exists(dir / f)) << f;
    EXPECT_EQ(slurp(dir / f).rfind("<svg", 0), 0u) << f;
  }
  std::filesystem::remove_all(dir);
}

TEST(Report, SchemaViolationsAreRejected) {
  const json good = report::evaluate_predictions({subject("a", 6, 6)}, 4, 16);
  EXPECT_NO_THROW(report::validate_report(good));
  auto bad = good;
  bad["format"] = "v0";
  EXPECT_THROW(report::validate_report(bad), report::ReportError);
  bad = good;
  bad["summary"].erase("mean_dice");
  EXPECT_THROW(report::validate_report(bad), report::ReportError);
  bad = good;
  bad["subjects"][0]["dice"].erase(0);
  EXPECT_THROW(report::validate_report(bad), report::ReportError);
  EXPECT_THROW(report::validate_report(json::array()), report::ReportError);
}

TEST(Plots, QuartilesInterpolateOrderStatistics) {
  const auto q = plots::quartiles({4, 1, 3, 2});
  EXPECT_DOUBLE_EQ(q[0], 1.75);
  EXPECT_DOUBLE_EQ(q[1], 2.5);
  EXPECT_DOUBLE_EQ(q[2], 3.25);
  const auto one = plots::quartiles({5});
  EXPECT_EQ(one, (std::array<double, 3>{5, 5, 5}));
}

TEST(Plots, PpmHeaderAndPixels) {
  const auto dir = fixtures::temp_dir("ppm");
  const std::vector<plots::Rgb> px{{1, 2, 3}, {4, 5, 6}, {7, 8, 9}, {10, 11, 12}, {13, 14, 15}, {16, 17, 18}};
  plots::write_ppm(dir / "a.ppm", 2, 3, px);
  const std::string s = slurp(dir / "a.ppm");
  const std::string header = "P6\n3 2\n255\n";
  ASSERT_EQ(s.size(), header.size() + 18);
  EXPECT_EQ(s.substr(0, header.size()), header);
  EXPECT_EQ(static_cast<uint8_t>(s[header.size() + 17]), 18);
  std::filesystem::remove_all(dir);
}

TEST(Plots, ColourMaps) {
  const auto h = plots::heat_map({0.0f, 2.0f, 9.0f}, 2.0);
  EXPECT_EQ(h[0].r + h[0].g + h[0].b, 0);
  EXPECT_EQ(h[1].r, 255);
  EXPECT_EQ(h[1].g, 255);
  EXPECT_EQ(h[1].b, 255);
  EXPECT_EQ(h[2].b, 255);  // clamped
  const auto o = plots::label_overlay({0.5f, 0.5f}, {0, 1});
  EXPECT_EQ(o[0].r, o[0].g);
  EXPECT_NE(o[1].r, o[1].g);
}
