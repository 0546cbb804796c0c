#include "uda/report.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "uda/dataset.hpp"
#include "uda/eval.hpp"
#include "uda/plots.hpp"
#include "uda/train.hpp"

namespace uda::report {
namespace {

using nlohmann::json;

json nullable(double v, bool ok) { return ok ? json(v) : json(nullptr); }

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

std::string fmt(double v, const char* f = "%.4f") {
  char buf[48];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string fmt_json(const json& v) { return v.is_number() ? fmt(v.get<double>()) : std::string("n/a"); }

json subject_metrics(const SubjectPrediction& s, int n_classes, int n_points, std::vector<std::string>& notes) {
  const auto& p = s.pred;
  json j;
  j["id"] = s.id;
  j["n_slices"] = p.dims.nz;
  j["notes"] = json::array();
  std::vector<double> dice;
  json hd = json::array(), asd = json::array(), hd95 = json::array();
  for (int c = 1; c < n_classes; ++c) {
    const auto cls = static_cast<uint8_t>(c);
    dice.push_back(eval::dice(p.pred, p.gt, cls));
    const bool in_p = std::find(p.pred.begin(), p.pred.end(), cls) != p.pred.end();
    const bool in_g = std::find(p.gt.begin(), p.gt.end(), cls) != p.gt.end();
    if (in_p && in_g) {
      const auto sd = eval::surface_distances(p.pred, p.gt, p.dims, p.spacing, cls, s.id);
      hd.push_back(sd.hd);
      asd.push_back(sd.asd);
      hd95.push_back(sd.hd95);
    } else {
      hd.push_back(nullptr);
      asd.push_back(nullptr);
      hd95.push_back(nullptr);
      j["notes"].push_back("class " + std::to_string(c) + " empty in " + (in_g ? "prediction" : "reference") +
                           "; surface distances skipped");
    }
  }
  j["dice"] = dice;
  j["hd"] = hd;
  j["asd"] = asd;
  j["hd95"] = hd95;
  j["mean_dice"] = mean_of(dice);
  j["lv_ml_pred"] = eval::lv_volume_ml(p.pred, p.spacing, synth::kLV);
  j["lv_ml_gt"] = eval::lv_volume_ml(p.gt, p.spacing, synth::kLV);

  json regions = json::object();
  if (p.dims.nz >= 3) {
    const auto rep = eval::slicewise_report(p.pred, p.gt, p.dims, p.spacing, n_classes);
    for (int r = 0; r < 3; ++r) {
      const auto& m = rep.regions[r];
      regions[eval::to_string(static_cast<eval::Region>(r))] = {
          {"dice", nullable(m.dice, m.slices > 0)}, {"hd", nullable(m.hd, m.hd_slices > 0)}, {"slices", m.slices}};
    }
    for (const auto& n : rep.notes) j["notes"].push_back(n);
  } else {
    j["notes"].push_back("fewer than 3 slices; regional metrics skipped");
  }
  j["regions"] = regions;

  std::vector<double> emd;
  const size_t plane = static_cast<size_t>(p.dims.ny) * p.dims.nx;
  for (int z = 0; z < p.dims.nz; ++z) {
    synth::LabelMap lm{p.dims.ny, p.dims.nx, std::vector<uint8_t>(p.gt.begin() + z * plane, p.gt.begin() + (z + 1) * plane)};
    if (std::all_of(lm.px.begin(), lm.px.end(), [](uint8_t v) { return v == 0; })) continue;
    if (static_cast<size_t>(z) >= p.clouds.size()) break;
    const auto ref = pc::make_gt_pointcloud(lm, z, p.dims.nz, n_points);
    if (ref.size() != p.clouds[z].size()) {
      notes.push_back("subject " + s.id + ": predicted cloud size differs from reference; EMD skipped");
      break;
    }
    emd.push_back(pc::emd(p.clouds[z], ref).cost);
  }
  j["emd"] = emd;
  return j;
}

void write_overlays(const SubjectPrediction& s, const fs::path& dir) {
  const auto& p = s.pred;
  const int z = p.dims.nz / 2;
  const size_t plane = static_cast<size_t>(p.dims.ny) * p.dims.nx;
  const auto slice = [&](const auto& v) {
    using T = typename std::decay_t<decltype(v)>::value_type;
    return std::vector<T>(v.begin() + z * plane, v.begin() + (z + 1) * plane);
  };
  const auto img = slice(p.image);
  plots::write_ppm(dir / (s.id + "_pred.ppm"), p.dims.ny, p.dims.nx, plots::label_overlay(img, slice(p.pred)));
  plots::write_ppm(dir / (s.id + "_gt.ppm"), p.dims.ny, p.dims.nx, plots::label_overlay(img, slice(p.gt)));
  if (!p.entropy.empty()) {
    plots::write_ppm(dir / (s.id + "_entropy.ppm"), p.dims.ny, p.dims.nx, plots::heat_map(slice(p.entropy), std::log(4.0)));
  }
}

}  // namespace

json evaluate_predictions(const std::vector<SubjectPrediction>& subjects, int n_classes, int n_points) {
  json r;
  r["format"] = "uda-report/1";
  r["n_classes"] = n_classes;
  r["subjects"] = json::array();
  r["notes"] = json::array();
  std::vector<std::string> notes;
  std::vector<double> means, hds, asds, emds, lv_p, lv_g;
  std::vector<double> class_dice(static_cast<size_t>(std::max(0, n_classes - 1)), 0.0);
  for (const auto& s : subjects) {
    json j = subject_metrics(s, n_classes, n_points, notes);
    means.push_back(j["mean_dice"]);
    for (size_t c = 0; c < class_dice.size(); ++c) class_dice[c] += j["dice"][c].get<double>() / subjects.size();
    for (const auto& v : j["hd"])
      if (v.is_number()) hds.push_back(v);
    for (const auto& v : j["asd"])
      if (v.is_number()) asds.push_back(v);
    for (const auto& v : j["emd"]) emds.push_back(v);
    lv_p.push_back(j["lv_ml_pred"]);
    lv_g.push_back(j["lv_ml_gt"]);
    r["subjects"].push_back(std::move(j));
  }
  json sum;
  sum["n_subjects"] = subjects.size();
  sum["class_dice"] = class_dice;
  sum["mean_dice"] = mean_of(means);
  double ss = 0.0;
  for (double m : means) ss += (m - mean_of(means)) * (m - mean_of(means));
  sum["sd_dice"] = means.size() > 1 ? std::sqrt(ss / (means.size() - 1)) : 0.0;
  sum["mean_hd"] = nullable(mean_of(hds), !hds.empty());
  sum["mean_asd"] = nullable(mean_of(asds), !asds.empty());
  sum["mean_emd"] = nullable(mean_of(emds), !emds.empty());
  sum["regression"] = nullptr;
  sum["bland_altman"] = nullptr;
  try {
    const auto reg = eval::linear_regression(lv_p, lv_g);
    sum["regression"] = {{"slope", reg.slope}, {"intercept", reg.intercept}, {"r2", reg.r2}, {"p_value", reg.p_value},
                         {"n", reg.n}};
  } catch (const eval::MetricError& e) {
    notes.push_back(std::string("LV volume regression skipped: ") + e.what());
  }
  try {
    const auto ba = eval::bland_altman(lv_p, lv_g);
    sum["bland_altman"] = {{"mean_diff", ba.mean_diff}, {"sd", ba.sd}, {"loa_low", ba.loa_low}, {"loa_high", ba.loa_high}};
  } catch (const eval::MetricError& e) {
    notes.push_back(std::string("Bland-Altman skipped: ") + e.what());
  }
  r["summary"] = sum;
  for (auto& n : notes) r["notes"].push_back(n);
  return r;
}

json evaluate_run(const fs::path& checkpoint, const fs::path& data_root, const fs::path& out_dir,
                  const EvalOptions& opt) {
  std::optional<train::Trainer> tr;
  int n_classes = synth::kPhantomClasses, crop = 0, n_points = pc::kDefaultPoints;
  if (!opt.echo_gt) {
    const auto cfg = train::checkpoint_config(checkpoint);
    tr.emplace(cfg);
    tr->load(checkpoint);
    n_classes = cfg.n_classes;
    crop = cfg.image_size;
    n_points = cfg.n_points;
  }
  const auto manifest = data::read_manifest(data_root);
  std::vector<SubjectPrediction> preds;
  std::vector<std::string> notes;
  for (const auto& e : manifest.subjects) {
    if (e.domain != synth::Domain::target) continue;
    if (std::find(opt.splits.begin(), opt.splits.end(), data::to_string(e.split)) == opt.splits.end()) continue;
    const fs::path dir = data::subject_dir(data_root, e);
    if (!fs::exists(dir / "label.raw")) {
      notes.push_back("subject " + e.id + " has no labels; metrics skipped");
      continue;
    }
    const auto vol = data::read_subject(dir);
    SubjectPrediction sp;
    sp.id = e.id;
    if (opt.echo_gt) {
      n_classes = vol.n_classes;
      const int size = crop > 0 ? crop : std::min(vol.height, vol.width);
      crop = size;
      auto& p = sp.pred;
      p.dims = {vol.n_slices, size, size};
      p.spacing = vol.spacing_mm;
      for (int z = 0; z < vol.n_slices; ++z) {
        auto [img, mask] = synth::preprocess(synth::slice_image(vol, z), synth::slice_labels(vol, z), size);
        p.gt.insert(p.gt.end(), mask.px.begin(), mask.px.end());
        p.image.insert(p.image.end(), img.px.begin(), img.px.end());
        const bool empty = std::all_of(mask.px.begin(), mask.px.end(), [](uint8_t v) { return v == 0; });
        p.clouds.push_back(empty ? pc::PointCloud{} : pc::make_gt_pointcloud(mask, z, vol.n_slices, n_points));
      }
      p.pred = p.gt;
      p.entropy.assign(p.gt.size(), 0.0f);
    } else {
      sp.pred = infer::predict_volume(tr->segmenter(), vol, crop);
    }
    preds.push_back(std::move(sp));
  }
  if (preds.empty()) notes.push_back("no labelled target subjects in the selected splits");
  json r = evaluate_predictions(preds, n_classes, n_points);
  r["checkpoint"] = opt.echo_gt ? std::string("gt-echo") : checkpoint.string();
  r["data"] = data_root.string();
  for (auto& n : notes) r["notes"].push_back(n);

  fs::create_directories(out_dir);
  std::ofstream(out_dir / "report.json") << r.dump(2) << '\n';
  for (size_t i = 0; i < preds.size() && static_cast<int>(i) < opt.max_overlays; ++i) write_overlays(preds[i], out_dir);
  render_report(r, out_dir);
  return r;
}

void validate_report(const json& r) {
  auto need = [](bool ok, const std::string& what) {
    if (!ok) throw ReportError("report schema: " + what);
  };
  need(r.is_object(), "top level must be an object");
  need(r.value("format", "") == "uda-report/1", "unknown format");
  need(r.contains("n_classes") && r["n_classes"].is_number_integer(), "n_classes missing");
  need(r.contains("subjects") && r["subjects"].is_array(), "subjects missing");
  need(r.contains("summary") && r["summary"].is_object(), "summary missing");
  need(r.contains("notes") && r["notes"].is_array(), "notes missing");
  const size_t nc = r["n_classes"].get<size_t>();
  for (const auto& s : r["subjects"]) {
    for (const char* k : {"id", "n_slices", "dice", "hd", "asd", "hd95", "mean_dice", "lv_ml_pred", "lv_ml_gt", "emd",
                          "regions", "notes"})
      need(s.contains(k), std::string("subject field ") + k + " missing");
    need(s["dice"].is_array() && s["dice"].size() + 1 == nc, "dice must list every foreground class");
  }
  for (const char* k : {"n_subjects", "class_dice", "mean_dice", "sd_dice", "mean_hd", "mean_asd", "mean_emd",
                        "regression", "bland_altman"})
    need(r["summary"].contains(k), std::string("summary field ") + k + " missing");
}

std::string render_report(const json& r, const fs::path& out_dir) {
  validate_report(r);
  fs::create_directories(out_dir);
  const auto& sum = r["summary"];
  std::ostringstream md;
  md << "# Evaluation report\n\n";
  md << "- checkpoint: `" << r.value("checkpoint", "?") << "`\n";
  md << "- data: `" << r.value("data", "?") << "`\n";
  md << "- subjects: " << sum["n_subjects"].get<int>() << "\n\n";
  md << "| subject | mean Dice |";
  const int nc = r["n_classes"].get<int>();
  for (int c = 1; c < nc; ++c) md << " Dice " << c << " | HD " << c << " | ASD " << c << " |";
  md << " LV pred ml | LV ref ml | mean EMD |\n|---|---|";
  for (int c = 1; c < nc; ++c) md << "---|---|---|";
  md << "---|---|---|\n";
  std::vector<double> lv_p, lv_g;
  std::vector<std::vector<double>> emd_groups;
  std::vector<std::string> names;
  for (const auto& s : r["subjects"]) {
    md << "| " << s["id"].get<std::string>() << " | " << fmt(s["mean_dice"]) << " |";
    for (int c = 0; c + 1 < nc; ++c)
      md << ' ' << fmt_json(s["dice"][c]) << " | " << fmt_json(s["hd"][c]) << " | " << fmt_json(s["asd"][c]) << " |";
    const auto emd = s["emd"].get<std::vector<double>>();
    md << ' ' << fmt(s["lv_ml_pred"], "%.2f") << " | " << fmt(s["lv_ml_gt"], "%.2f") << " | "
       << (emd.empty() ? std::string("n/a") : fmt(mean_of(emd))) << " |\n";
    lv_p.push_back(s["lv_ml_pred"]);
    lv_g.push_back(s["lv_ml_gt"]);
    emd_groups.push_back(emd);
    names.push_back(s["id"]);
  }
  md << "\n## Summary\n\n";
  md << "- mean Dice: " << fmt(sum["mean_dice"]) << " (sd " << fmt(sum["sd_dice"]) << ")\n";
  md << "- per-class Dice:";
  for (const auto& d : sum["class_dice"]) md << ' ' << fmt(d);
  md << "\n- mean HD (mm): " << fmt_json(sum["mean_hd"]) << "\n- mean ASD (mm): " << fmt_json(sum["mean_asd"])
     << "\n- mean EMD: " << fmt_json(sum["mean_emd"]) << '\n';
  if (sum["regression"].is_object()) {
    const auto& g = sum["regression"];
    md << "- LV volume fit: pred = " << fmt(g["slope"]) << " * ref + " << fmt(g["intercept"]) << ", R^2 "
       << fmt(g["r2"]) << ", p " << fmt(g["p_value"], "%.3g") << '\n';
    const double lo = *std::min_element(lv_g.begin(), lv_g.end()), hi = *std::max_element(lv_g.begin(), lv_g.end());
    const double a = g["slope"], b = g["intercept"];
    plots::scatter_svg(out_dir / "regression.svg", "LV volume", "reference (ml)", "predicted (ml)", {lv_g, lv_p},
                       {{lo, a * lo + b, hi, a * hi + b, false}, {lo, lo, hi, hi, true}});
  }
  if (sum["bland_altman"].is_object()) {
    const auto& ba = sum["bland_altman"];
    md << "- Bland-Altman: mean difference " << fmt(ba["mean_diff"]) << " ml, limits [" << fmt(ba["loa_low"]) << ", "
       << fmt(ba["loa_high"]) << "]\n";
    plots::Series s;
    for (size_t i = 0; i < lv_p.size(); ++i) {
      s.x.push_back(0.5 * (lv_p[i] + lv_g[i]));
      s.y.push_back(lv_p[i] - lv_g[i]);
    }
    const double lo = *std::min_element(s.x.begin(), s.x.end()), hi = *std::max_element(s.x.begin(), s.x.end());
    const double md_ = ba["mean_diff"], l = ba["loa_low"], u = ba["loa_high"];
    plots::scatter_svg(out_dir / "bland_altman.svg", "Bland-Altman, LV volume", "mean of pred and ref (ml)",
                       "pred - ref (ml)", s, {{lo, md_, hi, md_, false}, {lo, l, hi, l, true}, {lo, u, hi, u, true}});
  }
  if (!emd_groups.empty()) plots::boxplot_svg(out_dir / "emd_box.svg", "Per-slice EMD", "EMD", names, emd_groups);
  if (!r["notes"].empty()) {
    md << "\n## Notes\n\n";
    for (const auto& n : r["notes"]) md << "- " << n.get<std::string>() << '\n';
  }
  for (const auto& s : r["subjects"])
    for (const auto& n : s["notes"]) md << "- " << s["id"].get<std::string>() << ": " << n.get<std::string>() << '\n';
  const std::string text = md.str();
  std::ofstream(out_dir / "report.md") << text;
  return text;
}

}  // namespace uda::report
