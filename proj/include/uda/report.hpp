#pragma once

// Subject-level evaluation of a trained segmenter and the report renderer.
//
// report.json layout:
//   format       "uda-report/1"
//   checkpoint   path of the evaluated checkpoint (or "gt-echo")
//   data         dataset root
//   n_classes    number of classes including background
//   subjects     [{id, n_slices, dice[], hd[], asd[], hd95[], mean_dice,
//                  lv_ml_pred, lv_ml_gt, emd[], regions{Apex,Mid,Base}, notes[]}]
//                hd/asd/hd95 entries are null where a class is empty
//   summary      {n_subjects, class_dice[], mean_dice, sd_dice, mean_hd, mean_asd,
//                 mean_emd, regression{...} | null, bland_altman{...} | null}
//   notes        run-level notices (skipped subjects, skipped statistics)

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "uda/inference.hpp"

namespace uda::report {

namespace fs = std::filesystem;

class ReportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SubjectPrediction {
  std::string id;
  infer::VolumePrediction pred;
};

/// Metrics for already-computed predictions. n_points sizes the reference clouds.
nlohmann::json evaluate_predictions(const std::vector<SubjectPrediction>& subjects, int n_classes, int n_points);

struct EvalOptions {
  /// Use the reference labels and clouds as the prediction (pipeline check).
  bool echo_gt = false;
  /// Target subjects of these splits are evaluated.
  std::vector<std::string> splits{"test"};
  int max_overlays = 3;
};

/// Loads the checkpoint, predicts every selected target subject, writes
/// report.json, the plots and overlay images under out_dir.
nlohmann::json evaluate_run(const fs::path& checkpoint, const fs::path& data_root, const fs::path& out_dir,
                            const EvalOptions& opt = {});

/// Throws ReportError describing the first schema violation.
void validate_report(const nlohmann::json& report);

/// Writes report.md plus the regression, Bland-Altman and EMD box plots
/// derived from the JSON alone; returns the markdown text.
std::string render_report(const nlohmann::json& report, const fs::path& out_dir);

}  // namespace uda::report
