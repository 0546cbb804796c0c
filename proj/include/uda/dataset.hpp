#pragma once

// On-disk subject layout, dataset manifests, and the in-memory slice sets the
// trainer and evaluator consume.
//
// Layout of a generated dataset root:
//   dataset.json                 manifest: subjects, domains, splits
//   source/<id>/image.raw        little-endian float32, slice-major
//   source/<id>/label.raw        uint8, same order
//   source/<id>/meta.json        {subject_id, n_slices, height, width, spacing, domain, n_classes}
//   target/<id>/...

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "uda/pointcloud.hpp"
#include "uda/synthdata.hpp"

namespace uda::data {

namespace fs = std::filesystem;

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void write_subject(const fs::path& dir, const synth::SubjectVolume& vol);
/// Reads image, meta and (when with_labels) label.raw. Without labels the
/// label array is left empty.
synth::SubjectVolume read_subject(const fs::path& dir, bool with_labels = true);

enum class Split { train, val, test };
std::string to_string(Split s);
Split parse_split(const std::string& s);

/// Counts per split for n subjects: val and test rounded to nearest, train
/// takes the remainder.
std::array<int, 3> split_counts(int n, const std::array<double, 3>& fractions);

struct SubjectEntry {
  std::string id;
  synth::Domain domain = synth::Domain::source;
  Split split = Split::train;
};

struct DatasetManifest {
  uint64_t seed = 0;
  std::vector<SubjectEntry> subjects;

  std::vector<std::string> ids(synth::Domain d, Split s) const;
};

void write_manifest(const fs::path& root, const DatasetManifest& m);
DatasetManifest read_manifest(const fs::path& root);
fs::path subject_dir(const fs::path& root, const SubjectEntry& e);

struct GenDataConfig {
  int n_source = 10;
  int n_target = 10;
  std::array<double, 3> split{0.7, 0.1, 0.2};
  synth::PhantomParams phantom;
  synth::DomainShiftConfig shift = synth::DomainShiftConfig::lge_like();
  uint64_t seed = 1;
};

/// Subject ids are "src-000", "tgt-000", ...; source and target phantoms use
/// independent sub-seeds so target anatomy is unpaired.
std::vector<synth::SubjectVolume> generate_subjects(const GenDataConfig& cfg, synth::Domain d);
DatasetManifest generate_dataset(const GenDataConfig& cfg, const fs::path& root);

/// One preprocessed 2D slice. Target training slices carry no labels.
struct Sample {
  std::string subject_id;
  int slice = 0;
  int n_slices = 1;
  synth::Image image;
  std::optional<synth::LabelMap> labels;
  std::optional<pc::PointCloud> cloud;
};

struct SliceOptions {
  int crop_size = 64;
  int n_points = pc::kDefaultPoints;
  bool keep_labels = true;
  /// Drop slices whose label map is all background (only when labels are kept).
  bool skip_empty = true;
};

/// Preprocesses every slice (equalise, normalise, centroid crop). Labels of
/// `vols` are used for the crop window in either case; when keep_labels is
/// false they are discarded afterwards and never reach the sample.
std::vector<Sample> make_samples(const std::vector<synth::SubjectVolume>& vols, const SliceOptions& opt);

}  // namespace uda::data
