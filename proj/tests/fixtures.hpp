#pragma once

// Small training configurations and in-memory datasets shared by the
// training tests and the acceptance runner.

#include <filesystem>
#include <string>
#include <unistd.h>

#include "uda/dataset.hpp"
#include "uda/train.hpp"

namespace fixtures {

namespace fs = std::filesystem;

/// Toy-sized network: 32x32 crops, base width 4, narrow critics.
inline uda::train::TrainConfig tiny_config(uint64_t seed = 1) {
  uda::train::TrainConfig c;
  c.seed = seed;
  c.epochs = 2;
  c.batch_size = 4;
  c.image_size = 32;
  c.base_width = 4;
  c.n_points = 16;
  c.d_widths = {8, 16, 16, 16, 1};
  c.pointnet.tnet_widths = {8, 16};
  c.pointnet.tnet_fc = {8};
  c.pointnet.point_widths = {8};
  c.pointnet.feature_widths = {8, 16};
  c.pointnet.fc_widths = {8};
  c.checkpoint_every = 1;
  return c;
}

struct Toy {
  uda::train::TrainData data;
  std::vector<uda::synth::SubjectVolume> target_test;
};

/// n_src labelled source subjects, n_tgt unlabelled target training subjects
/// and n_test labelled held-out target subjects.
inline Toy make_toy(int n_src, int n_tgt, int n_test, int image, int slices, int n_points, uint64_t seed) {
  uda::data::GenDataConfig g;
  g.n_source = n_src;
  g.n_target = n_tgt + n_test;
  g.phantom.image_size = image;
  g.phantom.n_slices = slices;
  g.seed = seed;
  auto src = uda::data::generate_subjects(g, uda::synth::Domain::source);
  auto tgt = uda::data::generate_subjects(g, uda::synth::Domain::target);
  Toy t;
  t.target_test.assign(tgt.begin() + n_tgt, tgt.end());
  tgt.resize(static_cast<size_t>(n_tgt));
  uda::data::SliceOptions so;
  so.crop_size = image;
  so.n_points = n_points;
  t.data.source = uda::data::make_samples(src, so);
  so.keep_labels = false;
  t.data.target = uda::data::make_samples(tgt, so);
  return t;
}

inline fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("uda_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace fixtures
