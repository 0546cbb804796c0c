#include <gtest/gtest.h>

#include <unistd.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "uda/dataset.hpp"

using namespace uda;
using namespace uda::data;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("uda_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

GenDataConfig tiny(uint64_t seed) {
  GenDataConfig c;
  c.n_source = 4;
  c.n_target = 4;
  c.phantom.image_size = 40;
  c.phantom.n_slices = 4;
  c.seed = seed;
  return c;
}

}  // namespace

TEST(Splits, CountsFollowFractions) {
  EXPECT_EQ(split_counts(10, {0.7, 0.1, 0.2}), (std::array<int, 3>{7, 1, 2}));
  EXPECT_EQ(split_counts(4, {0.7, 0.1, 0.2}), (std::array<int, 3>{3, 0, 1}));
  const auto c = split_counts(28, {0.7, 0.1, 0.2});
  EXPECT_EQ(c[0] + c[1] + c[2], 28);
  EXPECT_EQ(parse_split("val"), Split::val);
  EXPECT_EQ(to_string(Split::test), "test");
}

TEST(SubjectIo, RoundTripAndMetaSchema) {
  const fs::path dir = temp_dir("io");
  synth::PhantomParams p;
  p.image_size = 24;
  p.n_slices = 3;
  const auto v = synth::gen_subject(p, "src-001");
  write_subject(dir / "s", v);
  const auto back = read_subject(dir / "s");
  EXPECT_EQ(back.image, v.image);
  EXPECT_EQ(back.labels, v.labels);
  EXPECT_EQ(back.subject_id, "src-001");
  EXPECT_EQ(back.spacing_mm, v.spacing_mm);
  EXPECT_EQ(fs::file_size(dir / "s" / "image.raw"), v.image.size() * 4);
  EXPECT_EQ(fs::file_size(dir / "s" / "label.raw"), v.labels.size());
  // The first float is stored little-endian.
  const std::string raw = slurp(dir / "s" / "image.raw");
  float first = 0.0f;
  std::memcpy(&first, raw.data(), 4);
  EXPECT_EQ(first, v.image[0]);

  const auto meta = nlohmann::json::parse(slurp(dir / "s" / "meta.json"));
  for (const char* k : {"subject_id", "n_slices", "height", "width", "spacing", "domain", "n_classes"})
    EXPECT_TRUE(meta.contains(k)) << k;
  EXPECT_TRUE(meta["subject_id"].is_string());
  EXPECT_TRUE(meta["n_slices"].is_number_integer());
  EXPECT_TRUE(meta["spacing"].is_array());
  EXPECT_EQ(meta["spacing"].size(), 3u);
  EXPECT_EQ(meta["domain"], "source");

  const auto nolab = read_subject(dir / "s", false);
  EXPECT_TRUE(nolab.labels.empty());
  fs::remove(dir / "s" / "label.raw");
  EXPECT_THROW(read_subject(dir / "s"), DatasetError);
  fs::remove_all(dir);
}

TEST(Generate, DeterministicTreesAndManifest) {
  const fs::path a = temp_dir("gen_a"), b = temp_dir("gen_b");
  const auto m = generate_dataset(tiny(7), a);
  generate_dataset(tiny(7), b);
  size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    ++files;
    const fs::path rel = fs::relative(e.path(), a);
    ASSERT_TRUE(fs::exists(b / rel)) << rel;
    EXPECT_EQ(slurp(e.path()), slurp(b / rel)) << rel;
  }
  EXPECT_EQ(files, 1u + 8u * 3u);
  const auto back = read_manifest(a);
  EXPECT_EQ(back.subjects.size(), 8u);
  EXPECT_EQ(back.ids(synth::Domain::source, Split::train).size(), 3u);
  EXPECT_EQ(back.ids(synth::Domain::target, Split::test).size(), 1u);
  EXPECT_EQ(m.subjects.front().id, "src-000");
  // Source and target anatomy are unpaired.
  const auto s0 = read_subject(a / "source" / "src-000");
  const auto t0 = read_subject(a / "target" / "tgt-000");
  EXPECT_NE(s0.labels, t0.labels);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Samples, TargetSamplesCarryNoLabels) {
  auto cfg = tiny(3);
  const auto src = generate_subjects(cfg, synth::Domain::source);
  const auto tgt = generate_subjects(cfg, synth::Domain::target);
  SliceOptions opt;
  opt.crop_size = 32;
  opt.n_points = 20;
  const auto ss = make_samples(src, opt);
  ASSERT_FALSE(ss.empty());
  for (const auto& s : ss) {
    ASSERT_TRUE(s.labels.has_value());
    ASSERT_TRUE(s.cloud.has_value());
    EXPECT_EQ(s.cloud->size(), 20u);
    EXPECT_EQ(s.image.height, 32);
    bool any = false;
    for (uint8_t l : s.labels->px) any |= l != 0;
    EXPECT_TRUE(any);
  }
  opt.keep_labels = false;
  const auto ts = make_samples(tgt, opt);
  EXPECT_EQ(ts.size(), tgt.size() * static_cast<size_t>(cfg.phantom.n_slices));
  for (const auto& s : ts) {
    EXPECT_FALSE(s.labels.has_value());
    EXPECT_FALSE(s.cloud.has_value());
    for (float v : s.image.px) {
      EXPECT_GE(v, 0.0f);
      EXPECT_LE(v, 1.0f);
    }
  }
}
