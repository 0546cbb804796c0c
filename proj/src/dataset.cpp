#include "uda/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "uda/core/rng.hpp"

namespace uda::data {
namespace {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "raw volume IO assumes a little-endian host");

template <typename T>
void write_raw(const fs::path& p, const std::vector<T>& v) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw DatasetError("cannot write " + p.string());
  os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(T)));
  if (!os) throw DatasetError("short write to " + p.string());
}

template <typename T>
std::vector<T> read_raw(const fs::path& p, size_t count) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw DatasetError("cannot open " + p.string());
  std::vector<T> v(count);
  is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(count * sizeof(T)));
  if (is.gcount() != static_cast<std::streamsize>(count * sizeof(T))) {
    throw DatasetError(p.string() + ": expected " + std::to_string(count * sizeof(T)) + " bytes");
  }
  if (is.peek() != std::char_traits<char>::eof()) throw DatasetError(p.string() + ": trailing bytes");
  return v;
}

json read_json(const fs::path& p) {
  std::ifstream is(p);
  if (!is) throw DatasetError("cannot open " + p.string());
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    throw DatasetError(p.string() + ": " + e.what());
  }
}

void write_json(const fs::path& p, const json& j) {
  std::ofstream os(p);
  if (!os) throw DatasetError("cannot write " + p.string());
  os << j.dump(2) << '\n';
}

}  // namespace

void write_subject(const fs::path& dir, const synth::SubjectVolume& vol) {
  vol.validate();
  fs::create_directories(dir);
  write_raw(dir / "image.raw", vol.image);
  write_raw(dir / "label.raw", vol.labels);
  json meta = {{"subject_id", vol.subject_id},
               {"n_slices", vol.n_slices},
               {"height", vol.height},
               {"width", vol.width},
               {"spacing", {vol.spacing_mm[0], vol.spacing_mm[1], vol.spacing_mm[2]}},
               {"domain", synth::to_string(vol.domain)},
               {"n_classes", vol.n_classes}};
  write_json(dir / "meta.json", meta);
}

synth::SubjectVolume read_subject(const fs::path& dir, bool with_labels) {
  const json meta = read_json(dir / "meta.json");
  synth::SubjectVolume v;
  try {
    v.subject_id = meta.at("subject_id").get<std::string>();
    v.n_slices = meta.at("n_slices").get<int>();
    v.height = meta.at("height").get<int>();
    v.width = meta.at("width").get<int>();
    const auto sp = meta.at("spacing").get<std::vector<double>>();
    if (sp.size() != 3) throw DatasetError("spacing must have three entries");
    v.spacing_mm = {sp[0], sp[1], sp[2]};
    v.domain = synth::parse_domain(meta.at("domain").get<std::string>());
    v.n_classes = meta.at("n_classes").get<int>();
  } catch (const json::exception& e) {
    throw DatasetError((dir / "meta.json").string() + ": " + e.what());
  }
  if (v.n_slices < 1 || v.height < 1 || v.width < 1) throw DatasetError(dir.string() + ": bad dimensions");
  const size_t n = static_cast<size_t>(v.n_slices) * v.plane();
  v.image = read_raw<float>(dir / "image.raw", n);
  if (with_labels) {
    v.labels = read_raw<uint8_t>(dir / "label.raw", n);
    v.validate();
  }
  return v;
}

std::string to_string(Split s) {
  switch (s) {
    case Split::train:
      return "train";
    case Split::val:
      return "val";
    case Split::test:
      return "test";
  }
  return "train";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw DatasetError("unknown split '" + s + "'");
}

std::array<int, 3> split_counts(int n, const std::array<double, 3>& f) {
  if (n < 0) throw DatasetError("negative subject count");
  const double total = f[0] + f[1] + f[2];
  if (!(total > 0.0) || f[0] < 0 || f[1] < 0 || f[2] < 0) throw DatasetError("invalid split fractions");
  const int val = static_cast<int>(std::lround(n * f[1] / total));
  const int test = std::min(n - val, static_cast<int>(std::lround(n * f[2] / total)));
  return {n - val - test, val, test};
}

std::vector<std::string> DatasetManifest::ids(synth::Domain d, Split s) const {
  std::vector<std::string> out;
  for (const auto& e : subjects)
    if (e.domain == d && e.split == s) out.push_back(e.id);
  return out;
}

void write_manifest(const fs::path& root, const DatasetManifest& m) {
  json subj = json::array();
  for (const auto& e : m.subjects) {
    subj.push_back({{"id", e.id}, {"domain", synth::to_string(e.domain)}, {"split", to_string(e.split)}});
  }
  write_json(root / "dataset.json", {{"seed", m.seed}, {"subjects", subj}});
}

DatasetManifest read_manifest(const fs::path& root) {
  const json j = read_json(root / "dataset.json");
  DatasetManifest m;
  try {
    m.seed = j.at("seed").get<uint64_t>();
    for (const auto& e : j.at("subjects")) {
      m.subjects.push_back({e.at("id").get<std::string>(), synth::parse_domain(e.at("domain").get<std::string>()),
                            parse_split(e.at("split").get<std::string>())});
    }
  } catch (const json::exception& e) {
    throw DatasetError((root / "dataset.json").string() + ": " + e.what());
  }
  return m;
}

fs::path subject_dir(const fs::path& root, const SubjectEntry& e) { return root / synth::to_string(e.domain) / e.id; }

std::vector<synth::SubjectVolume> generate_subjects(const GenDataConfig& cfg, synth::Domain d) {
  const bool src = d == synth::Domain::source;
  const int n = src ? cfg.n_source : cfg.n_target;
  synth::PhantomParams p = cfg.phantom;
  p.seed = derive_seed(cfg.seed, src ? "phantom-source" : "phantom-target");
  std::vector<synth::SubjectVolume> out(static_cast<size_t>(n));
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < n; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "%s-%03d", src ? "src" : "tgt", i);
    synth::SubjectVolume v = synth::gen_subject(p, id);
    if (!src) {
      synth::DomainShiftConfig s = cfg.shift;
      s.seed = derive_seed(cfg.shift.seed, "shift", static_cast<uint64_t>(i));
      v = synth::apply_domain_shift(v, s);
    }
    out[static_cast<size_t>(i)] = std::move(v);
  }
  return out;
}

DatasetManifest generate_dataset(const GenDataConfig& cfg, const fs::path& root) {
  DatasetManifest m;
  m.seed = cfg.seed;
  for (auto d : {synth::Domain::source, synth::Domain::target}) {
    const auto vols = generate_subjects(cfg, d);
    const auto counts = split_counts(static_cast<int>(vols.size()), cfg.split);
    for (size_t i = 0; i < vols.size(); ++i) {
      const int k = static_cast<int>(i);
      const Split s = k < counts[0] ? Split::train : (k < counts[0] + counts[1] ? Split::val : Split::test);
      SubjectEntry e{vols[i].subject_id, d, s};
      write_subject(subject_dir(root, e), vols[i]);
      m.subjects.push_back(e);
    }
  }
  write_manifest(root, m);
  return m;
}

std::vector<Sample> make_samples(const std::vector<synth::SubjectVolume>& vols, const SliceOptions& opt) {
  std::vector<Sample> out;
  for (const auto& v : vols) {
    if (v.labels.empty()) throw DatasetError(v.subject_id + ": labels required for the crop window");
    for (int z = 0; z < v.n_slices; ++z) {
      const auto lab = synth::slice_labels(v, z);
      const bool empty = std::all_of(lab.px.begin(), lab.px.end(), [](uint8_t c) { return c == 0; });
      if (opt.keep_labels && opt.skip_empty && empty) continue;
      auto [img, mask] = synth::preprocess(synth::slice_image(v, z), lab, opt.crop_size);
      Sample s;
      s.subject_id = v.subject_id;
      s.slice = z;
      s.n_slices = v.n_slices;
      s.image = std::move(img);
      if (opt.keep_labels) {
        if (!empty) s.cloud = pc::make_gt_pointcloud(mask, z, v.n_slices, opt.n_points);
        s.labels = std::move(mask);
      }
      out.push_back(std::move(s));
    }
  }
  return out;
}

}  // namespace uda::data
