// Command-line entry point: dataset generation, point-cloud utilities,
// training, ablation sweeps, evaluation and report rendering.

#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>

#include "uda/config.hpp"
#include "uda/dataset.hpp"
#include "uda/pointcloud.hpp"
#include "uda/report.hpp"
#include "uda/train.hpp"
#include "uda_version.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace uda;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

/// Raised for invalid combinations that CLI11 cannot see (exit code 2).
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string now_iso() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

fs::path output_root() {
  const char* env = std::getenv("UDA_OUTPUT_ROOT");
  return env && *env ? fs::path(env) : fs::path("runs");
}

/// Refuses a non-empty directory unless forced; creates it otherwise.
void prepare_out(const fs::path& dir, bool force) {
  if (fs::exists(dir) && !fs::is_directory(dir)) throw std::runtime_error(dir.string() + " exists and is not a directory");
  if (fs::exists(dir) && !fs::is_empty(dir) && !force) {
    throw std::runtime_error("output directory " + dir.string() + " is not empty (use --force to overwrite)");
  }
  fs::create_directories(dir);
}

struct RunManifest {
  json j;
  fs::path path;

  RunManifest(const std::string& command, const std::vector<std::string>& argv, const fs::path& out,
              const std::string& config_path, const config::KeyValues& resolved, uint64_t seed)
      : path(out / "run.json") {
    j = {{"command", command},
         {"argv", argv},
         {"config_path", config_path},
         {"config", resolved},
         {"seed", seed},
         {"started_at", now_iso()},
         {"code_hash", UDA_CODE_HASH},
         {"output_dir", out.string()},
         {"status", "running"}};
    write();
  }
  void finish(const std::string& status) {
    j["status"] = status;
    j["finished_at"] = now_iso();
    write();
  }
  void write() const { std::ofstream(path) << j.dump(2) << '\n'; }
};

config::KeyValues layered(const std::string& file, const std::vector<std::string>& sets, config::KeyValues& file_kv) {
  file_kv = file.empty() ? config::KeyValues{} : config::load(file);
  config::KeyValues over;
  for (const auto& s : sets) {
    const auto [k, v] = config::parse_assignment(s);
    over[k] = v;
  }
  return over;
}

// ------------------------------------------------------------------ gen-data

config::KeyValues gen_defaults() {
  return {{"seed", "1"},          {"n_source", "10"},       {"n_target", "10"},  {"image_size", "72"},
          {"n_slices", "8"},      {"split", "0.7,0.1,0.2"}, {"shift", "lge_like"}, {"shift_gamma", ""},
          {"shift_blur", ""},     {"shift_noise", ""}};
}

data::GenDataConfig gen_config(const config::KeyValues& kv) {
  const auto defaults = gen_defaults();
  for (const auto& [k, v] : kv)
    if (!defaults.count(k)) throw config::ConfigError("unknown gen-data key '" + k + "'");
  const auto m = config::merge(defaults, kv);
  data::GenDataConfig g;
  g.seed = static_cast<uint64_t>(config::to_int(m, "seed"));
  g.n_source = static_cast<int>(config::to_int(m, "n_source"));
  g.n_target = static_cast<int>(config::to_int(m, "n_target"));
  g.phantom.image_size = static_cast<int>(config::to_int(m, "image_size"));
  g.phantom.n_slices = static_cast<int>(config::to_int(m, "n_slices"));
  std::stringstream ss(m.at("split"));
  std::string item;
  for (int i = 0; i < 3; ++i) {
    if (!std::getline(ss, item, ',')) throw config::ConfigError("split needs three comma-separated fractions");
    g.split[i] = config::to_double({{"split", item}}, "split");
  }
  const std::string shift = m.at("shift");
  if (shift == "identity") g.shift = synth::DomainShiftConfig::identity();
  else if (shift != "lge_like") throw config::ConfigError("shift must be lge_like or identity");
  if (!m.at("shift_gamma").empty()) g.shift.contrast_gamma = config::to_double(m, "shift_gamma");
  if (!m.at("shift_blur").empty()) g.shift.blur_sigma = config::to_double(m, "shift_blur");
  if (!m.at("shift_noise").empty()) g.shift.noise_std = config::to_double(m, "shift_noise");
  if (g.n_source < 1 || g.n_target < 0) throw config::ConfigError("n_source must be >= 1 and n_target >= 0");
  g.phantom.validate();
  g.shift.validate();
  return g;
}

int cmd_gen_data(const fs::path& out, const std::string& cfg_path, const std::vector<std::string>& sets, bool force,
                 const std::vector<std::string>& argv) {
  config::KeyValues file;
  const auto over = layered(cfg_path, sets, file);
  const auto kv = config::merge(file, over);
  const auto g = gen_config(kv);
  prepare_out(out, force);
  RunManifest rm("gen-data", argv, out, cfg_path, config::merge(gen_defaults(), kv), g.seed);
  const auto m = data::generate_dataset(g, out);
  std::cout << "wrote " << m.subjects.size() << " subjects to " << out.string() << '\n';
  rm.finish("ok");
  return kExitOk;
}

// ------------------------------------------------------------------ pointcloud

int cmd_pointcloud(const std::string& data_dir, const std::string& subject, int slice, int n_points,
                   const std::string& out, const std::vector<std::string>& emd_files) {
  if (!emd_files.empty()) {
    if (emd_files.size() != 2) throw UsageError("--emd takes two cloud files");
    const auto a = pc::load_cloud(emd_files[0]), b = pc::load_cloud(emd_files[1]);
    std::printf("%.9g\n", pc::emd(a, b).cost);
    return kExitOk;
  }
  if (data_dir.empty() || subject.empty() || out.empty()) {
    throw UsageError("pointcloud needs --data, --subject and --out (or --emd A B)");
  }
  const auto m = data::read_manifest(data_dir);
  for (const auto& e : m.subjects) {
    if (e.id != subject) continue;
    const auto vol = data::read_subject(data::subject_dir(data_dir, e));
    if (slice < 0 || slice >= vol.n_slices) throw std::runtime_error("slice index out of range");
    const auto cloud = pc::make_gt_pointcloud(synth::slice_labels(vol, slice), slice, vol.n_slices, n_points);
    pc::save_cloud(out, cloud);
    std::cout << "wrote " << cloud.size() << " points to " << out << '\n';
    return kExitOk;
  }
  throw std::runtime_error("subject " + subject + " not found in " + data_dir);
}

// ------------------------------------------------------------------ train / ablate

struct TrainArgs {
  std::string config;
  std::vector<std::string> sets;
  std::string out;
  std::string data;
  std::string resume;
  bool force = false;
};

train::TrainConfig resolve_train(const TrainArgs& a, config::KeyValues& file) {
  auto over = layered(a.config, a.sets, file);
  if (!a.data.empty()) over["data_dir"] = a.data;
  auto cfg = train::TrainConfig::resolve(file, over);
  cfg.validate();
  return cfg;
}

fs::path pick_out(const std::string& flag, const train::TrainConfig& cfg, const std::string& kind) {
  if (!flag.empty()) return flag;
  if (!cfg.out_dir.empty()) return cfg.out_dir;
  return output_root() / (kind + "-seed" + std::to_string(cfg.seed));
}

int cmd_train(const TrainArgs& a, const std::vector<std::string>& argv) {
  config::KeyValues file;
  auto cfg = resolve_train(a, file);
  const fs::path out = pick_out(a.out, cfg, "train");
  if (a.resume.empty()) prepare_out(out, a.force);
  else fs::create_directories(out);
  cfg.out_dir = out.string();
  RunManifest rm("train", argv, out, a.config, cfg.to_kv(), cfg.seed);
  const auto data = train::load_train_data(cfg);
  train::RunOptions opt;
  if (!a.resume.empty()) opt.resume = a.resume;
  opt.on_epoch = [](const train::EpochSummary& s) { std::cout << s.json_line() << std::endl; };
  try {
    const auto res = train::run_training(cfg, data, out, opt);
    std::cout << "final checkpoint: " << res.final_checkpoint.string() << '\n';
  } catch (...) {
    rm.finish("failed");
    throw;
  }
  rm.finish("ok");
  return kExitOk;
}

int cmd_ablate(const TrainArgs& a, const std::string& grid, const std::vector<std::string>& argv) {
  config::KeyValues file;
  auto cfg = resolve_train(a, file);
  train::parse_grid(grid);
  const fs::path out = pick_out(a.out, cfg, "ablate");
  prepare_out(out, a.force);
  auto kv = cfg.to_kv();
  kv["grid"] = grid;
  RunManifest rm("ablate", argv, out, a.config, kv, cfg.seed);
  const auto data = train::load_train_data(cfg);
  const auto m = data::read_manifest(cfg.data_dir);
  std::vector<synth::SubjectVolume> test;
  for (const auto& id : m.ids(synth::Domain::target, data::Split::test)) {
    test.push_back(data::read_subject(data::subject_dir(cfg.data_dir, {id, synth::Domain::target, data::Split::test})));
  }
  const auto rows = train::run_ablation(cfg, grid, test, data, out);
  for (const auto& r : rows) std::printf("%-12s dice %.4f +- %.4f\n", r.name.c_str(), r.dice_mean, r.dice_sd);
  rm.finish("ok");
  return kExitOk;
}

// ------------------------------------------------------------------ eval / report

int cmd_eval(const std::string& ckpt, const std::string& data_dir, const std::string& out, bool echo_gt,
             const std::vector<std::string>& splits, bool force, const std::vector<std::string>& argv) {
  if (ckpt.empty() && !echo_gt) throw UsageError("eval needs --checkpoint (or --echo-gt)");
  prepare_out(out, force);
  uint64_t seed = 0;
  config::KeyValues kv;
  if (!echo_gt) {
    const auto cfg = train::checkpoint_config(ckpt);
    seed = cfg.seed;
    kv = cfg.to_kv();
  }
  RunManifest rm("eval", argv, out, "", kv, seed);
  report::EvalOptions opt;
  opt.echo_gt = echo_gt;
  if (!splits.empty()) opt.splits = splits;
  const auto r = report::evaluate_run(ckpt, data_dir, out, opt);
  std::cout << "subjects " << r["summary"]["n_subjects"].dump() << "  mean Dice " << r["summary"]["mean_dice"].dump()
            << '\n';
  for (const auto& n : r["notes"]) std::cout << "note: " << n.get<std::string>() << '\n';
  rm.finish("ok");
  return kExitOk;
}

int cmd_report(const std::string& in) {
  std::ifstream is(fs::path(in) / "report.json");
  if (!is) throw std::runtime_error("cannot open " + (fs::path(in) / "report.json").string());
  json r;
  try {
    r = json::parse(is);
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("report.json: ") + e.what());
  }
  std::cout << report::render_report(r, in);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adversarial domain adaptation for cardiac segmentation on synthetic phantoms"};
  app.require_subcommand(1);
  const std::vector<std::string> args(argv, argv + argc);

  std::string out, cfg_path;
  std::vector<std::string> sets;
  bool force = false;

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic source/target dataset");
  gen->add_option("--out", out, "Dataset root")->required();
  gen->add_option("--config", cfg_path, "key = value file")->check(CLI::ExistingFile);
  gen->add_option("--set", sets, "Override key=value");
  gen->add_flag("--force", force, "Write into a non-empty directory");

  std::string data_dir, subject, cloud_out;
  int slice = 0, n_points = pc::kDefaultPoints;
  std::vector<std::string> emd_files;
  auto* pcl = app.add_subcommand("pointcloud", "Write a reference cloud or compare two clouds");
  pcl->add_option("--data", data_dir, "Dataset root");
  pcl->add_option("--subject", subject, "Subject id");
  pcl->add_option("--slice", slice, "Slice index");
  pcl->add_option("--n-points", n_points, "Cloud size")->check(CLI::PositiveNumber);
  pcl->add_option("--out", cloud_out, "Output text file");
  pcl->add_option("--emd", emd_files, "Print the EMD between two cloud files")->expected(2);

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "Train a segmenter");
  tr->add_option("--config", ta.config, "key = value file")->required()->check(CLI::ExistingFile);
  tr->add_option("--set", ta.sets, "Override key=value");
  tr->add_option("--out", ta.out, "Run directory");
  tr->add_option("--data", ta.data, "Dataset root (overrides data_dir)");
  tr->add_option("--resume", ta.resume, "Checkpoint to resume from")->check(CLI::ExistingFile);
  tr->add_flag("--force", ta.force, "Write into a non-empty directory");

  TrainArgs aa;
  std::string grid = "none;D2;D1+D2;D1+D2+D3";
  auto* ab = app.add_subcommand("ablate", "Train and evaluate a grid of critic subsets");
  ab->add_option("--config", aa.config, "key = value file")->required()->check(CLI::ExistingFile);
  ab->add_option("--grid", grid, "';'-separated entries: none, MT or D1+D2+...");
  ab->add_option("--set", aa.sets, "Override key=value");
  ab->add_option("--out", aa.out, "Run directory");
  ab->add_option("--data", aa.data, "Dataset root (overrides data_dir)");
  ab->add_flag("--force", aa.force, "Write into a non-empty directory");

  std::string ckpt, eval_data, eval_out;
  bool echo_gt = false, eval_force = false;
  std::vector<std::string> splits;
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on labelled target subjects");
  ev->add_option("--checkpoint", ckpt, "Checkpoint file")->check(CLI::ExistingFile);
  ev->add_option("--data", eval_data, "Dataset root")->required();
  ev->add_option("--out", eval_out, "Report directory")->required();
  ev->add_option("--splits", splits, "Target splits to evaluate (default test)");
  ev->add_flag("--echo-gt", echo_gt, "Use reference labels as the prediction");
  ev->add_flag("--force", eval_force, "Write into a non-empty directory");

  std::string report_in;
  auto* rp = app.add_subcommand("report", "Render report.md and plots from report.json");
  rp->add_option("--in", report_in, "Report directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }
  try {
    if (*gen) return cmd_gen_data(out, cfg_path, sets, force, args);
    if (*pcl) return cmd_pointcloud(data_dir, subject, slice, n_points, cloud_out, emd_files);
    if (*tr) return cmd_train(ta, args);
    if (*ab) return cmd_ablate(aa, grid, args);
    if (*ev) return cmd_eval(ckpt, eval_data, eval_out, echo_gt, splits, eval_force, args);
    if (*rp) return cmd_report(report_in);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}
