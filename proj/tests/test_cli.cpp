#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <sys/wait.h>

#include "fixtures.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Result {
  int code = -1;
  std::string out;
};

Result run(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + (env.empty() ? "" : " ") + std::string(UDA_CLI_PATH) + " " + args + " 2>&1";
  Result r;
  FILE* p = ::popen(cmd.c_str(), "r");
  if (!p) return r;
  char buf[4096];
  size_t n;
  while ((n = fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
  const int status = ::pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

/// Relative path -> contents for every regular file except the run manifest.
std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> m;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file() || e.path().filename() == "run.json") continue;
    m[fs::relative(e.path(), root).string()] = slurp(e.path());
  }
  return m;
}

const std::string kGen = " --set n_source=4 --set n_target=6 --set image_size=40 --set n_slices=4 --set seed=3";

/// Shared small dataset generated once through the CLI.
const fs::path& dataset() {
  static const fs::path d = [] {
    const fs::path p = fixtures::temp_dir("cli_data");
    const auto r = run("gen-data --out " + p.string() + kGen + " --force");
    if (r.code != 0) throw std::runtime_error(r.out);
    return p;
  }();
  return d;
}

fs::path write_train_config(const fs::path& dir) {
  const fs::path cfg = dir / "tiny.cfg";
  std::ofstream(cfg) << "# tiny run\n"
                        "data_dir = " << dataset().string() << "\n"
                        "epochs = 2\nbatch_size = 2\nimage_size = 32\nbase_width = 4\nn_points = 16\n"
                        "d_widths = 8,16,16,16,1\npn_tnet = 8,16\npn_tnet_fc = 8\npn_point = 8\n"
                        "pn_feature = 8,16\npn_fc = 8\ncheckpoint_every = 1\n";
  return cfg;
}

}  // namespace

TEST(Cli, HelpAndUsageErrors) {
  EXPECT_EQ(run("--help").code, 0);
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("frobnicate").code, 2);
  const auto r = run("gen-data --out /tmp/x --no-such-flag");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("no-such-flag"), std::string::npos);
  EXPECT_EQ(run("train").code, 2);  // --config required
}

TEST(Cli, GenDataIsDeterministicAndSplits) {
  const fs::path a = fixtures::temp_dir("cli_gen_a"), b = fixtures::temp_dir("cli_gen_b");
  ASSERT_EQ(run("gen-data --out " + a.string() + kGen + " --force").code, 0);
  ASSERT_EQ(run("gen-data --out " + b.string() + kGen + " --force").code, 0);
  EXPECT_EQ(tree(a), tree(b));
  const json rm = json::parse(slurp(a / "run.json"));
  EXPECT_EQ(rm["command"], "gen-data");
  EXPECT_EQ(rm["status"], "ok");
  EXPECT_EQ(rm["config"]["n_target"], "6");
  EXPECT_EQ(rm["seed"], 3);
  EXPECT_EQ(rm["code_hash"].get<std::string>().size(), 40u);

  const auto m = uda::data::read_manifest(a);
  using uda::data::Split;
  using uda::synth::Domain;
  // 10 subjects at 0.7/0.1/0.2 -> 7/1/2; here 6 target -> 4/1/1.
  EXPECT_EQ(m.ids(Domain::target, Split::train).size(), 4u);
  EXPECT_EQ(m.ids(Domain::target, Split::val).size(), 1u);
  EXPECT_EQ(m.ids(Domain::target, Split::test).size(), 1u);
}

TEST(Cli, RefusesNonEmptyOutputWithoutForce) {
  const fs::path d = fixtures::temp_dir("cli_refuse");
  std::ofstream(d / "keep.txt") << "x";
  const auto r = run("gen-data --out " + d.string() + kGen);
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("--force"), std::string::npos);
  EXPECT_FALSE(fs::exists(d / "run.json"));
  ASSERT_EQ(run("gen-data --out " + d.string() + kGen + " --force").code, 0);
  EXPECT_TRUE(fs::exists(d / "keep.txt"));  // --force never deletes
}

TEST(Cli, ConfigErrorsAreRuntimeErrors) {
  const fs::path d = fixtures::temp_dir("cli_cfgerr");
  EXPECT_EQ(run("gen-data --out " + d.string() + " --set bogus=1").code, 1);
  EXPECT_EQ(run("gen-data --out " + d.string() + " --set n_source").code, 1);
  const fs::path cfg = write_train_config(d);
  const auto r = run("train --config " + cfg.string() + " --set batch_size=0 --out " + (d / "run").string());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("batch_size"), std::string::npos);
}

TEST(Cli, DefaultOutputRootFromEnvironment) {
  const fs::path root = fixtures::temp_dir("cli_root");
  const fs::path cfg = write_train_config(root);
  const auto r = run("train --config " + cfg.string() + " --set epochs=1 --set seed=9",
                     "UDA_OUTPUT_ROOT=" + root.string());
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_TRUE(fs::exists(root / "train-seed9" / "final.bin"));
  EXPECT_TRUE(fs::exists(root / "train-seed9" / "run.json"));
}

TEST(Cli, TrainEvalReportPipeline) {
  const fs::path d = fixtures::temp_dir("cli_pipe");
  const fs::path cfg = write_train_config(d);
  const fs::path run_dir = d / "run";
  const auto t = run("train --config " + cfg.string() + " --set use_d2=false --out " + run_dir.string());
  ASSERT_EQ(t.code, 0) << t.out;
  for (const char* f : {"final.bin", "ckpt_epoch1.bin", "ckpt_epoch2.bin", "history.jsonl", "losses.jsonl", "run.json"})
    EXPECT_TRUE(fs::exists(run_dir / f)) << f;
  const json rm = json::parse(slurp(run_dir / "run.json"));
  EXPECT_EQ(rm["config"]["use_d2"], "false");
  EXPECT_EQ(rm["config"]["epochs"], "2");
  EXPECT_EQ(rm["config"]["recipe"], "multi_sequence");

  // Resume from epoch 1 reproduces the epoch-2 history line.
  const fs::path run2 = d / "run2";
  fs::create_directories(run2);
  const auto rr = run("train --config " + cfg.string() + " --set use_d2=false --out " + run2.string() + " --resume " +
                      (run_dir / "ckpt_epoch1.bin").string());
  ASSERT_EQ(rr.code, 0) << rr.out;
  auto last_total = [](const fs::path& p) {
    std::ifstream is(p);
    std::string line, last;
    while (std::getline(is, line)) last = line;
    return json::parse(last)["total"].get<double>();
  };
  EXPECT_NEAR(last_total(run_dir / "history.jsonl"), last_total(run2 / "history.jsonl"), 1e-6);

  const fs::path ev = d / "eval";
  const auto e = run("eval --checkpoint " + (run_dir / "final.bin").string() + " --data " + dataset().string() +
                     " --out " + ev.string());
  ASSERT_EQ(e.code, 0) << e.out;
  ASSERT_TRUE(fs::exists(ev / "report.json"));
  EXPECT_TRUE(fs::exists(ev / "report.md"));
  EXPECT_TRUE(fs::exists(ev / "run.json"));
  const json rep = json::parse(slurp(ev / "report.json"));
  EXPECT_EQ(rep["format"], "uda-report/1");
  EXPECT_EQ(rep["subjects"].size(), 1u);

  fs::remove(ev / "report.md");
  const auto rp = run("report --in " + ev.string());
  ASSERT_EQ(rp.code, 0) << rp.out;
  EXPECT_TRUE(fs::exists(ev / "report.md"));
  EXPECT_NE(rp.out.find("Dice"), std::string::npos);

  EXPECT_EQ(run("eval --checkpoint " + (run_dir / "history.jsonl").string() + " --data " + dataset().string() +
                " --out " + (d / "eval_bad").string())
                .code,
            1);
}

TEST(Cli, EchoGroundTruthGivesPerfectScores) {
  const fs::path ev = fixtures::temp_dir("cli_echo");
  const auto e = run("eval --echo-gt --data " + dataset().string() + " --out " + ev.string() + " --force --splits test --splits val");
  ASSERT_EQ(e.code, 0) << e.out;
  const json rep = json::parse(slurp(ev / "report.json"));
  ASSERT_EQ(rep["subjects"].size(), 2u);
  for (const auto& s : rep["subjects"]) {
    for (const auto& d : s["dice"]) EXPECT_DOUBLE_EQ(d.get<double>(), 1.0);
    for (const auto& h : s["hd"]) if (!h.is_null()) EXPECT_DOUBLE_EQ(h.get<double>(), 0.0);
    for (const auto& a : s["asd"]) if (!a.is_null()) EXPECT_DOUBLE_EQ(a.get<double>(), 0.0);
    for (const auto& m : s["emd"]) EXPECT_NEAR(m.get<double>(), 0.0, 1e-9);
  }
}

TEST(Cli, ReportRejectsMissingOrBrokenJson) {
  const fs::path d = fixtures::temp_dir("cli_badrep");
  EXPECT_EQ(run("report --in " + d.string()).code, 1);
  std::ofstream(d / "report.json") << "{\"format\": \"other\"}";
  EXPECT_EQ(run("report --in " + d.string()).code, 1);
}

TEST(Cli, AblateWritesOneRowPerGridEntry) {
  const fs::path d = fixtures::temp_dir("cli_ablate");
  const fs::path cfg = write_train_config(d);
  const auto r = run("ablate --config " + cfg.string() + " --set epochs=1 --grid \"none;D2;D1+D2;D1+D2+D3\" --out " +
                     (d / "abl").string());
  ASSERT_EQ(r.code, 0) << r.out;
  std::ifstream is(d / "abl" / "ablation.tsv");
  std::string line;
  int rows = 0;
  std::getline(is, line);  // header
  while (std::getline(is, line))
    if (!line.empty()) ++rows;
  EXPECT_EQ(rows, 4);
  EXPECT_EQ(run("ablate --config " + cfg.string() + " --grid \"D4\" --out " + (d / "abl2").string()).code, 1);
}

TEST(Cli, PointCloudGenerationAndEmd) {
  const fs::path d = fixtures::temp_dir("cli_pc");
  const auto m = uda::data::read_manifest(dataset());
  const std::string id = m.subjects.front().id;
  const fs::path a = d / "a.txt", b = d / "b.txt";
  ASSERT_EQ(run("pointcloud --data " + dataset().string() + " --subject " + id + " --slice 1 --n-points 32 --out " +
                a.string())
                .code,
            0);
  const auto cloud = uda::pc::load_cloud(a);
  EXPECT_EQ(cloud.size(), 32u);
  EXPECT_TRUE(cloud.in_unit_cube());
  fs::copy_file(a, b);
  const auto e = run("pointcloud --emd " + a.string() + " " + b.string());
  ASSERT_EQ(e.code, 0) << e.out;
  EXPECT_NEAR(std::stod(e.out), 0.0, 1e-12);
  EXPECT_EQ(run("pointcloud --data " + dataset().string() + " --subject nobody --out " + a.string()).code, 1);
  EXPECT_EQ(run("pointcloud --slice 1").code, 2);
}
