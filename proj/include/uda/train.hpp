#pragma once

// Alternating adversarial training of the segmenter against the output-space
// (D1), entropy-space (D2) and point-cloud (D3) critics.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "uda/config.hpp"
#include "uda/dataset.hpp"
#include "uda/losses.hpp"
#include "uda/nets.hpp"
#include "uda/optim.hpp"

namespace uda::train {

namespace fs = std::filesystem;

/// Raised when a target-domain label would reach a loss.
class UdaContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Recipe { multi_sequence, cross_modality };
Recipe parse_recipe(const std::string& s);
std::string to_string(Recipe r);

/// Learning rate of the segmenter's optimiser under a named recipe's constants.
double lr_at(int epoch, Recipe recipe);
double lr_at(int epoch, const std::string& recipe);

struct TrainConfig {
  Recipe recipe = Recipe::multi_sequence;
  std::string data_dir;
  std::string out_dir;
  uint64_t seed = 1;
  int epochs = 600;
  int batch_size = 16;

  double g_lr = 1e-3;
  double g_lr_decay = 0.2;
  int g_lr_step = 100;  // epochs between decays; 0 disables decay
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double d_lr = 2.5e-5;
  double d_momentum = 0.9;

  losses::LossWeights lambda;
  double lambda_emd = 1.0;
  std::array<bool, 3> use_d{true, true, true};
  /// "auto" follows use_d[2]; otherwise forced on/off.
  std::string use_emd = "auto";
  bool saturating_adv = false;
  synth::AugPolicy aug = synth::AugPolicy::none;

  int n_classes = 4;
  int image_size = 224;
  int n_points = 300;
  int base_width = 32;
  std::vector<int> d_widths{64, 128, 256, 512, 1};
  nets::PointNetSpec pointnet;

  int checkpoint_every = 50;
  int early_stop_patience = 0;  // epochs without source-val improvement; 0 = off
  int val_every = 1;            // epochs between source-val evaluations when early stopping

  bool emd_active() const;
  std::array<bool, 3> enabled() const { return use_d; }
  losses::LossWeights effective_weights() const { return losses::ablate(lambda, use_d); }
  double g_lr_at(int epoch) const;

  nets::SegmenterSpec segmenter_spec() const;
  nets::PatchGanSpec patchgan_spec() const;

  void validate() const;

  /// Defaults overlaid by the recipe preset, then the file, then --set
  /// overrides. The recipe itself is read from the highest layer naming it.
  static TrainConfig resolve(const config::KeyValues& file, const config::KeyValues& overrides);
  static TrainConfig from_kv(const config::KeyValues& kv);
  config::KeyValues to_kv() const;
};

/// Complete key/value defaults (used for documentation and validation of
/// unknown keys).
config::KeyValues default_kv();
config::KeyValues recipe_preset(Recipe r);

struct Batch {
  synth::Domain domain = synth::Domain::source;
  Tensor images;                      // [B,3,H,W]
  std::vector<uint8_t> labels;        // [B][H][W]; must be empty for target batches
  std::vector<pc::PointCloud> clouds; // source only
};

/// Stacks samples (gray replicated to 3 channels). Source samples are
/// augmented with `policy` and their clouds rebuilt from the augmented mask.
Batch make_batch(const std::vector<data::Sample>& samples, const std::vector<size_t>& idx, synth::Domain domain,
                 synth::AugPolicy policy, uint64_t seed, int n_points);

struct LossRecord {
  int64_t step = 0;
  double seg = 0.0;
  double emd = 0.0;
  std::array<double, 3> adv{0.0, 0.0, 0.0};
  std::array<double, 3> disc{0.0, 0.0, 0.0};
  double total = 0.0;

  std::string json_line() const;
};

class Trainer {
 public:
  explicit Trainer(const TrainConfig& cfg);

  const TrainConfig& config() const { return cfg_; }
  nets::Segmenter& segmenter() { return *g_; }
  nets::PatchGan& d1() { return *d1_; }
  nets::PatchGan& d2() { return *d2_; }
  nets::PointNetDisc& d3() { return *d3_; }

  /// Supervised, adversarial and discriminator phases on one batch pair at
  /// the learning rates of the current epoch.
  LossRecord train_step(const Batch& source, const Batch& target);

  int epoch() const { return epoch_; }
  void set_epoch(int e) { epoch_ = e; }
  int64_t step() const { return step_; }

  void save(const fs::path& path) const;
  /// Restores every tensor and counter; throws CheckpointError when the
  /// architecture hashes differ from this trainer's configuration.
  void load(const fs::path& path);

  std::string spec_hash(const std::string& net) const;

 private:
  TrainConfig cfg_;
  std::unique_ptr<nets::Segmenter> g_;
  std::unique_ptr<nets::PatchGan> d1_, d2_;
  std::unique_ptr<nets::PointNetDisc> d3_;
  std::unique_ptr<optim::Adam> g_opt_;
  std::array<std::unique_ptr<optim::Sgd>, 3> d_opt_;
  int epoch_ = 0;
  int64_t step_ = 0;
};

/// Reads the config snapshot stored in a checkpoint.
TrainConfig checkpoint_config(const fs::path& path);

struct TrainData {
  std::vector<data::Sample> source;      // labelled, with clouds
  std::vector<data::Sample> target;      // unlabelled
  std::vector<synth::SubjectVolume> source_val;
};

/// Loads the train splits (target without labels in the samples) and the
/// source validation subjects from a generated dataset root.
TrainData load_train_data(const TrainConfig& cfg);

struct EpochSummary {
  int epoch = 0;
  int steps = 0;
  LossRecord mean;
  double g_lr = 0.0;
  std::optional<double> val_dice;
  double seconds = 0.0;

  std::string json_line() const;
};

struct RunOptions {
  std::optional<fs::path> resume;
  /// Stop after this many completed epochs in this invocation (for tests).
  std::optional<int> stop_after;
  std::function<void(const EpochSummary&)> on_epoch;
  bool write_files = true;
};

struct TrainResult {
  std::vector<EpochSummary> history;
  fs::path final_checkpoint;
  bool early_stopped = false;
};

/// Epoch loop: independent source/target shuffles, min(|S|,|T|)/B steps per
/// epoch, checkpoint every cfg.checkpoint_every epochs and at the end.
/// Writes history.jsonl, losses.jsonl and checkpoints under out_dir.
TrainResult run_training(const TrainConfig& cfg, const TrainData& data, const fs::path& out_dir,
                         const RunOptions& opt = {});

/// Mean foreground volumetric Dice of the segmenter on labelled subjects.
double mean_dice(nets::Segmenter& g, const std::vector<synth::SubjectVolume>& vols, int crop_size);

struct AblationRow {
  std::string name;
  std::array<bool, 3> use_d{};
  bool emd = false;
  double dice_mean = 0.0;
  double dice_sd = 0.0;
  std::vector<double> class_dice;
};

/// Grid entries separated by ';': "none", "MT" (point head, no critics) or
/// '+'-joined subsets of D1, D2, D3.
std::vector<std::pair<std::string, std::array<bool, 3>>> parse_grid(const std::string& grid);

/// Trains every grid configuration with the base seed and evaluates mean
/// target-test Dice. Writes ablation.tsv and ablation.json under out_dir.
std::vector<AblationRow> run_ablation(const TrainConfig& base, const std::string& grid,
                                      const std::vector<synth::SubjectVolume>& target_test, const TrainData& data,
                                      const fs::path& out_dir);

}  // namespace uda::train
