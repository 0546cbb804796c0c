#include "uda/train.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#include "uda/checkpoint.hpp"
#include "uda/core/rng.hpp"
#include "uda/inference.hpp"

namespace uda::train {
namespace {

using nlohmann::json;
using config::KeyValues;

// Shortest text that parses back to the same double.
std::string fmt_double(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string fmt_list(const std::vector<int>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::string fmt_bool(bool b) { return b ? "true" : "false"; }

void require(bool ok, const std::string& what) {
  if (!ok) throw config::ConfigError(what);
}

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

// --------------------------------------------------------------- recipes

Recipe parse_recipe(const std::string& s) {
  if (s == "multi_sequence") return Recipe::multi_sequence;
  if (s == "cross_modality") return Recipe::cross_modality;
  throw config::ConfigError("unknown recipe '" + s + "' (expected multi_sequence or cross_modality)");
}

std::string to_string(Recipe r) { return r == Recipe::multi_sequence ? "multi_sequence" : "cross_modality"; }

double lr_at(int epoch, Recipe recipe) {
  if (epoch < 0) throw std::invalid_argument("lr_at: negative epoch");
  if (recipe == Recipe::cross_modality) return 2e-4;
  return 1e-3 * std::pow(0.2, epoch / 100);
}

double lr_at(int epoch, const std::string& recipe) { return lr_at(epoch, parse_recipe(recipe)); }

KeyValues default_kv() {
  const TrainConfig d;
  return d.to_kv();
}

KeyValues recipe_preset(Recipe r) {
  if (r == Recipe::multi_sequence) {
    return {{"recipe", "multi_sequence"}, {"g_lr", "0.001"},   {"g_lr_decay", "0.2"},        {"g_lr_step", "100"},
            {"d_lr", "2.5e-05"},          {"epochs", "600"},   {"early_stop_patience", "0"}};
  }
  return {{"recipe", "cross_modality"}, {"g_lr", "0.0002"}, {"g_lr_decay", "1"},          {"g_lr_step", "0"},
          {"d_lr", "2.5e-05"},          {"epochs", "600"},  {"early_stop_patience", "100"}};
}

// ------------------------------------------------------------ TrainConfig

bool TrainConfig::emd_active() const {
  if (use_emd == "auto") return use_d[2];
  return use_emd == "true";
}

double TrainConfig::g_lr_at(int epoch) const {
  if (g_lr_step <= 0) return g_lr;
  return g_lr * std::pow(g_lr_decay, epoch / g_lr_step);
}

nets::SegmenterSpec TrainConfig::segmenter_spec() const {
  nets::SegmenterSpec s;
  s.n_classes = n_classes;
  s.base_width = base_width;
  s.n_points = n_points;
  s.image_size = image_size;
  return s;
}

nets::PatchGanSpec TrainConfig::patchgan_spec() const {
  nets::PatchGanSpec s;
  s.in_channels = n_classes;
  s.widths = d_widths;
  return s;
}

void TrainConfig::validate() const {
  require(batch_size >= 1, "batch_size must be >= 1");
  require(epochs >= 0, "epochs must be >= 0");
  require(g_lr > 0 && d_lr > 0, "learning rates must be positive");
  require(g_lr_decay > 0, "g_lr_decay must be positive");
  require(d_momentum >= 0 && d_momentum < 1, "d_momentum must lie in [0,1)");
  require(lambda_emd >= 0, "lambda_emd must be >= 0");
  require(use_emd == "auto" || use_emd == "true" || use_emd == "false", "use_emd must be auto, true or false");
  require(checkpoint_every >= 1, "checkpoint_every must be >= 1");
  require(early_stop_patience >= 0, "early_stop_patience must be >= 0");
  require(val_every >= 1, "val_every must be >= 1");
  lambda.validate();
  segmenter_spec().validate();
  patchgan_spec().validate();
  pointnet.validate();
}

KeyValues TrainConfig::to_kv() const {
  KeyValues kv;
  kv["recipe"] = to_string(recipe);
  kv["data_dir"] = data_dir;
  kv["out_dir"] = out_dir;
  kv["seed"] = std::to_string(seed);
  kv["epochs"] = std::to_string(epochs);
  kv["batch_size"] = std::to_string(batch_size);
  kv["g_lr"] = fmt_double(g_lr);
  kv["g_lr_decay"] = fmt_double(g_lr_decay);
  kv["g_lr_step"] = std::to_string(g_lr_step);
  kv["adam_beta1"] = fmt_double(adam_beta1);
  kv["adam_beta2"] = fmt_double(adam_beta2);
  kv["d_lr"] = fmt_double(d_lr);
  kv["d_momentum"] = fmt_double(d_momentum);
  for (int i = 0; i < 3; ++i) {
    kv["lambda_adv" + std::to_string(i + 1)] = fmt_double(lambda.adv[i]);
    kv["lambda_d" + std::to_string(i + 1)] = fmt_double(lambda.disc[i]);
    kv["use_d" + std::to_string(i + 1)] = fmt_bool(use_d[i]);
  }
  kv["clamp"] = fmt_double(lambda.clamp);
  kv["lambda_emd"] = fmt_double(lambda_emd);
  kv["use_emd"] = use_emd;
  kv["saturating_adv"] = fmt_bool(saturating_adv);
  kv["aug_policy"] = synth::to_string(aug);
  kv["n_classes"] = std::to_string(n_classes);
  kv["image_size"] = std::to_string(image_size);
  kv["n_points"] = std::to_string(n_points);
  kv["base_width"] = std::to_string(base_width);
  kv["d_widths"] = fmt_list(d_widths);
  kv["pn_tnet"] = fmt_list(pointnet.tnet_widths);
  kv["pn_tnet_fc"] = fmt_list(pointnet.tnet_fc);
  kv["pn_point"] = fmt_list(pointnet.point_widths);
  kv["pn_feature"] = fmt_list(pointnet.feature_widths);
  kv["pn_fc"] = fmt_list(pointnet.fc_widths);
  kv["pn_feature_transform"] = fmt_bool(pointnet.feature_transform);
  kv["checkpoint_every"] = std::to_string(checkpoint_every);
  kv["early_stop_patience"] = std::to_string(early_stop_patience);
  kv["val_every"] = std::to_string(val_every);
  return kv;
}

TrainConfig TrainConfig::from_kv(const KeyValues& in) {
  const KeyValues defaults = default_kv();
  for (const auto& [k, v] : in) {
    if (!defaults.count(k)) throw config::ConfigError("unknown config key '" + k + "'");
  }
  const KeyValues kv = config::merge(defaults, in);
  using namespace config;
  TrainConfig c;
  c.recipe = parse_recipe(kv.at("recipe"));
  c.data_dir = kv.at("data_dir");
  c.out_dir = kv.at("out_dir");
  c.seed = static_cast<uint64_t>(to_int(kv, "seed"));
  c.epochs = static_cast<int>(to_int(kv, "epochs"));
  c.batch_size = static_cast<int>(to_int(kv, "batch_size"));
  c.g_lr = to_double(kv, "g_lr");
  c.g_lr_decay = to_double(kv, "g_lr_decay");
  c.g_lr_step = static_cast<int>(to_int(kv, "g_lr_step"));
  c.adam_beta1 = to_double(kv, "adam_beta1");
  c.adam_beta2 = to_double(kv, "adam_beta2");
  c.d_lr = to_double(kv, "d_lr");
  c.d_momentum = to_double(kv, "d_momentum");
  for (int i = 0; i < 3; ++i) {
    c.lambda.adv[i] = to_double(kv, "lambda_adv" + std::to_string(i + 1));
    c.lambda.disc[i] = to_double(kv, "lambda_d" + std::to_string(i + 1));
    c.use_d[i] = to_bool(kv, "use_d" + std::to_string(i + 1));
  }
  c.lambda.clamp = to_double(kv, "clamp");
  c.lambda_emd = to_double(kv, "lambda_emd");
  c.use_emd = kv.at("use_emd");
  c.saturating_adv = to_bool(kv, "saturating_adv");
  try {
    c.aug = synth::parse_aug_policy(kv.at("aug_policy"));
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  c.n_classes = static_cast<int>(to_int(kv, "n_classes"));
  c.image_size = static_cast<int>(to_int(kv, "image_size"));
  c.n_points = static_cast<int>(to_int(kv, "n_points"));
  c.base_width = static_cast<int>(to_int(kv, "base_width"));
  c.d_widths = to_int_list(kv, "d_widths");
  c.pointnet.tnet_widths = to_int_list(kv, "pn_tnet");
  c.pointnet.tnet_fc = to_int_list(kv, "pn_tnet_fc");
  c.pointnet.point_widths = to_int_list(kv, "pn_point");
  c.pointnet.feature_widths = to_int_list(kv, "pn_feature");
  c.pointnet.fc_widths = to_int_list(kv, "pn_fc");
  c.pointnet.feature_transform = to_bool(kv, "pn_feature_transform");
  c.checkpoint_every = static_cast<int>(to_int(kv, "checkpoint_every"));
  c.early_stop_patience = static_cast<int>(to_int(kv, "early_stop_patience"));
  c.val_every = static_cast<int>(to_int(kv, "val_every"));
  try {
    c.validate();
  } catch (const config::ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  return c;
}

TrainConfig TrainConfig::resolve(const KeyValues& file, const KeyValues& overrides) {
  std::string recipe = "multi_sequence";
  if (auto it = file.find("recipe"); it != file.end()) recipe = it->second;
  if (auto it = overrides.find("recipe"); it != overrides.end()) recipe = it->second;
  KeyValues kv = recipe_preset(parse_recipe(recipe));
  kv = config::merge(kv, file);
  kv = config::merge(kv, overrides);
  return from_kv(kv);
}

// ------------------------------------------------------------------ batches

Batch make_batch(const std::vector<data::Sample>& samples, const std::vector<size_t>& idx, synth::Domain domain,
                 synth::AugPolicy policy, uint64_t seed, int n_points) {
  if (idx.empty()) throw std::invalid_argument("make_batch: empty index list");
  const auto& first = samples.at(idx[0]).image;
  Batch b;
  b.domain = domain;
  b.images = Tensor({static_cast<int64_t>(idx.size()), 3, first.height, first.width});
  const bool source = domain == synth::Domain::source;
  for (size_t k = 0; k < idx.size(); ++k) {
    const data::Sample& s = samples.at(idx[k]);
    if (!source) {
      infer::put_image(b.images, static_cast<int64_t>(k), s.image);
      continue;
    }
    if (!s.labels || !s.cloud) throw std::invalid_argument("make_batch: source sample without labels or cloud");
    if (policy == synth::AugPolicy::none) {
      infer::put_image(b.images, static_cast<int64_t>(k), s.image);
      b.labels.insert(b.labels.end(), s.labels->px.begin(), s.labels->px.end());
      b.clouds.push_back(*s.cloud);
      continue;
    }
    auto [img, mask] = synth::augment(s.image, *s.labels, policy, derive_seed(seed, "sample", k));
    pc::PointCloud cloud;
    try {
      cloud = pc::make_gt_pointcloud(mask, s.slice, s.n_slices, n_points);
    } catch (const pc::PointCloudError&) {
      // Foreground pushed out of frame: fall back to the unaugmented slice.
      img = s.image;
      mask = *s.labels;
      cloud = *s.cloud;
    }
    infer::put_image(b.images, static_cast<int64_t>(k), img);
    b.labels.insert(b.labels.end(), mask.px.begin(), mask.px.end());
    b.clouds.push_back(std::move(cloud));
  }
  return b;
}

std::string LossRecord::json_line() const {
  json j = {{"step", step}, {"L_seg", seg}, {"L_emd", emd}};
  for (int i = 0; i < 3; ++i) {
    j["L_adv" + std::to_string(i + 1)] = adv[i];
    j["L_D" + std::to_string(i + 1)] = disc[i];
  }
  j["total"] = total;
  return j.dump();
}

// ------------------------------------------------------------------ Trainer

Trainer::Trainer(const TrainConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  g_ = std::make_unique<nets::Segmenter>(cfg_.segmenter_spec(), derive_seed(cfg_.seed, "init-G"));
  d1_ = std::make_unique<nets::PatchGan>(cfg_.patchgan_spec(), derive_seed(cfg_.seed, "init-D1"));
  d2_ = std::make_unique<nets::PatchGan>(cfg_.patchgan_spec(), derive_seed(cfg_.seed, "init-D2"));
  d3_ = std::make_unique<nets::PointNetDisc>(cfg_.pointnet, derive_seed(cfg_.seed, "init-D3"));
  g_opt_ = std::make_unique<optim::Adam>(g_->store(), optim::AdamOptions{cfg_.adam_beta1, cfg_.adam_beta2, 1e-8});
  d_opt_[0] = std::make_unique<optim::Sgd>(d1_->store(), cfg_.d_momentum);
  d_opt_[1] = std::make_unique<optim::Sgd>(d2_->store(), cfg_.d_momentum);
  d_opt_[2] = std::make_unique<optim::Sgd>(d3_->store(), cfg_.d_momentum);
}

LossRecord Trainer::train_step(const Batch& source, const Batch& target) {
  if (source.domain != synth::Domain::source) throw std::invalid_argument("train_step: first batch must be source");
  if (target.domain != synth::Domain::target) throw std::invalid_argument("train_step: second batch must be target");
  if (!target.labels.empty() || !target.clouds.empty()) {
    throw UdaContractError("train_step: target batch carries labels; target labels must never reach a loss");
  }
  const auto w = cfg_.effective_weights();
  const auto on = cfg_.use_d;
  const bool any_d = on[0] || on[1] || on[2];
  const bool emd = cfg_.emd_active();
  const double eps = w.clamp;
  std::array<nets::ParamStore*, 3> d_store{&d1_->store(), &d2_->store(), &d3_->store()};

  LossRecord rec;
  rec.step = step_;

  // Supervised and adversarial directions share one generator update.
  g_->store().zero_grad();
  for (auto* s : d_store) {
    s->zero_grad();
    s->set_requires_grad(false);
  }
  const nets::ForwardMode train{true, true};
  const nets::ForwardMode probe{true, false};
  const auto out_s = g_->forward(Var(source.images), train);
  std::vector<Var> terms{losses::seg_loss(out_s.prob, source.labels, eps)};
  std::vector<float> weights{1.0f};
  rec.seg = terms.back().item();
  if (emd) {
    terms.push_back(losses::emd_loss(out_s.cloud, source.clouds));
    weights.push_back(static_cast<float>(cfg_.lambda_emd));
    rec.emd = terms.back().item();
  }
  nets::SegOutputs out_t;
  Var ent_t;
  if (any_d) {
    if (target.images.empty()) throw std::invalid_argument("train_step: discriminators enabled but target batch empty");
    out_t = g_->forward(Var(target.images), train);
    if (on[0]) terms.push_back(losses::generator_adv(d1_->forward(out_t.prob), cfg_.saturating_adv));
    if (on[0]) weights.push_back(static_cast<float>(w.adv[0])), rec.adv[0] = terms.back().item();
    if (on[1]) {
      ent_t = losses::entropy_map(out_t.prob, eps);
      terms.push_back(losses::generator_adv(d2_->forward(ent_t), cfg_.saturating_adv));
      weights.push_back(static_cast<float>(w.adv[1]));
      rec.adv[1] = terms.back().item();
    }
    if (on[2]) {
      const Var z = ops::logit_margin(d3_->forward(out_t.cloud, probe));
      terms.push_back(losses::generator_adv(z, cfg_.saturating_adv));
      weights.push_back(static_cast<float>(w.adv[2]));
      rec.adv[2] = terms.back().item();
    }
  }
  const Var g_loss = terms.size() == 1 ? terms[0] : ops::weighted_sum(terms, weights);
  backward(g_loss);
  g_opt_->step(cfg_.g_lr_at(epoch_));

  // Discriminators on detached maps: source labelled 1, target 0.
  for (int i = 0; i < 3; ++i) {
    if (!on[i]) continue;
    d_store[i]->set_requires_grad(true);
    Var zs, zt;
    if (i == 0) {
      zs = d1_->forward(detach(out_s.prob));
      zt = d1_->forward(detach(out_t.prob));
    } else if (i == 1) {
      zs = d2_->forward(losses::entropy_map(detach(out_s.prob), eps));
      zt = d2_->forward(detach(ent_t));
    } else {
      zs = ops::logit_margin(d3_->forward(detach(out_s.cloud), train));
      zt = ops::logit_margin(d3_->forward(detach(out_t.cloud), train));
    }
    const Var loss = ops::scale(losses::discriminator_bce(zs, zt), static_cast<float>(w.disc[i]));
    rec.disc[i] = losses::discriminator_objective(zs.value(), zt.value());
    backward(loss);
    d_opt_[i]->step(cfg_.d_lr);
  }
  for (auto* s : d_store) s->set_requires_grad(true);

  losses::LossParts parts;
  parts.seg = rec.seg;
  parts.emd = cfg_.lambda_emd * rec.emd;
  parts.adv = rec.adv;
  parts.disc = rec.disc;
  rec.total = losses::total_objective(parts, w).total;
  ++step_;
  return rec;
}

std::string Trainer::spec_hash(const std::string& net) const {
  if (net == "G") return ckpt::hash_hex(g_->spec().canonical());
  if (net == "D1") return ckpt::hash_hex("D1;" + d1_->spec().canonical());
  if (net == "D2") return ckpt::hash_hex("D2;" + d2_->spec().canonical());
  if (net == "D3") return ckpt::hash_hex(d3_->spec().canonical());
  throw std::invalid_argument("unknown network '" + net + "'");
}

namespace {

struct NamedStore {
  const char* name;
  nets::ParamStore* store;
};

}  // namespace

void Trainer::save(const fs::path& path) const {
  ckpt::Container c;
  const std::array<NamedStore, 4> stores{{{"G", &g_->store()}, {"D1", &d1_->store()}, {"D2", &d2_->store()},
                                          {"D3", &d3_->store()}}};
  for (const auto& [net, store] : stores) {
    for (const auto& p : store->params()) c.tensors.emplace_back(std::string(net) + "/" + p.name, p.var.value());
    for (const auto& b : store->buffers()) c.tensors.emplace_back(std::string(net) + ".buf/" + b.name, b.value);
  }
  const auto& gp = g_->store().params();
  for (size_t i = 0; i < gp.size(); ++i) {
    c.tensors.emplace_back("opt.G.m/" + gp[i].name, g_opt_->first_moments()[i]);
    c.tensors.emplace_back("opt.G.v/" + gp[i].name, g_opt_->second_moments()[i]);
  }
  for (int k = 0; k < 3; ++k) {
    const auto& dp = stores[k + 1].store->params();
    for (size_t i = 0; i < dp.size(); ++i) {
      c.tensors.emplace_back("opt.D" + std::to_string(k + 1) + ".vel/" + dp[i].name, d_opt_[k]->velocity()[i]);
    }
  }
  json lam;
  for (int i = 0; i < 3; ++i) {
    lam["adv" + std::to_string(i + 1)] = cfg_.lambda.adv[i];
    lam["D" + std::to_string(i + 1)] = cfg_.lambda.disc[i];
  }
  lam["emd"] = cfg_.lambda_emd;
  c.manifest = {{"format", 1},
                {"epoch", epoch_},
                {"step", step_},
                {"seed", cfg_.seed},
                {"adam_steps", g_opt_->steps()},
                {"spec_hashes", {{"G", spec_hash("G")}, {"D1", spec_hash("D1")}, {"D2", spec_hash("D2")},
                                 {"D3", spec_hash("D3")}}},
                {"lambda", lam},
                {"config", cfg_.to_kv()}};
  ckpt::save(path, c);
}

void Trainer::load(const fs::path& path) {
  ckpt::Container c;
  try {
    c = ckpt::load(path);
  } catch (const std::exception& e) {
    throw CheckpointError(e.what());
  }
  try {
    for (const char* net : {"G", "D1", "D2", "D3"}) {
      const std::string stored = c.manifest.at("spec_hashes").at(net).get<std::string>();
      if (stored != spec_hash(net)) {
        throw CheckpointError("checkpoint " + path.string() + ": architecture of " + net +
                              " differs from the configuration (hash " + stored + " vs " + spec_hash(net) + ")");
      }
    }
  } catch (const json::exception& e) {
    throw CheckpointError("checkpoint " + path.string() + ": " + e.what());
  }
  auto restore = [&](const std::string& name, Tensor& dst) {
    const Tensor* t = c.find(name);
    if (!t) throw CheckpointError("checkpoint " + path.string() + ": missing tensor " + name);
    if (!t->same_shape(dst)) throw CheckpointError("checkpoint " + path.string() + ": shape mismatch for " + name);
    dst = *t;
  };
  const std::array<NamedStore, 4> stores{{{"G", &g_->store()}, {"D1", &d1_->store()}, {"D2", &d2_->store()},
                                          {"D3", &d3_->store()}}};
  for (const auto& [net, store] : stores) {
    for (auto& p : store->params()) restore(std::string(net) + "/" + p.name, p.var.mutable_value());
    for (auto& b : store->buffers()) restore(std::string(net) + ".buf/" + b.name, b.value);
  }
  auto& gp = g_->store().params();
  for (size_t i = 0; i < gp.size(); ++i) {
    restore("opt.G.m/" + gp[i].name, g_opt_->first_moments()[i]);
    restore("opt.G.v/" + gp[i].name, g_opt_->second_moments()[i]);
  }
  for (int k = 0; k < 3; ++k) {
    auto& dp = stores[k + 1].store->params();
    for (size_t i = 0; i < dp.size(); ++i) {
      restore("opt.D" + std::to_string(k + 1) + ".vel/" + dp[i].name, d_opt_[k]->velocity()[i]);
    }
  }
  epoch_ = c.manifest.value("epoch", 0);
  step_ = c.manifest.value("step", int64_t{0});
  g_opt_->set_steps(c.manifest.value("adam_steps", int64_t{0}));
}

TrainConfig checkpoint_config(const fs::path& path) {
  try {
    const json m = ckpt::load_manifest(path);
    return TrainConfig::from_kv(m.at("config").get<KeyValues>());
  } catch (const json::exception& e) {
    throw CheckpointError("checkpoint " + path.string() + ": " + e.what());
  } catch (const config::ConfigError& e) {
    throw CheckpointError("checkpoint " + path.string() + ": " + e.what());
  } catch (const std::runtime_error& e) {
    throw CheckpointError(e.what());
  }
}

// ------------------------------------------------------------------ data

TrainData load_train_data(const TrainConfig& cfg) {
  if (cfg.data_dir.empty()) throw data::DatasetError("data_dir is not set");
  const fs::path root = cfg.data_dir;
  const auto m = data::read_manifest(root);
  auto read_all = [&](synth::Domain d, data::Split s) {
    std::vector<synth::SubjectVolume> out;
    for (const auto& id : m.ids(d, s)) out.push_back(data::read_subject(data::subject_dir(root, {id, d, s})));
    return out;
  };
  TrainData td;
  data::SliceOptions so;
  so.crop_size = cfg.image_size;
  so.n_points = cfg.n_points;
  td.source = data::make_samples(read_all(synth::Domain::source, data::Split::train), so);
  so.keep_labels = false;
  td.target = data::make_samples(read_all(synth::Domain::target, data::Split::train), so);
  td.source_val = read_all(synth::Domain::source, data::Split::val);
  if (td.source.empty()) throw data::DatasetError(root.string() + ": no source training slices");
  return td;
}

// ------------------------------------------------------------------ loop

std::string EpochSummary::json_line() const {
  json j = json::parse(mean.json_line());
  j.erase("step");
  j["epoch"] = epoch;
  j["steps"] = steps;
  j["g_lr"] = g_lr;
  j["seconds"] = seconds;
  if (val_dice) j["val_dice"] = *val_dice;
  return j.dump();
}

double mean_dice(nets::Segmenter& g, const std::vector<synth::SubjectVolume>& vols, int crop_size) {
  if (vols.empty()) throw std::invalid_argument("mean_dice: no subjects");
  std::vector<double> per;
  for (const auto& v : vols) {
    const auto p = infer::predict_volume(g, v, crop_size);
    double s = 0.0;
    for (int c = 1; c < g.spec().n_classes; ++c) s += eval::dice(p.pred, p.gt, static_cast<uint8_t>(c));
    per.push_back(s / (g.spec().n_classes - 1));
  }
  return mean_of(per);
}

TrainResult run_training(const TrainConfig& cfg, const TrainData& data, const fs::path& out_dir,
                         const RunOptions& opt) {
  cfg.validate();
  const bool any_d = cfg.use_d[0] || cfg.use_d[1] || cfg.use_d[2];
  if (data.source.empty()) throw data::DatasetError("run_training: empty source set");
  if (any_d && data.target.empty()) throw data::DatasetError("run_training: discriminators need target slices");

  Trainer tr(cfg);
  if (opt.resume) tr.load(*opt.resume);
  TrainResult result;
  std::ofstream history, loss_log;
  if (opt.write_files) {
    fs::create_directories(out_dir);
    const auto mode = opt.resume ? std::ios::app : std::ios::trunc;
    history.open(out_dir / "history.jsonl", mode);
    loss_log.open(out_dir / "losses.jsonl", mode);
  }
  auto checkpoint = [&](const std::string& name) {
    const fs::path p = out_dir / name;
    if (opt.write_files) tr.save(p);
    return p;
  };

  const size_t ns = data.source.size();
  const size_t nt = data.target.size();
  const size_t n = nt > 0 ? std::min(ns, nt) : ns;
  const size_t bsz = std::min(static_cast<size_t>(cfg.batch_size), n);
  const size_t steps = std::max<size_t>(1, n / bsz);
  double best_val = -1.0;
  int since_best = 0;
  int done = 0;

  for (int e = tr.epoch(); e < cfg.epochs; ++e) {
    const auto t0 = std::chrono::steady_clock::now();
    tr.set_epoch(e);
    std::vector<size_t> src(ns), tgt(nt);
    std::iota(src.begin(), src.end(), 0);
    std::iota(tgt.begin(), tgt.end(), 0);
    std::mt19937_64 rs(derive_seed(cfg.seed, "shuffle-source", static_cast<uint64_t>(e)));
    std::mt19937_64 rt(derive_seed(cfg.seed, "shuffle-target", static_cast<uint64_t>(e)));
    std::shuffle(src.begin(), src.end(), rs);
    std::shuffle(tgt.begin(), tgt.end(), rt);

    EpochSummary sum;
    sum.epoch = e;
    sum.g_lr = cfg.g_lr_at(e);
    for (size_t k = 0; k < steps; ++k) {
      std::vector<size_t> is(src.begin() + k * bsz, src.begin() + (k + 1) * bsz);
      const uint64_t batch_seed = derive_seed(cfg.seed, "augment", static_cast<uint64_t>(e) * 1000003ULL + k);
      const Batch sb = make_batch(data.source, is, synth::Domain::source, cfg.aug, batch_seed, cfg.n_points);
      Batch tb;
      tb.domain = synth::Domain::target;
      if (any_d) {
        std::vector<size_t> it(tgt.begin() + k * bsz, tgt.begin() + (k + 1) * bsz);
        tb = make_batch(data.target, it, synth::Domain::target, synth::AugPolicy::none, 0, cfg.n_points);
      }
      LossRecord rec;
      try {
        rec = tr.train_step(sb, tb);
      } catch (const std::domain_error& err) {
        checkpoint("nan_dump.bin");
        throw std::runtime_error(std::string("training aborted at epoch ") + std::to_string(e) + ": " + err.what());
      }
      if (loss_log.is_open()) loss_log << rec.json_line() << '\n';
      sum.mean.seg += rec.seg;
      sum.mean.emd += rec.emd;
      for (int i = 0; i < 3; ++i) {
        sum.mean.adv[i] += rec.adv[i];
        sum.mean.disc[i] += rec.disc[i];
      }
      sum.mean.total += rec.total;
      ++sum.steps;
    }
    const double inv = 1.0 / static_cast<double>(sum.steps);
    sum.mean.seg *= inv;
    sum.mean.emd *= inv;
    for (int i = 0; i < 3; ++i) {
      sum.mean.adv[i] *= inv;
      sum.mean.disc[i] *= inv;
    }
    sum.mean.total *= inv;
    sum.mean.step = tr.step();

    bool stop = false;
    if (cfg.early_stop_patience > 0 && !data.source_val.empty() && (e + 1) % cfg.val_every == 0) {
      sum.val_dice = mean_dice(tr.segmenter(), data.source_val, cfg.image_size);
      if (*sum.val_dice > best_val) {
        best_val = *sum.val_dice;
        since_best = 0;
      } else {
        since_best += cfg.val_every;
        stop = since_best >= cfg.early_stop_patience;
      }
    }
    sum.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    tr.set_epoch(e + 1);
    if (history.is_open()) history << sum.json_line() << std::endl;
    if ((e + 1) % cfg.checkpoint_every == 0) checkpoint("ckpt_epoch" + std::to_string(e + 1) + ".bin");
    result.history.push_back(sum);
    if (opt.on_epoch) opt.on_epoch(sum);
    ++done;
    if (stop) {
      result.early_stopped = true;
      break;
    }
    if (opt.stop_after && done >= *opt.stop_after) break;
  }
  result.final_checkpoint = checkpoint("final.bin");
  return result;
}

// ------------------------------------------------------------------ ablation

std::vector<std::pair<std::string, std::array<bool, 3>>> parse_grid(const std::string& grid) {
  std::vector<std::pair<std::string, std::array<bool, 3>>> out;
  std::stringstream ss(grid);
  std::string item;
  while (std::getline(ss, item, ';')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (item.empty()) continue;
    std::array<bool, 3> use{false, false, false};
    if (item != "none" && item != "MT") {
      std::stringstream parts(item);
      std::string d;
      while (std::getline(parts, d, '+')) {
        if (d == "D1") use[0] = true;
        else if (d == "D2") use[1] = true;
        else if (d == "D3") use[2] = true;
        else throw config::ConfigError("ablation grid: unknown component '" + d + "' in '" + item + "'");
      }
    }
    out.emplace_back(item, use);
  }
  if (out.empty()) throw config::ConfigError("ablation grid is empty");
  return out;
}

std::vector<AblationRow> run_ablation(const TrainConfig& base, const std::string& grid,
                                      const std::vector<synth::SubjectVolume>& target_test, const TrainData& data,
                                      const fs::path& out_dir) {
  if (target_test.empty()) throw data::DatasetError("ablation: no labelled target test subjects");
  std::vector<AblationRow> rows;
  fs::create_directories(out_dir);
  for (const auto& [name, use] : parse_grid(grid)) {
    TrainConfig cfg = base;
    cfg.use_d = use;
    if (name == "MT") cfg.use_emd = "true";
    std::string dir = name;
    std::replace(dir.begin(), dir.end(), '+', '_');
    const auto res = run_training(cfg, data, out_dir / dir);
    Trainer tr(cfg);
    tr.load(res.final_checkpoint);
    AblationRow row;
    row.name = name;
    row.use_d = use;
    row.emd = cfg.emd_active();
    const int nc = cfg.n_classes;
    row.class_dice.assign(static_cast<size_t>(nc - 1), 0.0);
    std::vector<double> per;
    for (const auto& v : target_test) {
      const auto p = infer::predict_volume(tr.segmenter(), v, cfg.image_size);
      double s = 0.0;
      for (int c = 1; c < nc; ++c) {
        const double d = eval::dice(p.pred, p.gt, static_cast<uint8_t>(c));
        row.class_dice[static_cast<size_t>(c - 1)] += d / static_cast<double>(target_test.size());
        s += d;
      }
      per.push_back(s / (nc - 1));
    }
    row.dice_mean = mean_of(per);
    double ss = 0.0;
    for (double d : per) ss += (d - row.dice_mean) * (d - row.dice_mean);
    row.dice_sd = per.size() > 1 ? std::sqrt(ss / static_cast<double>(per.size() - 1)) : 0.0;
    rows.push_back(row);
  }

  std::ofstream tsv(out_dir / "ablation.tsv");
  tsv << "group\tconfig\tD1\tD2\tD3\tEMD\tdice_mean\tdice_sd";
  for (size_t c = 0; c < rows.front().class_dice.size(); ++c) tsv << "\tdice_class" << c + 1;
  tsv << '\n';
  json j = json::array();
  for (const auto& r : rows) {
    const bool any = r.use_d[0] || r.use_d[1] || r.use_d[2];
    const std::string group = any ? "W/ UDA" : (r.emd ? "Multi-Task" : "W/o UDA");
    tsv << group << '\t' << r.name << '\t' << r.use_d[0] << '\t' << r.use_d[1] << '\t' << r.use_d[2] << '\t' << r.emd
        << '\t' << fmt_double(r.dice_mean) << '\t' << fmt_double(r.dice_sd);
    for (double d : r.class_dice) tsv << '\t' << fmt_double(d);
    tsv << '\n';
    j.push_back({{"group", group},
                 {"config", r.name},
                 {"use_d", r.use_d},
                 {"emd", r.emd},
                 {"dice_mean", r.dice_mean},
                 {"dice_sd", r.dice_sd},
                 {"class_dice", r.class_dice}});
  }
  std::ofstream(out_dir / "ablation.json") << j.dump(2) << '\n';
  return rows;
}

}  // namespace uda::train
