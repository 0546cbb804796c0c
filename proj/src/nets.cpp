#include "uda/nets.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

#include "uda/core/rng.hpp"

namespace uda::nets {
namespace {

uint64_t fnv_bytes(uint64_t h, const void* p, size_t n) {
  const auto* b = static_cast<const unsigned char*>(p);
  for (size_t i = 0; i < n; ++i) {
    h ^= b[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string join(const std::vector<int>& v) {
  std::ostringstream os;
  for (size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  return os.str();
}

int64_t conv_bn_count(int64_t in, int64_t out, int64_t k) { return in * out * k * k + 2 * out; }

Var conv_bn_relu(const Var& x, const ConvBN& c, ForwardMode mode, bool relu = true) {
  Var y = ops::conv2d(x, c.w, Var(), c.opt);
  ops::BatchNormState st{c.running_mean, c.running_var, mode.training, mode.update_running};
  y = ops::batch_norm(y, c.gamma, c.beta, st);
  return relu ? ops::relu(y) : y;
}

// Pointwise / dense variant: weight stored as [out,in].
Var dense_bn_relu(const Var& x, const ConvBN& c, ForwardMode mode) {
  Var y = x.value().ndim() == 3 ? ops::pointwise(x, c.w, Var()) : ops::linear(x, c.w, Var());
  ops::BatchNormState st{c.running_mean, c.running_var, mode.training, mode.update_running};
  return ops::relu(ops::batch_norm(y, c.gamma, c.beta, st));
}

void check_finite(const Tensor& t, const char* what) {
  for (float v : t.storage()) {
    if (!std::isfinite(v)) throw std::invalid_argument(std::string(what) + ": non-finite input");
  }
}

}  // namespace

// ---------------------------------------------------------------- ParamStore

Var ParamStore::add_weight(const std::string& name, Shape shape, int64_t fan_in, uint64_t seed, float gain) {
  Tensor t(std::move(shape));
  if (fan_in > 0) {
    Rng rng(derive_seed(seed, name));
    const double sd = std::sqrt(static_cast<double>(gain) / static_cast<double>(fan_in));
    for (auto& v : t.storage()) v = static_cast<float>(rng.normal(0.0, sd));
  }
  params_.push_back({name, Var(std::move(t), true)});
  return params_.back().var;
}

Var ParamStore::add_constant(const std::string& name, Shape shape, float value) {
  params_.push_back({name, Var(Tensor(std::move(shape), value), true)});
  return params_.back().var;
}

Tensor* ParamStore::add_buffer(const std::string& name, Shape shape, float value) {
  buffers_.push_back({name, Tensor(std::move(shape), value)});
  return &buffers_.back().value;
}

const Param* ParamStore::find(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name == name) return &p;
  return nullptr;
}

Tensor* ParamStore::find_buffer(const std::string& name) {
  for (auto& b : buffers_)
    if (b.name == name) return &b.value;
  return nullptr;
}

int64_t ParamStore::count() const {
  int64_t n = 0;
  for (const auto& p : params_) n += p.var.value().numel();
  return n;
}

void ParamStore::set_requires_grad(bool on) {
  for (auto& p : params_) p.var.set_requires_grad(on);
}

void ParamStore::zero_grad() {
  for (auto& p : params_) p.var.zero_grad();
}

uint64_t ParamStore::hash() const {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& p : params_) {
    h = fnv_bytes(h, p.name.data(), p.name.size());
    h = fnv_bytes(h, p.var.value().data(), sizeof(float) * static_cast<size_t>(p.var.value().numel()));
  }
  for (const auto& b : buffers_) {
    h = fnv_bytes(h, b.name.data(), b.name.size());
    h = fnv_bytes(h, b.value.data(), sizeof(float) * static_cast<size_t>(b.value.numel()));
  }
  return h;
}

// ----------------------------------------------------------------- Segmenter

void SegmenterSpec::validate() const {
  if (in_channels < 1) throw std::invalid_argument("segmenter: in_channels must be >= 1");
  if (n_classes < 2) throw std::invalid_argument("segmenter: n_classes must be >= 2");
  if (base_width < 1) throw std::invalid_argument("segmenter: base_width must be >= 1");
  if (n_points < 1) throw std::invalid_argument("segmenter: n_points must be >= 1");
  if (image_size < 32 || image_size % 16 != 0) {
    throw std::invalid_argument("segmenter: image_size must be a multiple of 16 and >= 32");
  }
  if (dilations.empty()) throw std::invalid_argument("segmenter: at least one bottleneck block");
  for (int d : dilations)
    if (d < 1) throw std::invalid_argument("segmenter: dilation must be >= 1");
}

std::string SegmenterSpec::canonical() const {
  std::ostringstream os;
  os << "segmenter;in=" << in_channels << ";classes=" << n_classes << ";base=" << base_width
     << ";points=" << n_points << ";size=" << image_size << ";dil=" << join(dilations);
  return os.str();
}

namespace {
// Side of the point-head convolution output: kernel 6, stride 2, pad 2.
int pc_side(int image_size) { return (image_size / 16 + 4 - 6) / 2 + 1; }
}  // namespace

ConvBN Segmenter::make_conv_bn(const std::string& name, int in_ch, int out_ch, int k, ops::Conv2dOptions opt,
                               uint64_t seed) {
  ConvBN c;
  c.w = store_.add_weight(name + ".w", {out_ch, in_ch, k, k}, static_cast<int64_t>(in_ch) * k * k, seed);
  c.gamma = store_.add_constant(name + ".gamma", {out_ch}, 1.0f);
  c.beta = store_.add_constant(name + ".beta", {out_ch}, 0.0f);
  c.running_mean = store_.add_buffer(name + ".running_mean", {out_ch}, 0.0f);
  c.running_var = store_.add_buffer(name + ".running_var", {out_ch}, 1.0f);
  c.opt = opt;
  return c;
}

Segmenter::Segmenter(const SegmenterSpec& spec, uint64_t seed) : spec_(spec) {
  spec_.validate();
  const int b = spec_.base_width;
  const ops::Conv2dOptions same{1, 1, 1};
  int in = spec_.in_channels;
  for (int l = 0; l < kLevels; ++l) {
    const int w = b << l;
    const std::string p = "enc" + std::to_string(l);
    enc_.push_back({make_conv_bn(p + ".a", in, w, 3, same, seed), make_conv_bn(p + ".b", w, w, 3, same, seed)});
    in = w;
  }
  const int wb = b * 16;
  bottleneck_in_ = make_conv_bn("bottleneck.in", in, wb, 3, same, seed);
  for (size_t i = 0; i < spec_.dilations.size(); ++i) {
    const int d = spec_.dilations[i];
    const ops::Conv2dOptions dil{1, d, d};
    const std::string p = "res" + std::to_string(i);
    res_.push_back({make_conv_bn(p + ".a", wb, wb, 3, dil, seed), make_conv_bn(p + ".b", wb, wb, 3, dil, seed)});
  }
  in = wb;
  for (int l = kLevels - 1; l >= 0; --l) {
    const int w = b << l;
    const std::string p = "dec" + std::to_string(l);
    UpLevel u;
    u.reduce = make_conv_bn(p + ".reduce", in, w, 3, same, seed);
    u.a = make_conv_bn(p + ".a", 2 * w, w, 3, same, seed);
    u.b = make_conv_bn(p + ".b", w, w, 3, same, seed);
    dec_.push_back(u);
    in = w;
  }
  head_w_ = store_.add_weight("head.w", {spec_.n_classes, b, 1, 1}, b, seed, 1.0f);
  head_b_ = store_.add_constant("head.b", {spec_.n_classes}, 0.0f);

  pc_conv_w_ = store_.add_weight("pc.conv.w", {b, wb, 6, 6}, static_cast<int64_t>(wb) * 36, seed);
  pc_conv_b_ = store_.add_constant("pc.conv.b", {b}, 0.0f);
  const int side = pc_side(spec_.image_size);
  const int64_t fc_in = static_cast<int64_t>(b) * side * side;
  pc_fc_w_ = store_.add_weight("pc.fc.w", {static_cast<int64_t>(spec_.n_points) * 3, fc_in}, fc_in, seed, 1.0f);
  pc_fc_b_ = store_.add_constant("pc.fc.b", {static_cast<int64_t>(spec_.n_points) * 3}, 0.0f);
}

SegOutputs Segmenter::forward(const Var& x, ForwardMode mode) const {
  const auto& s = x.shape();
  if (s.size() != 4 || s[1] != spec_.in_channels || s[2] != spec_.image_size || s[3] != spec_.image_size) {
    throw ShapeError("segmenter: expected [B," + std::to_string(spec_.in_channels) + "," +
                     std::to_string(spec_.image_size) + "," + std::to_string(spec_.image_size) + "], got " +
                     shape_str(s));
  }
  std::vector<Var> skips;
  Var h = x;
  for (const auto& lv : enc_) {
    h = conv_bn_relu(h, lv.a, mode);
    h = conv_bn_relu(h, lv.b, mode);
    skips.push_back(h);
    h = ops::max_pool2x2(h);
  }
  h = conv_bn_relu(h, bottleneck_in_, mode);
  for (const auto& rb : res_) {
    Var r = conv_bn_relu(h, rb.a, mode);
    r = conv_bn_relu(r, rb.b, mode, false);
    h = ops::relu(ops::add(h, r));
  }
  const Var bottleneck = h;

  for (size_t i = 0; i < dec_.size(); ++i) {
    const auto& u = dec_[i];
    h = conv_bn_relu(ops::upsample2x(h), u.reduce, mode);
    h = ops::concat_channels(h, skips[skips.size() - 1 - i]);
    h = conv_bn_relu(h, u.a, mode);
    h = conv_bn_relu(h, u.b, mode);
  }
  SegOutputs out;
  out.logits = ops::conv2d(h, head_w_, head_b_);
  out.prob = ops::softmax_channels(out.logits);

  Var p = ops::relu(ops::conv2d(bottleneck, pc_conv_w_, pc_conv_b_, {2, 2, 1}));
  const int64_t batch = s[0];
  p = ops::reshape(p, {batch, p.value().numel() / batch});
  p = ops::sigmoid(ops::linear(p, pc_fc_w_, pc_fc_b_));
  out.cloud = ops::reshape(p, {batch, spec_.n_points, 3});
  return out;
}

// ------------------------------------------------------------------ PatchGan

void PatchGanSpec::validate() const {
  if (in_channels < 1) throw std::invalid_argument("patchgan: in_channels must be >= 1");
  if (widths.empty()) throw std::invalid_argument("patchgan: no layers");
  for (int w : widths)
    if (w < 1) throw std::invalid_argument("patchgan: widths must be >= 1");
  if (kernel < 1 || stride < 1 || pad < 0) throw std::invalid_argument("patchgan: bad convolution geometry");
}

std::string PatchGanSpec::canonical() const {
  std::ostringstream os;
  os << "patchgan;in=" << in_channels << ";widths=" << join(widths) << ";k=" << kernel << ";s=" << stride
     << ";p=" << pad << ";slope=" << slope;
  return os.str();
}

PatchGan::PatchGan(const PatchGanSpec& spec, uint64_t seed) : spec_(spec) {
  spec_.validate();
  int in = spec_.in_channels;
  const int k = spec_.kernel;
  for (size_t i = 0; i < spec_.widths.size(); ++i) {
    const int out = spec_.widths[i];
    const std::string p = "conv" + std::to_string(i);
    const float gain = 2.0f / (1.0f + spec_.slope * spec_.slope);
    w_.push_back(store_.add_weight(p + ".w", {out, in, k, k}, static_cast<int64_t>(in) * k * k, seed, gain));
    b_.push_back(store_.add_constant(p + ".b", {out}, 0.0f));
    in = out;
  }
}

Var PatchGan::forward(const Var& x) const {
  if (x.value().ndim() != 4 || x.shape()[1] != spec_.in_channels) {
    throw ShapeError("patchgan: expected " + std::to_string(spec_.in_channels) + " input channels, got " +
                     shape_str(x.shape()));
  }
  Var h = x;
  const ops::Conv2dOptions opt{spec_.stride, spec_.pad, 1};
  for (size_t i = 0; i < w_.size(); ++i) {
    h = ops::conv2d(h, w_[i], b_[i], opt);
    if (i + 1 < w_.size()) h = ops::leaky_relu(h, spec_.slope);
  }
  return h;
}

// -------------------------------------------------------------- PointNetDisc

void PointNetSpec::validate() const {
  auto positive = [](const std::vector<int>& v, const char* what) {
    if (v.empty()) throw std::invalid_argument(std::string("pointnet: empty ") + what);
    for (int w : v)
      if (w < 1) throw std::invalid_argument(std::string("pointnet: widths must be >= 1 in ") + what);
  };
  positive(tnet_widths, "tnet_widths");
  positive(tnet_fc, "tnet_fc");
  positive(point_widths, "point_widths");
  positive(feature_widths, "feature_widths");
  positive(fc_widths, "fc_widths");
}

std::string PointNetSpec::canonical() const {
  std::ostringstream os;
  os << "pointnet;tnet=" << join(tnet_widths) << "/" << join(tnet_fc) << ";point=" << join(point_widths)
     << ";feature=" << join(feature_widths) << ";fc=" << join(fc_widths) << ";ft=" << feature_transform;
  return os.str();
}

namespace {

ConvBN make_dense_bn(ParamStore& store, const std::string& name, int in, int out, uint64_t seed) {
  ConvBN c;
  c.w = store.add_weight(name + ".w", {out, in}, in, seed);
  c.gamma = store.add_constant(name + ".gamma", {out}, 1.0f);
  c.beta = store.add_constant(name + ".beta", {out}, 0.0f);
  c.running_mean = store.add_buffer(name + ".running_mean", {out}, 0.0f);
  c.running_var = store.add_buffer(name + ".running_var", {out}, 1.0f);
  return c;
}

}  // namespace

PointNetDisc::TNet PointNetDisc::make_tnet(const std::string& prefix, int k, uint64_t seed) {
  TNet t;
  t.k = k;
  int in = k;
  for (size_t i = 0; i < spec_.tnet_widths.size(); ++i) {
    t.convs.push_back(make_dense_bn(store_, prefix + ".conv" + std::to_string(i), in, spec_.tnet_widths[i], seed));
    in = spec_.tnet_widths[i];
  }
  for (size_t i = 0; i < spec_.tnet_fc.size(); ++i) {
    t.fcs.push_back(make_dense_bn(store_, prefix + ".fc" + std::to_string(i), in, spec_.tnet_fc[i], seed));
    in = spec_.tnet_fc[i];
  }
  // Zero weights and identity bias: the transform starts as the identity.
  t.out_w = store_.add_weight(prefix + ".out.w", {k * k, in}, 0, seed);
  Tensor eye({k * k});
  for (int i = 0; i < k; ++i) eye[i * k + i] = 1.0f;
  store_.params().push_back({prefix + ".out.b", Var(std::move(eye), true)});
  t.out_b = store_.params().back().var;
  return t;
}

PointNetDisc::PointNetDisc(const PointNetSpec& spec, uint64_t seed) : spec_(spec) {
  spec_.validate();
  input_tnet_ = make_tnet("tnet3", 3, seed);
  int in = 3;
  for (size_t i = 0; i < spec_.point_widths.size(); ++i) {
    point_.push_back(make_dense_bn(store_, "point" + std::to_string(i), in, spec_.point_widths[i], seed));
    in = spec_.point_widths[i];
  }
  if (spec_.feature_transform) feature_tnet_ = make_tnet("tnetf", in, seed);
  for (size_t i = 0; i < spec_.feature_widths.size(); ++i) {
    feature_.push_back(make_dense_bn(store_, "feature" + std::to_string(i), in, spec_.feature_widths[i], seed));
    in = spec_.feature_widths[i];
  }
  for (size_t i = 0; i < spec_.fc_widths.size(); ++i) {
    fc_.push_back(make_dense_bn(store_, "fc" + std::to_string(i), in, spec_.fc_widths[i], seed));
    in = spec_.fc_widths[i];
  }
  out_.w = store_.add_weight("out.w", {2, in}, in, seed, 1.0f);
  out_.b = store_.add_constant("out.b", {2}, 0.0f);
}

Var PointNetDisc::run_tnet(const TNet& t, const Var& pts, ForwardMode mode) const {
  Var h = pts;
  for (const auto& c : t.convs) h = dense_bn_relu(h, c, mode);
  h = ops::max_over_last(h);
  for (const auto& c : t.fcs) h = dense_bn_relu(h, c, mode);
  h = ops::linear(h, t.out_w, t.out_b);
  return ops::reshape(h, {pts.shape()[0], t.k, t.k});
}

Var PointNetDisc::input_transform(const Var& cloud, ForwardMode mode) const {
  return run_tnet(input_tnet_, ops::transpose12(cloud), mode);
}

Var PointNetDisc::forward(const Var& cloud, ForwardMode mode) const {
  if (cloud.value().ndim() != 3 || cloud.shape()[2] != 3) {
    throw ShapeError("pointnet: expected [B,N,3], got " + shape_str(cloud.shape()));
  }
  Var pts = ops::transpose12(cloud);  // [B,3,N]
  pts = ops::point_transform(pts, run_tnet(input_tnet_, pts, mode));
  Var h = pts;
  for (const auto& c : point_) h = dense_bn_relu(h, c, mode);
  if (spec_.feature_transform) h = ops::point_transform(h, run_tnet(feature_tnet_, h, mode));
  for (const auto& c : feature_) h = dense_bn_relu(h, c, mode);
  h = ops::max_over_last(h);
  for (const auto& c : fc_) h = dense_bn_relu(h, c, mode);
  return ops::linear(h, out_.w, out_.b);
}

// ----------------------------------------------------------- checked forward

SegOutputs seg_forward(const Segmenter& g, const Tensor& batch, ForwardMode mode) {
  if (batch.ndim() != 4) throw ShapeError("seg_forward: expected [B,C,H,W], got " + shape_str(batch.shape()));
  if (batch.dim(2) % 16 != 0 || batch.dim(3) % 16 != 0) {
    throw ShapeError("seg_forward: spatial dims must be divisible by 16, got " + shape_str(batch.shape()));
  }
  return g.forward(Var(batch), mode);
}

Tensor patchgan_forward(const PatchGan& d, const Tensor& map) { return d.forward(Var(map)).value(); }

Tensor pointnet_forward(const PointNetDisc& d, const Tensor& cloud, ForwardMode mode) {
  check_finite(cloud, "pointnet_forward");
  return ops::softmax_channels(d.forward(Var(cloud), mode)).value();
}

// ------------------------------------------------------------ closed forms

int64_t count_parameters(const SegmenterSpec& spec) {
  const int64_t b = spec.base_width;
  int64_t n = 0;
  int64_t in = spec.in_channels;
  for (int l = 0; l < Segmenter::kLevels; ++l) {
    const int64_t w = b << l;
    n += conv_bn_count(in, w, 3) + conv_bn_count(w, w, 3);
    in = w;
  }
  const int64_t wb = 16 * b;
  n += conv_bn_count(in, wb, 3);
  n += static_cast<int64_t>(spec.dilations.size()) * 2 * conv_bn_count(wb, wb, 3);
  in = wb;
  for (int l = Segmenter::kLevels - 1; l >= 0; --l) {
    const int64_t w = b << l;
    n += conv_bn_count(in, w, 3) + conv_bn_count(2 * w, w, 3) + conv_bn_count(w, w, 3);
    in = w;
  }
  n += b * spec.n_classes + spec.n_classes;
  n += wb * b * 36 + b;
  const int64_t side = pc_side(spec.image_size);
  const int64_t out = 3LL * spec.n_points;
  n += b * side * side * out + out;
  return n;
}

int64_t count_parameters(const PatchGanSpec& spec) {
  int64_t n = 0;
  int64_t in = spec.in_channels;
  for (int w : spec.widths) {
    n += in * w * spec.kernel * spec.kernel + w;
    in = w;
  }
  return n;
}

int64_t count_parameters(const PointNetSpec& spec) {
  auto tnet = [&](int64_t k) {
    int64_t n = 0, in = k;
    for (int w : spec.tnet_widths) n += in * w + 2LL * w, in = w;
    for (int w : spec.tnet_fc) n += in * w + 2LL * w, in = w;
    return n + in * k * k + k * k;
  };
  int64_t n = tnet(3);
  int64_t in = 3;
  for (int w : spec.point_widths) n += in * w + 2LL * w, in = w;
  if (spec.feature_transform) n += tnet(in);
  for (int w : spec.feature_widths) n += in * w + 2LL * w, in = w;
  for (int w : spec.fc_widths) n += in * w + 2LL * w, in = w;
  return n + 2 * in + 2;
}

}  // namespace uda::nets
