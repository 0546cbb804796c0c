#pragma once

// Network definitions: the multi-task segmenter G, the PatchGAN
// discriminator (used for both the output-space and entropy-space critics)
// and the PointNet critic over predicted point clouds.
//
// All image tensors are NCHW. Point clouds travel as [B, N, 3].

#include <cstdint>
#include <deque>
#include <string>
#include <vector>

#include "uda/core/ops.hpp"

namespace uda::nets {

struct Param {
  std::string name;
  Var var;
};

struct Buffer {
  std::string name;
  Tensor value;
};

/// Owns the trainable tensors and the non-trainable batch-norm statistics of
/// one network. Addresses of buffers are stable for the store's lifetime.
class ParamStore {
 public:
  /// He-normal weights seeded from (seed, name); fan_in = 0 gives zeros.
  Var add_weight(const std::string& name, Shape shape, int64_t fan_in, uint64_t seed, float gain = 2.0f);
  Var add_constant(const std::string& name, Shape shape, float value);
  Tensor* add_buffer(const std::string& name, Shape shape, float value);

  std::vector<Param>& params() { return params_; }
  const std::vector<Param>& params() const { return params_; }
  std::deque<Buffer>& buffers() { return buffers_; }
  const std::deque<Buffer>& buffers() const { return buffers_; }

  const Param* find(const std::string& name) const;
  Tensor* find_buffer(const std::string& name);

  /// Number of trainable scalars.
  int64_t count() const;
  void set_requires_grad(bool on);
  void zero_grad();
  /// FNV-1a over names and raw bytes of params and buffers.
  uint64_t hash() const;

 private:
  std::vector<Param> params_;
  std::deque<Buffer> buffers_;
};

/// Conv + batch norm pair with its running statistics.
struct ConvBN {
  Var w;
  Var gamma;
  Var beta;
  Tensor* running_mean = nullptr;
  Tensor* running_var = nullptr;
  ops::Conv2dOptions opt;
};

struct ForwardMode {
  bool training = true;
  /// When false, batch norm uses batch statistics but leaves running
  /// statistics untouched (used while a network is only being probed).
  bool update_running = true;
};

struct SegmenterSpec {
  int in_channels = 3;
  int n_classes = 4;
  int base_width = 32;
  int n_points = 300;
  /// Input side length; fixes the fully connected layer of the point head.
  int image_size = 224;
  std::vector<int> dilations{1, 2, 4};

  void validate() const;
  std::string canonical() const;
};

struct SegOutputs {
  Var logits;  // [B,C,H,W]
  Var prob;    // [B,C,H,W], softmax over C
  Var cloud;   // [B,N,3], sigmoid-bounded
};

class Segmenter {
 public:
  static constexpr int kLevels = 4;

  Segmenter(const SegmenterSpec& spec, uint64_t seed);

  const SegmenterSpec& spec() const { return spec_; }
  ParamStore& store() { return store_; }
  const ParamStore& store() const { return store_; }

  /// x [B,in_channels,H,W] with H, W = image_size.
  SegOutputs forward(const Var& x, ForwardMode mode) const;

 private:
  struct Level {
    ConvBN a;
    ConvBN b;
  };
  struct ResBlock {
    ConvBN a;
    ConvBN b;
  };
  struct UpLevel {
    ConvBN reduce;
    ConvBN a;
    ConvBN b;
  };

  ConvBN make_conv_bn(const std::string& name, int in_ch, int out_ch, int k, ops::Conv2dOptions opt, uint64_t seed);

  SegmenterSpec spec_;
  ParamStore store_;
  std::vector<Level> enc_;
  ConvBN bottleneck_in_;
  std::vector<ResBlock> res_;
  std::vector<UpLevel> dec_;
  Var head_w_, head_b_;
  Var pc_conv_w_, pc_conv_b_;
  Var pc_fc_w_, pc_fc_b_;
};

struct PatchGanSpec {
  int in_channels = 4;
  std::vector<int> widths{64, 128, 256, 512, 1};
  int kernel = 4;
  int stride = 2;
  int pad = 1;
  float slope = 0.2f;

  void validate() const;
  std::string canonical() const;
};

class PatchGan {
 public:
  PatchGan(const PatchGanSpec& spec, uint64_t seed);

  const PatchGanSpec& spec() const { return spec_; }
  ParamStore& store() { return store_; }
  const ParamStore& store() const { return store_; }

  /// x [B,in_channels,H,W] -> logit map [B,1,h',w'].
  Var forward(const Var& x) const;

 private:
  PatchGanSpec spec_;
  ParamStore store_;
  std::vector<Var> w_, b_;
};

struct PointNetSpec {
  std::vector<int> tnet_widths{64, 128, 1024};
  std::vector<int> tnet_fc{512, 256};
  std::vector<int> point_widths{64, 64};    // before the feature transform
  std::vector<int> feature_widths{64, 128, 1024};  // after it
  std::vector<int> fc_widths{512, 256};
  bool feature_transform = true;

  void validate() const;
  std::string canonical() const;
};

class PointNetDisc {
 public:
  PointNetDisc(const PointNetSpec& spec, uint64_t seed);

  const PointNetSpec& spec() const { return spec_; }
  ParamStore& store() { return store_; }
  const ParamStore& store() const { return store_; }

  /// cloud [B,N,3] -> logits [B,2]; column 0 is the source class.
  Var forward(const Var& cloud, ForwardMode mode) const;

  /// Learned input transform for a cloud batch, [B,3,3].
  Var input_transform(const Var& cloud, ForwardMode mode) const;

 private:
  struct TNet {
    std::vector<ConvBN> convs;  // pointwise, stored as [out,in,1,1]
    std::vector<ConvBN> fcs;
    Var out_w, out_b;
    int k = 3;
  };
  struct Dense {
    Var w, b;
  };

  TNet make_tnet(const std::string& prefix, int k, uint64_t seed);
  Var run_tnet(const TNet& t, const Var& pts, ForwardMode mode) const;

  PointNetSpec spec_;
  ParamStore store_;
  TNet input_tnet_;
  TNet feature_tnet_;
  std::vector<ConvBN> point_;
  std::vector<ConvBN> feature_;
  std::vector<ConvBN> fc_;
  Dense out_;
};

/// Checked entry points mirroring the module contract.
SegOutputs seg_forward(const Segmenter& g, const Tensor& batch, ForwardMode mode = {false, false});
Tensor patchgan_forward(const PatchGan& d, const Tensor& map);
/// Row-wise class probabilities [B,2].
Tensor pointnet_forward(const PointNetDisc& d, const Tensor& cloud, ForwardMode mode = {false, false});

int64_t count_parameters(const SegmenterSpec& spec);
int64_t count_parameters(const PatchGanSpec& spec);
int64_t count_parameters(const PointNetSpec& spec);

}  // namespace uda::nets
