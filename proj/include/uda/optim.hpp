#pragma once

// First-order optimisers over a ParamStore. State tensors are exposed so
// checkpoints can round-trip them.

#include <cstdint>
#include <vector>

#include "uda/nets.hpp"

namespace uda::optim {

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam(nets::ParamStore& store, AdamOptions opt = {});

  /// Applies one update with the given learning rate; parameters without a
  /// gradient are skipped.
  void step(double lr);

  int64_t steps() const { return t_; }
  void set_steps(int64_t t) { t_ = t; }
  std::vector<Tensor>& first_moments() { return m_; }
  std::vector<Tensor>& second_moments() { return v_; }

 private:
  nets::ParamStore* store_;
  AdamOptions opt_;
  int64_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

/// Heavy-ball SGD: v <- mu v + g; p <- p - lr v.
class Sgd {
 public:
  Sgd(nets::ParamStore& store, double momentum = 0.9);

  void step(double lr);

  std::vector<Tensor>& velocity() { return vel_; }

 private:
  nets::ParamStore* store_;
  double momentum_;
  std::vector<Tensor> vel_;
};

}  // namespace uda::optim
