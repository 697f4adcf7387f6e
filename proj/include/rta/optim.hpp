#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "rta/autodiff.hpp"

namespace rta {

// Decoupled-weight-decay adaptive-moment optimizer (decay defaults to 0).
class AdamW {
 public:
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;

  void step(std::map<std::string, Tensor>& params, const GradientMap& grads,
            double lr);

  std::int64_t steps_taken() const { return t_; }

 private:
  std::int64_t t_ = 0;
  std::map<std::string, Tensor> m_;
  std::map<std::string, Tensor> v_;
};

// Scales gradients so their global L2 norm is at most max_norm; returns the
// pre-clip norm.
double clip_global_norm(GradientMap& grads, double max_norm);

}  // namespace rta
