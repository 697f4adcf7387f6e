#include "rta/optim.hpp"

#include <cmath>

namespace rta {

void AdamW::step(std::map<std::string, Tensor>& params,
                 const GradientMap& grads, double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
  for (auto& [name, p] : params) {
    auto git = grads.find(name);
    if (git == grads.end()) continue;
    const Tensor& g = git->second;
    Tensor& m = m_.try_emplace(name, Tensor::zeros(p.shape)).first->second;
    Tensor& v = v_.try_emplace(name, Tensor::zeros(p.shape)).first->second;
    for (std::int64_t i = 0; i < p.size(); ++i) {
      const double gi = g.data[static_cast<std::size_t>(i)];
      double& mi = m.data[static_cast<std::size_t>(i)];
      double& vi = v.data[static_cast<std::size_t>(i)];
      mi = beta1 * mi + (1.0 - beta1) * gi;
      vi = beta2 * vi + (1.0 - beta2) * gi * gi;
      const double mhat = mi / bc1;
      const double vhat = vi / bc2;
      double& pi = p.data[static_cast<std::size_t>(i)];
      pi -= lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * pi);
    }
  }
}

double clip_global_norm(GradientMap& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& [name, g] : grads) {
    for (double v : g.data) sq += v * v;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (auto& [name, g] : grads) {
      for (double& v : g.data) v *= s;
    }
  }
  return norm;
}

}  // namespace rta
