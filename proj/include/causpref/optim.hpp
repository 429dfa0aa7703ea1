#pragma once

#include <cmath>
#include <vector>

#include "causpref/errors.hpp"
#include "causpref/matrix.hpp"

namespace causpref {

// Adam over a flat list of parameter matrices. State is keyed by position,
// so the caller must pass the same parameter layout every step.
class Adam {
 public:
  struct Config {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
  };

  explicit Adam(Config config) : config_(config) {}

  void step(const std::vector<Matrix*>& params,
            const std::vector<const Matrix*>& grads, double lr_override = -1.0) {
    if (params.size() != grads.size()) {
      throw Error("adam: parameter/gradient count mismatch");
    }
    if (m_.empty()) {
      for (const Matrix* p : params) {
        m_.emplace_back(p->rows(), p->cols());
        v_.emplace_back(p->rows(), p->cols());
      }
    }
    ++t_;
    const double lr = lr_override >= 0.0 ? lr_override : config_.lr;
    const double bc1 = 1.0 - std::pow(config_.beta1, t_);
    const double bc2 = 1.0 - std::pow(config_.beta2, t_);
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto& w = params[k]->values();
      const auto& g = grads[k]->values();
      auto& m = m_[k].values();
      auto& v = v_[k].values();
      for (std::size_t i = 0; i < w.size(); ++i) {
        m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g[i];
        v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g[i] * g[i];
        w[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + config_.eps);
      }
    }
  }

 private:
  Config config_;
  std::vector<Matrix> m_, v_;
  long t_ = 0;
};

// Cosine decay from lr0 down to lr_min over the given horizon.
inline double cosine_lr(double lr0, double lr_min, std::size_t step,
                        std::size_t total_steps) {
  if (total_steps <= 1) return lr_min;
  const double t = static_cast<double>(step) / static_cast<double>(total_steps - 1);
  return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + std::cos(3.141592653589793 * t));
}

}  // namespace causpref
