#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <vector>

#include "selfloop/seqmodel/gpt.hpp"

namespace selfloop {

/// Linear warmup to lr_max, then cosine decay to lr_min at `decay_iters`.
inline double scheduled_lr(int it, int warmup_iters, int decay_iters, double lr_max, double lr_min) {
  if (it < warmup_iters) return lr_max * (it + 1) / (warmup_iters + 1);
  if (it >= decay_iters) return lr_min;
  const double ratio = static_cast<double>(it - warmup_iters) / (decay_iters - warmup_iters);
  const double coeff = 0.5 * (1.0 + std::cos(std::numbers::pi * ratio));
  return lr_min + coeff * (lr_max - lr_min);
}

/// Scales `grad` so its global L2 norm is at most `max_norm`. Returns the
/// pre-clip norm.
template <class T>
double clip_grad_norm(std::span<T> grad, double max_norm) {
  double sq = 0.0;
  for (T g : grad) sq += static_cast<double>(g) * static_cast<double>(g);
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const auto s = static_cast<T>(max_norm / (norm + 1e-6));
    for (T& g : grad) g *= s;
  }
  return norm;
}

/// Adam with decoupled weight decay; decay applies only to spans flagged in
/// the parameter layout (matrices and embeddings, not LayerNorm gains).
template <class T>
class AdamW {
 public:
  AdamW(const ParamLayout& layout, double beta1, double beta2, double weight_decay,
        double eps = 1e-8)
      : spans_(layout.spans),
        m_(layout.total, T(0)),
        v_(layout.total, T(0)),
        beta1_(beta1),
        beta2_(beta2),
        wd_(weight_decay),
        eps_(eps) {}

  void step(Buffer<T>& params, const Buffer<T>& grad, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    const auto b1 = static_cast<T>(beta1_), b2 = static_cast<T>(beta2_);
    const auto step_size = static_cast<T>(lr / bc1);
    const auto inv_sqrt_bc2 = static_cast<T>(1.0 / std::sqrt(bc2));
    const auto eps = static_cast<T>(eps_);
    for (const auto& s : spans_) {
      const T decay = s.decay ? static_cast<T>(1.0 - lr * wd_) : T(1);
      for (std::size_t i = s.offset; i < s.offset + s.size; ++i) {
        const T g = grad[i];
        m_[i] = b1 * m_[i] + (T(1) - b1) * g;
        v_[i] = b2 * v_[i] + (T(1) - b2) * g * g;
        params[i] = params[i] * decay - step_size * m_[i] / (std::sqrt(v_[i]) * inv_sqrt_bc2 + eps);
      }
    }
  }

  long steps() const noexcept { return t_; }

 private:
  std::vector<ParamLayout::Span> spans_;
  Buffer<T> m_, v_;
  double beta1_, beta2_, wd_, eps_;
  long t_ = 0;
};

}  // namespace selfloop
