#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

#include "selfloop/expr.hpp"

namespace selfloop {

struct ModelConfig {
  int n_layer = 6;
  int n_head = 6;
  int n_embd = 384;
  int context = 256;
  double dropout = 0.2;
  int vocab = kVocabSize;

  int head_dim() const noexcept { return n_embd / n_head; }

  void validate() const {
    if (n_layer < 1 || n_head < 1 || n_embd < 1 || context < 2) {
      throw std::invalid_argument("model config: layer/head/embedding/context sizes must be positive");
    }
    if (n_embd % n_head != 0) {
      throw std::invalid_argument("model config: n_embd (" + std::to_string(n_embd) +
                                  ") not divisible by n_head (" + std::to_string(n_head) + ")");
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) {
      throw std::invalid_argument("model config: dropout must lie in [0,1)");
    }
    if (vocab != kVocabSize) throw std::invalid_argument("model config: vocab must be 8");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct TrainConfig {
  int batch_size = 64;
  int total_iters = 5000;
  double lr_max = 1e-3;
  double lr_min = 1e-4;
  int warmup_iters = 100;
  int val_interval = 250;
  int val_batches = 20;
  double train_fraction = 0.9;
  double grad_clip = 1.0;
  double weight_decay = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.99;
  std::uint64_t seed = 1337;

  void validate() const {
    if (batch_size < 1 || total_iters < 1 || val_batches < 1 || warmup_iters < 0) {
      throw std::invalid_argument("train config: batch/iteration counts must be positive");
    }
    if (!(lr_min <= lr_max) || lr_min < 0.0) {
      throw std::invalid_argument("train config: need 0 <= lr_min <= lr_max");
    }
    if (val_interval < 1 || total_iters % val_interval != 0) {
      throw std::invalid_argument("train config: val_interval (" + std::to_string(val_interval) +
                                  ") must divide total_iters (" + std::to_string(total_iters) + ")");
    }
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
      throw std::invalid_argument("train config: train_fraction must lie in (0,1)");
    }
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
      throw std::invalid_argument("train config: betas must lie in [0,1)");
    }
  }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct SamplerConfig {
  double temperature = 0.8;  // 0 selects greedy decoding
  int max_tokens = 200;
  std::size_t count = 10000;

  void validate(const ModelConfig* mc = nullptr) const {
    if (temperature < 0.0) throw std::invalid_argument("sampler: temperature must be >= 0");
    if (max_tokens < 1) throw std::invalid_argument("sampler: max_tokens must be >= 1");
    if (mc && max_tokens > mc->context) {
      throw std::invalid_argument("sampler: max_tokens (" + std::to_string(max_tokens) +
                                  ") exceeds model context (" + std::to_string(mc->context) + ")");
    }
  }

  friend bool operator==(const SamplerConfig&, const SamplerConfig&) = default;
};

enum class ModelKind : std::uint32_t { Transformer = 1, Echo = 2, NGram = 3 };

inline std::string_view to_string(ModelKind k) {
  switch (k) {
    case ModelKind::Transformer: return "transformer";
    case ModelKind::Echo: return "echo";
    case ModelKind::NGram: return "ngram";
  }
  return "?";
}

inline ModelKind model_kind_from_string(std::string_view s) {
  if (s == "transformer") return ModelKind::Transformer;
  if (s == "echo") return ModelKind::Echo;
  if (s == "ngram") return ModelKind::NGram;
  throw std::invalid_argument("unknown model kind '" + std::string(s) +
                              "' (expected transformer|echo|ngram)");
}

}  // namespace selfloop
