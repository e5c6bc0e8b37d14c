#pragma once

// Decoder-only transformer over the 8-token vocabulary with a hand-written
// backward pass. Scalar type is a template parameter so the same code runs in
// float for training and in double for gradient checking.
//
// Layout: token + learned position embedding, n_layer pre-norm blocks
// (causal multi-head self-attention, 4x GELU feed-forward), final LayerNorm,
// output head tied to the token embedding. Linear layers and LayerNorms carry
// no bias terms.

#include <Eigen/Core>

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "selfloop/seed.hpp"
#include "selfloop/seqmodel/config.hpp"

namespace selfloop {

/// Heap storage aligned to Eigen's widest packet. Vectorized reductions peel
/// according to pointer alignment, so a fixed base alignment is what makes
/// results reproducible from one allocation to the next.
template <class T>
using Buffer = std::vector<T, Eigen::aligned_allocator<T>>;

/// Offsets of every parameter tensor inside one flat buffer.
struct ParamLayout {
  struct Block {
    std::size_t ln1 = 0, attn = 0, attn_proj = 0, ln2 = 0, fc = 0, fc_proj = 0;
  };
  struct Span {
    std::size_t offset = 0, size = 0;
    bool decay = false;
  };

  std::size_t wte = 0, wpe = 0, lnf = 0, total = 0;
  std::vector<Block> blocks;
  std::vector<Span> spans;  // every tensor, in buffer order

  explicit ParamLayout(const ModelConfig& cfg) {
    const auto C = static_cast<std::size_t>(cfg.n_embd);
    const auto V = static_cast<std::size_t>(cfg.vocab);
    const auto P = static_cast<std::size_t>(cfg.context);
    auto take = [&](std::size_t n, bool decay) {
      const std::size_t off = total;
      spans.push_back({off, n, decay});
      total += n;
      return off;
    };
    wte = take(V * C, true);
    wpe = take(P * C, true);
    for (int l = 0; l < cfg.n_layer; ++l) {
      Block b;
      b.ln1 = take(C, false);
      b.attn = take(C * 3 * C, true);
      b.attn_proj = take(C * C, true);
      b.ln2 = take(C, false);
      b.fc = take(C * 4 * C, true);
      b.fc_proj = take(4 * C * C, true);
      blocks.push_back(b);
    }
    lnf = take(C, false);
  }
};

inline std::size_t parameter_count(const ModelConfig& cfg) { return ParamLayout(cfg).total; }

template <class T>
class Gpt {
 public:
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MapMat = Eigen::Map<Mat>;
  using CMapMat = Eigen::Map<const Mat>;
  using StrideMat = Eigen::Map<Mat, 0, Eigen::OuterStride<>>;
  using CStrideMat = Eigen::Map<const Mat, 0, Eigen::OuterStride<>>;
  using Arr = Eigen::Array<T, Eigen::Dynamic, 1>;
  using MapArr = Eigen::Map<Arr>;
  using CMapArr = Eigen::Map<const Arr>;

  static constexpr T kLnEps = T(1e-5);

  explicit Gpt(const ModelConfig& cfg) : cfg_(cfg), layout_(cfg) {
    cfg_.validate();
    params_.assign(layout_.total, T(0));
  }

  const ModelConfig& config() const noexcept { return cfg_; }
  const ParamLayout& layout() const noexcept { return layout_; }
  Buffer<T>& params() noexcept { return params_; }
  const Buffer<T>& params() const noexcept { return params_; }
  std::size_t num_params() const noexcept { return layout_.total; }

  /// N(0, 0.02) weights, residual projections scaled by 1/sqrt(2 n_layer),
  /// unit LayerNorm gains.
  template <class R>
  void init(R& rng) {
    std::normal_distribution<double> normal(0.0, 0.02);
    const double proj_std = 0.02 / std::sqrt(2.0 * cfg_.n_layer);
    std::normal_distribution<double> proj(0.0, proj_std);
    auto fill = [&](std::size_t off, std::size_t n, auto& dist) {
      for (std::size_t i = 0; i < n; ++i) params_[off + i] = static_cast<T>(dist(rng));
    };
    auto ones = [&](std::size_t off, std::size_t n) {
      std::fill_n(params_.begin() + static_cast<std::ptrdiff_t>(off), n, T(1));
    };
    const auto C = static_cast<std::size_t>(cfg_.n_embd);
    fill(layout_.wte, static_cast<std::size_t>(cfg_.vocab) * C, normal);
    fill(layout_.wpe, static_cast<std::size_t>(cfg_.context) * C, normal);
    for (const auto& b : layout_.blocks) {
      ones(b.ln1, C);
      fill(b.attn, C * 3 * C, normal);
      fill(b.attn_proj, C * C, proj);
      ones(b.ln2, C);
      fill(b.fc, C * 4 * C, normal);
      fill(b.fc_proj, 4 * C * C, proj);
    }
    ones(layout_.lnf, C);
  }

  /// Mean cross-entropy over a [batch x len] window set. With `grad` the
  /// gradient is accumulated into it (caller zeroes); with `dropout_rng`
  /// dropout is active, otherwise the pass runs in evaluation mode.
  template <class R = std::mt19937_64>
  T loss(std::span<const int> inputs, std::span<const int> targets, int batch, int len,
         Buffer<T>* grad = nullptr, R* dropout_rng = nullptr) {
    forward(inputs, batch, len, dropout_rng);
    const std::size_t N = static_cast<std::size_t>(batch) * static_cast<std::size_t>(len);
    const auto V = static_cast<std::size_t>(cfg_.vocab);
    if (targets.size() != N) throw std::invalid_argument("gpt: target count mismatch");
    double total = 0.0;
    for (std::size_t n = 0; n < N; ++n) {
      const T* p = ws_.probs.data() + n * V;
      total -= std::log(std::max<double>(static_cast<double>(p[targets[n]]), 1e-30));
    }
    const T mean = static_cast<T>(total / static_cast<double>(N));
    if (grad) backward(inputs, targets, *grad);
    return mean;
  }

  /// Logits [batch*len x vocab] in evaluation mode.
  Buffer<T> logits(std::span<const int> inputs, int batch, int len) {
    forward<std::mt19937_64>(inputs, batch, len, nullptr);
    return ws_.logits;
  }

  /// Incremental single-sequence decoder with a key/value cache.
  class Decoder {
   public:
    explicit Decoder(const Gpt& model) : m_(model) {
      const auto C = static_cast<std::size_t>(m_.cfg_.n_embd);
      const auto P = static_cast<std::size_t>(m_.cfg_.context);
      keys_.assign(m_.layout_.blocks.size(), Buffer<T>(P * C));
      values_.assign(m_.layout_.blocks.size(), Buffer<T>(P * C));
      x_.resize(C);
      h_.resize(C);
      qkv_.resize(3 * C);
      y_.resize(C);
      f_.resize(4 * C);
      scores_.resize(P);
      logits_.resize(static_cast<std::size_t>(m_.cfg_.vocab));
    }

    void reset() noexcept { pos_ = 0; }
    int position() const noexcept { return pos_; }

    /// Feeds one token and returns next-token logits.
    const Buffer<T>& step(int token) {
      const ModelConfig& cfg = m_.cfg_;
      if (pos_ >= cfg.context) throw std::out_of_range("decoder: context exhausted");
      const int C = cfg.n_embd, H = cfg.n_head, hd = cfg.head_dim();
      const auto uC = static_cast<std::size_t>(C);
      const T* p = m_.params_.data();
      const T* te = p + m_.layout_.wte + static_cast<std::size_t>(token) * uC;
      const T* pe = p + m_.layout_.wpe + static_cast<std::size_t>(pos_) * uC;
      for (std::size_t c = 0; c < uC; ++c) x_[c] = te[c] + pe[c];
      const T scale = T(1) / std::sqrt(static_cast<T>(hd));

      for (std::size_t l = 0; l < m_.layout_.blocks.size(); ++l) {
        const auto& b = m_.layout_.blocks[l];
        layer_norm_row(x_.data(), p + b.ln1, h_.data(), C);
        Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> qkv(qkv_.data(), 3 * C);
        qkv.noalias() = Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(h_.data(), C) *
                        CMapMat(p + b.attn, C, 3 * C);
        T* kc = keys_[l].data();
        T* vc = values_[l].data();
        std::copy_n(qkv_.data() + C, C, kc + static_cast<std::size_t>(pos_) * uC);
        std::copy_n(qkv_.data() + 2 * C, C, vc + static_cast<std::size_t>(pos_) * uC);
        for (int h = 0; h < H; ++h) {
          const T* q = qkv_.data() + h * hd;
          T mx = -std::numeric_limits<T>::infinity();
          for (int j = 0; j <= pos_; ++j) {
            const T* k = kc + static_cast<std::size_t>(j) * uC + h * hd;
            T s = 0;
            for (int d = 0; d < hd; ++d) s += q[d] * k[d];
            s *= scale;
            scores_[static_cast<std::size_t>(j)] = s;
            mx = std::max(mx, s);
          }
          T sum = 0;
          for (int j = 0; j <= pos_; ++j) {
            T e = std::exp(scores_[static_cast<std::size_t>(j)] - mx);
            scores_[static_cast<std::size_t>(j)] = e;
            sum += e;
          }
          T* y = y_.data() + h * hd;
          std::fill_n(y, hd, T(0));
          for (int j = 0; j <= pos_; ++j) {
            const T w = scores_[static_cast<std::size_t>(j)] / sum;
            const T* v = vc + static_cast<std::size_t>(j) * uC + h * hd;
            for (int d = 0; d < hd; ++d) y[d] += w * v[d];
          }
        }
        Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> xv(x_.data(), C);
        xv.noalias() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(y_.data(), C) *
                        CMapMat(p + b.attn_proj, C, C);
        layer_norm_row(x_.data(), p + b.ln2, h_.data(), C);
        Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> fv(f_.data(), 4 * C);
        fv.noalias() = Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(h_.data(), C) *
                       CMapMat(p + b.fc, C, 4 * C);
        for (auto& v : f_) v = gelu(v);
        xv.noalias() += fv * CMapMat(p + b.fc_proj, 4 * C, C);
      }
      layer_norm_row(x_.data(), p + m_.layout_.lnf, h_.data(), C);
      Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> lg(logits_.data(), cfg.vocab);
      lg.noalias() = Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(h_.data(), C) *
                     CMapMat(p + m_.layout_.wte, cfg.vocab, C).transpose();
      ++pos_;
      return logits_;
    }

   private:
    const Gpt& m_;
    int pos_ = 0;
    std::vector<Buffer<T>> keys_, values_;
    Buffer<T> x_, h_, qkv_, y_, f_, scores_, logits_;
  };

  static T gelu(T x) {
    const T k = T(0.7978845608028654);  // sqrt(2/pi)
    return T(0.5) * x * (T(1) + std::tanh(k * (x + T(0.044715) * x * x * x)));
  }

 private:
  struct LayerActs {
    Buffer<T> x_in, xhat1, rstd1, h1, qkv, att, attd, yatt, mask1, x_mid, xhat2, rstd2, h2,
        f, th, g, mask2;
  };
  struct Workspace {
    int batch = 0, len = 0;
    bool dropout = false;
    std::vector<LayerActs> layers;
    Buffer<T> emb_mask, x_out, xhatf, rstdf, hf, logits, probs;
    // backward scratch
    Buffer<T> dx, dh, dmo, dg, dyatt, dqkv, dP;
  };

  static void layer_norm_row(const T* x, const T* w, T* out, int C, T* xhat = nullptr,
                             T* rstd_out = nullptr) {
    T mean = 0;
    for (int c = 0; c < C; ++c) mean += x[c];
    mean /= static_cast<T>(C);
    T var = 0;
    for (int c = 0; c < C; ++c) {
      const T d = x[c] - mean;
      var += d * d;
    }
    var /= static_cast<T>(C);
    const T rstd = T(1) / std::sqrt(var + kLnEps);
    for (int c = 0; c < C; ++c) {
      const T xh = (x[c] - mean) * rstd;
      if (xhat) xhat[c] = xh;
      out[c] = xh * w[c];
    }
    if (rstd_out) *rstd_out = rstd;
  }

  void layer_norm(const Buffer<T>& x, const T* w, Buffer<T>& xhat, Buffer<T>& rstd,
                  Buffer<T>& out, std::size_t N) const {
    const int C = cfg_.n_embd;
    for (std::size_t n = 0; n < N; ++n) {
      const std::size_t o = n * static_cast<std::size_t>(C);
      layer_norm_row(x.data() + o, w, out.data() + o, C, xhat.data() + o, rstd.data() + n);
    }
  }

  /// dx += LN backward of dout; dw += sum(dout * xhat).
  void layer_norm_backward(const Buffer<T>& dout, const Buffer<T>& xhat,
                           const Buffer<T>& rstd, const T* w, T* dw, Buffer<T>& dx,
                           std::size_t N) const {
    const int C = cfg_.n_embd;
    const T invC = T(1) / static_cast<T>(C);
    for (std::size_t n = 0; n < N; ++n) {
      const std::size_t o = n * static_cast<std::size_t>(C);
      const T* dy = dout.data() + o;
      const T* xh = xhat.data() + o;
      T mean_d = 0, mean_dx = 0;
      for (int c = 0; c < C; ++c) {
        const T d = dy[c] * w[c];
        mean_d += d;
        mean_dx += d * xh[c];
        dw[c] += dy[c] * xh[c];
      }
      mean_d *= invC;
      mean_dx *= invC;
      T* out = dx.data() + o;
      for (int c = 0; c < C; ++c) {
        out[c] += rstd[n] * (dy[c] * w[c] - mean_d - xh[c] * mean_dx);
      }
    }
  }

  /// Counter-based Bernoulli(keep) stream; values are 0 or 1/keep.
  class MaskStream {
   public:
    MaskStream(std::uint64_t seed, double keep)
        : state_(seed),
          threshold_(static_cast<std::uint64_t>(keep * 4294967296.0)),
          scale_(static_cast<T>(1.0 / keep)) {}

    void fill(T* out, std::size_t n) {
      std::size_t i = 0;
      for (; i + 1 < n; i += 2) {
        const std::uint64_t bits = splitmix64(state_++);
        out[i] = (bits & 0xffffffffULL) < threshold_ ? scale_ : T(0);
        out[i + 1] = (bits >> 32) < threshold_ ? scale_ : T(0);
      }
      if (i < n) out[i] = (splitmix64(state_++) & 0xffffffffULL) < threshold_ ? scale_ : T(0);
    }

   private:
    std::uint64_t state_;
    std::uint64_t threshold_;
    T scale_;
  };

  void prepare(int batch, int len, bool dropout) {
    if (len < 1 || len > cfg_.context) {
      throw std::invalid_argument("gpt: window length " + std::to_string(len) +
                                  " outside [1, context]");
    }
    if (ws_.batch == batch && ws_.len == len && ws_.dropout == dropout) return;
    ws_.batch = batch;
    ws_.len = len;
    ws_.dropout = dropout;
    const std::size_t N = static_cast<std::size_t>(batch) * static_cast<std::size_t>(len);
    const auto C = static_cast<std::size_t>(cfg_.n_embd);
    const std::size_t A = static_cast<std::size_t>(batch) * static_cast<std::size_t>(cfg_.n_head) *
                          static_cast<std::size_t>(len) * static_cast<std::size_t>(len);
    ws_.layers.resize(layout_.blocks.size());
    for (auto& a : ws_.layers) {
      a.x_in.resize(N * C);
      a.xhat1.resize(N * C);
      a.rstd1.resize(N);
      a.h1.resize(N * C);
      a.qkv.resize(N * 3 * C);
      a.att.resize(A);
      a.attd.resize(dropout ? A : 0);
      a.yatt.resize(N * C);
      a.mask1.resize(dropout ? N * C : 0);
      a.x_mid.resize(N * C);
      a.xhat2.resize(N * C);
      a.rstd2.resize(N);
      a.h2.resize(N * C);
      a.f.resize(N * 4 * C);
      a.th.resize(N * 4 * C);
      a.g.resize(N * 4 * C);
      a.mask2.resize(dropout ? N * C : 0);
    }
    ws_.emb_mask.resize(dropout ? N * C : 0);
    ws_.x_out.resize(N * C);
    ws_.xhatf.resize(N * C);
    ws_.rstdf.resize(N);
    ws_.hf.resize(N * C);
    ws_.logits.resize(N * static_cast<std::size_t>(cfg_.vocab));
    ws_.probs.resize(N * static_cast<std::size_t>(cfg_.vocab));
  }

  template <class R>
  void forward(std::span<const int> inputs, int batch, int len, R* dropout_rng) {
    const bool dropout = dropout_rng != nullptr && cfg_.dropout > 0.0;
    prepare(batch, len, dropout);
    MaskStream masks(dropout ? (*dropout_rng)() : 0, 1.0 - cfg_.dropout);
    const std::size_t N = static_cast<std::size_t>(batch) * static_cast<std::size_t>(len);
    if (inputs.size() != N) throw std::invalid_argument("gpt: input count mismatch");
    const int C = cfg_.n_embd, H = cfg_.n_head, hd = cfg_.head_dim(), Tn = len;
    const auto uC = static_cast<std::size_t>(C);
    const T* p = params_.data();
    const auto iN = static_cast<Eigen::Index>(N);

    // embeddings
    Buffer<T>& x0 = ws_.layers.empty() ? ws_.x_out : ws_.layers[0].x_in;
    for (std::size_t n = 0; n < N; ++n) {
      const int tok = inputs[n];
      if (tok < 0 || tok >= cfg_.vocab) throw std::invalid_argument("gpt: token id out of range");
      const T* te = p + layout_.wte + static_cast<std::size_t>(tok) * uC;
      const T* pe = p + layout_.wpe + (n % static_cast<std::size_t>(Tn)) * uC;
      T* dst = x0.data() + n * uC;
      for (std::size_t c = 0; c < uC; ++c) dst[c] = te[c] + pe[c];
    }
    if (dropout) {
      masks.fill(ws_.emb_mask.data(), N * uC);
      MapArr(x0.data(), iN * C) *= CMapArr(ws_.emb_mask.data(), iN * C);
    }

    const T scale = T(1) / std::sqrt(static_cast<T>(hd));
    const auto TT = static_cast<std::size_t>(Tn) * static_cast<std::size_t>(Tn);
    for (std::size_t l = 0; l < layout_.blocks.size(); ++l) {
      const auto& b = layout_.blocks[l];
      LayerActs& a = ws_.layers[l];
      Buffer<T>& x_next = l + 1 < ws_.layers.size() ? ws_.layers[l + 1].x_in : ws_.x_out;

      layer_norm(a.x_in, p + b.ln1, a.xhat1, a.rstd1, a.h1, N);
      MapMat(a.qkv.data(), iN, 3 * C).noalias() =
          CMapMat(a.h1.data(), iN, C) * CMapMat(p + b.attn, C, 3 * C);

      for (int bi = 0; bi < batch; ++bi) {
        for (int h = 0; h < H; ++h) {
          const T* base = a.qkv.data() + static_cast<std::size_t>(bi) * Tn * 3 * uC;
          CStrideMat Q(base + h * hd, Tn, hd, Eigen::OuterStride<>(3 * C));
          CStrideMat K(base + C + h * hd, Tn, hd, Eigen::OuterStride<>(3 * C));
          CStrideMat Vv(base + 2 * C + h * hd, Tn, hd, Eigen::OuterStride<>(3 * C));
          const std::size_t aoff = (static_cast<std::size_t>(bi) * H + h) * TT;
          MapMat P(a.att.data() + aoff, Tn, Tn);
          P.noalias() = (Q * K.transpose()) * scale;
          T* pd_base = dropout ? a.attd.data() + aoff : nullptr;
          for (int i = 0; i < Tn; ++i) {
            T* row = P.data() + static_cast<std::size_t>(i) * static_cast<std::size_t>(Tn);
            const auto width = static_cast<Eigen::Index>(i + 1);
            MapArr seg(row, width);
            const T mx = seg.maxCoeff();
            seg = (seg - mx).exp();
            seg *= T(1) / seg.sum();
            std::fill(row + i + 1, row + Tn, T(0));
            if (pd_base) {
              T* drow = pd_base + static_cast<std::size_t>(i) * static_cast<std::size_t>(Tn);
              masks.fill(drow, static_cast<std::size_t>(i + 1));
              MapArr(drow, width) *= seg;
              std::fill(drow + i + 1, drow + Tn, T(0));
            }
          }
          StrideMat Y(a.yatt.data() + static_cast<std::size_t>(bi) * Tn * uC + h * hd, Tn, hd,
                      Eigen::OuterStride<>(C));
          if (pd_base) {
            Y.noalias() = CMapMat(pd_base, Tn, Tn) * Vv;
          } else {
            Y.noalias() = P * Vv;
          }
        }
      }

      MapMat xm(a.x_mid.data(), iN, C);
      xm.noalias() = CMapMat(a.yatt.data(), iN, C) * CMapMat(p + b.attn_proj, C, C);
      if (dropout) {
        masks.fill(a.mask1.data(), N * uC);
        xm.array() *= CMapMat(a.mask1.data(), iN, C).array();
      }
      xm += CMapMat(a.x_in.data(), iN, C);

      layer_norm(a.x_mid, p + b.ln2, a.xhat2, a.rstd2, a.h2, N);
      MapMat(a.f.data(), iN, 4 * C).noalias() =
          CMapMat(a.h2.data(), iN, C) * CMapMat(p + b.fc, C, 4 * C);
      {
        CMapArr f(a.f.data(), iN * 4 * C);
        MapArr th(a.th.data(), iN * 4 * C);
        th = (T(0.7978845608028654) * (f + T(0.044715) * f.cube())).tanh();
        MapArr(a.g.data(), iN * 4 * C) = T(0.5) * f * (T(1) + th);
      }
      MapMat xn(x_next.data(), iN, C);
      xn.noalias() = CMapMat(a.g.data(), iN, 4 * C) * CMapMat(p + b.fc_proj, 4 * C, C);
      if (dropout) {
        masks.fill(a.mask2.data(), N * uC);
        xn.array() *= CMapMat(a.mask2.data(), iN, C).array();
      }
      xn += CMapMat(a.x_mid.data(), iN, C);
    }

    layer_norm(ws_.x_out, p + layout_.lnf, ws_.xhatf, ws_.rstdf, ws_.hf, N);
    const int V = cfg_.vocab;
    MapMat lg(ws_.logits.data(), iN, V);
    lg.noalias() = CMapMat(ws_.hf.data(), iN, C) * CMapMat(p + layout_.wte, V, C).transpose();
    for (std::size_t n = 0; n < N; ++n) {
      const T* l = ws_.logits.data() + n * static_cast<std::size_t>(V);
      T* pr = ws_.probs.data() + n * static_cast<std::size_t>(V);
      const T mx = *std::max_element(l, l + V);
      T sum = 0;
      for (int v = 0; v < V; ++v) sum += (pr[v] = std::exp(l[v] - mx));
      for (int v = 0; v < V; ++v) pr[v] /= sum;
    }
  }

  void backward(std::span<const int> inputs, std::span<const int> targets, Buffer<T>& grad) {
    if (grad.size() != layout_.total) throw std::invalid_argument("gpt: gradient buffer size");
    const int batch = ws_.batch, Tn = ws_.len;
    const bool dropout = ws_.dropout;
    const std::size_t N = static_cast<std::size_t>(batch) * static_cast<std::size_t>(Tn);
    const int C = cfg_.n_embd, H = cfg_.n_head, hd = cfg_.head_dim(), V = cfg_.vocab;
    const auto uC = static_cast<std::size_t>(C);
    const auto iN = static_cast<Eigen::Index>(N);
    const T* p = params_.data();
    T* gp = grad.data();
    const T scale = T(1) / std::sqrt(static_cast<T>(hd));
    const T keep_scale = dropout ? static_cast<T>(1.0 / (1.0 - cfg_.dropout)) : T(1);
    const auto TT = static_cast<std::size_t>(Tn) * static_cast<std::size_t>(Tn);

    ws_.dx.assign(N * uC, T(0));
    ws_.dh.resize(N * uC);
    ws_.dmo.resize(N * uC);
    ws_.dg.resize(N * 4 * uC);
    ws_.dyatt.resize(N * uC);
    ws_.dqkv.resize(N * 3 * uC);
    ws_.dP.resize(TT);

    // head (reuse logits buffer as dlogits)
    Buffer<T>& dlogits = ws_.logits;
    const T invN = T(1) / static_cast<T>(N);
    for (std::size_t n = 0; n < N; ++n) {
      for (int v = 0; v < V; ++v) {
        const std::size_t i = n * static_cast<std::size_t>(V) + static_cast<std::size_t>(v);
        dlogits[i] = (ws_.probs[i] - (targets[n] == v ? T(1) : T(0))) * invN;
      }
    }
    CMapMat dl(dlogits.data(), iN, V);
    MapMat(gp + layout_.wte, V, C).noalias() += dl.transpose() * CMapMat(ws_.hf.data(), iN, C);
    MapMat(ws_.dh.data(), iN, C).noalias() = dl * CMapMat(p + layout_.wte, V, C);
    layer_norm_backward(ws_.dh, ws_.xhatf, ws_.rstdf, p + layout_.lnf, gp + layout_.lnf, ws_.dx, N);

    for (std::size_t l = layout_.blocks.size(); l-- > 0;) {
      const auto& b = layout_.blocks[l];
      LayerActs& a = ws_.layers[l];

      // feed-forward branch
      MapMat dmo(ws_.dmo.data(), iN, C);
      dmo = CMapMat(ws_.dx.data(), iN, C);
      if (dropout) dmo.array() *= CMapMat(a.mask2.data(), iN, C).array();
      MapMat(gp + b.fc_proj, 4 * C, C).noalias() +=
          CMapMat(a.g.data(), iN, 4 * C).transpose() * dmo;
      MapMat dg(ws_.dg.data(), iN, 4 * C);
      dg.noalias() = dmo * CMapMat(p + b.fc_proj, 4 * C, C).transpose();
      {
        CMapArr f(a.f.data(), iN * 4 * C);
        CMapArr th(a.th.data(), iN * 4 * C);
        const T k = T(0.7978845608028654);
        MapArr(ws_.dg.data(), iN * 4 * C) *=
            T(0.5) * (T(1) + th) +
            T(0.5) * f * (T(1) - th.square()) * k * (T(1) + T(3 * 0.044715) * f.square());
      }
      MapMat(gp + b.fc, C, 4 * C).noalias() += CMapMat(a.h2.data(), iN, C).transpose() * dg;
      MapMat(ws_.dh.data(), iN, C).noalias() = dg * CMapMat(p + b.fc, C, 4 * C).transpose();
      layer_norm_backward(ws_.dh, a.xhat2, a.rstd2, p + b.ln2, gp + b.ln2, ws_.dx, N);

      // attention branch
      dmo = CMapMat(ws_.dx.data(), iN, C);
      if (dropout) dmo.array() *= CMapMat(a.mask1.data(), iN, C).array();
      MapMat(gp + b.attn_proj, C, C).noalias() += CMapMat(a.yatt.data(), iN, C).transpose() * dmo;
      MapMat(ws_.dyatt.data(), iN, C).noalias() = dmo * CMapMat(p + b.attn_proj, C, C).transpose();

      for (int bi = 0; bi < batch; ++bi) {
        for (int h = 0; h < H; ++h) {
          const std::size_t row0 = static_cast<std::size_t>(bi) * static_cast<std::size_t>(Tn);
          const T* base = a.qkv.data() + row0 * 3 * uC;
          T* dbase = ws_.dqkv.data() + row0 * 3 * uC;
          CStrideMat Q(base + h * hd, Tn, hd, Eigen::OuterStride<>(3 * C));
          CStrideMat K(base + C + h * hd, Tn, hd, Eigen::OuterStride<>(3 * C));
          CStrideMat Vv(base + 2 * C + h * hd, Tn, hd, Eigen::OuterStride<>(3 * C));
          StrideMat dQ(dbase + h * hd, Tn, hd, Eigen::OuterStride<>(3 * C));
          StrideMat dK(dbase + C + h * hd, Tn, hd, Eigen::OuterStride<>(3 * C));
          StrideMat dV(dbase + 2 * C + h * hd, Tn, hd, Eigen::OuterStride<>(3 * C));
          CStrideMat dY(ws_.dyatt.data() + row0 * uC + h * hd, Tn, hd, Eigen::OuterStride<>(C));
          const std::size_t aoff = (static_cast<std::size_t>(bi) * H + h) * TT;
          CMapMat P(a.att.data() + aoff, Tn, Tn);
          MapMat dP(ws_.dP.data(), Tn, Tn);

          dP.noalias() = dY * Vv.transpose();
          const T* pd_base = dropout ? a.attd.data() + aoff : nullptr;
          if (pd_base) {
            dV.noalias() = CMapMat(pd_base, Tn, Tn).transpose() * dY;
          } else {
            dV.noalias() = P.transpose() * dY;
          }
          // softmax backward, in place: dS = P * (dP - rowsum(dP * P))
          for (int i = 0; i < Tn; ++i) {
            const auto ro = static_cast<std::size_t>(i) * static_cast<std::size_t>(Tn);
            const auto width = static_cast<Eigen::Index>(i + 1);
            T* drow_ptr = dP.data() + ro;
            MapArr drow(drow_ptr, width);
            CMapArr prow(P.data() + ro, width);
            if (pd_base) {
              CMapArr pdrow(pd_base + ro, width);
              drow = (pdrow != T(0)).select(drow * keep_scale, T(0));
            }
            const T dot = (prow * drow).sum();
            drow = prow * (drow - dot);
            std::fill(drow_ptr + i + 1, drow_ptr + Tn, T(0));
          }
          dQ.noalias() = (dP * K) * scale;
          dK.noalias() = (dP.transpose() * Q) * scale;
        }
      }

      MapMat(gp + b.attn, C, 3 * C).noalias() +=
          CMapMat(a.h1.data(), iN, C).transpose() * CMapMat(ws_.dqkv.data(), iN, 3 * C);
      MapMat(ws_.dh.data(), iN, C).noalias() =
          CMapMat(ws_.dqkv.data(), iN, 3 * C) * CMapMat(p + b.attn, C, 3 * C).transpose();
      layer_norm_backward(ws_.dh, a.xhat1, a.rstd1, p + b.ln1, gp + b.ln1, ws_.dx, N);
    }

    if (dropout) {
      MapArr(ws_.dx.data(), iN * C) *= CMapArr(ws_.emb_mask.data(), iN * C);
    }
    for (std::size_t n = 0; n < N; ++n) {
      const T* d = ws_.dx.data() + n * uC;
      T* gte = gp + layout_.wte + static_cast<std::size_t>(inputs[n]) * uC;
      T* gpe = gp + layout_.wpe + (n % static_cast<std::size_t>(Tn)) * uC;
      for (std::size_t c = 0; c < uC; ++c) {
        gte[c] += d[c];
        gpe[c] += d[c];
      }
    }
  }

  ModelConfig cfg_;
  ParamLayout layout_;
  Buffer<T> params_;
  Workspace ws_;
};

}  // namespace selfloop
