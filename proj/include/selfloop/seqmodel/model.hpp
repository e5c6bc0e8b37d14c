#pragma once

// Generative model interface shared by the transformer and the two cheap
// baselines, plus the versioned checkpoint container.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "selfloop/datacycle.hpp"
#include "selfloop/seed.hpp"
#include "selfloop/seqmodel/adamw.hpp"
#include "selfloop/seqmodel/config.hpp"
#include "selfloop/seqmodel/gpt.hpp"

namespace selfloop {

struct TrainSummary {
  double final_train_loss = std::numeric_limits<double>::quiet_NaN();
  double best_val_loss = std::numeric_limits<double>::quiet_NaN();
  int best_iter = -1;  // -1 when the model has no validation passes
  std::vector<double> val_history;  // one entry per validation pass
};

/// softmax(logits / temperature) in double; temperature 0 puts all mass on
/// the first maximal logit.
template <class T>
std::vector<double> next_token_distribution(std::span<const T> logits, double temperature) {
  std::vector<double> p(logits.size(), 0.0);
  if (logits.empty()) return p;
  const auto best = static_cast<std::size_t>(
      std::distance(logits.begin(), std::max_element(logits.begin(), logits.end())));
  if (temperature <= 0.0) {
    p[best] = 1.0;
    return p;
  }
  const double mx = static_cast<double>(logits[best]);
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp((static_cast<double>(logits[i]) - mx) / temperature);
    sum += p[i];
  }
  for (double& v : p) v /= sum;
  return p;
}

template <class R>
int draw_token(std::span<const double> probs, R& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double r = u(rng);
  for (std::size_t i = 0; i < probs.size(); ++i) {
    r -= probs[i];
    if (r < 0.0) return static_cast<int>(i);
  }
  // rounding slack: last token with nonzero mass
  for (std::size_t i = probs.size(); i-- > 0;) {
    if (probs[i] > 0.0) return static_cast<int>(i);
  }
  return 0;
}

/// Independent per-sequence stream so samples do not depend on scheduling.
inline Rng sequence_rng(std::uint64_t seed, std::uint64_t index) {
  return Rng(splitmix64(seed ^ splitmix64(index + 0x2545f4914f6cdd1dULL)));
}

class GenerativeModel {
 public:
  virtual ~GenerativeModel() = default;
  virtual ModelKind kind() const = 0;
  virtual std::vector<TokenSeq> sample(const SamplerConfig& sc, std::uint64_t seed) const = 0;
  virtual nlohmann::json header() const = 0;
  virtual std::string payload() const = 0;

  const TrainSummary& summary() const noexcept { return summary_; }
  TrainSummary& summary() noexcept { return summary_; }

 protected:
  TrainSummary summary_;
};

/// Items joined in order, each followed by one EOS.
inline std::vector<int> build_token_stream(std::span<const TokenSeq> items) {
  std::vector<int> out;
  for (const auto& s : items) {
    for (Token t : s) out.push_back(token_id(t));
    out.push_back(token_id(Token::Eos));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Transformer

class NonFiniteLoss : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainSeeds {
  std::uint64_t split = 0, init = 0, batches = 0;

  static TrainSeeds from(std::uint64_t base) {
    return {splitmix64(base ^ 0x11), splitmix64(base ^ 0x22), splitmix64(base ^ 0x33)};
  }
};

class TransformerModel final : public GenerativeModel {
 public:
  explicit TransformerModel(const ModelConfig& mc) : gpt_(mc) {}

  ModelKind kind() const override { return ModelKind::Transformer; }
  Gpt<float>& gpt() noexcept { return gpt_; }
  const Gpt<float>& gpt() const noexcept { return gpt_; }

  std::vector<TokenSeq> sample(const SamplerConfig& sc, std::uint64_t seed) const override {
    sc.validate(&gpt_.config());
    std::vector<TokenSeq> out(sc.count);
    typename Gpt<float>::Decoder dec(gpt_);
    for (std::size_t i = 0; i < sc.count; ++i) {
      Rng rng = sequence_rng(seed, i);
      dec.reset();
      int tok = token_id(Token::Eos);
      TokenSeq& seq = out[i];
      for (int k = 0; k < sc.max_tokens; ++k) {
        const auto& logits = dec.step(tok);
        const auto probs = next_token_distribution<float>(logits, sc.temperature);
        tok = draw_token(probs, rng);
        if (tok == token_id(Token::Eos)) break;
        seq.push_back(token_from_id(tok));
      }
    }
    return out;
  }

  nlohmann::json header() const override {
    const auto& c = gpt_.config();
    return {{"n_layer", c.n_layer},   {"n_head", c.n_head},   {"n_embd", c.n_embd},
            {"context", c.context},   {"dropout", c.dropout}, {"vocab", c.vocab},
            {"num_params", gpt_.num_params()}};
  }

  std::string payload() const override {
    const auto& p = gpt_.params();
    std::string out(p.size() * sizeof(float), '\0');
    std::memcpy(out.data(), p.data(), out.size());
    return out;
  }

  static std::unique_ptr<TransformerModel> restore(const nlohmann::json& h, const std::string& body) {
    ModelConfig mc;
    mc.n_layer = h.at("n_layer");
    mc.n_head = h.at("n_head");
    mc.n_embd = h.at("n_embd");
    mc.context = h.at("context");
    mc.dropout = h.at("dropout");
    mc.vocab = h.at("vocab");
    auto m = std::make_unique<TransformerModel>(mc);
    auto& p = m->gpt_.params();
    if (body.size() != p.size() * sizeof(float)) {
      throw std::runtime_error("checkpoint: parameter payload has " + std::to_string(body.size()) +
                               " bytes, expected " + std::to_string(p.size() * sizeof(float)));
    }
    std::memcpy(p.data(), body.data(), body.size());
    return m;
  }

 private:
  Gpt<float> gpt_;
};

using TrainProgress = std::function<void(int iter, double train_loss, double val_loss)>;

namespace detail {

/// Repeats the stream until a full window plus its shifted target fits.
inline std::vector<int> tile_stream(std::vector<int> s, int context) {
  if (s.empty()) throw std::invalid_argument("train: empty token stream");
  const std::size_t need = static_cast<std::size_t>(context) + 1;
  const std::size_t base = s.size();
  while (s.size() < need) s.insert(s.end(), s.begin(), s.begin() + static_cast<std::ptrdiff_t>(base));
  return s;
}

inline void fill_windows(const std::vector<int>& stream, std::span<const std::size_t> starts, int context,
                  std::vector<int>& x, std::vector<int>& y) {
  const auto ctx = static_cast<std::size_t>(context);
  x.resize(starts.size() * ctx);
  y.resize(starts.size() * ctx);
  for (std::size_t b = 0; b < starts.size(); ++b) {
    std::copy_n(stream.begin() + static_cast<std::ptrdiff_t>(starts[b]), ctx, x.begin() + static_cast<std::ptrdiff_t>(b * ctx));
    std::copy_n(stream.begin() + static_cast<std::ptrdiff_t>(starts[b] + 1), ctx, y.begin() + static_cast<std::ptrdiff_t>(b * ctx));
  }
}

}  // namespace detail

/// Trains a freshly initialized transformer and returns the parameters of the
/// validation pass with the lowest loss.
inline std::unique_ptr<TransformerModel> train_transformer(const Dataset& d, const ModelConfig& mc,
                                                           const TrainConfig& tc,
                                                           const TrainSeeds& seeds,
                                                           const TrainProgress& progress = {}) {
  mc.validate();
  tc.validate();
  if (d.size() < 2) throw std::invalid_argument("train: dataset needs at least 2 items");

  Rng split_rng(seeds.split);
  auto [train_set, val_set] = split(d, tc.train_fraction, split_rng);
  const std::vector<int> train_stream = detail::tile_stream(build_token_stream(train_set.items), mc.context);
  const std::vector<int> val_stream = detail::tile_stream(build_token_stream(val_set.items), mc.context);

  auto model = std::make_unique<TransformerModel>(mc);
  Gpt<float>& gpt = model->gpt();
  Rng init_rng(seeds.init);
  gpt.init(init_rng);

  Rng batch_rng(seeds.batches);
  Rng dropout_rng(splitmix64(seeds.batches ^ 0xd0d0d0d0ULL));
  Rng val_rng(splitmix64(seeds.batches ^ 0x7a17a17aULL));

  const std::size_t B = static_cast<std::size_t>(tc.batch_size);
  const int ctx = mc.context;
  std::uniform_int_distribution<std::size_t> train_pos(0, train_stream.size() - static_cast<std::size_t>(ctx) - 1);
  std::uniform_int_distribution<std::size_t> val_pos(0, val_stream.size() - static_cast<std::size_t>(ctx) - 1);

  std::vector<std::size_t> val_starts(B * static_cast<std::size_t>(tc.val_batches));
  for (auto& s : val_starts) s = val_pos(val_rng);

  AdamW<float> opt(gpt.layout(), tc.beta1, tc.beta2, tc.weight_decay);
  Buffer<float> grad(gpt.num_params());
  Buffer<float> best_params;
  std::vector<std::size_t> starts(B);
  std::vector<int> x, y;

  TrainSummary& summary = model->summary();
  summary.best_val_loss = std::numeric_limits<double>::infinity();
  double window_loss = 0.0;

  for (int it = 0; it < tc.total_iters; ++it) {
    for (auto& s : starts) s = train_pos(batch_rng);
    detail::fill_windows(train_stream, starts, ctx, x, y);
    std::fill(grad.begin(), grad.end(), 0.0f);
    const float loss = gpt.loss(x, y, tc.batch_size, ctx, &grad, &dropout_rng);
    if (!std::isfinite(loss)) {
      throw NonFiniteLoss("train: non-finite loss at iteration " + std::to_string(it) +
                          " (batch seed " + std::to_string(seeds.batches) + ", init seed " +
                          std::to_string(seeds.init) + ")");
    }
    window_loss += loss;
    clip_grad_norm<float>(grad, tc.grad_clip);
    opt.step(gpt.params(), grad, scheduled_lr(it, tc.warmup_iters, tc.total_iters, tc.lr_max, tc.lr_min));

    if ((it + 1) % tc.val_interval == 0) {
      double val = 0.0;
      for (int vb = 0; vb < tc.val_batches; ++vb) {
        std::span<const std::size_t> vs(val_starts.data() + static_cast<std::size_t>(vb) * B, B);
        detail::fill_windows(val_stream, vs, ctx, x, y);
        val += gpt.loss(x, y, tc.batch_size, ctx);
      }
      val /= tc.val_batches;
      const double train_avg = window_loss / tc.val_interval;
      window_loss = 0.0;
      summary.val_history.push_back(val);
      summary.final_train_loss = train_avg;
      if (val < summary.best_val_loss) {
        summary.best_val_loss = val;
        summary.best_iter = it + 1;
        best_params = gpt.params();
      }
      if (progress) progress(it + 1, train_avg, val);
    }
  }
  if (best_params.empty()) {
    throw NonFiniteLoss("train: validation loss never finite (init seed " + std::to_string(seeds.init) + ")");
  }
  gpt.params() = std::move(best_params);
  return model;
}

/// Index of the smallest value; first wins on ties.
inline std::size_t best_checkpoint_index(std::span<const double> val_losses) {
  if (val_losses.empty()) throw std::invalid_argument("no validation losses");
  return static_cast<std::size_t>(
      std::distance(val_losses.begin(), std::min_element(val_losses.begin(), val_losses.end())));
}

// ---------------------------------------------------------------------------
// Baselines

/// Remembers the training items and replays them, shuffled.
class EchoModel final : public GenerativeModel {
 public:
  explicit EchoModel(std::vector<TokenSeq> items) : items_(std::move(items)) {
    if (items_.empty()) throw std::invalid_argument("echo: no training items");
  }

  ModelKind kind() const override { return ModelKind::Echo; }

  std::vector<TokenSeq> sample(const SamplerConfig& sc, std::uint64_t seed) const override {
    Rng rng(seed);
    std::vector<TokenSeq> out;
    out.reserve(sc.count);
    std::vector<std::size_t> order(items_.size());
    while (out.size() < sc.count) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::shuffle(order.begin(), order.end(), rng);
      for (std::size_t i : order) {
        if (out.size() == sc.count) break;
        out.push_back(items_[i]);
      }
    }
    return out;
  }

  nlohmann::json header() const override { return {{"items", items_.size()}}; }

  std::string payload() const override {
    std::string s;
    for (const auto& it : items_) {
      s += to_text(it);
      s += '\n';
    }
    return s;
  }

  static std::unique_ptr<EchoModel> restore(const std::string& body) {
    std::vector<TokenSeq> items;
    std::size_t pos = 0;
    while (pos < body.size()) {
      const std::size_t nl = body.find('\n', pos);
      const std::size_t end = nl == std::string::npos ? body.size() : nl;
      items.push_back(from_text(std::string_view(body).substr(pos, end - pos)));
      pos = end + 1;
    }
    return std::make_unique<EchoModel>(std::move(items));
  }

 private:
  std::vector<TokenSeq> items_;
};

/// Order-3 next-token model with additive smoothing; the context before an
/// expression is padded with EOS.
class NGramModel final : public GenerativeModel {
 public:
  static constexpr int V = kVocabSize;
  static constexpr double kDefaultAlpha = 0.01;

  explicit NGramModel(double alpha = kDefaultAlpha) : alpha_(alpha), counts_(V * V * V, 0.0) {}

  ModelKind kind() const override { return ModelKind::NGram; }

  void fit(std::span<const TokenSeq> items) {
    const int eos = token_id(Token::Eos);
    for (const auto& s : items) {
      int a = eos, b = eos;
      auto add = [&](int next) {
        counts_[index(a, b, next)] += 1.0;
        a = b;
        b = next;
      };
      for (Token t : s) add(token_id(t));
      add(eos);
    }
  }

  double probability(int a, int b, int next) const {
    double ctx = 0.0;
    for (int v = 0; v < V; ++v) ctx += counts_[index(a, b, v)];
    return (counts_[index(a, b, next)] + alpha_) / (ctx + alpha_ * V);
  }

  /// Mean per-token cross-entropy over items (each terminated by EOS).
  double cross_entropy(std::span<const TokenSeq> items) const {
    const int eos = token_id(Token::Eos);
    double nll = 0.0;
    std::size_t n = 0;
    for (const auto& s : items) {
      int a = eos, b = eos;
      auto score = [&](int next) {
        nll -= std::log(probability(a, b, next));
        ++n;
        a = b;
        b = next;
      };
      for (Token t : s) score(token_id(t));
      score(eos);
    }
    return n ? nll / static_cast<double>(n) : 0.0;
  }

  std::vector<TokenSeq> sample(const SamplerConfig& sc, std::uint64_t seed) const override {
    sc.validate();
    const int eos = token_id(Token::Eos);
    std::vector<TokenSeq> out(sc.count);
    std::array<double, V> logp{};
    for (std::size_t i = 0; i < sc.count; ++i) {
      Rng rng = sequence_rng(seed, i);
      int a = eos, b = eos;
      for (int k = 0; k < sc.max_tokens; ++k) {
        for (int v = 0; v < V; ++v) logp[static_cast<std::size_t>(v)] = std::log(probability(a, b, v));
        const auto probs = next_token_distribution<double>(logp, sc.temperature);
        const int tok = draw_token(probs, rng);
        if (tok == eos) break;
        out[i].push_back(token_from_id(tok));
        a = b;
        b = tok;
      }
    }
    return out;
  }

  nlohmann::json header() const override { return {{"order", 3}, {"alpha", alpha_}}; }

  std::string payload() const override {
    std::string out(counts_.size() * sizeof(double), '\0');
    std::memcpy(out.data(), counts_.data(), out.size());
    return out;
  }

  static std::unique_ptr<NGramModel> restore(const nlohmann::json& h, const std::string& body) {
    auto m = std::make_unique<NGramModel>(h.at("alpha").get<double>());
    if (body.size() != m->counts_.size() * sizeof(double)) {
      throw std::runtime_error("checkpoint: n-gram payload size mismatch");
    }
    std::memcpy(m->counts_.data(), body.data(), body.size());
    return m;
  }

 private:
  static std::size_t index(int a, int b, int c) {
    return static_cast<std::size_t>((a * V + b) * V + c);
  }

  double alpha_;
  std::vector<double> counts_;
};

inline std::unique_ptr<EchoModel> train_echo(const Dataset& d) {
  auto m = std::make_unique<EchoModel>(d.items);
  return m;
}

inline std::unique_ptr<NGramModel> train_ngram(const Dataset& d) {
  auto m = std::make_unique<NGramModel>();
  m->fit(d.items);
  m->summary().final_train_loss = m->cross_entropy(d.items);
  return m;
}

/// Dispatches on the model kind; the transformer always starts from a fresh
/// initialization.
inline std::unique_ptr<GenerativeModel> train_model(ModelKind kind, const Dataset& d,
                                                    const ModelConfig& mc, const TrainConfig& tc,
                                                    const TrainSeeds& seeds,
                                                    const TrainProgress& progress = {}) {
  switch (kind) {
    case ModelKind::Transformer: return train_transformer(d, mc, tc, seeds, progress);
    case ModelKind::Echo: return train_echo(d);
    case ModelKind::NGram: return train_ngram(d);
  }
  throw std::invalid_argument("unknown model kind");
}

// ---------------------------------------------------------------------------
// Checkpoint container:
//   8-byte magic "SLCKPT\0\0", u32 format version, u32 model kind,
//   u64 header length, JSON header, u64 payload length, payload bytes.
// Integers are little-endian.

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[8] = {'S', 'L', 'C', 'K', 'P', 'T', '\0', '\0'};

namespace detail {

template <class U>
void put(std::ostream& os, U v) {
  unsigned char b[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), sizeof(U));
}

template <class U>
U get(std::istream& is) {
  unsigned char b[sizeof(U)];
  if (!is.read(reinterpret_cast<char*>(b), sizeof(U))) throw std::runtime_error("checkpoint: truncated file");
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(b[i]) << (8 * i);
  return v;
}

inline nlohmann::json nan_safe(double v) {
  return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
}

inline double nan_restore(const nlohmann::json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

}  // namespace detail

inline void save_checkpoint(const GenerativeModel& m, const std::string& path,
                            const std::string& manifest_hash = {}) {
  nlohmann::json h = m.header();
  h["kind"] = std::string(to_string(m.kind()));
  h["best_val_loss"] = detail::nan_safe(m.summary().best_val_loss);
  h["final_train_loss"] = detail::nan_safe(m.summary().final_train_loss);
  h["best_iter"] = m.summary().best_iter;
  h["manifest_hash"] = manifest_hash;
  const std::string header = h.dump();
  const std::string body = m.payload();

  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open '" + tmp + "' for writing");
    os.write(kCheckpointMagic, sizeof kCheckpointMagic);
    detail::put<std::uint32_t>(os, kCheckpointVersion);
    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(m.kind()));
    detail::put<std::uint64_t>(os, header.size());
    os.write(header.data(), static_cast<std::streamsize>(header.size()));
    detail::put<std::uint64_t>(os, body.size());
    os.write(body.data(), static_cast<std::streamsize>(body.size()));
    if (!os) throw std::runtime_error("write failed for '" + tmp + "'");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    throw std::runtime_error("cannot move checkpoint into place at '" + path + "'");
  }
}

/// Loads any model kind. A non-empty `expected_manifest` must match the hash
/// recorded at save time.
inline std::unique_ptr<GenerativeModel> load_checkpoint(const std::string& path,
                                                        const std::string& expected_manifest = {}) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint '" + path + "'");
  char magic[8];
  if (!is.read(magic, sizeof magic) || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) {
    throw std::runtime_error("'" + path + "' is not a checkpoint (bad magic)");
  }
  const auto version = detail::get<std::uint32_t>(is);
  if (version != kCheckpointVersion) {
    throw std::runtime_error("checkpoint '" + path + "' has format version " + std::to_string(version) +
                             ", this build reads version " + std::to_string(kCheckpointVersion));
  }
  const auto kind = static_cast<ModelKind>(detail::get<std::uint32_t>(is));
  std::string header(detail::get<std::uint64_t>(is), '\0');
  if (!is.read(header.data(), static_cast<std::streamsize>(header.size()))) {
    throw std::runtime_error("checkpoint: truncated header");
  }
  std::string body(detail::get<std::uint64_t>(is), '\0');
  if (!is.read(body.data(), static_cast<std::streamsize>(body.size()))) {
    throw std::runtime_error("checkpoint: truncated payload");
  }
  const nlohmann::json h = nlohmann::json::parse(header);
  if (!expected_manifest.empty() && h.value("manifest_hash", std::string{}) != expected_manifest) {
    throw std::runtime_error("checkpoint '" + path + "' belongs to manifest " +
                             h.value("manifest_hash", std::string{"<none>"}) + ", expected " +
                             expected_manifest);
  }

  std::unique_ptr<GenerativeModel> m;
  switch (kind) {
    case ModelKind::Transformer: m = TransformerModel::restore(h, body); break;
    case ModelKind::Echo: m = EchoModel::restore(body); break;
    case ModelKind::NGram: m = NGramModel::restore(h, body); break;
    default: throw std::runtime_error("checkpoint: unknown model kind " + std::to_string(static_cast<unsigned>(kind)));
  }
  m->summary().best_val_loss = detail::nan_restore(h.at("best_val_loss"));
  m->summary().final_train_loss = detail::nan_restore(h.at("final_train_loss"));
  m->summary().best_iter = h.at("best_iter");
  return m;
}

}  // namespace selfloop
