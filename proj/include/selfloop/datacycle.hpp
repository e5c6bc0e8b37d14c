#pragma once

// Datasets with provenance, train/validation splits and the four data-cycle
// composition policies.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "selfloop/expr.hpp"
#include "selfloop/seed.hpp"

namespace selfloop {

/// Items plus a per-item origin tag: 0 for real data, t for S_t.
struct Dataset {
  std::vector<TokenSeq> items;
  std::vector<int> provenance;

  static Dataset from_items(std::vector<TokenSeq> items, int tag) {
    Dataset d;
    d.provenance.assign(items.size(), tag);
    d.items = std::move(items);
    return d;
  }

  std::size_t size() const noexcept { return items.size(); }
  bool empty() const noexcept { return items.empty(); }

  void push_back(TokenSeq s, int tag) {
    items.push_back(std::move(s));
    provenance.push_back(tag);
  }

  void check() const {
    if (items.size() != provenance.size()) {
      throw std::logic_error("dataset: provenance count " + std::to_string(provenance.size()) +
                             " != item count " + std::to_string(items.size()));
    }
  }

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

enum class CycleKind { FullSynthetic, Balanced, Incremental, Expanding };

inline std::string_view to_string(CycleKind k) {
  switch (k) {
    case CycleKind::FullSynthetic: return "full_synthetic";
    case CycleKind::Balanced: return "balanced";
    case CycleKind::Incremental: return "incremental";
    case CycleKind::Expanding: return "expanding";
  }
  return "?";
}

inline CycleKind cycle_kind_from_string(std::string_view s) {
  if (s == "full_synthetic") return CycleKind::FullSynthetic;
  if (s == "balanced") return CycleKind::Balanced;
  if (s == "incremental") return CycleKind::Incremental;
  if (s == "expanding") return CycleKind::Expanding;
  throw std::invalid_argument("unknown data cycle '" + std::string(s) +
                              "' (expected full_synthetic|balanced|incremental|expanding)");
}

struct DataCycleSpec {
  CycleKind kind = CycleKind::FullSynthetic;
  double lambda = 1.0;  // Incremental / Expanding only

  bool uses_lambda() const noexcept {
    return kind == CycleKind::Incremental || kind == CycleKind::Expanding;
  }

  /// lambda*m as an exact integer; throws if it is not one.
  std::size_t fresh_count(std::size_t m) const {
    if (!(lambda > 0.0 && lambda <= 1.0)) {
      throw std::invalid_argument("data cycle: lambda must lie in (0,1], got " +
                                  std::to_string(lambda));
    }
    const double x = lambda * static_cast<double>(m);
    const double r = std::round(x);
    if (std::abs(x - r) > 1e-9 * std::max(1.0, x)) {
      throw std::invalid_argument("data cycle: lambda*m = " + std::to_string(x) +
                                  " is not an integer (lambda=" + std::to_string(lambda) +
                                  ", m=" + std::to_string(m) + ")");
    }
    return static_cast<std::size_t>(r);
  }

  void validate(std::size_t m) const {
    if (uses_lambda()) (void)fresh_count(m);
  }

  friend bool operator==(const DataCycleSpec&, const DataCycleSpec&) = default;
};

/// Expected |D_t| under the size law of each cycle.
inline std::size_t composed_size(const DataCycleSpec& spec, std::size_t m, std::size_t t) {
  if (spec.kind == CycleKind::Expanding) return m + spec.fresh_count(m) * t;
  return m;
}

namespace detail {

/// `k` distinct indices of [0,n) uniformly at random, in draw order.
template <class R>
std::vector<std::size_t> choose_without_replacement(std::size_t n, std::size_t k, R& rng) {
  if (k > n) {
    throw std::invalid_argument("cannot draw " + std::to_string(k) + " of " + std::to_string(n) +
                                " items without replacement");
  }
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(k);
  return idx;
}

template <class R>
void draw_into(Dataset& out, const Dataset& src, std::size_t k, R& rng) {
  for (std::size_t i : choose_without_replacement(src.size(), k, rng)) {
    out.push_back(src.items[i], src.provenance[i]);
  }
}

}  // namespace detail

/// Builds D_t. `previous` is D_{t-1} (D_0 when t == 1); `history` holds
/// S_1..S_t, each of exactly m items.
template <class R>
Dataset compose(const DataCycleSpec& spec, const Dataset& d0, const Dataset& previous,
                const std::vector<Dataset>& history, std::size_t m, R& rng) {
  const std::size_t t = history.size();
  if (t < 1) throw std::invalid_argument("compose: history must contain at least S_1");
  for (std::size_t i = 0; i < t; ++i) {
    if (history[i].size() != m) {
      throw std::invalid_argument("compose: S_" + std::to_string(i + 1) + " has " +
                                  std::to_string(history[i].size()) + " items, expected m=" +
                                  std::to_string(m));
    }
  }
  spec.validate(m);
  const Dataset& latest = history.back();

  Dataset out;
  switch (spec.kind) {
    case CycleKind::FullSynthetic:
      out = latest;
      break;
    case CycleKind::Balanced: {
      const std::size_t base = m / (t + 1);
      const std::size_t rem = m % (t + 1);
      out.items.reserve(m);
      out.provenance.reserve(m);
      for (std::size_t s = 0; s <= t; ++s) {
        const Dataset& src = s == 0 ? d0 : history[s - 1];
        detail::draw_into(out, src, base + (s < rem ? 1 : 0), rng);
      }
      break;
    }
    case CycleKind::Incremental: {
      if (previous.size() != m) {
        throw std::invalid_argument("compose: incremental cycle needs |D_{t-1}| = m, got " +
                                    std::to_string(previous.size()));
      }
      const std::size_t fresh = spec.fresh_count(m);
      detail::draw_into(out, previous, m - fresh, rng);
      detail::draw_into(out, latest, fresh, rng);
      break;
    }
    case CycleKind::Expanding: {
      out = previous;
      detail::draw_into(out, latest, spec.fresh_count(m), rng);
      break;
    }
  }
  out.check();
  return out;
}

/// Uniform random partition; the train part holds round(f*|d|) items and
/// both parts come out in shuffled order.
template <class R>
std::pair<Dataset, Dataset> split(const Dataset& d, double train_fraction, R& rng) {
  d.check();
  if (d.size() < 2) throw std::invalid_argument("split: dataset needs at least 2 items");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw std::invalid_argument("split: train fraction must lie in (0,1)");
  }
  auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(d.size())));
  n_train = std::clamp<std::size_t>(n_train, 1, d.size() - 1);

  std::vector<std::size_t> perm = detail::choose_without_replacement(d.size(), d.size(), rng);
  std::pair<Dataset, Dataset> parts;
  for (std::size_t i = 0; i < perm.size(); ++i) {
    Dataset& dst = i < n_train ? parts.first : parts.second;
    dst.push_back(d.items[perm[i]], d.provenance[perm[i]]);
  }
  return parts;
}

/// Per-origin item counts, indexed by provenance tag.
inline std::vector<std::size_t> provenance_histogram(const Dataset& d) {
  std::vector<std::size_t> h;
  for (int tag : d.provenance) {
    if (tag < 0) throw std::logic_error("negative provenance tag");
    if (static_cast<std::size_t>(tag) >= h.size()) h.resize(static_cast<std::size_t>(tag) + 1, 0);
    ++h[static_cast<std::size_t>(tag)];
  }
  return h;
}

// Persistence: the expression text file plus a sidecar of one tag per line.

inline void save_dataset(const Dataset& d, const std::string& items_path,
                         const std::string& prov_path) {
  d.check();
  write_lines(items_path, d.items);
  std::ofstream os(prov_path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open '" + prov_path + "' for writing");
  for (int tag : d.provenance) os << tag << '\n';
  if (!os) throw std::runtime_error("write failed for '" + prov_path + "'");
}

inline Dataset load_dataset(const std::string& items_path, const std::string& prov_path) {
  Dataset d;
  d.items = read_lines(items_path);
  std::ifstream is(prov_path);
  if (!is) throw std::runtime_error("cannot open '" + prov_path + "' for reading");
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    d.provenance.push_back(std::stoi(line));
  }
  if (d.provenance.size() != d.items.size()) {
    throw std::runtime_error("provenance sidecar '" + prov_path + "' has " +
                             std::to_string(d.provenance.size()) + " tags for " +
                             std::to_string(d.items.size()) + " items");
  }
  return d;
}

}  // namespace selfloop
