#pragma once

// Sample composition and normalized token-level Levenshtein diversity.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "selfloop/expr.hpp"

namespace selfloop {

struct Composition {
  std::size_t n_true = 0;
  std::size_t n_false = 0;
  std::size_t n_error = 0;

  std::size_t total() const noexcept { return n_true + n_false + n_error; }
  double true_fraction() const noexcept {
    return total() ? static_cast<double>(n_true) / static_cast<double>(total()) : 0.0;
  }
  double error_fraction() const noexcept {
    return total() ? static_cast<double>(n_error) / static_cast<double>(total()) : 0.0;
  }

  friend bool operator==(const Composition&, const Composition&) = default;
};

inline Composition composition(std::span<const TokenSeq> sample) {
  Composition c;
  for (const auto& s : sample) {
    switch (classify(s)) {
      case Classification::TrueExpr: ++c.n_true; break;
      case Classification::FalseExpr: ++c.n_false; break;
      case Classification::SyntaxError: ++c.n_error; break;
    }
  }
  return c;
}

/// Edit distance over token ids (unit-cost insert/delete/substitute).
/// Shared prefix and suffix are trimmed first; the remainder runs a two-row DP.
inline std::size_t levenshtein(std::span<const Token> a, std::span<const Token> b) {
  while (!a.empty() && !b.empty() && a.front() == b.front()) {
    a = a.subspan(1);
    b = b.subspan(1);
  }
  while (!a.empty() && !b.empty() && a.back() == b.back()) {
    a = a.first(a.size() - 1);
    b = b.first(b.size() - 1);
  }
  if (a.size() < b.size()) std::swap(a, b);
  if (b.empty()) return a.size();

  std::vector<std::size_t> row(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) row[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    std::size_t diag = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t up = row[j];
      const std::size_t sub = diag + (a[i - 1] == b[j - 1] ? 0 : 1);
      row[j] = std::min({up + 1, row[j - 1] + 1, sub});
      diag = up;
    }
  }
  return row[b.size()];
}

/// levenshtein / max(len); 0 for two empty sequences.
inline double normalized_distance(std::span<const Token> a, std::span<const Token> b) {
  const std::size_t longest = std::max(a.size(), b.size());
  if (longest == 0) return 0.0;
  return static_cast<double>(levenshtein(a, b)) / static_cast<double>(longest);
}

enum class DiversityMode { Auto, Exact, Sampled };

inline std::string_view to_string(DiversityMode m) {
  switch (m) {
    case DiversityMode::Auto: return "auto";
    case DiversityMode::Exact: return "exact";
    case DiversityMode::Sampled: return "sampled";
  }
  return "?";
}

inline DiversityMode diversity_mode_from_string(std::string_view s) {
  if (s == "auto") return DiversityMode::Auto;
  if (s == "exact") return DiversityMode::Exact;
  if (s == "sampled") return DiversityMode::Sampled;
  throw std::invalid_argument("unknown diversity mode '" + std::string(s) +
                              "' (expected auto|exact|sampled)");
}

/// Denominator for each pair's edit distance. PairLongest divides by the
/// longer of the two sequences. SampleLongest divides every pair by the
/// longest sequence in the whole sample.
enum class Normalization { PairLongest, SampleLongest };

inline std::string_view to_string(Normalization n) {
  return n == Normalization::PairLongest ? "pair" : "sample";
}

inline Normalization normalization_from_string(std::string_view s) {
  if (s == "pair") return Normalization::PairLongest;
  if (s == "sample") return Normalization::SampleLongest;
  throw std::invalid_argument("unknown normalization '" + std::string(s) +
                              "' (expected pair|sample)");
}

struct DiversitySettings {
  DiversityMode mode = DiversityMode::Auto;
  Normalization normalization = Normalization::PairLongest;
  std::size_t pair_budget = 100'000;
  std::size_t exact_max_n = 2000;  // Auto switches to sampling above this

  friend bool operator==(const DiversitySettings&, const DiversitySettings&) = default;
};

struct DiversityEstimate {
  double mean = 0.0;
  double stderr_ = 0.0;
  std::size_t pairs_evaluated = 0;
  DiversityMode mode = DiversityMode::Exact;

  friend bool operator==(const DiversityEstimate&, const DiversityEstimate&) = default;
};

/// Mean normalized distance over unordered pairs. Exact mode sorts a copy of
/// the sample first so the result depends only on the multiset. Sampled mode
/// pre-draws `pair_budget` pairs uniformly with replacement and reports the
/// standard error of their mean.
template <class R>
DiversityEstimate diversity(std::span<const TokenSeq> sample, const DiversitySettings& settings,
                            R& rng) {
  const std::size_t n = sample.size();
  if (n < 2) throw std::invalid_argument("diversity: sample needs at least 2 items");

  DiversityMode mode = settings.mode;
  if (mode == DiversityMode::Auto) {
    mode = n <= settings.exact_max_n ? DiversityMode::Exact : DiversityMode::Sampled;
  }

  std::vector<TokenSeq> sorted(sample.begin(), sample.end());
  std::sort(sorted.begin(), sorted.end());

  std::size_t sample_longest = 0;
  for (const auto& s : sorted) sample_longest = std::max(sample_longest, s.size());
  auto pair_value = [&](const TokenSeq& a, const TokenSeq& b) {
    if (settings.normalization == Normalization::PairLongest) return normalized_distance(a, b);
    if (sample_longest == 0) return 0.0;
    return static_cast<double>(levenshtein(a, b)) / static_cast<double>(sample_longest);
  };

  DiversityEstimate est;
  est.mode = mode;
  if (mode == DiversityMode::Exact) {
    double sum = 0.0;
    for (std::size_t i = 0; i + 1 < n; ++i) {
      double row = 0.0;
      for (std::size_t j = i + 1; j < n; ++j) row += pair_value(sorted[i], sorted[j]);
      sum += row;
    }
    est.pairs_evaluated = n * (n - 1) / 2;
    est.mean = sum / static_cast<double>(est.pairs_evaluated);
    return est;
  }

  if (settings.pair_budget < 2) throw std::invalid_argument("diversity: pair budget must be >= 2");
  std::vector<std::pair<std::size_t, std::size_t>> pairs(settings.pair_budget);
  std::uniform_int_distribution<std::size_t> first(0, n - 1);
  std::uniform_int_distribution<std::size_t> other(0, n - 2);
  for (auto& p : pairs) {
    const std::size_t i = first(rng);
    std::size_t j = other(rng);
    if (j >= i) ++j;
    p = {i, j};
  }
  double sum = 0.0, sum_sq = 0.0;
  for (const auto& [i, j] : pairs) {
    const double v = pair_value(sorted[i], sorted[j]);
    sum += v;
    sum_sq += v * v;
  }
  const auto k = static_cast<double>(pairs.size());
  est.mean = sum / k;
  const double var = std::max(0.0, (sum_sq - k * est.mean * est.mean) / (k - 1.0));
  est.stderr_ = std::sqrt(var / k);
  est.pairs_evaluated = pairs.size();
  return est;
}

}  // namespace selfloop
