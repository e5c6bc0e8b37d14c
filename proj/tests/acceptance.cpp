// Acceptance checks A1..A10. Prints one PASS/FAIL line per criterion and
// exits non-zero if any selected criterion fails.
//
//   acceptance [--only A3]... [--skip A9]... [--workdir DIR]
//
// A9 trains ten transformer generations; its run directory is resumed, so a
// finished run is only re-read.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include <unistd.h>

#include "CLI11.hpp"
#include "a9_config.hpp"
#include "oracles.hpp"
#include "selfloop/datacycle.hpp"
#include "selfloop/expr.hpp"
#include "selfloop/looprunner.hpp"
#include "selfloop/metrics.hpp"
#include "selfloop/seqmodel/gpt.hpp"

#ifndef SELFLOOP_A9_DIR
#define SELFLOOP_A9_DIR "a9_run"
#endif

namespace fs = std::filesystem;
using namespace selfloop;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// Truth-table evaluation of an AST, independent of the library evaluator.
bool table_eval(const Expr& e) {
  static constexpr bool kNot[2] = {true, false};
  static constexpr bool kAnd[2][2] = {{false, false}, {false, true}};
  static constexpr bool kOr[2][2] = {{false, true}, {true, true}};
  switch (e.kind) {
    case Expr::Kind::Leaf: return e.value;
    case Expr::Kind::Not: return kNot[table_eval(e.children[0])];
    case Expr::Kind::And: return kAnd[table_eval(e.children[0])][table_eval(e.children[1])];
    case Expr::Kind::Or: return kOr[table_eval(e.children[0])][table_eval(e.children[1])];
  }
  return false;
}

// Top-down recursion on suffixes straight from the edit-distance definition,
// memoized so 12+12 token inputs stay tractable.
std::size_t recursive_levenshtein(const TokenSeq& a, const TokenSeq& b) {
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> memo;
  std::function<std::size_t(std::size_t, std::size_t)> go = [&](std::size_t i, std::size_t j) -> std::size_t {
    if (i == a.size()) return b.size() - j;
    if (j == b.size()) return a.size() - i;
    const auto key = std::make_pair(i, j);
    if (auto it = memo.find(key); it != memo.end()) return it->second;
    std::size_t best;
    if (a[i] == b[j]) {
      best = go(i + 1, j + 1);
    } else {
      best = 1 + std::min({go(i + 1, j), go(i, j + 1), go(i + 1, j + 1)});
    }
    return memo[key] = best;
  };
  return go(0, 0);
}

TokenSeq random_string(std::size_t max_len, Rng& rng) {
  std::uniform_int_distribution<std::size_t> len(0, max_len);
  std::uniform_int_distribution<int> tok(0, kVocabSize - 2);  // no EOS
  TokenSeq s(len(rng));
  for (auto& t : s) t = static_cast<Token>(tok(rng));
  return s;
}

// ---------------------------------------------------------------------------

Outcome a1_generator() {
  const auto t0 = Clock::now();
  Rng rng(derive_seed(7, SeedPurpose::DataGen, 0));
  const auto items = generate_dataset(10000, 1, 5, rng);
  const double secs = seconds_since(t0);

  std::unordered_set<std::string> distinct;
  std::size_t parsed = 0, truthy = 0;
  for (const auto& s : items) {
    distinct.insert(to_text(s));
    const auto p = parse(s);
    if (std::holds_alternative<Expr>(p)) {
      ++parsed;
      const int d = depth(std::get<Expr>(p));
      if (d < 1 || d > 5) return {false, "parsed depth " + std::to_string(d) + " outside [1,5]"};
    }
    if (oracle::shunting_yard_eval(s) == std::optional<bool>(true)) ++truthy;
  }
  std::ostringstream os;
  os << items.size() << " items, " << distinct.size() << " unique, " << parsed << " parse, " << truthy
     << " True (reference evaluator), " << fmt("%.2f", secs) << " s";
  return {items.size() == 10000 && distinct.size() == 10000 && parsed == 10000 && truthy == 10000 && secs < 10.0,
          os.str()};
}

Outcome a2_round_trip() {
  Rng rng(20240602);
  std::uniform_int_distribution<int> dd(0, 6);
  std::size_t bad = 0;
  std::string first;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const Expr e = generate_expression(dd(rng), rng);
    const TokenSeq s = serialize(e);
    const bool want = table_eval(e);
    const auto p = parse(s);
    const bool ok = std::holds_alternative<Expr>(p) && evaluate(std::get<Expr>(p)) == want &&
                    classify(s) == (want ? Classification::TrueExpr : Classification::FalseExpr) &&
                    classify(serialize(std::get<Expr>(p))) == classify(s);
    if (!ok && bad++ == 0) first = to_text(s);
  }
  return {bad == 0, std::to_string(n) + " ASTs, " + std::to_string(bad) + " mismatches" +
                        (bad ? " (first: " + first + ")" : "")};
}

Outcome a3_grammar() {
  std::size_t n = 0, bad = 0, n_true = 0, n_false = 0;
  std::string first;
  for (int len = 0; len <= 5; ++len) {
    oracle::for_each_string(len, [&](const TokenSeq& s) {
      ++n;
      const Classification got = classify(s), want = oracle::reference_classify(s);
      if (want == Classification::TrueExpr) ++n_true;
      if (want == Classification::FalseExpr) ++n_false;
      if (got != want && bad++ == 0) first = "'" + to_text(s) + "'";
    });
  }
  std::ostringstream os;
  os << n << " strings (" << n_true << " True, " << n_false << " False), " << bad << " disagreements";
  if (bad) os << " (first: " << first << ")";
  return {bad == 0 && n == 19608, os.str()};
}

Outcome a4_levenshtein() {
  Rng rng(99);
  std::size_t bad = 0;
  for (int i = 0; i < 1000; ++i) {
    const TokenSeq a = random_string(12, rng), b = random_string(12, rng);
    const std::size_t d = levenshtein(a, b);
    if (d != recursive_levenshtein(a, b) || d != oracle::matrix_levenshtein(a, b)) ++bad;
  }
  std::size_t violations = 0;
  for (int i = 0; i < 10000; ++i) {
    const TokenSeq a = random_string(12, rng), b = random_string(12, rng), c = random_string(12, rng);
    if (levenshtein(a, c) > levenshtein(a, b) + levenshtein(b, c)) ++violations;
  }
  return {bad == 0 && violations == 0, "1000 pairs, " + std::to_string(bad) + " oracle mismatches; 10000 triples, " +
                                           std::to_string(violations) + " triangle violations"};
}

// Stub item unique to (source, index): the index digits in base 7.
TokenSeq stub_item(int source, std::size_t i) {
  TokenSeq s;
  std::size_t v = static_cast<std::size_t>(source) * 1000003 + i;
  do {
    s.push_back(static_cast<Token>(v % 7));
    v /= 7;
  } while (v);
  return s;
}

Dataset stub_sample(int source, std::size_t m) {
  Dataset d;
  for (std::size_t i = 0; i < m; ++i) d.push_back(stub_item(source, i), source);
  return d;
}

std::size_t count_tag(const Dataset& d, int tag) {
  return static_cast<std::size_t>(std::count(d.provenance.begin(), d.provenance.end(), tag));
}

bool all_distinct(const Dataset& d) {
  std::set<TokenSeq> s(d.items.begin(), d.items.end());
  return s.size() == d.size();
}

Outcome a5_cycle_laws() {
  const std::size_t m = 1000;
  const int T = 50;
  const Dataset d0 = stub_sample(0, m);
  std::vector<Dataset> history;
  for (int t = 1; t <= T; ++t) history.push_back(stub_sample(t, m));

  std::vector<std::string> failures;
  auto fail = [&](const std::string& what) {
    if (failures.size() < 3) failures.push_back(what);
  };
  Rng rng(5);

  // FullSynthetic and Balanced use only the history.
  for (int t = 1; t <= T; ++t) {
    const std::vector<Dataset> h(history.begin(), history.begin() + t);
    if (compose({CycleKind::FullSynthetic, 1.0}, d0, t == 1 ? d0 : history[t - 2], h, m, rng) != history[t - 1]) {
      fail("full_synthetic t=" + std::to_string(t));
    }
    const Dataset b = compose({CycleKind::Balanced, 1.0}, d0, d0, h, m, rng);
    const std::size_t base = m / static_cast<std::size_t>(t + 1), rem = m % static_cast<std::size_t>(t + 1);
    std::size_t plus_one = 0;
    for (int s = 0; s <= t; ++s) {
      const std::size_t c = count_tag(b, s);
      if (c == base + 1) {
        ++plus_one;
      } else if (c != base) {
        fail("balanced t=" + std::to_string(t) + " source " + std::to_string(s) + " has " + std::to_string(c));
      }
    }
    if (plus_one != rem || b.size() != m || !all_distinct(b)) fail("balanced t=" + std::to_string(t));
  }

  for (double lambda : {0.1, 0.25, 0.5, 1.0}) {
    const auto fresh = static_cast<std::size_t>(std::llround(lambda * static_cast<double>(m)));
    Dataset inc = d0, exp = d0;
    for (int t = 1; t <= T; ++t) {
      const std::vector<Dataset> h(history.begin(), history.begin() + t);
      const Dataset prev_inc = inc;
      inc = compose({CycleKind::Incremental, lambda}, d0, prev_inc, h, m, rng);
      exp = compose({CycleKind::Expanding, lambda}, d0, exp, h, m, rng);
      const std::string at = " lambda=" + fmt("%g", lambda) + " t=" + std::to_string(t);
      if (inc.size() != m || count_tag(inc, t) != fresh || !all_distinct(inc)) {
        fail("incremental" + at);
      }
      for (int s = 0; s < t; ++s) {
        if (count_tag(inc, s) > count_tag(prev_inc, s)) fail("incremental grew source " + std::to_string(s) + at);
      }
      if (exp.size() != m + fresh * static_cast<std::size_t>(t) || count_tag(exp, t) != fresh ||
          count_tag(exp, 0) != m || !all_distinct(exp)) {
        fail("expanding" + at);
      }
    }
  }
  std::string detail = "t=1..50, m=1000, lambda in {0.1,0.25,0.5,1}";
  for (const auto& f : failures) detail += "; FAIL " + f;
  return {failures.empty(), detail};
}

Outcome a6_parameter_count() {
  ModelConfig mc;
  mc.n_layer = 6;
  mc.n_head = 6;
  mc.n_embd = 384;
  mc.context = 256;
  const std::size_t C = 384, V = kVocabSize, L = 6, ctx = 256;
  // token + position embeddings (head tied), per block two LN gains, qkv,
  // attention projection, 4x MLP; final LN gain
  const std::size_t closed = V * C + ctx * C + L * (2 * C + 3 * C * C + C * C + 8 * C * C) + C;
  const std::size_t got = parameter_count(mc);
  const double rel = static_cast<double>(got) / 10.6e6 - 1.0;
  return {got == closed && std::abs(rel) <= 0.05,
          std::to_string(got) + " parameters (closed form " + std::to_string(closed) + "), " +
              fmt("%+.2f", rel * 100) + "% vs 10.6M"};
}

Outcome a7_gradient() {
  ModelConfig mc;
  mc.n_layer = 2;
  mc.n_head = 2;
  mc.n_embd = 8;
  mc.context = 6;
  mc.dropout = 0.0;
  Gpt<double> g(mc);
  Rng rng(4242);
  g.init(rng);
  std::normal_distribution<double> jitter(0.0, 0.3);
  for (auto& p : g.params()) p += jitter(rng);

  const int batch = 2, len = 6;
  std::uniform_int_distribution<int> tok(0, kVocabSize - 1);
  std::vector<int> x(batch * len), y(batch * len);
  for (auto& v : x) v = tok(rng);
  for (auto& v : y) v = tok(rng);
  Buffer<double> grad(g.num_params(), 0.0);
  g.loss(x, y, batch, len, &grad);

  const int probes = 150;
  std::uniform_int_distribution<std::size_t> coord(0, g.num_params() - 1);
  const double h = 1e-5;
  double worst = 0.0;
  for (int probe = 0; probe < probes; ++probe) {
    const std::size_t i = coord(rng);
    const double saved = g.params()[i];
    g.params()[i] = saved + h;
    const double up = g.loss(x, y, batch, len);
    g.params()[i] = saved - h;
    const double down = g.loss(x, y, batch, len);
    g.params()[i] = saved;
    const double numeric = (up - down) / (2 * h);
    const double denom = std::max({std::abs(numeric), std::abs(grad[i]), 1e-8});
    worst = std::max(worst, std::abs(numeric - grad[i]) / denom);
  }
  return {worst < 1e-4, std::to_string(probes) + " probes of " + std::to_string(g.num_params()) +
                            " parameters, worst relative error " + fmt("%.2e", worst)};
}

Outcome a8_echo_fixed_point(const fs::path& scratch) {
  LoopConfig c;
  c.master_seed = 7;
  c.generations = 5;
  c.m = 500;
  c.model_kind = ModelKind::Echo;
  c.cycle = {CycleKind::FullSynthetic, 1.0};
  c.sampler.count = c.m;
  c.diversity.mode = DiversityMode::Exact;
  c.output_dir = (scratch / "a8_echo").string();
  fs::remove_all(c.output_dir);
  const auto r = run_loop(c);
  fs::remove_all(c.output_dir);

  bool same = r.size() == 6;
  for (const auto& rec : r) {
    same = same && rec.composition == r[0].composition && rec.diversity == r[0].diversity &&
           rec.dataset_size == r[0].dataset_size;
  }
  return {same, std::to_string(r.size()) + " records, baseline " + std::to_string(r[0].composition.n_true) +
                    " True, diversity " + fmt("%.6f", r[0].diversity.mean) +
                    ", final diversity " + fmt("%.6f", r.back().diversity.mean)};
}

Outcome a9_collapse(const fs::path& workdir) {
  const LoopConfig cfg = acceptance::a9_config(workdir.string());
  const auto t0 = Clock::now();
  const auto r = run_loop(cfg, [](const std::string& s) { std::cerr << "  [A9] " << s << '\n'; });
  const double secs = seconds_since(t0);
  if (r.size() != 11) return {false, "expected 11 records, got " + std::to_string(r.size())};

  const double m = static_cast<double>(cfg.m);
  auto frac_true = [&](int t) { return static_cast<double>(r[t].composition.n_true) / m; };
  auto frac_err = [&](int t) { return static_cast<double>(r[t].composition.n_error) / m; };

  double worst_err = 0;
  for (int t = 1; t <= 10; ++t) worst_err = std::max(worst_err, frac_err(t));
  const bool a = worst_err < 0.10;
  const bool b = frac_true(1) >= 0.60 && frac_true(1) <= 0.98;
  const bool c = frac_true(10) >= 0.95 && frac_true(10) - frac_true(1) >= 0.10;

  const double div0 = r[0].diversity.mean;
  bool rises = false;
  double peak = div0;
  for (int t = 1; t <= 10; ++t) {
    if (t <= 5 && r[t].diversity.mean > div0) rises = true;
    peak = std::max(peak, r[t].diversity.mean);
  }
  const double drop = 1.0 - r[10].diversity.mean / peak;
  const bool d = rises && drop >= 0.30;

  std::ostringstream os;
  os << "(a) max error " << fmt("%.3f", worst_err) << (a ? " ok" : " FAIL") << "; (b) S_1 True "
     << fmt("%.3f", frac_true(1)) << (b ? " ok" : " FAIL") << "; (c) S_10 True " << fmt("%.3f", frac_true(10))
     << (c ? " ok" : " FAIL") << "; (d) D_0 " << fmt("%.3f", div0) << " peak " << fmt("%.3f", peak) << " t=10 "
     << fmt("%.3f", r[10].diversity.mean) << " drop " << fmt("%.0f", drop * 100) << "%" << (d ? " ok" : " FAIL");
  os << "; true fractions";
  for (int t = 1; t <= 10; ++t) os << ' ' << fmt("%.2f", frac_true(t));
  os << "; diversity";
  for (int t = 0; t <= 10; ++t) os << ' ' << fmt("%.3f", r[t].diversity.mean);
  double train = 0;
  for (const auto& rec : r) train += rec.train_seconds + rec.sample_seconds;
  os << "; recorded compute " << fmt("%.0f", train) << " s, this invocation " << fmt("%.0f", secs) << " s";
  return {a && b && c && d, os.str()};
}

Outcome a10_baseline_diversity() {
  LoopConfig def;  // default config: master seed 7, m=10000, depths 1..5
  Rng rng(derive_seed(def.master_seed, SeedPurpose::DataGen, 0));
  const auto d0 = generate_dataset(def.m, def.d_min, def.d_max, rng);
  Rng pick(derive_seed(def.master_seed, SeedPurpose::Diversity, 0));
  std::vector<std::size_t> idx(d0.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::shuffle(idx.begin(), idx.end(), pick);
  std::vector<TokenSeq> sub;
  for (std::size_t i = 0; i < 2000; ++i) sub.push_back(d0[idx[i]]);

  DiversitySettings s = def.diversity;
  s.mode = DiversityMode::Exact;
  Rng unused(0);
  const double v = diversity<Rng>(sub, s, unused).mean;
  s.normalization = Normalization::SampleLongest;
  const double alt = diversity<Rng>(sub, s, unused).mean;
  return {std::abs(v - 0.27) <= 0.04,
          "exact diversity " + fmt("%.4f", v) + " over 2000 items, target 0.27 +/- 0.04 (normalizing by the longest "
                                                "expression in the sample instead gives " +
              fmt("%.4f", alt) + ")"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks A1..A10"};
  std::vector<std::string> only, skip;
  std::string workdir = SELFLOOP_A9_DIR;
  app.add_option("--only", only, "Run just these criteria (repeatable)");
  app.add_option("--skip", skip, "Skip these criteria (repeatable)");
  app.add_option("--workdir", workdir, "Run directory for A9 (resumed if present)")->capture_default_str();
  CLI11_PARSE(app, argc, argv);

  const fs::path scratch = fs::temp_directory_path() / ("selfloop_acceptance_" + std::to_string(::getpid()));
  fs::create_directories(scratch);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"A1", a1_generator},
      {"A2", a2_round_trip},
      {"A3", a3_grammar},
      {"A4", a4_levenshtein},
      {"A5", a5_cycle_laws},
      {"A6", a6_parameter_count},
      {"A7", a7_gradient},
      {"A8", [&] { return a8_echo_fixed_point(scratch); }},
      {"A9", [&] { return a9_collapse(workdir); }},
      {"A10", a10_baseline_diversity},
  };
  for (const auto& name : only) {
    if (std::none_of(criteria.begin(), criteria.end(), [&](const auto& c) { return c.first == name; })) {
      std::cerr << "unknown criterion " << name << '\n';
      return 2;
    }
  }

  int failed = 0;
  for (const auto& [name, check] : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), name) == only.end()) continue;
    if (std::find(skip.begin(), skip.end(), name) != skip.end()) continue;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failed;
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << " [" << fmt("%.1f", seconds_since(t0))
              << " s]" << std::endl;
  }
  fs::remove_all(scratch);
  return failed ? 1 : 0;
}
