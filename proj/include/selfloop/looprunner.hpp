#pragma once

// Self-consuming training loop: generate D_0, then for each generation train
// a fresh model on D_{t-1}, sample S_t, measure it, and compose D_t.
//
// Output directory layout
//   manifest.json              config snapshot, manifest hash, seeds, versions
//   records.csv                one row per generation, t = 0 is the D_0 baseline
//   samples/gen_{t}.txt        S_t, one expression per line
//   checkpoints/gen_{t}.ckpt   M_t
//   datasets/d_{t}.txt/.prov   D_t and its per-item source tags
//   state.json                 completed generation, records, file checksums

#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "selfloop/datacycle.hpp"
#include "selfloop/expr.hpp"
#include "selfloop/metrics.hpp"
#include "selfloop/seed.hpp"
#include "selfloop/seqmodel/config.hpp"
#include "selfloop/seqmodel/model.hpp"

#ifndef SELFLOOP_VERSION
#define SELFLOOP_VERSION "0.0.0"
#endif

namespace selfloop {

inline constexpr int kRunFormatVersion = 1;

struct LoopConfig {
  std::uint64_t master_seed = 7;
  int generations = 50;
  std::size_t m = 10000;
  int d_min = 1;
  int d_max = 5;
  DataCycleSpec cycle{CycleKind::FullSynthetic, 1.0};
  ModelKind model_kind = ModelKind::Transformer;
  ModelConfig model{};
  TrainConfig train{};
  SamplerConfig sampler{};
  DiversitySettings diversity{};
  std::string output_dir;  // empty: resolved by the caller

  // Runtime controls; not part of the manifest hash.
  std::optional<int> stop_after;  // halt once this generation completes

  void validate() const {
    if (generations < 1) throw std::invalid_argument("loop: generations must be >= 1");
    if (m < 2) throw std::invalid_argument("loop: m must be >= 2");
    if (d_min < 0 || d_max < d_min) throw std::invalid_argument("loop: need 0 <= d_min <= d_max");
    if (sampler.count != m) {
      throw std::invalid_argument("loop: sampler count (" + std::to_string(sampler.count) +
                                  ") must equal m (" + std::to_string(m) + ")");
    }
    if (output_dir.empty()) throw std::invalid_argument("loop: output directory is empty");
    cycle.validate(m);
    if (model_kind == ModelKind::Transformer) {
      model.validate();
      train.validate();
      sampler.validate(&model);
    } else {
      sampler.validate();
    }
  }

  friend bool operator==(const LoopConfig&, const LoopConfig&) = default;
};

// ---------------------------------------------------------------------------
// JSON conversions

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"n_layer", c.n_layer}, {"n_head", c.n_head}, {"n_embd", c.n_embd},
       {"context", c.context}, {"dropout", c.dropout}, {"vocab", c.vocab}};
}
inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  j.at("n_layer").get_to(c.n_layer);
  j.at("n_head").get_to(c.n_head);
  j.at("n_embd").get_to(c.n_embd);
  j.at("context").get_to(c.context);
  j.at("dropout").get_to(c.dropout);
  j.at("vocab").get_to(c.vocab);
}

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"batch_size", c.batch_size},     {"total_iters", c.total_iters},
       {"lr_max", c.lr_max},             {"lr_min", c.lr_min},
       {"warmup_iters", c.warmup_iters}, {"val_interval", c.val_interval},
       {"val_batches", c.val_batches},   {"train_fraction", c.train_fraction},
       {"grad_clip", c.grad_clip},       {"weight_decay", c.weight_decay},
       {"beta1", c.beta1},               {"beta2", c.beta2},
       {"seed", c.seed}};
}
inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  j.at("batch_size").get_to(c.batch_size);
  j.at("total_iters").get_to(c.total_iters);
  j.at("lr_max").get_to(c.lr_max);
  j.at("lr_min").get_to(c.lr_min);
  j.at("warmup_iters").get_to(c.warmup_iters);
  j.at("val_interval").get_to(c.val_interval);
  j.at("val_batches").get_to(c.val_batches);
  j.at("train_fraction").get_to(c.train_fraction);
  j.at("grad_clip").get_to(c.grad_clip);
  j.at("weight_decay").get_to(c.weight_decay);
  j.at("beta1").get_to(c.beta1);
  j.at("beta2").get_to(c.beta2);
  j.at("seed").get_to(c.seed);
}

inline void to_json(nlohmann::json& j, const SamplerConfig& c) {
  j = {{"temperature", c.temperature}, {"max_tokens", c.max_tokens}, {"count", c.count}};
}
inline void from_json(const nlohmann::json& j, SamplerConfig& c) {
  j.at("temperature").get_to(c.temperature);
  j.at("max_tokens").get_to(c.max_tokens);
  j.at("count").get_to(c.count);
}

inline void to_json(nlohmann::json& j, const DiversitySettings& d) {
  j = {{"mode", std::string(to_string(d.mode))},
       {"pair_budget", d.pair_budget},
       {"exact_max_n", d.exact_max_n},
       {"normalization", std::string(to_string(d.normalization))}};
}
inline void from_json(const nlohmann::json& j, DiversitySettings& d) {
  d.mode = diversity_mode_from_string(j.at("mode").get<std::string>());
  j.at("pair_budget").get_to(d.pair_budget);
  j.at("exact_max_n").get_to(d.exact_max_n);
  d.normalization = normalization_from_string(j.at("normalization").get<std::string>());
}

/// Everything that determines the run's results. Runtime controls and the
/// output location are left out so a run can be moved or resumed elsewhere.
inline nlohmann::json config_json(const LoopConfig& c) {
  return {{"master_seed", c.master_seed},
          {"generations", c.generations},
          {"m", c.m},
          {"d_min", c.d_min},
          {"d_max", c.d_max},
          {"cycle", {{"kind", std::string(to_string(c.cycle.kind))}, {"lambda", c.cycle.lambda}}},
          {"model_kind", std::string(to_string(c.model_kind))},
          {"model", c.model},
          {"train", c.train},
          {"sampler", c.sampler},
          {"diversity", c.diversity}};
}

inline LoopConfig config_from_json(const nlohmann::json& j) {
  LoopConfig c;
  j.at("master_seed").get_to(c.master_seed);
  j.at("generations").get_to(c.generations);
  j.at("m").get_to(c.m);
  j.at("d_min").get_to(c.d_min);
  j.at("d_max").get_to(c.d_max);
  c.cycle.kind = cycle_kind_from_string(j.at("cycle").at("kind").get<std::string>());
  j.at("cycle").at("lambda").get_to(c.cycle.lambda);
  c.model_kind = model_kind_from_string(j.at("model_kind").get<std::string>());
  j.at("model").get_to(c.model);
  j.at("train").get_to(c.train);
  j.at("sampler").get_to(c.sampler);
  j.at("diversity").get_to(c.diversity);
  return c;
}

inline std::string manifest_hash(const LoopConfig& c) {
  nlohmann::json j = config_json(c);
  j["format_version"] = kRunFormatVersion;
  return hex64(fnv1a(j.dump()));
}

// ---------------------------------------------------------------------------
// Records

struct GenerationSeeds {
  std::uint64_t split = 0, init = 0, train = 0, sample = 0, cycle = 0, diversity = 0;

  static GenerationSeeds derive(std::uint64_t master, int t) {
    const auto g = static_cast<std::uint64_t>(t);
    return {derive_seed(master, SeedPurpose::Split, g),  derive_seed(master, SeedPurpose::ModelInit, g),
            derive_seed(master, SeedPurpose::Train, g),  derive_seed(master, SeedPurpose::Sample, g),
            derive_seed(master, SeedPurpose::Cycle, g),  derive_seed(master, SeedPurpose::Diversity, g)};
  }

  friend bool operator==(const GenerationSeeds&, const GenerationSeeds&) = default;
};

/// Row t >= 1 describes M_t trained on D_{t-1} and its sample S_t. Row 0 is
/// the D_0 baseline: no model, so losses are NaN and best_iter is -1.
struct GenerationRecord {
  int t = 0;
  std::size_t dataset_size = 0;
  std::vector<std::size_t> source_counts;  // provenance histogram of D_{t-1}
  Composition composition;
  DiversityEstimate diversity;
  double train_loss_final = std::numeric_limits<double>::quiet_NaN();
  double val_loss_best = std::numeric_limits<double>::quiet_NaN();
  int best_iter = -1;
  double train_seconds = 0.0;
  double sample_seconds = 0.0;
  GenerationSeeds seeds;

  /// Equality of everything except wall-clock timings.
  bool same_results(const GenerationRecord& o) const {
    auto same = [](double a, double b) { return (std::isnan(a) && std::isnan(b)) || a == b; };
    return t == o.t && dataset_size == o.dataset_size && source_counts == o.source_counts &&
           composition == o.composition && diversity == o.diversity &&
           same(train_loss_final, o.train_loss_final) && same(val_loss_best, o.val_loss_best) &&
           best_iter == o.best_iter && seeds == o.seeds;
  }
};

inline nlohmann::json record_json(const GenerationRecord& r) {
  return {{"t", r.t},
          {"dataset_size", r.dataset_size},
          {"source_counts", r.source_counts},
          {"n_true", r.composition.n_true},
          {"n_false", r.composition.n_false},
          {"n_error", r.composition.n_error},
          {"diversity_mean", r.diversity.mean},
          {"diversity_stderr", r.diversity.stderr_},
          {"pairs_evaluated", r.diversity.pairs_evaluated},
          {"diversity_mode", std::string(to_string(r.diversity.mode))},
          {"train_loss_final", detail::nan_safe(r.train_loss_final)},
          {"val_loss_best", detail::nan_safe(r.val_loss_best)},
          {"best_iter", r.best_iter},
          {"train_seconds", r.train_seconds},
          {"sample_seconds", r.sample_seconds},
          {"seeds",
           {{"split", r.seeds.split}, {"model-init", r.seeds.init}, {"train", r.seeds.train},
            {"sample", r.seeds.sample}, {"cycle", r.seeds.cycle}, {"diversity", r.seeds.diversity}}}};
}

inline GenerationRecord record_from_json(const nlohmann::json& j) {
  GenerationRecord r;
  j.at("t").get_to(r.t);
  j.at("dataset_size").get_to(r.dataset_size);
  j.at("source_counts").get_to(r.source_counts);
  j.at("n_true").get_to(r.composition.n_true);
  j.at("n_false").get_to(r.composition.n_false);
  j.at("n_error").get_to(r.composition.n_error);
  j.at("diversity_mean").get_to(r.diversity.mean);
  j.at("diversity_stderr").get_to(r.diversity.stderr_);
  j.at("pairs_evaluated").get_to(r.diversity.pairs_evaluated);
  r.diversity.mode = diversity_mode_from_string(j.at("diversity_mode").get<std::string>());
  r.train_loss_final = detail::nan_restore(j.at("train_loss_final"));
  r.val_loss_best = detail::nan_restore(j.at("val_loss_best"));
  j.at("best_iter").get_to(r.best_iter);
  j.at("train_seconds").get_to(r.train_seconds);
  j.at("sample_seconds").get_to(r.sample_seconds);
  const auto& s = j.at("seeds");
  s.at("split").get_to(r.seeds.split);
  s.at("model-init").get_to(r.seeds.init);
  s.at("train").get_to(r.seeds.train);
  s.at("sample").get_to(r.seeds.sample);
  s.at("cycle").get_to(r.seeds.cycle);
  s.at("diversity").get_to(r.seeds.diversity);
  return r;
}

inline constexpr const char* kRecordColumns[] = {
    "generation",     "dataset_size",     "n_true",          "n_false",       "n_error",
    "diversity_mean", "diversity_stderr", "pairs_evaluated", "train_loss_final",
    "val_loss_best",  "best_iter",        "train_seconds",   "sample_seconds"};

namespace detail {

/// Shortest text that parses back to the same double; empty for NaN.
inline std::string csv_double(double v) {
  if (std::isnan(v)) return {};
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline double csv_parse_double(const std::string& s) {
  if (s.empty()) return std::numeric_limits<double>::quiet_NaN();
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
    throw std::runtime_error("records.csv: bad number '" + s + "'");
  }
  return v;
}

}  // namespace detail

inline void write_records_csv(const std::string& path, const std::vector<GenerationRecord>& records,
                              const std::string& hash) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
  os << "# manifest_hash=" << hash << '\n';
  for (std::size_t i = 0; i < std::size(kRecordColumns); ++i) os << (i ? "," : "") << kRecordColumns[i];
  os << '\n';
  for (const auto& r : records) {
    os << r.t << ',' << r.dataset_size << ',' << r.composition.n_true << ',' << r.composition.n_false << ','
       << r.composition.n_error << ',' << detail::csv_double(r.diversity.mean) << ','
       << detail::csv_double(r.diversity.stderr_) << ',' << r.diversity.pairs_evaluated << ','
       << detail::csv_double(r.train_loss_final) << ',' << detail::csv_double(r.val_loss_best) << ','
       << (r.best_iter >= 0 ? std::to_string(r.best_iter) : std::string{}) << ','
       << detail::csv_double(r.train_seconds) << ',' << detail::csv_double(r.sample_seconds) << '\n';
  }
  if (!os) throw std::runtime_error("write failed for '" + path + "'");
}

struct RecordsTable {
  std::string manifest_hash;
  std::vector<GenerationRecord> records;
};

/// Reads the columns written by write_records_csv. Source counts, seeds and
/// the diversity mode are not part of the CSV and stay default.
inline RecordsTable read_records_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open '" + path + "'");
  RecordsTable out;
  std::string line;
  bool header_seen = false;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line.rfind("# manifest_hash=", 0) == 0) {
      out.manifest_hash = line.substr(16);
      continue;
    }
    if (line[0] == '#') continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (line.back() == ',') f.emplace_back();
    if (!header_seen) {
      header_seen = true;
      bool ok = f.size() == std::size(kRecordColumns);
      for (std::size_t i = 0; ok && i < f.size(); ++i) ok = f[i] == kRecordColumns[i];
      if (!ok) throw std::runtime_error("'" + path + "': unexpected records.csv header");
      continue;
    }
    if (f.size() != std::size(kRecordColumns)) {
      throw std::runtime_error("'" + path + "': row has " + std::to_string(f.size()) + " fields, expected " +
                               std::to_string(std::size(kRecordColumns)));
    }
    GenerationRecord r;
    try {
      r.t = std::stoi(f[0]);
      r.dataset_size = std::stoull(f[1]);
      r.composition = {std::stoull(f[2]), std::stoull(f[3]), std::stoull(f[4])};
      r.diversity.mean = detail::csv_parse_double(f[5]);
      r.diversity.stderr_ = detail::csv_parse_double(f[6]);
      r.diversity.pairs_evaluated = std::stoull(f[7]);
      r.train_loss_final = detail::csv_parse_double(f[8]);
      r.val_loss_best = detail::csv_parse_double(f[9]);
      r.best_iter = f[10].empty() ? -1 : std::stoi(f[10]);
      r.train_seconds = detail::csv_parse_double(f[11]);
      r.sample_seconds = detail::csv_parse_double(f[12]);
    } catch (const std::logic_error&) {
      throw std::runtime_error("'" + path + "': malformed row '" + line + "'");
    }
    out.records.push_back(r);
  }
  if (!header_seen) throw std::runtime_error("'" + path + "': missing header");
  return out;
}

// ---------------------------------------------------------------------------
// Run directory

class RunDirectory {
 public:
  explicit RunDirectory(std::filesystem::path root) : root_(std::move(root)) {}

  const std::filesystem::path& root() const noexcept { return root_; }
  std::filesystem::path manifest() const { return root_ / "manifest.json"; }
  std::filesystem::path state() const { return root_ / "state.json"; }
  std::filesystem::path records() const { return root_ / "records.csv"; }
  std::filesystem::path sample(int t) const { return root_ / "samples" / ("gen_" + std::to_string(t) + ".txt"); }
  std::filesystem::path checkpoint(int t) const {
    return root_ / "checkpoints" / ("gen_" + std::to_string(t) + ".ckpt");
  }
  std::filesystem::path dataset(int t) const { return root_ / "datasets" / ("d_" + std::to_string(t) + ".txt"); }
  std::filesystem::path provenance(int t) const {
    return root_ / "datasets" / ("d_" + std::to_string(t) + ".prov");
  }

  void create() const {
    for (const char* sub : {"samples", "checkpoints", "datasets"}) std::filesystem::create_directories(root_ / sub);
  }

  std::string relative(const std::filesystem::path& p) const {
    return std::filesystem::relative(p, root_).generic_string();
  }

 private:
  std::filesystem::path root_;
};

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open '" + p.string() + "'");
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

inline void write_file_atomic(const std::filesystem::path& p, const std::string& content) {
  const std::filesystem::path tmp = p.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open '" + tmp.string() + "' for writing");
    os << content;
    if (!os) throw std::runtime_error("write failed for '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, p);
}

inline std::string file_checksum(const std::filesystem::path& p) { return hex64(fnv1a(read_file(p))); }

/// Raised when an output directory cannot be resumed or reused.
class RunStateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using LoopLog = std::function<void(const std::string&)>;

namespace detail {

struct LoopState {
  int completed = -1;  // last finished generation; 0 once D_0 exists
  std::vector<GenerationRecord> records;
  nlohmann::json files = nlohmann::json::object();  // relative path -> checksum
};

inline nlohmann::json manifest_json(const LoopConfig& cfg) {
  nlohmann::json seeds = nlohmann::json::object();
  seeds["datagen"] = derive_seed(cfg.master_seed, SeedPurpose::DataGen, 0);
  for (int t = 0; t <= cfg.generations; ++t) {
    const auto s = GenerationSeeds::derive(cfg.master_seed, t);
    seeds["per_generation"].push_back({{"t", t},
                                       {"split", s.split},
                                       {"model-init", s.init},
                                       {"train", s.train},
                                       {"sample", s.sample},
                                       {"cycle", s.cycle},
                                       {"diversity", s.diversity}});
  }
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  return {{"format_version", kRunFormatVersion},
          {"code_version", SELFLOOP_VERSION},
          {"manifest_hash", manifest_hash(cfg)},
          {"created_unix", static_cast<std::int64_t>(now)},
          {"config", config_json(cfg)},
          {"seeds", seeds}};
}

inline void save_state(const RunDirectory& dir, const std::string& hash, const LoopState& st) {
  nlohmann::json body = {{"manifest_hash", hash}, {"completed", st.completed}, {"files", st.files}};
  for (const auto& r : st.records) body["records"].push_back(record_json(r));
  if (st.records.empty()) body["records"] = nlohmann::json::array();
  const nlohmann::json doc = {{"checksum", hex64(fnv1a(body.dump()))}, {"state", body}};
  write_file_atomic(dir.state(), doc.dump(1) + "\n");
}

inline LoopState load_state(const RunDirectory& dir, const std::string& hash) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(read_file(dir.state()));
  } catch (const nlohmann::json::exception& e) {
    throw RunStateError("state file '" + dir.state().string() + "' is corrupted: " + e.what());
  }
  if (!doc.contains("state") || !doc.contains("checksum") ||
      doc["checksum"] != hex64(fnv1a(doc["state"].dump()))) {
    throw RunStateError("state file '" + dir.state().string() + "' is corrupted (checksum mismatch)");
  }
  const auto& body = doc["state"];
  if (body.at("manifest_hash") != hash) {
    throw RunStateError("state file belongs to manifest " + body.at("manifest_hash").get<std::string>() +
                        ", expected " + hash);
  }
  LoopState st;
  st.completed = body.at("completed");
  for (const auto& r : body.at("records")) st.records.push_back(record_from_json(r));
  st.files = body.at("files");
  for (const auto& [rel, sum] : st.files.items()) {
    const auto p = dir.root() / rel;
    if (!std::filesystem::exists(p)) throw RunStateError("run file '" + p.string() + "' is missing");
    if (file_checksum(p) != sum.get<std::string>()) {
      throw RunStateError("run file '" + p.string() + "' is corrupted (checksum mismatch)");
    }
  }
  return st;
}

template <class Sample>
GenerationRecord measure(int t, const Sample& items, const DiversitySettings& ds, const GenerationSeeds& seeds) {
  GenerationRecord r;
  r.t = t;
  r.seeds = seeds;
  r.composition = composition(items);
  Rng div_rng(seeds.diversity);
  r.diversity = diversity<Rng>(items, ds, div_rng);
  return r;
}

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace detail

/// Runs (or continues) the loop described by `cfg` in cfg.output_dir.
/// A directory holding a run with the same manifest hash is resumed after its
/// last completed generation; any other non-empty directory is refused.
inline std::vector<GenerationRecord> run_loop(const LoopConfig& cfg, const LoopLog& log = {}) {
  cfg.validate();
  namespace fs = std::filesystem;
  const RunDirectory dir(cfg.output_dir);
  const std::string hash = manifest_hash(cfg);
  auto say = [&](const std::string& s) {
    if (log) log(s);
  };

  detail::LoopState st;
  if (fs::exists(dir.manifest())) {
    nlohmann::json man;
    try {
      man = nlohmann::json::parse(read_file(dir.manifest()));
    } catch (const nlohmann::json::exception& e) {
      throw RunStateError("manifest '" + dir.manifest().string() + "' is unreadable: " + e.what());
    }
    const std::string existing = man.value("manifest_hash", std::string{});
    if (existing != hash) {
      throw RunStateError("'" + cfg.output_dir + "' holds a run with manifest " + existing +
                          " but this config hashes to " + hash +
                          "; use a fresh output directory or the original config");
    }
    if (fs::exists(dir.state())) st = detail::load_state(dir, hash);
    say("resuming " + cfg.output_dir + " after generation " + std::to_string(st.completed));
  } else if (fs::exists(dir.root()) && !fs::is_empty(dir.root())) {
    throw RunStateError("'" + cfg.output_dir + "' is not empty and has no manifest; refusing to overwrite");
  }
  dir.create();
  if (!fs::exists(dir.manifest())) write_file_atomic(dir.manifest(), detail::manifest_json(cfg).dump(2) + "\n");

  auto track = [&](const fs::path& p) { st.files[dir.relative(p)] = file_checksum(p); };
  auto commit = [&] {
    write_records_csv(dir.records().string(), st.records, hash);
    detail::save_state(dir, hash, st);
  };

  // D_0 and its baseline row
  Dataset d0;
  if (st.completed < 0) {
    const auto t0 = std::chrono::steady_clock::now();
    Rng gen_rng(derive_seed(cfg.master_seed, SeedPurpose::DataGen, 0));
    d0 = Dataset::from_items(generate_dataset(cfg.m, cfg.d_min, cfg.d_max, gen_rng), 0);
    save_dataset(d0, dir.dataset(0).string(), dir.provenance(0).string());
    track(dir.dataset(0));
    track(dir.provenance(0));
    GenerationRecord base = detail::measure(0, d0.items, cfg.diversity, GenerationSeeds::derive(cfg.master_seed, 0));
    base.dataset_size = d0.size();
    base.source_counts = provenance_histogram(d0);
    base.sample_seconds = detail::seconds_since(t0);
    st.records = {base};
    st.completed = 0;
    commit();
    say("D_0: " + std::to_string(d0.size()) + " expressions, diversity " + std::to_string(base.diversity.mean));
  } else {
    d0 = load_dataset(dir.dataset(0).string(), dir.provenance(0).string());
  }

  std::vector<Dataset> history;
  for (int t = 1; t <= st.completed; ++t) history.push_back(Dataset::from_items(read_lines(dir.sample(t).string()), t));
  Dataset current = load_dataset(dir.dataset(st.completed).string(), dir.provenance(st.completed).string());

  for (int t = st.completed + 1; t <= cfg.generations; ++t) {
    if (cfg.stop_after && st.completed >= *cfg.stop_after) {
      say("stopping after generation " + std::to_string(st.completed));
      break;
    }
    const GenerationSeeds seeds = GenerationSeeds::derive(cfg.master_seed, t);

    const auto train_t0 = std::chrono::steady_clock::now();
    TrainProgress progress;
    if (log) {
      progress = [&, t](int it, double tl, double vl) {
        say("gen " + std::to_string(t) + " iter " + std::to_string(it) + " train " + std::to_string(tl) +
            " val " + std::to_string(vl));
      };
    }
    auto model = train_model(cfg.model_kind, current, cfg.model, cfg.train,
                             TrainSeeds{seeds.split, seeds.init, seeds.train}, progress);
    const double train_seconds = detail::seconds_since(train_t0);
    save_checkpoint(*model, dir.checkpoint(t).string(), hash);
    track(dir.checkpoint(t));

    const auto sample_t0 = std::chrono::steady_clock::now();
    std::vector<TokenSeq> s = model->sample(cfg.sampler, seeds.sample);
    const double sample_seconds = detail::seconds_since(sample_t0);
    write_lines(dir.sample(t).string(), s);
    track(dir.sample(t));

    GenerationRecord rec = detail::measure(t, s, cfg.diversity, seeds);
    rec.dataset_size = current.size();
    rec.source_counts = provenance_histogram(current);
    rec.train_loss_final = model->summary().final_train_loss;
    rec.val_loss_best = model->summary().best_val_loss;
    rec.best_iter = model->summary().best_iter;
    rec.train_seconds = train_seconds;
    rec.sample_seconds = sample_seconds;

    history.push_back(Dataset::from_items(std::move(s), t));
    Rng cycle_rng(seeds.cycle);
    current = compose(cfg.cycle, d0, current, history, cfg.m, cycle_rng);
    save_dataset(current, dir.dataset(t).string(), dir.provenance(t).string());
    track(dir.dataset(t));
    track(dir.provenance(t));

    st.records.push_back(rec);
    st.completed = t;
    commit();
    say("gen " + std::to_string(t) + ": true=" + std::to_string(rec.composition.n_true) +
        " false=" + std::to_string(rec.composition.n_false) + " error=" + std::to_string(rec.composition.n_error) +
        " diversity=" + std::to_string(rec.diversity.mean) + " (" + std::to_string(train_seconds) + " s train)");
  }
  return st.records;
}

/// Reads the config snapshot from an existing run directory.
inline LoopConfig load_run_config(const std::string& output_dir) {
  const RunDirectory dir(output_dir);
  nlohmann::json man;
  try {
    man = nlohmann::json::parse(read_file(dir.manifest()));
  } catch (const nlohmann::json::exception& e) {
    throw RunStateError("manifest '" + dir.manifest().string() + "' is unreadable: " + e.what());
  }
  LoopConfig cfg = config_from_json(man.at("config"));
  cfg.output_dir = output_dir;
  if (manifest_hash(cfg) != man.value("manifest_hash", std::string{})) {
    throw RunStateError("manifest '" + dir.manifest().string() + "' does not match its recorded hash");
  }
  return cfg;
}

/// Continues a halted run from its manifest. `stop_after` may bound this call.
inline std::vector<GenerationRecord> resume(const std::string& output_dir, std::optional<int> stop_after = {},
                                            const LoopLog& log = {}) {
  LoopConfig cfg = load_run_config(output_dir);
  cfg.stop_after = stop_after;
  if (!std::filesystem::exists(RunDirectory(output_dir).state())) {
    throw RunStateError("'" + output_dir + "' has no state file to resume from");
  }
  return run_loop(cfg, log);
}

}  // namespace selfloop
