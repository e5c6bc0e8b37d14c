// selfloop: command-line front end for the self-consuming training loop.
//
// Exit status: 0 success, 1 usage error, 2 runtime failure.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "selfloop/config_file.hpp"
#include "selfloop/datacycle.hpp"
#include "selfloop/expr.hpp"
#include "selfloop/looprunner.hpp"
#include "selfloop/metrics.hpp"
#include "selfloop/report.hpp"
#include "selfloop/seed.hpp"
#include "selfloop/seqmodel/model.hpp"

namespace fs = std::filesystem;
using namespace selfloop;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream os(p, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open '" + p.string() + "' for writing");
  os << s;
  if (!os) throw std::runtime_error("write failed for '" + p.string() + "'");
}

std::vector<TokenSeq> read_items(const std::string& path) {
  if (!fs::exists(path)) throw std::runtime_error("input file '" + path + "' does not exist");
  return read_lines(path);
}

/// Records of a run directory, checked against the run's manifest.
std::vector<GenerationRecord> run_records(const std::string& dir) {
  const LoopConfig cfg = load_run_config(dir);
  const RecordsTable table = read_records_csv((fs::path(dir) / "records.csv").string());
  if (table.manifest_hash != manifest_hash(cfg)) {
    throw std::runtime_error("'" + dir + "/records.csv' has manifest hash " + table.manifest_hash +
                             " but the run manifest is " + manifest_hash(cfg));
  }
  if (table.records.empty()) throw std::runtime_error("'" + dir + "/records.csv' has no records");
  return table.records;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Self-consuming training loop on boolean expressions"};
  app.set_version_flag("--version", SELFLOOP_VERSION);
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate a dataset of unique True expressions");
  std::size_t gen_m = 10000;
  int gen_dmin = 1, gen_dmax = 5;
  std::uint64_t gen_seed = 7;
  std::uint64_t gen_cap = kDefaultMaxDraws;
  std::string gen_out;
  gen->add_option("--m", gen_m, "Number of unique expressions")->capture_default_str();
  gen->add_option("--dmin", gen_dmin, "Minimum tree depth")->capture_default_str();
  gen->add_option("--dmax", gen_dmax, "Maximum tree depth")->capture_default_str();
  gen->add_option("--seed", gen_seed, "Master seed (same D_0 as a loop with this seed)")->capture_default_str();
  gen->add_option("--max-draws", gen_cap, "Abort after this many candidate draws")->capture_default_str();
  gen->add_option("--out", gen_out, "Output file, one expression per line")->required();

  // train
  auto* train = app.add_subcommand("train", "Train one model on a dataset file");
  std::string train_data, train_out, train_config, train_kind = "transformer";
  std::optional<std::uint64_t> train_seed;
  train->add_option("--data", train_data, "Training dataset file")->required();
  train->add_option("--out", train_out, "Checkpoint to write")->required();
  train->add_option("--config", train_config, "Config file supplying [model] and [train] settings");
  train->add_option("--model", train_kind, "transformer | echo | ngram")
      ->check(CLI::IsMember({"transformer", "echo", "ngram"}))
      ->capture_default_str();
  train->add_option("--seed", train_seed, "Overrides train.seed");

  // sample
  auto* sample = app.add_subcommand("sample", "Sample expressions from a checkpoint");
  std::string sample_model, sample_out, sample_manifest;
  SamplerConfig sample_cfg;
  std::uint64_t sample_seed = 1;
  sample->add_option("--model", sample_model, "Checkpoint file")->required();
  sample->add_option("--out", sample_out, "Output file")->required();
  sample->add_option("--count", sample_cfg.count, "Number of expressions")->capture_default_str();
  sample->add_option("--temperature", sample_cfg.temperature, "Softmax temperature, 0 = greedy")
      ->capture_default_str();
  auto* sample_cap = sample->add_option("--max-tokens", sample_cfg.max_tokens,
                                        "Token cap per expression (default: 200, at most the model context)");
  sample->add_option("--seed", sample_seed, "Sampling seed")->capture_default_str();
  sample->add_option("--expect-manifest", sample_manifest, "Refuse checkpoints from another run");

  // classify
  auto* cls = app.add_subcommand("classify", "Count True / False / syntax-error expressions");
  std::string cls_in;
  cls->add_option("--in", cls_in, "Expression file")->required();

  // diversity
  auto* div = app.add_subcommand("diversity", "Mean normalized Levenshtein distance of a sample");
  std::string div_in, div_mode = "auto", div_norm = "pair";
  DiversitySettings div_cfg;
  std::uint64_t div_seed = 1;
  div->add_option("--in", div_in, "Expression file")->required();
  div->add_option("--mode", div_mode, "auto | exact | sampled")
      ->check(CLI::IsMember({"auto", "exact", "sampled"}))
      ->capture_default_str();
  div->add_option("--pair-budget", div_cfg.pair_budget, "Pairs drawn in sampled mode")->capture_default_str();
  div->add_option("--exact-max-n", div_cfg.exact_max_n, "Largest sample evaluated exactly in auto mode")
      ->capture_default_str();
  div->add_option("--normalization", div_norm, "pair | sample")
      ->check(CLI::IsMember({"pair", "sample"}))
      ->capture_default_str();
  div->add_option("--seed", div_seed, "Pair sampling seed")->capture_default_str();

  // loop
  auto* loop = app.add_subcommand("loop", "Run or resume a self-consuming training loop");
  std::string loop_config, loop_out, loop_resume;
  std::optional<int> loop_stop;
  bool loop_print = false, loop_quiet = false;
  loop->add_option("--config", loop_config, "Run config file");
  loop->add_option("--out", loop_out, "Output directory (overrides loop.output_dir)");
  loop->add_option("--resume", loop_resume, "Continue the run stored in this directory");
  loop->add_option("--stop-after", loop_stop, "Halt after this generation completes");
  loop->add_flag("--print-config", loop_print, "Print the effective config and exit");
  loop->add_flag("--quiet", loop_quiet, "No progress output");

  // report
  auto* rep = app.add_subcommand("report", "Render SVG figures from run directories");
  std::vector<std::string> rep_runs;
  std::string rep_out;
  rep->add_option("--run", rep_runs, "Run directory (repeat for an overlay)")->required();
  rep->add_option("--out", rep_out, "Figure directory (default: the first run)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*gen) {
      Rng rng(derive_seed(gen_seed, SeedPurpose::DataGen, 0));
      write_lines(gen_out, generate_dataset(gen_m, gen_dmin, gen_dmax, rng, gen_cap));
      std::cerr << "wrote " << gen_m << " expressions to " << gen_out << '\n';
    } else if (*train) {
      LoopConfig cfg;
      if (!train_config.empty()) cfg = load_config(train_config);
      if (train_seed) cfg.train.seed = *train_seed;
      const ModelKind kind = model_kind_from_string(train_kind);
      const Dataset d = Dataset::from_items(read_items(train_data), 0);
      TrainProgress progress = [](int it, double tl, double vl) {
        std::cerr << "iter " << it << " train " << tl << " val " << vl << '\n';
      };
      auto model = train_model(kind, d, cfg.model, cfg.train, TrainSeeds::from(cfg.train.seed), progress);
      save_checkpoint(*model, train_out);
      std::cerr << "wrote " << train_out << '\n';
    } else if (*sample) {
      auto model = load_checkpoint(sample_model, sample_manifest);
      const auto h = model->header();
      if (sample_cap->count() == 0 && h.contains("context")) {
        sample_cfg.max_tokens = std::min(sample_cfg.max_tokens, h.at("context").get<int>());
      }
      write_lines(sample_out, model->sample(sample_cfg, sample_seed));
      std::cerr << "wrote " << sample_cfg.count << " expressions to " << sample_out << '\n';
    } else if (*cls) {
      const Composition c = composition(read_items(cls_in));
      std::cout << "true=" << c.n_true << " false=" << c.n_false << " error=" << c.n_error << '\n';
    } else if (*div) {
      div_cfg.mode = diversity_mode_from_string(div_mode);
      div_cfg.normalization = normalization_from_string(div_norm);
      const auto items = read_items(div_in);
      Rng rng(div_seed);
      const DiversityEstimate e = diversity<Rng>(items, div_cfg, rng);
      std::cout << "mean=" << e.mean << " stderr=" << e.stderr_ << " pairs=" << e.pairs_evaluated
                << " mode=" << to_string(e.mode) << '\n';
    } else if (*loop) {
      const LoopLog log = [&](const std::string& s) {
        if (!loop_quiet) std::cerr << s << '\n';
      };
      if (!loop_resume.empty()) {
        if (!loop_config.empty()) {
          LoopConfig cfg = load_config(loop_config);
          cfg.output_dir = loop_resume;
          cfg.stop_after = loop_stop;
          run_loop(cfg, log);  // refuses when the config hash differs
        } else {
          resume(loop_resume, loop_stop, log);
        }
      } else {
        if (loop_config.empty()) throw UsageError("loop needs --config or --resume");
        LoopConfig cfg = load_config(loop_config);
        if (!loop_out.empty()) cfg.output_dir = loop_out;
        if (cfg.output_dir.empty()) cfg.output_dir = default_output_dir(cfg);
        if (loop_print) {
          std::cout << render_config(cfg);
          return 0;
        }
        cfg.stop_after = loop_stop;
        run_loop(cfg, log);
        std::cerr << "run directory: " << cfg.output_dir << '\n';
      }
    } else if (*rep) {
      const fs::path out = rep_out.empty() ? fs::path(rep_runs.front()) : fs::path(rep_out);
      fs::create_directories(out);
      std::vector<RunSeries> series;
      for (const auto& dir : rep_runs) series.push_back({series_label(load_run_config(dir)), run_records(dir)});
      write_text(out / "composition.svg", composition_svg(series.front().records));
      write_text(out / "diversity.svg", diversity_svg(series.front().records));
      if (series.size() > 1) write_text(out / "diversity_overlay.svg", diversity_overlay_svg(series));
      std::cerr << "wrote figures to " << out.string() << '\n';
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return 0;
}
