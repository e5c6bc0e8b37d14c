#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <unordered_set>

#include "selfloop/looprunner.hpp"

namespace fs = std::filesystem;

namespace selfloop {
namespace {

class LoopTest : public ::testing::Test {
 protected:
  void SetUp() override {
    root_ = fs::path(::testing::TempDir()) /
            ("loop_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(root_);
  }
  void TearDown() override { fs::remove_all(root_); }

  std::string dir(const std::string& name) const { return (root_ / name).string(); }

  LoopConfig base(ModelKind kind, const std::string& name) const {
    LoopConfig c;
    c.master_seed = 11;
    c.generations = 3;
    c.m = 120;
    c.d_min = 1;
    c.d_max = 4;
    c.model_kind = kind;
    c.sampler.count = c.m;
    c.sampler.max_tokens = 60;
    c.diversity.mode = DiversityMode::Exact;
    c.output_dir = dir(name);
    return c;
  }

  static std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(is), {});
  }

  static void expect_same(const std::vector<GenerationRecord>& a, const std::vector<GenerationRecord>& b) {
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_TRUE(a[i].same_results(b[i])) << "record " << i;
  }

  fs::path root_;
};

TEST_F(LoopTest, SingleGenerationGivesBaselinePlusOneRecord) {
  LoopConfig c = base(ModelKind::NGram, "t1");
  c.generations = 1;
  const auto r = run_loop(c);
  ASSERT_EQ(r.size(), 2u);
  EXPECT_EQ(r[0].t, 0);
  EXPECT_EQ(r[1].t, 1);
  EXPECT_EQ(r[0].composition, (Composition{120, 0, 0}));
  EXPECT_TRUE(std::isnan(r[0].val_loss_best));
  EXPECT_EQ(r[0].best_iter, -1);
  EXPECT_TRUE(fs::exists(fs::path(c.output_dir) / "checkpoints" / "gen_1.ckpt"));
  EXPECT_EQ(read_lines((fs::path(c.output_dir) / "samples" / "gen_1.txt").string()).size(), c.m);
  EXPECT_FALSE(fs::exists(fs::path(c.output_dir) / "samples" / "gen_2.txt"));
}

TEST_F(LoopTest, EchoUnderFullSyntheticIsAFixedPoint) {
  LoopConfig c = base(ModelKind::Echo, "echo");
  c.generations = 5;
  const auto r = run_loop(c);
  ASSERT_EQ(r.size(), 6u);
  for (const auto& rec : r) {
    EXPECT_EQ(rec.composition, r[0].composition);
    EXPECT_EQ(rec.diversity, r[0].diversity);
    EXPECT_EQ(rec.dataset_size, c.m);
  }
  const RunDirectory rd(c.output_dir);
  auto d0 = load_dataset(rd.dataset(0).string(), rd.provenance(0).string()).items;
  auto d5 = read_lines(rd.dataset(5).string());
  std::sort(d0.begin(), d0.end());
  std::sort(d5.begin(), d5.end());
  EXPECT_EQ(d0, d5);
}

TEST_F(LoopTest, DatasetSizesFollowTheCycle) {
  LoopConfig c = base(ModelKind::NGram, "expanding");
  c.cycle = {CycleKind::Expanding, 0.5};
  const auto r = run_loop(c);
  for (const auto& rec : r) {
    if (rec.t == 0) continue;
    EXPECT_EQ(rec.dataset_size, composed_size(c.cycle, c.m, static_cast<std::size_t>(rec.t - 1))) << rec.t;
    EXPECT_EQ(rec.composition.total(), c.m);
  }
  EXPECT_EQ(r.back().source_counts, (std::vector<std::size_t>{120, 60, 60}));

  LoopConfig b = base(ModelKind::NGram, "balanced");
  b.cycle = {CycleKind::Balanced, 1.0};
  const auto rb = run_loop(b);
  EXPECT_EQ(rb[3].source_counts, (std::vector<std::size_t>{40, 40, 40}));
}

TEST_F(LoopTest, RunIsAPureFunctionOfTheConfig) {
  LoopConfig a = base(ModelKind::NGram, "a");
  LoopConfig b = base(ModelKind::NGram, "b");
  expect_same(run_loop(a), run_loop(b));
  for (int t = 1; t <= 3; ++t) {
    EXPECT_EQ(slurp(RunDirectory(a.output_dir).sample(t)), slurp(RunDirectory(b.output_dir).sample(t)));
  }
  LoopConfig c = base(ModelKind::NGram, "c");
  c.master_seed = 12;
  EXPECT_NE(run_loop(c)[1].diversity, run_loop(a)[1].diversity);
}

TEST_F(LoopTest, ResumeMatchesUninterruptedRun) {
  LoopConfig full = base(ModelKind::NGram, "full");
  full.generations = 5;
  const auto expected = run_loop(full);

  LoopConfig part = full;
  part.output_dir = dir("part");
  part.stop_after = 3;
  EXPECT_EQ(run_loop(part).size(), 4u);
  const auto resumed = resume(part.output_dir);
  expect_same(resumed, expected);

  // re-running a finished directory changes nothing
  const auto again = run_loop(full);
  ASSERT_EQ(again.size(), expected.size());
  for (std::size_t i = 0; i < again.size(); ++i) EXPECT_EQ(again[i].train_seconds, expected[i].train_seconds);
}

TEST_F(LoopTest, TransformerGenerationsAreTrainedFromScratch) {
  LoopConfig c = base(ModelKind::Transformer, "gpt");
  c.generations = 2;
  c.m = 60;
  c.sampler.count = 60;
  c.sampler.max_tokens = 32;
  c.model = {1, 2, 16, 32, 0.1};
  c.train.batch_size = 4;
  c.train.total_iters = 10;
  c.train.val_interval = 5;
  c.train.val_batches = 2;
  c.train.warmup_iters = 2;
  const auto r = run_loop(c);
  ASSERT_EQ(r.size(), 3u);

  // M_2 is reproduced by a fresh training on D_1 with generation-2 seeds
  const RunDirectory rd(c.output_dir);
  const Dataset d1 = load_dataset(rd.dataset(1).string(), rd.provenance(1).string());
  const auto s = GenerationSeeds::derive(c.master_seed, 2);
  const auto fresh = train_transformer(d1, c.model, c.train, TrainSeeds{s.split, s.init, s.train});
  const auto saved = load_checkpoint(rd.checkpoint(2).string(), manifest_hash(c));
  EXPECT_EQ(saved->payload(), fresh->payload());
  EXPECT_NE(load_checkpoint(rd.checkpoint(1).string())->payload(), saved->payload());
}

TEST_F(LoopTest, RefusesMismatchedOrForeignDirectories) {
  LoopConfig c = base(ModelKind::Echo, "run");
  run_loop(c);
  LoopConfig other = c;
  other.m = 100;
  other.sampler.count = 100;
  EXPECT_THROW(run_loop(other), RunStateError);

  fs::create_directories(dir("junk"));
  std::ofstream(dir("junk") + "/notes.txt") << "keep me";
  LoopConfig j = base(ModelKind::Echo, "junk");
  EXPECT_THROW(run_loop(j), RunStateError);
  EXPECT_EQ(slurp(dir("junk") + "/notes.txt"), "keep me");

  EXPECT_THROW(resume(dir("nowhere")), std::runtime_error);
}

TEST_F(LoopTest, DetectsCorruptedState) {
  LoopConfig c = base(ModelKind::Echo, "corrupt");
  c.stop_after = 1;
  run_loop(c);
  const RunDirectory rd(c.output_dir);

  const std::string sample = slurp(rd.sample(1));
  std::ofstream(rd.sample(1), std::ios::trunc) << "True\n" << sample.substr(5);
  EXPECT_THROW(resume(c.output_dir), RunStateError);
  std::ofstream(rd.sample(1), std::ios::trunc | std::ios::binary) << sample;
  EXPECT_NO_THROW(resume(c.output_dir, 1));

  std::string state = slurp(rd.state());
  state[state.find("\"completed\": 1")+ 13] = '2';
  std::ofstream(rd.state(), std::ios::trunc) << state;
  EXPECT_THROW(resume(c.output_dir), RunStateError);
}

TEST_F(LoopTest, RecordsCsvHasFixedColumnsAndRoundTrips) {
  LoopConfig c = base(ModelKind::NGram, "csv");
  const auto r = run_loop(c);
  const RunDirectory rd(c.output_dir);
  std::ifstream is(rd.records());
  std::string first, header;
  std::getline(is, first);
  std::getline(is, header);
  EXPECT_EQ(first, "# manifest_hash=" + manifest_hash(c));
  EXPECT_EQ(header,
            "generation,dataset_size,n_true,n_false,n_error,diversity_mean,diversity_stderr,pairs_evaluated,"
            "train_loss_final,val_loss_best,best_iter,train_seconds,sample_seconds");

  const RecordsTable table = read_records_csv(rd.records().string());
  EXPECT_EQ(table.manifest_hash, manifest_hash(c));
  ASSERT_EQ(table.records.size(), r.size());
  for (std::size_t i = 0; i < r.size(); ++i) {
    GenerationRecord x = table.records[i];
    x.source_counts = r[i].source_counts;
    x.seeds = r[i].seeds;
    x.diversity.mode = r[i].diversity.mode;
    EXPECT_TRUE(x.same_results(r[i])) << i;
    EXPECT_EQ(x.train_seconds, r[i].train_seconds);
  }
}

TEST_F(LoopTest, ManifestSnapshotsTheConfig) {
  LoopConfig c = base(ModelKind::Echo, "manifest");
  c.generations = 1;
  run_loop(c);
  const LoopConfig back = load_run_config(c.output_dir);
  EXPECT_EQ(back, c);
  EXPECT_EQ(manifest_hash(back), manifest_hash(c));
}

TEST(Seeds, DerivationIsStableAndCollisionFree) {
  EXPECT_EQ(derive_seed(7, SeedPurpose::Train, 3), derive_seed(7, "train", 3));
  EXPECT_NE(derive_seed(7, SeedPurpose::Train, 3), derive_seed(7, SeedPurpose::Train, 4));
  EXPECT_NE(derive_seed(7, SeedPurpose::Train, 3), derive_seed(8, SeedPurpose::Train, 3));
  std::unordered_set<std::uint64_t> keys;
  const SeedPurpose all[] = {SeedPurpose::DataGen, SeedPurpose::Split, SeedPurpose::ModelInit, SeedPurpose::Train,
                             SeedPurpose::Sample,  SeedPurpose::Cycle, SeedPurpose::Diversity};
  std::size_t n = 0;
  for (std::uint64_t master : {1ull, 7ull, 1337ull}) {
    for (SeedPurpose p : all) {
      for (std::uint64_t t = 0; t < 500; ++t, ++n) keys.insert(derive_seed(master, p, t));
    }
  }
  EXPECT_GE(n, 10000u);
  EXPECT_EQ(keys.size(), n);
}

TEST(LoopConfigValidation, RejectsInconsistentSettings) {
  LoopConfig c;
  c.output_dir = "x";
  c.sampler.count = c.m;
  EXPECT_NO_THROW(c.validate());
  LoopConfig bad = c;
  bad.sampler.count = 5;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = c;
  bad.generations = 0;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = c;
  bad.sampler.max_tokens = 257;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = c;
  bad.output_dir.clear();
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}

}  // namespace
}  // namespace selfloop
