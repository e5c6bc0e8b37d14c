#include <gtest/gtest.h>

#include <map>
#include <set>
#include <string>

#include "selfloop/datacycle.hpp"

namespace selfloop {
namespace {

/// m distinct single-token-ish items tagged with `tag`; item text encodes
/// (tag, index) so provenance can be checked against content.
Dataset stub_source(std::size_t m, int tag) {
  Dataset d;
  for (std::size_t i = 0; i < m; ++i) {
    TokenSeq s(static_cast<std::size_t>(tag) + 1, Token::Not);
    for (std::size_t k = i; k > 0; k /= 2) s.push_back(k % 2 ? Token::True : Token::False);
    d.push_back(std::move(s), tag);
  }
  return d;
}

int tag_of(const TokenSeq& s) {
  int n = 0;
  while (static_cast<std::size_t>(n) < s.size() && s[static_cast<std::size_t>(n)] == Token::Not) ++n;
  return n - 1;
}

TEST(Compose, FullSyntheticIsLatestSample) {
  const std::size_t m = 50;
  const Dataset d0 = stub_source(m, 0);
  std::vector<Dataset> hist{stub_source(m, 1), stub_source(m, 2)};
  Rng rng(1);
  const Dataset out = compose({CycleKind::FullSynthetic, 1.0}, d0, d0, hist, m, rng);
  EXPECT_EQ(out, hist.back());
}

TEST(Compose, BalancedTenThousandOverFourSources) {
  const std::size_t m = 10000;
  const Dataset d0 = stub_source(m, 0);
  std::vector<Dataset> hist{stub_source(m, 1), stub_source(m, 2), stub_source(m, 3)};
  Rng rng(2);
  const Dataset out = compose({CycleKind::Balanced, 1.0}, d0, d0, hist, m, rng);
  EXPECT_EQ(out.size(), m);
  EXPECT_EQ(provenance_histogram(out), (std::vector<std::size_t>{2500, 2500, 2500, 2500}));
}

TEST(Compose, BalancedRemainderGoesToLowestSources) {
  const std::size_t m = 10;
  const Dataset d0 = stub_source(m, 0);
  std::vector<Dataset> hist{stub_source(m, 1), stub_source(m, 2)};
  Rng rng(3);
  const Dataset out = compose({CycleKind::Balanced, 1.0}, d0, d0, hist, m, rng);
  EXPECT_EQ(provenance_histogram(out), (std::vector<std::size_t>{4, 3, 3}));
}

TEST(Compose, IncrementalNinetyTenSplit) {
  const std::size_t m = 10000;
  const Dataset d0 = stub_source(m, 0);
  std::vector<Dataset> hist{stub_source(m, 1)};
  Rng rng(4);
  const Dataset out = compose({CycleKind::Incremental, 0.1}, d0, d0, hist, m, rng);
  EXPECT_EQ(provenance_histogram(out), (std::vector<std::size_t>{9000, 1000}));
}

TEST(Compose, ExpandingGrowsByLambdaM) {
  const std::size_t m = 10000;
  const DataCycleSpec spec{CycleKind::Expanding, 0.1};
  const Dataset d0 = stub_source(m, 0);
  std::vector<Dataset> hist;
  Dataset prev = d0;
  Rng rng(5);
  for (int t = 1; t <= 3; ++t) {
    hist.push_back(stub_source(m, t));
    prev = compose(spec, d0, prev, hist, m, rng);
    EXPECT_EQ(prev.size(), composed_size(spec, m, static_cast<std::size_t>(t)));
  }
  EXPECT_EQ(prev.size(), 13000u);
}

TEST(Compose, DrawsAreWithoutReplacementAndProvenanceIsTruthful) {
  const std::size_t m = 200;
  const Dataset d0 = stub_source(m, 0);
  std::vector<Dataset> hist{stub_source(m, 1), stub_source(m, 2), stub_source(m, 3)};
  Rng rng(6);
  for (CycleKind k : {CycleKind::Balanced, CycleKind::Incremental}) {
    const Dataset out = compose({k, 0.25}, d0, d0, hist, m, rng);
    std::set<std::string> seen;
    for (std::size_t i = 0; i < out.size(); ++i) {
      EXPECT_EQ(tag_of(out.items[i]), out.provenance[i]);
      EXPECT_TRUE(seen.insert(to_text(out.items[i])).second);
    }
  }
}

TEST(Compose, PureFunctionOfSeed) {
  const std::size_t m = 100;
  const Dataset d0 = stub_source(m, 0);
  std::vector<Dataset> hist{stub_source(m, 1), stub_source(m, 2)};
  Rng a(9), b(9), c(10);
  const DataCycleSpec spec{CycleKind::Balanced, 1.0};
  const Dataset x = compose(spec, d0, d0, hist, m, a);
  EXPECT_EQ(x, compose(spec, d0, d0, hist, m, b));
  EXPECT_NE(x, compose(spec, d0, d0, hist, m, c));
}

TEST(Compose, Errors) {
  const std::size_t m = 10;
  const Dataset d0 = stub_source(m, 0);
  Rng rng(1);
  EXPECT_THROW(compose({CycleKind::Balanced, 1.0}, d0, d0, {}, m, rng), std::invalid_argument);
  EXPECT_THROW(compose({CycleKind::FullSynthetic, 1.0}, d0, d0, {stub_source(9, 1)}, m, rng),
               std::invalid_argument);
  EXPECT_THROW(compose({CycleKind::Incremental, 0.15}, d0, d0, {stub_source(m, 1)}, m, rng),
               std::invalid_argument);
  EXPECT_THROW(compose({CycleKind::Incremental, 0.0}, d0, d0, {stub_source(m, 1)}, m, rng),
               std::invalid_argument);
}

TEST(CycleSpec, LambdaIntegrality) {
  EXPECT_EQ((DataCycleSpec{CycleKind::Incremental, 0.1}).fresh_count(10000), 1000u);
  EXPECT_EQ((DataCycleSpec{CycleKind::Incremental, 0.25}).fresh_count(2000), 500u);
  EXPECT_THROW((DataCycleSpec{CycleKind::Incremental, 0.3}).fresh_count(5), std::invalid_argument);
  EXPECT_NO_THROW((DataCycleSpec{CycleKind::Balanced, 0.3}).validate(5));
  EXPECT_EQ(cycle_kind_from_string(to_string(CycleKind::Expanding)), CycleKind::Expanding);
  EXPECT_THROW(cycle_kind_from_string("mixed"), std::invalid_argument);
}

TEST(Split, SizesAndProvenance) {
  const Dataset d = stub_source(10000, 0);
  Rng rng(1);
  const auto [train, val] = split(d, 0.9, rng);
  EXPECT_EQ(train.size(), 9000u);
  EXPECT_EQ(val.size(), 1000u);
  std::multiset<std::string> all;
  for (const auto& s : train.items) all.insert(to_text(s));
  for (const auto& s : val.items) all.insert(to_text(s));
  std::multiset<std::string> orig;
  for (const auto& s : d.items) orig.insert(to_text(s));
  EXPECT_EQ(all, orig);
  EXPECT_EQ(train.provenance.size(), train.items.size());

  Rng small_rng(2);
  const auto [t10, v10] = split(stub_source(10, 0), 0.9, small_rng);
  EXPECT_EQ(t10.size(), 9u);
  EXPECT_EQ(v10.size(), 1u);
}

TEST(Split, DeterministicAndValidated) {
  const Dataset d = stub_source(100, 0);
  Rng a(5), b(5);
  EXPECT_EQ(split(d, 0.9, a), split(d, 0.9, b));
  Rng rng(1);
  EXPECT_THROW(split(stub_source(1, 0), 0.9, rng), std::invalid_argument);
  EXPECT_THROW(split(d, 1.0, rng), std::invalid_argument);
  EXPECT_THROW(split(d, 0.0, rng), std::invalid_argument);
}

TEST(Persistence, SidecarRoundTrip) {
  const std::string base = ::testing::TempDir() + "/dc_roundtrip";
  Dataset d = stub_source(20, 0);
  d.push_back(from_text("True or False"), 3);
  d.push_back({}, 4);
  save_dataset(d, base + ".txt", base + ".prov");
  EXPECT_EQ(load_dataset(base + ".txt", base + ".prov"), d);

  Dataset short_prov = stub_source(3, 1);
  save_dataset(short_prov, base + "2.txt", base + "2.prov");
  save_dataset(stub_source(2, 1), base + "3.txt", base + "2.prov");
  EXPECT_THROW(load_dataset(base + "2.txt", base + "2.prov"), std::runtime_error);
}

}  // namespace
}  // namespace selfloop
