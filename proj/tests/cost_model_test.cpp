#include "ernn/cost_model.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>
#include <set>

#include "oracles.hpp"
#include "ernn/circulant.hpp"
#include "ernn/errors.hpp"

namespace ernn::cost {
namespace {

using rnn::CellType;

std::uint64_t instrumented_mults(std::size_t m, std::size_t n, std::size_t l) {
  std::mt19937_64 rng(m * 1000 + n + l);
  BlockCirculantMatrix w(m, n, l, ernn::testing::random_vector(rng, m * n / l));
  const auto x = ernn::testing::random_vector(rng, n);
  TransformCounters c;
  matvec_decoupled(SpectralWeights(w), x, &c);
  return c.total_mults();
}

TEST(LayerMultCountTest, MatchesInstrumentedMatvec) {
  for (std::size_t m : {64, 128, 512})
    for (std::size_t n : {64, 256, 512})
      for (std::size_t l = 1; l <= 64; l *= 2) EXPECT_EQ(layer_mult_count(m, n, l), instrumented_mults(m, n, l));
}

TEST(LayerMultCountTest, BlockOneIsDense) {
  EXPECT_EQ(layer_mult_count(96, 40, 1), 96u * 40u);
  EXPECT_EQ(layer_mult_count(1024, 1024, 1), 1024u * 1024u);
}

TEST(LayerMultCountTest, RejectsBadBlocks) {
  EXPECT_THROW(layer_mult_count(64, 64, 0), PartitionError);
  EXPECT_THROW(layer_mult_count(64, 60, 8), PartitionError);
  EXPECT_THROW(layer_mult_count(48, 48, 3), PartitionError);
}

TEST(NormalizedCurveTest, BlockTwoBeatsDense) {
  for (std::size_t n : {64, 128, 512, 1024}) {
    const auto curve = normalized_curve(n, n);
    ASSERT_GE(curve.size(), 2u);
    EXPECT_EQ(curve[0].first, 1u);
    EXPECT_EQ(curve[0].second, 1.0);
    EXPECT_LT(curve[1].second, curve[0].second);
  }
}

TEST(NormalizedCurveTest, KnownValuesAt1024) {
  const auto curve = normalized_curve(1024, 1024);
  ASSERT_EQ(curve.size(), 8u);
  EXPECT_DOUBLE_EQ(curve[1].second, 0.5);
  EXPECT_DOUBLE_EQ(curve[2].second, 0.375);
  // L = 64: 16 * 120 * 2 transforms + 256 * 126 products.
  EXPECT_DOUBLE_EQ(curve[6].second, (16.0 * 120 * 2 + 256.0 * 126) / (1024.0 * 1024));
}

TEST(StorageTest, SingleMatrixExample) {
  EXPECT_EQ(matrix_storage_bytes(1024, 1024, 8, 12), 196608u);
}

TEST(StorageTest, ModelCountsMatricesAndVectors) {
  const LayerSpec spec{CellType::kLstm, 160, {1024, 1024}, 512, 8, 0};
  // gates 4096 x 672 and 4096 x 1024, projections 512 x 1024, 7 vectors of 1024 per layer.
  const std::uint64_t params = (4096u * 672 + 4096u * 1024 + 2u * 512 * 1024) / 8 + 2u * 7 * 1024;
  EXPECT_EQ(parameter_count(spec), params);
  EXPECT_EQ(model_storage_bytes(spec, 12), params * 12 / 8);
  EXPECT_EQ(model_storage_bytes(spec, 12), 1520640u);

  const LayerSpec gru{CellType::kGru, 8, {16}, 0, 4, 4};
  EXPECT_EQ(parameter_count(gru), (32u * 24 + 16u * 8 + 16u * 16) / 4 + 3u * 16);
  EXPECT_EQ(model_storage_bytes(gru, 3), (parameter_count(gru) * 3 + 7) / 8);
}

TEST(MinBlockTest, HugeCapacityGivesOne) {
  const LayerSpec spec{CellType::kLstm, 160, {1024, 1024}, 512, 1, 0};
  EXPECT_EQ(min_block_size_for_capacity(spec, 12, std::uint64_t{1} << 40), 1u);
}

TEST(MinBlockTest, ExactBudgetBoundary) {
  LayerSpec spec{CellType::kLstm, 160, {1024, 1024}, 512, 8, 0};
  const auto at8 = model_storage_bytes(spec, 12);
  spec.block = 1;
  EXPECT_EQ(min_block_size_for_capacity(spec, 12, at8, 0.0), 8u);
  EXPECT_EQ(min_block_size_for_capacity(spec, 12, at8 - 1, 0.0), 16u);
}

TEST(MinBlockTest, ReserveAndInfeasible) {
  const LayerSpec spec{CellType::kLstm, 160, {1024, 1024}, 512, 1, 0};
  // 4 MiB less 12.5% holds 3,019,776 bytes at block 4 but not 6,019,584 at block 2.
  EXPECT_EQ(min_block_size_for_capacity(spec, 12, 4u << 20), 4u);
  EXPECT_THROW(min_block_size_for_capacity(spec, 12, 1000), InfeasibleError);
  EXPECT_THROW(min_block_size_for_capacity(spec, 12, 0), ConfigError);
  EXPECT_THROW(min_block_size_for_capacity(spec, 12, 1000, 1.0), ConfigError);
}

TEST(MinBlockTest, SkipsBlocksThatDoNotPartition) {
  // Input width 12 admits only 1, 2 and 4.
  const LayerSpec spec{CellType::kGru, 12, {64}, 0, 1, 0};
  const auto at4 = model_storage_bytes(LayerSpec{CellType::kGru, 12, {64}, 0, 4, 0}, 8);
  EXPECT_EQ(min_block_size_for_capacity(spec, 8, at4, 0.0), 4u);
  EXPECT_THROW(min_block_size_for_capacity(spec, 8, at4 - 1, 0.0), InfeasibleError);
}

TEST(PeCountTest, Examples) {
  EXPECT_EQ(pe_count(3600, 859200, 60, 20000), 42u);
  EXPECT_EQ(pe_count(2760, 331680, 46, 8000), 41u);
  EXPECT_EQ(pe_count(10, 10, 11, 1), 0u);
  EXPECT_THROW(pe_count(10, 10, 0, 1), ConfigError);
  EXPECT_THROW(pe_count(10, 10, 1, 0), ConfigError);
}

TEST(CostReportTest, FieldsAndRendering) {
  const LayerSpec spec{CellType::kLstm, 160, {1024, 1024}, 512, 8, 0};
  auto r = cost_report(spec, 12, 4u << 20);
  r.pes = pe_count(3600, 859200, 60, 20000);
  EXPECT_EQ(r.storage_bytes, 1520640u);
  EXPECT_TRUE(r.fits);
  EXPECT_LT(r.normalized, 0.25);
  EXPECT_EQ(r.pointwise_mults, 2u * 3 * 1024);
  const auto structured = r.to_structured();
  EXPECT_EQ(structured.rfind("# ernn-cost v1\n", 0), 0u);
  EXPECT_NE(structured.find("storage_bytes=1520640\n"), std::string::npos);
  EXPECT_NE(structured.find("pes=42\n"), std::string::npos);
  EXPECT_NE(r.to_text().find("fits"), std::string::npos);
  EXPECT_FALSE(cost_report(spec, 12, 1u << 20).fits);
}

struct CountingOracle {
  std::function<double(const LayerSpec&)> metric;
  std::size_t calls = 0;
  double operator()(const LayerSpec& s) {
    ++calls;
    return metric(s);
  }
};

const LayerSpec kBase{CellType::kLstm, 256, {512}, 256, 1, 0};

ExploreConfig explore_config(double tolerance, std::uint64_t capacity = std::uint64_t{1} << 40) {
  ExploreConfig cfg;
  cfg.capacity_bytes = capacity;
  cfg.tolerance = tolerance;
  return cfg;
}

TEST(ExploreTest, InfiniteToleranceTakesEverything) {
  CountingOracle o{[](const LayerSpec&) { return 0.5; }};
  const auto r = phase1_explore(kBase, std::ref(o), explore_config(std::numeric_limits<double>::infinity()));
  EXPECT_EQ(r.spec.block, 64u);
  EXPECT_EQ(r.spec.cell, CellType::kGru);
  EXPECT_EQ(r.spec.io_block_size(), 128u);
  EXPECT_FALSE(r.constraint_violated);
  EXPECT_LE(r.oracle_calls, 6u);
  EXPECT_EQ(r.oracle_calls, o.calls);
}

TEST(ExploreTest, ZeroToleranceStopsAtLowerBound) {
  const auto capacity = model_storage_bytes(LayerSpec{CellType::kLstm, 256, {512}, 256, 4, 0}, 12) * 8 / 7 + 1;
  const auto lower = min_block_size_for_capacity(kBase, 12, capacity);
  ASSERT_EQ(lower, 4u);
  // Only the dense baseline and the lower bound score 1.
  CountingOracle o{[lower](const LayerSpec& s) {
    return s.block <= lower && s.cell == CellType::kLstm && s.io_block_size() == s.block ? 1.0 : 0.9;
  }};
  const auto r = phase1_explore(kBase, std::ref(o), explore_config(0.0, capacity));
  EXPECT_EQ(r.lower_bound, lower);
  EXPECT_EQ(r.spec.block, lower);
  EXPECT_EQ(r.spec.cell, CellType::kLstm);
  EXPECT_EQ(r.spec.io_block_size(), lower);
  EXPECT_FALSE(r.constraint_violated);
  EXPECT_LE(r.oracle_calls, 6u);
}

TEST(ExploreTest, StepTwoCallBudget) {
  // capacity chosen so that the lower bound is 8.
  const auto at8 = model_storage_bytes(LayerSpec{CellType::kLstm, 256, {512}, 256, 8, 0}, 12);
  auto cfg = explore_config(0.05, at8 * 8 / 7 + 1);
  for (std::size_t pass_up_to : {4, 8, 16, 32, 64}) {
    CountingOracle o{[pass_up_to](const LayerSpec& s) { return s.block <= pass_up_to ? 1.0 : 0.0; }};
    const auto r = phase1_explore(kBase, std::ref(o), cfg);
    ASSERT_EQ(r.lower_bound, 8u);
    std::size_t step2 = 0, step3 = 0;
    for (const auto& e : r.log) {
      if (e.step == 2 && e.metric) ++step2;
      if (e.step == 3 && e.metric) ++step3;
    }
    EXPECT_LE(step2, 3u);
    EXPECT_LE(step3, 2u);
    EXPECT_LE(r.oracle_calls, 6u);
    if (pass_up_to < 8) {
      EXPECT_TRUE(r.constraint_violated);
      EXPECT_EQ(r.spec.block, 8u);
    } else {
      EXPECT_FALSE(r.constraint_violated);
      EXPECT_EQ(r.spec.block, pass_up_to);
    }
  }
}

TEST(ExploreTest, UpperBoundIsConfigurable) {
  CountingOracle o{[](const LayerSpec&) { return 1.0; }};
  auto cfg = explore_config(0.0);
  cfg.upper_bound = 32;
  const auto r = phase1_explore(kBase, std::ref(o), cfg);
  EXPECT_EQ(r.spec.block, 32u);
}

TEST(ExploreTest, NeverReturnsAnOversizedSpec) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    const std::uint64_t capacity = 20000 + static_cast<std::uint64_t>(u(rng) * 2e6);
    CountingOracle o{[&](const LayerSpec&) { return u(rng); }};
    const auto cfg = explore_config(u(rng) * 0.5, capacity);
    const auto r = phase1_explore(kBase, std::ref(o), cfg);
    EXPECT_LE(static_cast<double>(model_storage_bytes(r.spec, 12)), 0.875 * static_cast<double>(capacity));
    EXPECT_LE(r.oracle_calls, 6u);
    EXPECT_EQ(r.oracle_calls, o.calls);
  }
}

TEST(ExploreTest, RepeatedSpecsAreScoredOnce) {
  // Only the dense spec passes, so the search walks down to block 1, which is
  // the baseline itself.
  CountingOracle o{[](const LayerSpec& s) { return s.block == 1 ? 1.0 : 0.0; }};
  const auto r = phase1_explore(kBase, std::ref(o), explore_config(0.0));
  EXPECT_EQ(r.lower_bound, 1u);
  EXPECT_EQ(r.spec.block, 1u);
  std::set<std::string> distinct;
  for (const auto& e : r.log)
    if (e.metric) distinct.insert(e.spec.describe());
  EXPECT_EQ(o.calls, distinct.size());
  EXPECT_EQ(r.oracle_calls, o.calls);
}

TEST(ExploreTest, InfeasibleBudgetThrows) {
  CountingOracle o{[](const LayerSpec&) { return 1.0; }};
  EXPECT_THROW(phase1_explore(kBase, std::ref(o), explore_config(0.0, 100)), InfeasibleError);
  EXPECT_EQ(o.calls, 0u);
}

TEST(ExploreTest, LogRendersEveryCandidate) {
  CountingOracle o{[](const LayerSpec&) { return 1.0; }};
  const auto r = phase1_explore(kBase, std::ref(o), explore_config(0.0));
  const auto text = r.to_text();
  std::size_t lines = 0;
  for (char c : text) lines += c == '\n';
  EXPECT_EQ(lines, r.log.size() + 3);
}

}  // namespace
}  // namespace ernn::cost
