#include "miou_oracle.hpp"

#include <dynaseg/metrics.hpp>

#include <gtest/gtest.h>

#include <numeric>
#include <random>

using namespace dynaseg;
using namespace dynaseg::testing;

namespace {

LabelMap random_map(std::size_t h, std::size_t w, int labels, std::mt19937_64& rng)
{
    std::uniform_int_distribution<int> pick(0, labels - 1);
    LabelMap m(h, w);
    for (auto& l : m.labels)
        l = pick(rng);
    return m;
}

LabelMap relabel(const LabelMap& m, std::mt19937_64& rng)
{
    std::vector<std::int32_t> perm(64);
    std::iota(perm.begin(), perm.end(), 100);
    std::shuffle(perm.begin(), perm.end(), rng);
    LabelMap out = m;
    for (auto& l : out.labels)
        if (l != kVoidLabel)
            l = perm[static_cast<std::size_t>(l)];
    return out;
}

} // namespace

TEST(IntersectionOverUnion, Basics)
{
    const std::vector<std::uint8_t> gt{1, 1, 1, 1, 0, 0};
    EXPECT_EQ(intersection_over_union(gt, gt), 1.0);
    EXPECT_EQ(intersection_over_union(std::vector<std::uint8_t>{0, 0, 0, 0, 1, 1}, gt), 0.0);
    EXPECT_EQ(intersection_over_union(std::vector<std::uint8_t>{1, 1, 0, 0, 0, 0}, gt), 0.5);
    EXPECT_EQ(intersection_over_union(std::vector<std::uint8_t>(6, 0), gt), 0.0);
    EXPECT_THROW(intersection_over_union(gt, std::vector<std::uint8_t>(6, 0)), ContractViolation);
    EXPECT_THROW(intersection_over_union(gt, std::vector<std::uint8_t>(5, 1)), ContractViolation);
}

TEST(MeanIou, IdenticalUpToRenaming)
{
    const LabelMap gt(2, 3, {0, 0, 1, 2, 2, 1});
    const LabelMap pred(2, 3, {7, 7, 3, 9, 9, 3});
    EXPECT_EQ(mean_iou(pred, gt), 1.0);
}

TEST(MeanIou, SingleClusterAgainstHalves)
{
    const LabelMap gt(2, 4, {0, 0, 1, 1, 0, 0, 1, 1});
    EXPECT_EQ(mean_iou(LabelMap(2, 4, 5), gt), 0.5);
}

TEST(MeanIou, FourByFourMatchesBruteForce)
{
    const LabelMap gt(4, 4, {0, 0, 1, 1, 0, 0, 1, 1, 2, 2, 2, 2, 2, 2, 2, 2});
    const LabelMap pred(4, 4, {0, 1, 1, 2, 0, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 0});
    EXPECT_DOUBLE_EQ(mean_iou(pred, gt), brute_force_miou(pred, gt));
}

TEST(MeanIou, VoidPixelsAreIgnored)
{
    const LabelMap gt(1, 4, {0, 0, kVoidLabel, 1});
    const LabelMap pred(1, 4, {3, 3, 4, 4});
    // Without the void pixel cluster 4 covers exactly segment 1.
    EXPECT_EQ(mean_iou(pred, gt), 1.0);
    EXPECT_THROW(mean_iou(pred, LabelMap(1, 4, kVoidLabel)), ContractViolation);
}

TEST(MeanIou, DimensionMismatchIsContractViolation)
{
    EXPECT_THROW(mean_iou(LabelMap(2, 3), LabelMap(3, 2)), ContractViolation);
}

TEST(MeanIou, ExhaustiveSmallMapsMatchBruteForce)
{
    std::size_t pairs = 0;
    for (std::size_t h = 1; h <= 3; ++h)
        for (std::size_t w = 1; w <= 3; ++w) {
            if (h * w > 4)
                continue; // larger sizes run in the acceptance suite
            for_each_map(h, w, 3, [&](const LabelMap& gt) {
                for_each_map(h, w, 3, [&](const LabelMap& pred) {
                    ASSERT_DOUBLE_EQ(mean_iou(pred, gt), brute_force_miou(pred, gt));
                    ++pairs;
                });
            });
        }
    EXPECT_GT(pairs, 6000u);
}

TEST(MeanIou, PermutationInvarianceAndSelfScore)
{
    std::mt19937_64 rng(13);
    for (int i = 0; i < 100; ++i) {
        const LabelMap a = random_map(5, 6, 4, rng);
        const LabelMap b = random_map(5, 6, 5, rng);
        const double score = mean_iou(a, b);
        EXPECT_GE(score, 0.0);
        EXPECT_LE(score, 1.0);
        EXPECT_NEAR(mean_iou(relabel(a, rng), relabel(b, rng)), score, 1e-12);
        EXPECT_EQ(mean_iou(a, a), 1.0);
    }
}

TEST(BsdVariants, SingleAnnotation)
{
    const LabelMap gt(2, 2, {0, 0, 1, 1});
    const LabelMap pred(2, 2, {0, 1, 1, 1});
    const BsdScores s = bsd_variants(pred, {gt});
    EXPECT_EQ(s.all, s.fine);
    EXPECT_EQ(s.all, s.coarse);
}

TEST(BsdVariants, AllIsMeanFineAndCoarseFollowSegmentCounts)
{
    const LabelMap pred(1, 4, {0, 0, 0, 0});
    // mean_iou values: two halves -> 0.5; one segment -> 1.0; four singletons -> 0.25
    const LabelMap halves(1, 4, {0, 0, 1, 1});
    const LabelMap whole(1, 4, {0, 0, 0, 0});
    const LabelMap singles(1, 4, {0, 1, 2, 3});
    const BsdScores s = bsd_variants(pred, {halves, singles, whole});
    EXPECT_DOUBLE_EQ(s.all, (0.5 + 0.25 + 1.0) / 3.0);
    EXPECT_EQ(s.fine, 0.25);
    EXPECT_EQ(s.coarse, 1.0);
}

TEST(BsdVariants, AllAveragesAnnotations)
{
    const LabelMap pred(1, 5, {0, 0, 0, 0, 0});
    const LabelMap five(1, 5, {0, 1, 2, 3, 4});
    const LabelMap two_three(1, 5, {0, 0, 1, 1, 1});
    const double a = mean_iou(pred, five), b = mean_iou(pred, two_three);
    EXPECT_DOUBLE_EQ(a, 0.2);
    EXPECT_DOUBLE_EQ(b, 0.5);
    const BsdScores s = bsd_variants(pred, {five, two_three});
    EXPECT_DOUBLE_EQ(s.all, 0.35);
}

TEST(BsdVariants, SegmentCountTiesUseFirstAnnotation)
{
    const LabelMap pred(1, 4, {0, 0, 1, 1});
    const LabelMap a(1, 4, {0, 0, 1, 1});
    const LabelMap b(1, 4, {0, 1, 1, 1});
    const BsdScores s = bsd_variants(pred, {a, b});
    EXPECT_EQ(s.fine, 1.0);
    EXPECT_EQ(s.coarse, 1.0);
    EXPECT_THROW(bsd_variants(pred, {}), ContractViolation);
}

TEST(BsdVariants, FineAndCoarseWithinAnnotationRange)
{
    std::mt19937_64 rng(17);
    for (int i = 0; i < 50; ++i) {
        const LabelMap pred = random_map(4, 4, 4, rng);
        std::vector<LabelMap> gts;
        for (int k = 0; k < 4; ++k)
            gts.push_back(random_map(4, 4, 2 + k, rng));
        const BsdScores s = bsd_variants(pred, gts);
        const auto [lo, hi] = std::minmax_element(s.per_annotation.begin(), s.per_annotation.end());
        for (double v : {s.fine, s.coarse, s.all}) {
            EXPECT_GE(v, *lo);
            EXPECT_LE(v, *hi);
        }
    }
}

TEST(Aggregate, MeanOfThreeVariants)
{
    std::vector<ImageScore> images{{"a", {0.2, 0.1, 0.6, {}}}, {"b", {0.4, 0.3, 0.5, {}}}};
    const auto agg = aggregate_scores(images);
    ASSERT_TRUE(agg.has_value());
    EXPECT_DOUBLE_EQ(agg->all, 0.3);
    EXPECT_DOUBLE_EQ(agg->fine, 0.2);
    EXPECT_DOUBLE_EQ(agg->coarse, 0.55);
    EXPECT_NEAR(agg->mean, (agg->all + agg->fine + agg->coarse) / 3.0, 1e-12);
    EXPECT_FALSE(aggregate_scores({}).has_value());
}
