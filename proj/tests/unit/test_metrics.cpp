#include <cmath>
#include <sstream>

#include <gtest/gtest.h>

#include "patchalign/metrics.hpp"
#include "patchalign/rng.hpp"

namespace pa = patchalign;
using TF = pa::Tensor<float>;

namespace {

pa::ConfusionMatrix cm_from(std::size_t c, std::vector<std::uint64_t> counts) {
    pa::ConfusionMatrix cm(c);
    cm.counts = std::move(counts);
    return cm;
}

}  // namespace

TEST(Iou, PerfectDiagonal) {
    const auto r = pa::iou_from_confusion(cm_from(3, {4, 0, 0, 0, 2, 0, 0, 0, 9}));
    for (const auto& v : r.per_class) EXPECT_EQ(v.value(), 1.0);
    EXPECT_EQ(r.miou, 1.0);
}

TEST(Iou, NeverPredictedClassCountsAsZero) {
    const auto r = pa::iou_from_confusion(cm_from(2, {5, 0, 3, 0}));
    EXPECT_EQ(r.per_class[1].value(), 0.0);
    EXPECT_DOUBLE_EQ(r.per_class[0].value(), 5.0 / 8.0);
    EXPECT_DOUBLE_EQ(r.miou, 5.0 / 16.0);
}

TEST(Iou, SymmetricTwoClass) {
    const auto r = pa::iou_from_confusion(cm_from(2, {3, 1, 1, 3}));
    EXPECT_DOUBLE_EQ(r.per_class[0].value(), 0.6);
    EXPECT_DOUBLE_EQ(r.per_class[1].value(), 0.6);
    EXPECT_DOUBLE_EQ(r.miou, 0.6);
}

TEST(Iou, AbsentClassExcluded) {
    const auto r = pa::iou_from_confusion(cm_from(3, {2, 0, 0, 0, 0, 0, 0, 0, 2}));
    EXPECT_FALSE(r.per_class[1].has_value());
    EXPECT_EQ(r.miou, 1.0);
}

TEST(Iou, RelabelingPermutesPerClassValues) {
    pa::CounterRng rng(7);
    const std::vector<std::uint8_t> perm{3, 1, 0, 2};
    for (int t = 0; t < 20; ++t) {
        pa::LabelMap gt(5, 6), pr(5, 6), pgt(5, 6), ppr(5, 6);
        for (std::size_t i = 0; i < 30; ++i) {
            gt.values[i] = static_cast<std::uint8_t>(rng.below(4));
            pr.values[i] = static_cast<std::uint8_t>(rng.below(4));
            pgt.values[i] = perm[gt.values[i]];
            ppr.values[i] = perm[pr.values[i]];
        }
        pa::ConfusionMatrix a(4), b(4);
        a.add(gt, pr);
        b.add(pgt, ppr);
        const auto ra = pa::iou_from_confusion(a), rb = pa::iou_from_confusion(b);
        for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(rb.per_class[perm[c]], ra.per_class[c]);
        EXPECT_NEAR(ra.miou, rb.miou, 1e-15);
        EXPECT_GE(ra.miou, 0.0);
        EXPECT_LE(ra.miou, 1.0);
    }
}

TEST(Confusion, TotalIsScoredPixelsAndIgnoreSkipped) {
    pa::LabelMap gt(2, 2), pr(2, 2);
    gt.values = {0, pa::LabelMap::kIgnore, 1, 1};
    pr.values = {0, 1, 0, 1};
    pa::ConfusionMatrix cm(2);
    cm.add(gt, pr);
    EXPECT_EQ(cm.total(), 3u);
    EXPECT_EQ(cm.at(1, 0), 1u);
    EXPECT_DOUBLE_EQ(cm.pixel_accuracy(), 2.0 / 3.0);
    cm += cm;
    EXPECT_EQ(cm.total(), 6u);
    pr.values[0] = 2;
    EXPECT_THROW(cm.add(gt, pr), std::out_of_range);
    EXPECT_THROW(cm.add(gt, pa::LabelMap(2, 3)), pa::ShapeError);
}

TEST(Argmax, TiesGoToLowestClass) {
    const auto l = pa::argmax_labels(TF::from_data({3, 1, 3}, {0.2f, 0.5f, 0.4f,  //
                                                              0.2f, 0.5f, 0.2f,  //
                                                              0.6f, 0.0f, 0.4f}));
    EXPECT_EQ(l.values, (std::vector<std::uint8_t>{2, 0, 0}));
}

TEST(Features, OneRowPerSiteSortedById) {
    std::vector<pa::FeatureMap<float>> maps;
    maps.push_back({TF::from_data({2, 1, 2}, {0.1f, 0.2f, 0.9f, 0.8f}), "target", "t_001"});
    maps.push_back({TF::from_data({2, 1, 1}, {0.25f, 0.75f}), "source", "s_000"});
    std::ostringstream os;
    pa::export_features(maps, os);
    EXPECT_EQ(os.str(),
              "id,domain,u,v,f0,f1\n"
              "s_000,source,0,0,0.25,0.75\n"
              "t_001,target,0,0,0.100000001,0.899999976\n"
              "t_001,target,0,1,0.200000003,0.800000012\n");
}

TEST(Features, RoundTripsFloatValues) {
    pa::CounterRng rng(11);
    std::vector<float> v(5 * 3 * 4);
    for (auto& x : v) x = static_cast<float>(rng.uniform());
    std::ostringstream os;
    pa::export_features<float>({{TF::from_data({5, 3, 4}, v), "target", "img"}}, os);
    std::istringstream is(os.str());
    const auto rows = pa::read_features_csv(is);
    ASSERT_EQ(rows.size(), 12u);
    for (const auto& r : rows)
        for (std::size_t k = 0; k < 5; ++k)
            EXPECT_EQ(static_cast<float>(r.values[k]), v[k * 12 + r.u * 4 + r.v]);
}

TEST(Features, Errors) {
    std::ostringstream os;
    EXPECT_THROW(pa::export_features<float>({}, os), std::invalid_argument);
    EXPECT_THROW(pa::export_features<float>({{TF::zeros({2, 1, 1}), "a", "x"}, {TF::zeros({3, 1, 1}), "a", "y"}}, os),
                 pa::ShapeError);
    EXPECT_THROW(pa::export_features<float>({{TF::zeros({2, 1, 1}), "a,b", "x"}}, os), std::invalid_argument);
}
