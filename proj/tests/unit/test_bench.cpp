#include <filesystem>
#include <sstream>

#include <gtest/gtest.h>

#include "patchalign/bench.hpp"

namespace pa = patchalign;
using pa::TrainMode;

namespace {

pa::BenchReplicate replicate(std::size_t i, double so, double d, double full, double acc = 0.95, double secs = 10) {
    pa::BenchReplicate r;
    r.index = i;
    r.runs = {{TrainMode::source_only, so, acc, secs},
              {TrainMode::d_only, d, acc, secs},
              {TrainMode::full, full, acc, secs},
              {TrainMode::entropy_variant, full, acc, secs}};
    return r;
}

bool gate(const std::vector<pa::BenchGate>& gates, const std::string& name) {
    for (const auto& g : gates)
        if (g.name == name) return g.passed;
    ADD_FAILURE() << "no gate " << name;
    return false;
}

pa::RunConfig tiny_bench() {
    pa::RunConfig c;
    c.scene.height = 16;
    c.scene.width = 16;
    c.scene.object_size_range = {2, 5};
    c.counts = {4, 4, 2};
    c.patch = {4, 4};
    c.modes.num_clusters = 3;
    c.modes.n_samples = 100;
    c.train.num_clusters = 3;
    c.train.g_channels = {4};
    c.train.h_hidden = 8;
    c.train.d_widths = {8, 1};
    c.train.warmup_iters = 2;
    c.train.max_iters = 6;
    c.train.eval_every = 0;
    return c;
}

}  // namespace

TEST(Bench, BundledConfigMatchesShippedFile) {
    const auto shipped = pa::parse_config(std::filesystem::path(PATCHALIGN_SOURCE_DIR) / "configs" / "bench.json");
    EXPECT_EQ(shipped, pa::bundled_bench_config());
    const auto& c = shipped;
    EXPECT_EQ(c.scene.height, 64u);
    EXPECT_EQ(c.scene.num_classes, 4);
    EXPECT_EQ(c.scene.shift.vertical_offset_px, 6);
    EXPECT_EQ(c.counts.n_source, 200u);
    EXPECT_EQ(c.counts.n_target_test, 50u);
    EXPECT_EQ(c.train.warmup_iters, 500u);
    EXPECT_EQ(c.train.max_iters, 5000u);
    EXPECT_EQ(c.train.num_clusters, 16u);
    EXPECT_EQ(c.patch.patch_h, 8u);
}

TEST(Bench, ReplicatesShiftEverySeed) {
    const auto base = pa::bundled_bench_config();
    const auto r2 = pa::replicate_config(base, 2);
    EXPECT_EQ(r2.scene.source_seed, base.scene.source_seed + 2000);
    EXPECT_EQ(r2.scene.target_seed, base.scene.target_seed + 2000);
    EXPECT_EQ(r2.modes.seed, base.modes.seed + 2);
    EXPECT_EQ(r2.train.seed, base.train.seed + 2);
    EXPECT_EQ(pa::replicate_config(base, 0), base);
}

TEST(Bench, Median) {
    EXPECT_EQ(pa::median({3, 1, 2}), 2.0);
    EXPECT_EQ(pa::median({4, 1, 2, 3}), 2.5);
}

TEST(Bench, GatesOnSyntheticResults) {
    std::vector<pa::BenchReplicate> reps;
    for (std::size_t i = 0; i < 5; ++i) reps.push_back(replicate(i, 0.90, 0.91, 0.92));
    auto gates = pa::evaluate_gates(reps, 300);
    EXPECT_TRUE(gate(gates, "warmup_sanity"));
    EXPECT_TRUE(gate(gates, "full_beats_source_only"));
    EXPECT_TRUE(gate(gates, "median_ordering"));
    EXPECT_TRUE(gate(gates, "run_time"));

    reps[0] = replicate(0, 0.95, 0.95, 0.90);  // one loss of five is allowed
    EXPECT_TRUE(gate(pa::evaluate_gates(reps, 300), "full_beats_source_only"));
    reps[1] = replicate(1, 0.95, 0.95, 0.95);  // a tie is not a win
    EXPECT_FALSE(gate(pa::evaluate_gates(reps, 300), "full_beats_source_only"));

    reps.assign(5, replicate(0, 0.90, 0.89, 0.92));
    EXPECT_FALSE(gate(pa::evaluate_gates(reps, 300), "median_ordering"));
    reps.assign(5, replicate(0, 0.90, 0.91, 0.92, 0.85));
    EXPECT_FALSE(gate(pa::evaluate_gates(reps, 300), "warmup_sanity"));
    reps.assign(5, replicate(0, 0.90, 0.91, 0.92, 0.95, 301));
    EXPECT_FALSE(gate(pa::evaluate_gates(reps, 300), "run_time"));
}

TEST(Bench, TinyRunIsIndependentOfThreadCount) {
    const auto a = pa::run_bench(tiny_bench(), 2, 1);
    const auto b = pa::run_bench(tiny_bench(), 2, 2);
    ASSERT_EQ(a.replicates.size(), 2u);
    for (std::size_t r = 0; r < 2; ++r) {
        ASSERT_EQ(a.replicates[r].runs.size(), pa::bench_modes().size());
        EXPECT_EQ(a.replicates[r].kmeans_inertia, b.replicates[r].kmeans_inertia);
        for (auto mode : pa::bench_modes()) {
            EXPECT_EQ(a.replicates[r].run(mode).target_miou, b.replicates[r].run(mode).target_miou);
            EXPECT_EQ(a.replicates[r].run(mode).source_accuracy_after_warmup,
                      b.replicates[r].run(mode).source_accuracy_after_warmup);
        }
    }
    std::ostringstream table, csv;
    pa::print_bench_table(a, table);
    pa::write_bench_csv(a, csv);
    EXPECT_NE(table.str().find("median_ordering"), std::string::npos);
    const auto text = csv.str();
    EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 1 + 2 * 4);
    EXPECT_THROW(pa::run_bench(tiny_bench(), 0, 1), std::invalid_argument);
}
