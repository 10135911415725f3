#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "patchalign/config.hpp"
#include "patchalign/patchmodes.hpp"
#include "patchalign/synthdata.hpp"
#include "patchalign/trainer.hpp"

namespace patchalign {

/// The desk-scale adaptation benchmark configuration.
inline RunConfig bundled_bench_config() {
    RunConfig c;
    c.scene.height = 64;
    c.scene.width = 64;
    c.scene.num_classes = 4;
    c.scene.band_fractions = {0.25, 0.25, 0.25, 0.25};
    c.scene.shift = {6, 0.8, 0.1, 0.05};
    c.counts = {200, 200, 50};
    c.patch = {8, 8};
    c.modes.num_clusters = 16;
    c.modes.n_samples = 10000;
    c.train.num_clusters = 16;
    c.train.warmup_iters = 500;
    c.train.max_iters = 5000;
    c.train.eval_every = 0;
    // Losses are sums over pixels and sites, not means, so the generator
    // rate and the two alignment weights are rescaled for a 64x64 image.
    c.train.lr_g = 1e-5;
    c.train.lambda_d = 1.0;
    c.train.lambda_adv = 0.5;
    c.train.lambda_en = 0.5;
    return c;
}

struct BenchRun {
    TrainMode mode = TrainMode::full;
    double target_miou = 0.0;
    double source_accuracy_after_warmup = 0.0;
    double seconds = 0.0;
};

struct BenchReplicate {
    std::size_t index = 0;
    std::vector<BenchRun> runs;
    double kmeans_inertia = 0.0;

    const BenchRun& run(TrainMode m) const {
        for (const auto& r : runs)
            if (r.mode == m) return r;
        throw std::out_of_range(std::string("bench: no run for mode ") + to_string(m));
    }
};

struct BenchGate {
    std::string name;
    bool passed = false;
    std::string detail;
};

struct BenchReport {
    std::vector<BenchReplicate> replicates;
    std::vector<BenchGate> gates;
    double max_run_seconds = 300.0;

    bool passed() const {
        return std::all_of(gates.begin(), gates.end(), [](const BenchGate& g) { return g.passed; });
    }
};

inline const std::vector<TrainMode>& bench_modes() {
    static const std::vector<TrainMode> modes = {TrainMode::source_only, TrainMode::d_only, TrainMode::full,
                                                 TrainMode::entropy_variant};
    return modes;
}

/// Replicate r shifts every seed of the base config by r (scene seeds by 1000 r
/// so source and target streams of different replicates never coincide).
inline RunConfig replicate_config(const RunConfig& base, std::size_t r) {
    RunConfig c = base;
    c.scene.source_seed += 1000 * r;
    c.scene.target_seed += 1000 * r;
    c.modes.seed += r;
    c.train.seed += r;
    return c;
}

/// Mode discovery on the source labels of a generated domain pair.
inline ClusterModel discover_modes(const RunConfig& cfg, const DomainDataset& source) {
    const auto grid = PatchGrid::fit(cfg.scene.height, cfg.scene.width, cfg.patch.patch_h, cfg.patch.patch_w);
    const auto samples = sample_patches(std::span<const LabelMap>(*source.labels), grid, cfg.modes.n_samples,
                                        cfg.modes.seed, cfg.scene.num_classes, cfg.modes.num_clusters);
    return kmeans_fit(samples, cfg.modes.num_clusters, cfg.modes.seed, cfg.modes.max_iter, cfg.modes.tol);
}

inline BenchReplicate run_replicate(const RunConfig& base, std::size_t r, const std::vector<TrainMode>& modes,
                                    const std::function<void(const std::string&)>& progress = {}) {
    const RunConfig cfg = replicate_config(base, r);
    const auto data = generate_domain_pair(cfg.scene, cfg.counts.n_source, cfg.counts.n_target, cfg.counts.n_target_test);
    const auto model = discover_modes(cfg, data.source_train);
    const auto grid = PatchGrid::fit(cfg.scene.height, cfg.scene.width, cfg.patch.patch_h, cfg.patch.patch_w);
    BenchReplicate rep;
    rep.index = r;
    rep.kmeans_inertia = model.inertia;
    for (auto mode : modes) {
        TrainConfig tc = cfg.train;
        tc.mode = mode;
        const auto start = std::chrono::steady_clock::now();
        const auto result =
            run_training<float>(tc, data.source_train, data.target_train, &data.target_test, model, grid);
        BenchRun run;
        run.mode = mode;
        run.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        run.target_miou = result.log.last_eval("target_test")->iou.miou;
        for (const auto& e : result.log.evals)
            if (e.split == "source_train" && e.iter == tc.warmup_iters) run.source_accuracy_after_warmup = e.pixel_accuracy;
        if (progress) {
            char buf[160];
            std::snprintf(buf, sizeof buf, "seed %zu %-16s target mIoU %.4f  source acc@warmup %.4f  %.1fs", r,
                          to_string(mode), run.target_miou, run.source_accuracy_after_warmup, run.seconds);
            progress(buf);
        }
        rep.runs.push_back(run);
    }
    return rep;
}

inline double median(std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline std::vector<BenchGate> evaluate_gates(const std::vector<BenchReplicate>& reps, double max_run_seconds) {
    std::vector<BenchGate> gates;
    char buf[200];

    double min_acc = 1.0;
    for (const auto& r : reps) min_acc = std::min(min_acc, r.run(TrainMode::source_only).source_accuracy_after_warmup);
    std::snprintf(buf, sizeof buf, "min source-train pixel accuracy after warm-up %.4f (> 0.9)", min_acc);
    gates.push_back({"warmup_sanity", min_acc > 0.9, buf});

    std::size_t wins = 0;
    for (const auto& r : reps) wins += r.run(TrainMode::full).target_miou > r.run(TrainMode::source_only).target_miou;
    const std::size_t need = reps.size() >= 5 ? reps.size() - 1 : reps.size();
    std::snprintf(buf, sizeof buf, "full beats source_only on %zu of %zu seeds (need %zu)", wins, reps.size(), need);
    gates.push_back({"full_beats_source_only", wins >= need, buf});

    auto med = [&](TrainMode m) {
        std::vector<double> v;
        for (const auto& r : reps) v.push_back(r.run(m).target_miou);
        return median(v);
    };
    const double so = med(TrainMode::source_only), d = med(TrainMode::d_only), f = med(TrainMode::full);
    std::snprintf(buf, sizeof buf, "median mIoU source_only %.4f <= d_only %.4f <= full %.4f", so, d, f);
    gates.push_back({"median_ordering", so <= d && d <= f, buf});

    double slowest = 0.0;
    for (const auto& r : reps)
        for (const auto& run : r.runs) slowest = std::max(slowest, run.seconds);
    std::snprintf(buf, sizeof buf, "slowest run %.1fs (< %.0fs)", slowest, max_run_seconds);
    gates.push_back({"run_time", slowest < max_run_seconds, buf});
    return gates;
}

/// Runs `seeds` replicates, at most `threads` at a time. Results do not
/// depend on the thread count.
inline BenchReport run_bench(const RunConfig& base, std::size_t seeds, std::size_t threads,
                             const std::function<void(const std::string&)>& progress = {},
                             double max_run_seconds = 300.0) {
    if (seeds == 0) throw std::invalid_argument("bench: needs at least one seed");
    threads = std::clamp<std::size_t>(threads, 1, seeds);
    BenchReport report;
    report.max_run_seconds = max_run_seconds;
    report.replicates.resize(seeds);
    std::mutex mu;
    auto locked_progress = [&](const std::string& line) {
        if (!progress) return;
        std::lock_guard lock(mu);
        progress(line);
    };
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    auto worker = [&] {
        for (std::size_t r; (r = next++) < seeds;) {
            try {
                report.replicates[r] = run_replicate(base, r, bench_modes(), locked_progress);
            } catch (...) {
                std::lock_guard lock(mu);
                if (!failure) failure = std::current_exception();
            }
        }
    };
    if (threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t i = 0; i < threads; ++i) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    if (failure) std::rethrow_exception(failure);
    report.gates = evaluate_gates(report.replicates, max_run_seconds);
    return report;
}

inline void print_bench_table(const BenchReport& report, std::ostream& os) {
    char buf[200];
    os << "seed  source_only  d_only   full     entropy  src_acc@warmup\n";
    for (const auto& r : report.replicates) {
        std::snprintf(buf, sizeof buf, "%4zu  %11.4f  %7.4f  %7.4f  %7.4f  %14.4f\n", r.index,
                      r.run(TrainMode::source_only).target_miou, r.run(TrainMode::d_only).target_miou,
                      r.run(TrainMode::full).target_miou, r.run(TrainMode::entropy_variant).target_miou,
                      r.run(TrainMode::source_only).source_accuracy_after_warmup);
        os << buf;
    }
    for (const auto& g : report.gates) os << (g.passed ? "PASS " : "FAIL ") << g.name << ": " << g.detail << '\n';
}

inline void write_bench_csv(const BenchReport& report, std::ostream& os) {
    os << "seed,mode,target_miou,source_acc_after_warmup,seconds\n";
    for (const auto& r : report.replicates)
        for (const auto& run : r.runs)
            os << r.index << ',' << to_string(run.mode) << ',' << detail::format_g9(run.target_miou) << ','
               << detail::format_g9(run.source_accuracy_after_warmup) << ',' << detail::format_g9(run.seconds) << '\n';
}

}  // namespace patchalign
