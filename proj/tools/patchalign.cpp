// patchalign: data generation, mode discovery, training, evaluation,
// feature export and the adaptation benchmark.
//
// Exit codes: 0 success, 2 config error, 3 I/O error, 4 validation or
// acceptance failure.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "patchalign/artifacts.hpp"
#include "patchalign/bench.hpp"
#include "patchalign/patchalign.hpp"

namespace fs = std::filesystem;
using namespace patchalign;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitValidation = 4;

/// Raised when an output fails its read-back check or a bench gate fails.
class ValidationFailure : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

void check(bool ok, const std::string& what) {
    if (!ok) throw ValidationFailure(what);
}

RunConfig load_config(const std::optional<std::string>& path) {
    return path ? parse_config(*path) : run_config_from_json(nlohmann::json::object());
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::trunc | std::ios::binary);
    if (!os) throw IoError("cannot write " + path.string());
    os << text;
    if (!os) throw IoError("write failed: " + path.string());
}

std::string read_text(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

// ---------------------------------------------------------------------------

struct GenDataArgs {
    std::optional<std::string> config;
    std::string out;
    std::optional<std::uint64_t> seed;
};

int gen_data(const GenDataArgs& a) {
    RunConfig c = load_config(a.config);
    if (a.seed) {
        c.scene.source_seed = *a.seed;
        c.scene.target_seed = *a.seed + 1;
    }
    const auto pair = generate_domain_pair(c.scene, c.counts.n_source, c.counts.n_target, c.counts.n_target_test);
    const fs::path out = a.out;
    write_dataset(pair.source_train, out / "source_train");
    write_dataset(pair.target_train, out / "target_train");
    write_dataset(pair.target_test, out / "target_test");
    // withheld target-train labels, kept apart from the training inputs
    DomainDataset oracle = pair.target_train;
    oracle.labels = pair.target_train_oracle_labels;
    write_dataset(oracle, out / "oracle" / "target_train");
    write_resolved_config(c, out);

    check(read_dataset(out / "source_train") == pair.source_train, "source_train did not read back identically");
    check(read_dataset(out / "target_train") == pair.target_train, "target_train did not read back identically");
    check(read_dataset(out / "target_test") == pair.target_test, "target_test did not read back identically");
    std::cout << "wrote " << pair.source_train.size() << " source, " << pair.target_train.size() << " target train, "
              << pair.target_test.size() << " target test scenes to " << out.string() << '\n';
    return 0;
}

// ---------------------------------------------------------------------------

struct ModesArgs {
    std::optional<std::string> config;
    std::string data;
    std::string out;
    std::optional<std::uint64_t> seed;
};

int discover(const ModesArgs& a) {
    RunConfig c = load_config(a.config);
    if (a.seed) c.modes.seed = *a.seed;
    const auto source = read_dataset(fs::path(a.data) / "source_train");
    check(source.labels.has_value(), "source_train has no labels");
    check(source.num_classes == c.scene.num_classes, "dataset num_classes differs from scene.num_classes");
    const auto grid = PatchGrid::fit(source.height(), source.width(), c.patch.patch_h, c.patch.patch_w);
    const auto samples = sample_patches(std::span<const LabelMap>(*source.labels), grid, c.modes.n_samples, c.modes.seed,
                                        source.num_classes, c.modes.num_clusters);
    ModesFile m{kmeans_fit(samples, c.modes.num_clusters, c.modes.seed, c.modes.max_iter, c.modes.tol),
                source.num_classes, c.patch.patch_h, c.patch.patch_w, c.modes.seed, c.modes.n_samples};
    write_modes(a.out, m);
    write_resolved_config(c, a.out);

    const auto back = read_modes(a.out);
    check(back.model.centroids == m.model.centroids, "centroids did not read back identically");
    std::cout << "K=" << m.model.num_clusters << " inertia=" << m.model.inertia << " after " << m.model.iterations
              << " iterations\n";
    return 0;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
    std::optional<std::string> config;
    std::string data;
    std::string modes;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> mode;
};

void write_logs(const TrainLog& log, const fs::path& out) {
    std::ostringstream l, e;
    write_log_csv(log, l);
    write_eval_csv(log.evals, e);
    write_text(out / "log.csv", l.str());
    write_text(out / "eval.csv", e.str());
    check(read_text(out / "log.csv") == l.str(), "log.csv did not read back identically");
}

int train(const TrainArgs& a) {
    RunConfig c = load_config(a.config);
    if (a.seed) c.train.seed = *a.seed;
    if (a.mode) {
        try {
            c.train.mode = parse_train_mode(*a.mode);
        } catch (const std::invalid_argument& e) {
            throw ConfigError(ConfigError::Kind::constraint, "train.mode", e.what());
        }
    }
    const fs::path data = a.data, out = a.out;
    const auto source = read_dataset(data / "source_train");
    const auto target = read_dataset(data / "target_train");
    std::optional<DomainDataset> test;
    if (fs::exists(data / "target_test" / "manifest.json")) test = read_dataset(data / "target_test");
    const auto modes = read_modes(a.modes);
    check(modes.num_classes == source.num_classes, "cluster model C differs from the dataset");
    check(modes.patch_h == c.patch.patch_h && modes.patch_w == c.patch.patch_w,
          "cluster model patch size differs from the config");
    check(modes.model.num_clusters == c.train.num_clusters, "cluster model K differs from train.K");
    const auto grid = PatchGrid::fit(source.height(), source.width(), c.patch.patch_h, c.patch.patch_w);

    detail::make_dir(out);
    write_resolved_config(c, out);
    Trainer<float> trainer(c.train, source, target, test ? &*test : nullptr, modes.model, grid);
    // intermediate checkpoints under checkpoints/iter_NNNNNN, the final one in checkpoint/
    trainer.run([&](const Trainer<float>& t) {
        char name[32];
        std::snprintf(name, sizeof name, "iter_%06zu", t.iteration());
        write_checkpoint(t.done() ? out / "checkpoint" : out / "checkpoints" / name, t, source.num_classes);
    });
    write_logs(trainer.log(), out);

    const auto ck = read_checkpoint<float>(out / "checkpoint");
    check(ck.iteration == c.train.max_iters, "final checkpoint has the wrong iteration");
    check(bit_equal(ck.g, trainer.g()) && bit_equal(ck.h, trainer.h()) && bit_equal(ck.d, trainer.d()),
          "final checkpoint parameters did not read back identically");
    if (const auto* e = trainer.log().last_eval("target_test"))
        std::cout << "target_test mIoU " << e->iou.miou << '\n';
    if (const auto* e = trainer.log().last_eval("source_train"))
        std::cout << "source_train mIoU " << e->iou.miou << " pixel accuracy " << e->pixel_accuracy << '\n';
    return 0;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
    std::string checkpoint;
    std::string data;
    std::string split = "target_test";
    std::string out = ".";
};

int evaluate(const EvalArgs& a) {
    const auto ck = read_checkpoint<float>(a.checkpoint);
    const auto ds = read_dataset(fs::path(a.data) / a.split);
    check(ds.labels.has_value(), "split " + a.split + " has no labels to score against");
    check(ds.num_classes == ck.num_classes, "checkpoint and dataset disagree on num_classes");
    const auto gcfg = ck.train.g_config(static_cast<std::size_t>(ck.num_classes));
    const auto cm = confusion_on(ds, ck.g, gcfg);
    const EvalRecord rec{ck.iteration, a.split, iou_from_confusion(cm), cm.pixel_accuracy()};
    check(cm.total() > 0, "no scored pixels");
    std::ostringstream os;
    write_eval_csv({rec}, os);
    detail::make_dir(a.out);
    write_text(fs::path(a.out) / "eval.csv", os.str());
    check(read_text(fs::path(a.out) / "eval.csv") == os.str(), "eval.csv did not read back identically");
    std::cout << a.split << " mIoU " << rec.iou.miou << " pixel accuracy " << rec.pixel_accuracy << '\n';
    return 0;
}

// ---------------------------------------------------------------------------

struct ExportArgs {
    std::string checkpoint;
    std::string data;
    std::string out = ".";
    std::vector<std::string> splits = {"source_train", "target_train"};
};

int export_feats(const ExportArgs& a) {
    const auto ck = read_checkpoint<float>(a.checkpoint);
    const auto gcfg = ck.train.g_config(static_cast<std::size_t>(ck.num_classes));
    std::vector<FeatureMap<float>> maps;
    std::size_t sites = 0;
    {
        NoGradGuard no_grad;
        for (const auto& split : a.splits) {
            const auto ds = read_dataset(fs::path(a.data) / split);
            check(ds.num_classes == ck.num_classes, "checkpoint and dataset disagree on num_classes");
            const std::string domain = split.rfind("source", 0) == 0 ? "source" : "target";
            for (std::size_t i = 0; i < ds.size(); ++i) {
                auto f = h_forward(g_forward(ds.images[i], ck.g, gcfg), ck.h, ck.grid, ck.train.leaky_slope);
                sites += f.dim(1) * f.dim(2);
                char id[16];
                std::snprintf(id, sizeof id, "_%05zu", i);
                maps.push_back({std::move(f), domain, split + id});
            }
        }
    }
    std::ostringstream os;
    export_features(std::move(maps), os);
    detail::make_dir(a.out);
    const auto path = fs::path(a.out) / "features.csv";
    write_text(path, os.str());
    std::istringstream back(read_text(path));
    check(read_features_csv(back).size() == sites, "features.csv row count does not match U*V per image");
    std::cout << "wrote " << sites << " rows to " << path.string() << '\n';
    return 0;
}

// ---------------------------------------------------------------------------

struct BenchArgs {
    std::optional<std::string> config;
    std::size_t seeds = 5;
    std::optional<std::string> out;
    double max_run_seconds = 300.0;
};

std::size_t thread_cap() {
    const char* env = std::getenv("PATCHALIGN_THREADS");
    if (!env || !*env) return 1;
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (*end != '\0' || v < 1) throw ConfigError(ConfigError::Kind::constraint, "PATCHALIGN_THREADS", "PATCHALIGN_THREADS must be a positive integer");
    return static_cast<std::size_t>(v);
}

int bench(const BenchArgs& a) {
    const RunConfig c = a.config ? parse_config(*a.config) : bundled_bench_config();
    const auto threads = thread_cap();
    if (a.out) {
        detail::make_dir(*a.out);
        write_resolved_config(c, *a.out);
    }
    const auto report = run_bench(c, a.seeds, threads, [](const std::string& line) { std::cerr << line << std::endl; },
                                  a.max_run_seconds);
    print_bench_table(report, std::cout);
    if (a.out) {
        std::ostringstream os;
        write_bench_csv(report, os);
        write_text(fs::path(*a.out) / "bench.csv", os.str());
    }
    check(report.passed(), "benchmark gates failed");
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Patch-level domain adaptation for semantic segmentation on synthetic scenes"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "patchalign 0.1.0");

    GenDataArgs gd;
    auto* gen = app.add_subcommand("gen-data", "Generate source and target datasets");
    gen->add_option("--config", gd.config, "Run config JSON")->check(CLI::ExistingFile);
    gen->add_option("--out", gd.out, "Output directory")->required();
    gen->add_option("--seed", gd.seed, "Override the scene seeds (target uses seed + 1)");

    ModesArgs md;
    auto* modes = app.add_subcommand("discover-modes", "Cluster source patch label histograms");
    modes->add_option("--config", md.config, "Run config JSON")->check(CLI::ExistingFile);
    modes->add_option("--data", md.data, "Data directory written by gen-data")->required();
    modes->add_option("--out", md.out, "Output directory for the cluster model")->required();
    modes->add_option("--seed", md.seed, "Override modes.seed");

    TrainArgs tr;
    auto* trn = app.add_subcommand("train", "Train G, H and D");
    trn->add_option("--config", tr.config, "Run config JSON")->check(CLI::ExistingFile);
    trn->add_option("--data", tr.data, "Data directory written by gen-data")->required();
    trn->add_option("--modes", tr.modes, "Cluster model directory")->required();
    trn->add_option("--out", tr.out, "Run directory")->required();
    trn->add_option("--seed", tr.seed, "Override train.seed");
    trn->add_option("--mode", tr.mode, "Override train.mode");

    EvalArgs ev;
    auto* evl = app.add_subcommand("evaluate", "Score a checkpoint on a labeled split");
    evl->add_option("--checkpoint", ev.checkpoint, "Checkpoint directory")->required();
    evl->add_option("--data", ev.data, "Data directory written by gen-data")->required();
    evl->add_option("--split", ev.split, "Split subdirectory to score")->capture_default_str();
    evl->add_option("--out", ev.out, "Directory for eval.csv")->capture_default_str();

    ExportArgs ex;
    auto* exf = app.add_subcommand("export-features", "Write patch-level features F to CSV");
    exf->add_option("--checkpoint", ex.checkpoint, "Checkpoint directory")->required();
    exf->add_option("--data", ex.data, "Data directory written by gen-data")->required();
    exf->add_option("--out", ex.out, "Directory for features.csv")->capture_default_str();
    exf->add_option("--splits", ex.splits, "Split subdirectories to export")->capture_default_str();

    BenchArgs bn;
    auto* bch = app.add_subcommand("bench", "Run the adaptation benchmark over several seeds");
    bch->add_option("--config", bn.config, "Run config JSON (default: bundled benchmark)")->check(CLI::ExistingFile);
    bch->add_option("--seeds", bn.seeds, "Number of seeds")->capture_default_str()->check(CLI::PositiveNumber);
    bch->add_option("--out", bn.out, "Directory for bench.csv and resolved_config.json");
    bch->add_option("--max-run-seconds", bn.max_run_seconds, "Per-run time gate")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfig;
    }

    try {
        if (*gen) return gen_data(gd);
        if (*modes) return discover(md);
        if (*trn) return train(tr);
        if (*evl) return evaluate(ev);
        if (*exf) return export_feats(ex);
        if (*bch) return bench(bn);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const IoError& e) {
        std::cerr << "i/o error: " << e.what() << '\n';
        return kExitIo;
    } catch (const ParseError& e) {
        std::cerr << "i/o error: " << e.what() << '\n';
        return kExitIo;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "i/o error: " << e.what() << '\n';
        return kExitIo;
    } catch (const ValidationFailure& e) {
        std::cerr << "validation failed: " << e.what() << '\n';
        return kExitValidation;
    } catch (const std::exception& e) {
        std::cerr << "validation failed: " << e.what() << '\n';
        return kExitValidation;
    }
    return 0;
}
