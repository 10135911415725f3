#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "patchalign/config.hpp"
#include "patchalign/nets.hpp"
#include "patchalign/optim.hpp"
#include "patchalign/patchmodes.hpp"
#include "patchalign/pten.hpp"
#include "patchalign/trainer.hpp"

namespace patchalign {

namespace detail {

inline nlohmann::json read_json(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open " + path.string());
    try {
        return nlohmann::json::parse(is);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot write " + path.string());
    os << j.dump(2) << '\n';
    if (!os) throw IoError("write failed: " + path.string());
}

inline void make_dir(const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

}  // namespace detail

// ---------------------------------------------------------------------------
// cluster model: centroids.pten (K x 4C float32) + modes.json
// ---------------------------------------------------------------------------

struct ModesFile {
    ClusterModel model;
    int num_classes = 0;
    std::size_t patch_h = 0;
    std::size_t patch_w = 0;
    std::uint64_t seed = 0;
    std::size_t n_samples = 0;
};

/// Centroids are stored as float32 in the PTEN file and as exact doubles in
/// the sidecar; the sidecar values win on reload.
inline void write_modes(const std::filesystem::path& dir, const ModesFile& m) {
    detail::make_dir(dir);
    const auto& cm = m.model;
    std::vector<float> flat(cm.centroids.begin(), cm.centroids.end());
    write_tensor(dir / "centroids.pten", Tensor<float>::from_data({cm.num_clusters, cm.dim}, std::move(flat)));
    detail::write_json(dir / "modes.json", {
                                               {"version", 1},
                                               {"K", cm.num_clusters},
                                               {"C", m.num_classes},
                                               {"dim", cm.dim},
                                               {"patch_h", m.patch_h},
                                               {"patch_w", m.patch_w},
                                               {"seed", m.seed},
                                               {"n_samples", m.n_samples},
                                               {"inertia", cm.inertia},
                                               {"iterations", cm.iterations},
                                               {"inertia_history", cm.inertia_history},
                                               {"centroids", cm.centroids},
                                               {"tensor", "centroids.pten"},
                                           });
}

inline ModesFile read_modes(const std::filesystem::path& dir) {
    const auto path = dir / "modes.json";
    const auto j = detail::read_json(path);
    ModesFile m;
    try {
        if (j.at("version").get<int>() != 1) throw ParseError(path.string() + ": unsupported version");
        m.model.num_clusters = j.at("K").get<std::size_t>();
        m.model.dim = j.at("dim").get<std::size_t>();
        m.num_classes = j.at("C").get<int>();
        m.patch_h = j.at("patch_h").get<std::size_t>();
        m.patch_w = j.at("patch_w").get<std::size_t>();
        m.seed = j.at("seed").get<std::uint64_t>();
        m.n_samples = j.at("n_samples").get<std::size_t>();
        m.model.inertia = j.at("inertia").get<double>();
        m.model.iterations = j.at("iterations").get<std::size_t>();
        m.model.inertia_history = j.at("inertia_history").get<std::vector<double>>();
        m.model.centroids = j.at("centroids").get<std::vector<double>>();
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
    const auto tensor = read_tensor<float>(dir / "centroids.pten");
    if (tensor.shape() != Shape{m.model.num_clusters, m.model.dim} ||
        m.model.centroids.size() != m.model.num_clusters * m.model.dim)
        throw ParseError(path.string() + ": centroid shape disagrees with K and dim");
    if (m.model.dim != 4 * static_cast<std::size_t>(m.num_classes))
        throw ParseError(path.string() + ": dim must equal 4 * C");
    for (std::size_t i = 0; i < m.model.centroids.size(); ++i)
        if (static_cast<float>(m.model.centroids[i]) != tensor[i])
            throw ParseError(path.string() + ": centroids.pten does not match the sidecar");
    return m;
}

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

namespace detail {

inline std::string file_name(const std::string& name) { return name + ".pten"; }

template <typename T>
nlohmann::json write_params(const std::filesystem::path& dir, const ParamSet<T>& p) {
    nlohmann::json list = nlohmann::json::array();
    for (const auto& [name, t] : p.entries()) {
        write_tensor(dir / file_name(name), t);
        list.push_back({{"name", name}, {"shape", t.shape()}, {"file", file_name(name)}});
    }
    return list;
}

template <typename T>
ParamSet<T> read_params(const std::filesystem::path& dir, const nlohmann::json& list) {
    ParamSet<T> p;
    for (const auto& e : list) {
        const auto file = dir / e.at("file").get<std::string>();
        auto t = read_tensor<T>(file);
        if (t.shape() != e.at("shape").get<Shape>()) throw ParseError(file.string() + ": shape disagrees with checkpoint.json");
        p.add(e.at("name").get<std::string>(), std::move(t));
    }
    return p;
}

template <typename T>
nlohmann::json write_optimizer(const std::filesystem::path& dir, const std::string& tag, const OptimizerState<T>& s) {
    nlohmann::json first = nlohmann::json::array(), second = nlohmann::json::array();
    auto dump = [&](const std::vector<std::vector<T>>& bufs, const char* kind, nlohmann::json& out) {
        for (std::size_t i = 0; i < bufs.size(); ++i) {
            const std::string f = "opt." + tag + "." + kind + "." + std::to_string(i) + ".pten";
            write_tensor(dir / f, Tensor<T>::from_data({bufs[i].size()}, bufs[i]));
            out.push_back(f);
        }
    };
    dump(s.first, "first", first);
    dump(s.second, "second", second);
    return {{"kind", s.kind == OptimizerKind::adam ? "adam" : "sgd_momentum"},
            {"base_lr", s.base_lr},
            {"momentum", s.momentum},
            {"beta2", s.beta2},
            {"epsilon", s.epsilon},
            {"weight_decay", s.weight_decay},
            {"step", s.step},
            {"first", first},
            {"second", second}};
}

template <typename T>
OptimizerState<T> read_optimizer(const std::filesystem::path& dir, const nlohmann::json& j) {
    OptimizerState<T> s;
    s.kind = j.at("kind").get<std::string>() == "adam" ? OptimizerKind::adam : OptimizerKind::sgd_momentum;
    s.base_lr = j.at("base_lr").get<double>();
    s.momentum = j.at("momentum").get<double>();
    s.beta2 = j.at("beta2").get<double>();
    s.epsilon = j.at("epsilon").get<double>();
    s.weight_decay = j.at("weight_decay").get<double>();
    s.step = j.at("step").get<std::uint64_t>();
    auto load = [&](const nlohmann::json& files, std::vector<std::vector<T>>& out) {
        for (const auto& f : files) {
            const auto t = read_tensor<T>(dir / f.get<std::string>());
            out.emplace_back(t.data().begin(), t.data().end());
        }
    };
    load(j.at("first"), s.first);
    load(j.at("second"), s.second);
    return s;
}

}  // namespace detail

template <typename T>
struct Checkpoint {
    std::size_t iteration = 0;
    int num_classes = 0;
    TrainConfig train;
    PatchGrid grid;
    ParamSet<T> g, h, d;
    OptimizerState<T> sgd_g, sgd_h, adam_d;
};

/// One PTEN file per named parameter and optimizer buffer, plus checkpoint.json.
template <typename T>
void write_checkpoint(const std::filesystem::path& dir, const Trainer<T>& tr, int num_classes) {
    detail::make_dir(dir);
    RunConfig rc;
    rc.train = tr.config();
    const auto& grid = tr.grid();
    detail::write_json(dir / "checkpoint.json",
                       {
                           {"version", 1},
                           {"iteration", tr.iteration()},
                           {"num_classes", num_classes},
                           {"grid", {{"patch_h", grid.patch_h}, {"patch_w", grid.patch_w}, {"rows", grid.rows}, {"cols", grid.cols}}},
                           {"train", to_json(rc).at("train")},
                           {"params",
                            {{"g", detail::write_params(dir, tr.g())},
                             {"h", detail::write_params(dir, tr.h())},
                             {"d", detail::write_params(dir, tr.d())}}},
                           {"optimizers",
                            {{"sgd_g", detail::write_optimizer(dir, "sgd_g", tr.sgd_g_state())},
                             {"sgd_h", detail::write_optimizer(dir, "sgd_h", tr.sgd_h_state())},
                             {"adam_d", detail::write_optimizer(dir, "adam_d", tr.adam_d_state())}}},
                       });
}

template <typename T = float>
Checkpoint<T> read_checkpoint(const std::filesystem::path& dir) {
    const auto path = dir / "checkpoint.json";
    const auto j = detail::read_json(path);
    Checkpoint<T> c;
    try {
        if (j.at("version").get<int>() != 1) throw ParseError(path.string() + ": unsupported version");
        c.iteration = j.at("iteration").get<std::size_t>();
        c.num_classes = j.at("num_classes").get<int>();
        const auto& g = j.at("grid");
        c.grid = {g.at("patch_h").get<std::size_t>(), g.at("patch_w").get<std::size_t>(), g.at("rows").get<std::size_t>(),
                  g.at("cols").get<std::size_t>()};
        c.train = train_config_from_json(j.at("train"));
        c.g = detail::read_params<T>(dir, j.at("params").at("g"));
        c.h = detail::read_params<T>(dir, j.at("params").at("h"));
        c.d = detail::read_params<T>(dir, j.at("params").at("d"));
        c.sgd_g = detail::read_optimizer<T>(dir, j.at("optimizers").at("sgd_g"));
        c.sgd_h = detail::read_optimizer<T>(dir, j.at("optimizers").at("sgd_h"));
        c.adam_d = detail::read_optimizer<T>(dir, j.at("optimizers").at("adam_d"));
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path.string() + ": " + e.what());
    } catch (const ConfigError& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
    return c;
}

}  // namespace patchalign
