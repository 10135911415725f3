#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "patchalign/patchmodes.hpp"
#include "patchalign/synthdata.hpp"
#include "patchalign/trainer.hpp"

namespace patchalign {

class ConfigError : public std::runtime_error {
public:
    enum class Kind { missing_file, malformed_json, unknown_key, constraint };

    ConfigError(Kind kind, std::string key, const std::string& message)
        : std::runtime_error(message), kind_(kind), key_(std::move(key)) {}

    Kind kind() const { return kind_; }
    /// Dotted path of the offending key; empty for file-level errors.
    const std::string& key() const { return key_; }

private:
    Kind kind_;
    std::string key_;
};

struct PatchConfig {
    std::size_t patch_h = 8;
    std::size_t patch_w = 8;
    bool operator==(const PatchConfig&) const = default;
};

struct ModesConfig {
    std::size_t num_clusters = 50;
    std::size_t n_samples = 10000;
    std::uint64_t seed = 0;
    std::size_t max_iter = 300;
    double tol = 1e-6;
    bool operator==(const ModesConfig&) const = default;
};

struct DataCounts {
    std::size_t n_source = 200;
    std::size_t n_target = 200;
    std::size_t n_target_test = 50;
    bool operator==(const DataCounts&) const = default;
};

struct PathsConfig {
    std::string data = "data";
    std::string modes = "modes";
    std::string out = "run";
    bool operator==(const PathsConfig&) const = default;
};

struct RunConfig {
    SceneConfig scene;
    DataCounts counts;
    PatchConfig patch;
    ModesConfig modes;
    TrainConfig train;
    PathsConfig paths;
    bool operator==(const RunConfig&) const = default;
};

// ---------------------------------------------------------------------------
// JSON <-> structs
// ---------------------------------------------------------------------------

namespace detail {

/// Walks one JSON object, consuming known keys and rejecting the rest.
class Section {
public:
    Section(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object())
            throw ConfigError(ConfigError::Kind::constraint, path_, path_ + ": expected a JSON object");
    }

    template <typename V>
    void get(const std::string& key, V& out) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        try {
            out = j_.at(key).get<V>();
        } catch (const nlohmann::json::exception&) {
            throw ConfigError(ConfigError::Kind::constraint, name(key), name(key) + ": wrong value type");
        }
    }

    bool has(const std::string& key) const { return j_.contains(key); }

    const nlohmann::json& child(const std::string& key) {
        seen_.insert(key);
        return j_.at(key);
    }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!seen_.count(it.key()))
                throw ConfigError(ConfigError::Kind::unknown_key, name(it.key()), "unknown key " + name(it.key()));
    }

    std::string name(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

private:
    const nlohmann::json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

[[noreturn]] inline void constraint(const std::string& key, const std::string& what) {
    throw ConfigError(ConfigError::Kind::constraint, key, key + ": " + what);
}

}  // namespace detail

inline nlohmann::json to_json(const RunConfig& c) {
    const auto& s = c.scene;
    const auto& t = c.train;
    return {
        {"scene",
         {{"height", s.height},
          {"width", s.width},
          {"num_classes", s.num_classes},
          {"band_fractions", s.band_fractions},
          {"object_class", s.object_class},
          {"object_count_range", s.object_count_range},
          {"object_size_range", s.object_size_range},
          {"base_noise_sigma", s.base_noise_sigma},
          {"source_seed", s.source_seed},
          {"target_seed", s.target_seed},
          {"shift", shift_to_json(s.shift)},
          {"n_source", c.counts.n_source},
          {"n_target", c.counts.n_target},
          {"n_target_test", c.counts.n_target_test}}},
        {"patch", {{"patch_h", c.patch.patch_h}, {"patch_w", c.patch.patch_w}}},
        {"modes",
         {{"K", c.modes.num_clusters},
          {"n_samples", c.modes.n_samples},
          {"seed", c.modes.seed},
          {"max_iter", c.modes.max_iter},
          {"tol", c.modes.tol}}},
        {"train",
         {{"K", t.num_clusters},
          {"lambda_d", t.lambda_d},
          {"lambda_adv", t.lambda_adv},
          {"lambda_en", t.lambda_en},
          {"tau", t.tau},
          {"warmup_iters", t.warmup_iters},
          {"max_iters", t.max_iters},
          {"lr_g", t.lr_g},
          {"momentum", t.momentum},
          {"weight_decay", t.weight_decay},
          {"lr_d", t.lr_d},
          {"adam_beta1", t.adam_beta1},
          {"adam_beta2", t.adam_beta2},
          {"poly_power", t.poly_power},
          {"seed", t.seed},
          {"mode", to_string(t.mode)},
          {"eval_every", t.eval_every},
          {"checkpoint_every", t.checkpoint_every},
          {"eval_source_images", t.eval_source_images},
          {"g_channels", t.g_channels},
          {"h_hidden", t.h_hidden},
          {"d_widths", t.d_widths},
          {"leaky_slope", t.leaky_slope}}},
        {"paths", {{"data", c.paths.data}, {"modes", c.paths.modes}, {"out", c.paths.out}}},
    };
}

inline TrainConfig train_config_from_json(const nlohmann::json& j, const std::string& path = "train") {
    TrainConfig t;
    detail::Section sec(j, path);
    sec.get("K", t.num_clusters);
    sec.get("lambda_d", t.lambda_d);
    sec.get("lambda_adv", t.lambda_adv);
    sec.get("lambda_en", t.lambda_en);
    sec.get("tau", t.tau);
    sec.get("warmup_iters", t.warmup_iters);
    sec.get("max_iters", t.max_iters);
    sec.get("lr_g", t.lr_g);
    sec.get("momentum", t.momentum);
    sec.get("weight_decay", t.weight_decay);
    sec.get("lr_d", t.lr_d);
    sec.get("adam_beta1", t.adam_beta1);
    sec.get("adam_beta2", t.adam_beta2);
    sec.get("poly_power", t.poly_power);
    sec.get("seed", t.seed);
    std::string mode = to_string(t.mode);
    sec.get("mode", mode);
    try {
        t.mode = parse_train_mode(mode);
    } catch (const std::invalid_argument& e) {
        detail::constraint(sec.name("mode"), e.what());
    }
    sec.get("eval_every", t.eval_every);
    sec.get("checkpoint_every", t.checkpoint_every);
    sec.get("eval_source_images", t.eval_source_images);
    sec.get("g_channels", t.g_channels);
    sec.get("h_hidden", t.h_hidden);
    sec.get("d_widths", t.d_widths);
    sec.get("leaky_slope", t.leaky_slope);
    sec.finish();
    try {
        t.validate();
    } catch (const std::invalid_argument& e) {
        // validate() messages start with "train.<key>:"
        const std::string msg = e.what();
        const std::string key = msg.substr(0, msg.find(':'));
        throw ConfigError(ConfigError::Kind::constraint, key, msg);
    }
    return t;
}

/// Strict parse: unknown keys are errors, absent keys take defaults.
inline RunConfig run_config_from_json(const nlohmann::json& j) {
    RunConfig c;
    detail::Section root(j, "");
    if (root.has("scene")) {
        detail::Section sec(root.child("scene"), "scene");
        auto& s = c.scene;
        sec.get("height", s.height);
        sec.get("width", s.width);
        sec.get("num_classes", s.num_classes);
        sec.get("band_fractions", s.band_fractions);
        sec.get("object_class", s.object_class);
        sec.get("object_count_range", s.object_count_range);
        sec.get("object_size_range", s.object_size_range);
        sec.get("base_noise_sigma", s.base_noise_sigma);
        sec.get("source_seed", s.source_seed);
        sec.get("target_seed", s.target_seed);
        sec.get("n_source", c.counts.n_source);
        sec.get("n_target", c.counts.n_target);
        sec.get("n_target_test", c.counts.n_target_test);
        if (sec.has("shift")) {
            detail::Section sh(sec.child("shift"), "scene.shift");
            sh.get("vertical_offset_px", s.shift.vertical_offset_px);
            sh.get("intensity_gain", s.shift.intensity_gain);
            sh.get("intensity_bias", s.shift.intensity_bias);
            sh.get("noise_sigma", s.shift.noise_sigma);
            sh.finish();
        }
        sec.finish();
        if (s.band_fractions.size() != static_cast<std::size_t>(s.num_classes) && !sec.has("band_fractions"))
            s.band_fractions.assign(static_cast<std::size_t>(std::max(s.num_classes, 1)), 1.0 / std::max(s.num_classes, 1));
        try {
            s.validate();
        } catch (const std::invalid_argument& e) {
            const std::string msg = e.what();  // "scene: <field> ..."
            const auto start = msg.find(": ") + 2;
            const std::string field = msg.substr(start, msg.find_first_of(" ,", start) - start);
            throw ConfigError(ConfigError::Kind::constraint, "scene." + field, msg);
        }
        for (auto [key, n] : {std::pair{"n_source", c.counts.n_source}, std::pair{"n_target", c.counts.n_target},
                              std::pair{"n_target_test", c.counts.n_target_test}})
            if (n < 1 || n > kMaxSceneCount) detail::constraint(std::string("scene.") + key, "must lie in [1, 100000]");
    }
    if (root.has("patch")) {
        detail::Section sec(root.child("patch"), "patch");
        sec.get("patch_h", c.patch.patch_h);
        sec.get("patch_w", c.patch.patch_w);
        sec.finish();
    }
    if (c.patch.patch_h < 2 || c.patch.patch_h > c.scene.height) detail::constraint("patch.patch_h", "must lie in [2, scene.height]");
    if (c.patch.patch_w < 2 || c.patch.patch_w > c.scene.width) detail::constraint("patch.patch_w", "must lie in [2, scene.width]");

    std::optional<std::size_t> modes_k, train_k;
    if (root.has("modes")) {
        detail::Section sec(root.child("modes"), "modes");
        auto& m = c.modes;
        if (sec.has("K")) {
            sec.get("K", m.num_clusters);
            modes_k = m.num_clusters;
        }
        sec.get("K", m.num_clusters);
        sec.get("n_samples", m.n_samples);
        sec.get("seed", m.seed);
        sec.get("max_iter", m.max_iter);
        sec.get("tol", m.tol);
        sec.finish();
    }
    if (c.modes.num_clusters == 0) detail::constraint("modes.K", "must be >= 1");
    if (c.modes.n_samples < c.modes.num_clusters) detail::constraint("modes.n_samples", "must be >= K");
    if (c.modes.max_iter == 0) detail::constraint("modes.max_iter", "must be >= 1");
    if (!(c.modes.tol >= 0)) detail::constraint("modes.tol", "must be >= 0");

    if (root.has("train")) {
        const auto& tj = root.child("train");
        if (tj.is_object() && tj.contains("K")) {
            c.train = train_config_from_json(tj);
            train_k = c.train.num_clusters;
        } else {
            c.train = train_config_from_json(tj);
        }
    }
    if (modes_k && train_k && *modes_k != *train_k)
        detail::constraint("train.K", "must equal modes.K (" + std::to_string(*modes_k) + ")");
    if (modes_k && !train_k) c.train.num_clusters = *modes_k;
    if (train_k && !modes_k) c.modes.num_clusters = *train_k;
    if (c.modes.n_samples < c.modes.num_clusters) detail::constraint("modes.n_samples", "must be >= K");

    if (root.has("paths")) {
        detail::Section sec(root.child("paths"), "paths");
        sec.get("data", c.paths.data);
        sec.get("modes", c.paths.modes);
        sec.get("out", c.paths.out);
        sec.finish();
    }
    root.finish();
    return c;
}

inline RunConfig parse_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError(ConfigError::Kind::missing_file, "", "config file not found: " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(is);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(ConfigError::Kind::malformed_json, "", path.string() + ": malformed JSON: " + e.what());
    }
    return run_config_from_json(j);
}

/// Writes the fully resolved config as resolved_config.json into `dir`.
inline void write_resolved_config(const RunConfig& c, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    std::ofstream os(dir / "resolved_config.json", std::ios::trunc);
    if (!os) throw IoError("cannot write " + (dir / "resolved_config.json").string());
    os << to_json(c).dump(2) << '\n';
}

}  // namespace patchalign
