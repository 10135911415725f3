#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "patchalign/pten.hpp"
#include "patchalign/rng.hpp"
#include "patchalign/tensor.hpp"

namespace patchalign {

/// Per-pixel class ids, row-major. 255 marks void pixels.
struct LabelMap {
    static constexpr std::uint8_t kIgnore = 255;

    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint8_t> values;

    LabelMap() = default;
    LabelMap(std::size_t h, std::size_t w, std::uint8_t fill = 0) : height(h), width(w), values(h * w, fill) {}

    std::uint8_t at(std::size_t y, std::size_t x) const { return values[y * width + x]; }
    std::uint8_t& at(std::size_t y, std::size_t x) { return values[y * width + x]; }

    bool operator==(const LabelMap&) const = default;
};

/// Appearance and layout change applied to the target domain only.
struct DomainShift {
    int vertical_offset_px = 0;
    double intensity_gain = 1.0;
    double intensity_bias = 0.0;
    double noise_sigma = 0.0;

    bool operator==(const DomainShift&) const = default;
};

struct SceneConfig {
    std::size_t height = 64;
    std::size_t width = 64;
    int num_classes = 4;
    /// Top-to-bottom band heights as fractions of the image, one per class.
    std::vector<double> band_fractions = {0.25, 0.25, 0.25, 0.25};
    /// Class stamped by object rectangles; -1 means the last class.
    int object_class = -1;
    std::array<int, 2> object_count_range = {1, 3};
    std::array<int, 2> object_size_range = {4, 12};
    /// Std-dev of the per-pixel noise added to every rendered class intensity.
    double base_noise_sigma = 0.1;
    std::uint64_t source_seed = 1;
    std::uint64_t target_seed = 2;
    DomainShift shift;

    int resolved_object_class() const { return object_class < 0 ? num_classes - 1 : object_class; }

    void validate() const {
        if (height < 2 || width < 2) throw std::invalid_argument("scene: height and width must be >= 2");
        if (num_classes < 2 || num_classes > 255)
            throw std::invalid_argument("scene: num_classes must lie in [2, 255]");
        if (band_fractions.size() != static_cast<std::size_t>(num_classes))
            throw std::invalid_argument("scene: band_fractions needs one entry per class");
        double total = 0.0;
        for (double f : band_fractions) {
            if (!(f >= 0.0)) throw std::invalid_argument("scene: band_fractions must be non-negative");
            total += f;
        }
        if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("scene: band_fractions must sum to 1");
        if (object_class >= num_classes) throw std::invalid_argument("scene: object_class out of range");
        if (object_count_range[0] < 0 || object_count_range[1] < object_count_range[0])
            throw std::invalid_argument("scene: object_count_range must be [min, max] with 0 <= min <= max");
        if (object_size_range[0] < 1 || object_size_range[1] < object_size_range[0])
            throw std::invalid_argument("scene: object_size_range must be [min, max] with 1 <= min <= max");
        if (!(base_noise_sigma >= 0.0)) throw std::invalid_argument("scene: base_noise_sigma must be >= 0");
        if (!(shift.noise_sigma >= 0.0)) throw std::invalid_argument("scene: shift.noise_sigma must be >= 0");
        if (!std::isfinite(shift.intensity_gain) || !std::isfinite(shift.intensity_bias))
            throw std::invalid_argument("scene: shift gain and bias must be finite");
        if (static_cast<std::size_t>(std::abs(shift.vertical_offset_px)) >= height)
            throw std::invalid_argument("scene: |vertical_offset_px| must be smaller than the image height");
    }

    bool operator==(const SceneConfig&) const = default;
};

struct DomainDataset {
    std::string split;  // "train" or "test"
    int num_classes = 0;
    DomainShift shift;  // identity for the source domain
    std::vector<Tensor<float>> images;  // each 1 x H x W
    std::optional<std::vector<LabelMap>> labels;

    std::size_t size() const { return images.size(); }
    std::size_t height() const { return images.empty() ? 0 : images.front().dim(1); }
    std::size_t width() const { return images.empty() ? 0 : images.front().dim(2); }

    void validate() const {
        if (num_classes < 2 || num_classes > 255) throw std::invalid_argument("dataset: invalid num_classes");
        for (const auto& img : images) {
            if (img.rank() != 3 || img.dim(0) != 1 || img.dim(1) != height() || img.dim(2) != width())
                throw ShapeError("dataset: images must all be 1 x H x W with one size");
        }
        if (!labels) return;
        if (labels->size() != images.size()) throw ShapeError("dataset: image and label counts differ");
        for (const auto& lbl : *labels) {
            if (lbl.height != height() || lbl.width != width())
                throw ShapeError("dataset: label map size does not match its image");
            for (auto v : lbl.values)
                if (v != LabelMap::kIgnore && v >= num_classes)
                    throw std::out_of_range("dataset: label value " + std::to_string(v) + " >= num_classes");
        }
    }
};

inline bool operator==(const DomainDataset& a, const DomainDataset& b) {
    if (a.split != b.split || a.num_classes != b.num_classes || !(a.shift == b.shift)) return false;
    if (a.images.size() != b.images.size() || a.labels != b.labels) return false;
    for (std::size_t i = 0; i < a.images.size(); ++i) {
        if (a.images[i].shape() != b.images[i].shape()) return false;
        const auto x = a.images[i].data(), y = b.images[i].data();
        for (std::size_t j = 0; j < x.size(); ++j)
            if (std::bit_cast<std::uint32_t>(x[j]) != std::bit_cast<std::uint32_t>(y[j])) return false;
    }
    return true;
}

struct DomainPair {
    DomainDataset source_train;
    DomainDataset target_train;  // labels withheld
    DomainDataset target_test;
    /// Ground truth of target_train, for tests and oracles only.
    std::vector<LabelMap> target_train_oracle_labels;
};

struct Scene {
    Tensor<float> image;
    LabelMap labels;
};

inline constexpr std::size_t kMaxSceneCount = 100000;

/// Row boundaries of the class bands: band k covers [b[k], b[k+1]).
inline std::vector<std::size_t> band_boundaries(const SceneConfig& cfg) {
    std::vector<std::size_t> b(1, 0);
    double cum = 0.0;
    for (int k = 0; k < cfg.num_classes; ++k) {
        cum += cfg.band_fractions[k];
        const auto edge = static_cast<std::size_t>(std::floor(cum * static_cast<double>(cfg.height) + 0.5));
        b.push_back(std::min(edge, cfg.height));
    }
    b.back() = cfg.height;
    return b;
}

inline double class_intensity(int label, int num_classes) {
    return (static_cast<double>(label) + 0.5) / static_cast<double>(num_classes);
}

/**
 * Renders one scene from its own stream.
 *
 * Draw order: object count, then per object (height, width, top, left);
 * then one normal per pixel in row-major order for the base noise. With
 * `apply_shift`, the labels and image are translated by the vertical
 * offset (entering rows take the first or last band class and draw fresh
 * base noise in row-major order), then the gain/bias/noise appearance
 * change is applied to the image (noise drawn only when sigma > 0).
 */
inline Scene render_scene(const SceneConfig& cfg, std::uint64_t key, bool apply_shift) {
    CounterRng rng(key);
    const std::size_t h = cfg.height, w = cfg.width;
    const int c = cfg.num_classes;
    LabelMap labels(h, w);
    const auto bounds = band_boundaries(cfg);
    for (int k = 0; k < c; ++k)
        for (std::size_t y = bounds[k]; y < bounds[k + 1]; ++y)
            for (std::size_t x = 0; x < w; ++x) labels.at(y, x) = static_cast<std::uint8_t>(k);

    const auto object_class = static_cast<std::uint8_t>(cfg.resolved_object_class());
    const auto count = rng.range(cfg.object_count_range[0], cfg.object_count_range[1]);
    for (std::int64_t i = 0; i < count; ++i) {
        const auto oh = std::min<std::int64_t>(rng.range(cfg.object_size_range[0], cfg.object_size_range[1]),
                                               static_cast<std::int64_t>(h));
        const auto ow = std::min<std::int64_t>(rng.range(cfg.object_size_range[0], cfg.object_size_range[1]),
                                               static_cast<std::int64_t>(w));
        const auto top = rng.range(0, static_cast<std::int64_t>(h) - oh);
        const auto left = rng.range(0, static_cast<std::int64_t>(w) - ow);
        for (auto y = top; y < top + oh; ++y)
            for (auto x = left; x < left + ow; ++x)
                labels.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = object_class;
    }

    std::vector<double> pixels(h * w);
    for (std::size_t i = 0; i < h * w; ++i)
        pixels[i] = class_intensity(labels.values[i], c) + cfg.base_noise_sigma * rng.normal();

    if (apply_shift) {
        const int offset = cfg.shift.vertical_offset_px;
        if (offset != 0) {
            int first_band = 0, last_band = c - 1;
            while (bounds[first_band + 1] == bounds[first_band]) ++first_band;
            while (bounds[last_band + 1] == bounds[last_band]) --last_band;
            const auto fill = static_cast<std::uint8_t>(offset > 0 ? first_band : last_band);
            LabelMap moved(h, w);
            std::vector<double> moved_pixels(h * w);
            for (std::size_t y = 0; y < h; ++y) {
                const auto src = static_cast<std::int64_t>(y) - offset;
                for (std::size_t x = 0; x < w; ++x) {
                    if (src >= 0 && src < static_cast<std::int64_t>(h)) {
                        moved.at(y, x) = labels.at(static_cast<std::size_t>(src), x);
                        moved_pixels[y * w + x] = pixels[static_cast<std::size_t>(src) * w + x];
                    } else {
                        moved.at(y, x) = fill;
                        moved_pixels[y * w + x] = class_intensity(fill, c) + cfg.base_noise_sigma * rng.normal();
                    }
                }
            }
            labels = std::move(moved);
            pixels = std::move(moved_pixels);
        }
        for (auto& p : pixels) {
            p = cfg.shift.intensity_gain * p + cfg.shift.intensity_bias;
            if (cfg.shift.noise_sigma > 0.0) p += cfg.shift.noise_sigma * rng.normal();
        }
    }

    std::vector<float> data(pixels.begin(), pixels.end());
    return {Tensor<float>::from_data({1, h, w}, std::move(data)), std::move(labels)};
}

/// Source train (labeled), target train (labels withheld) and target test
/// (labeled). Scene i of each split draws from its own stream, so the
/// result does not depend on generation order.
inline DomainPair generate_domain_pair(const SceneConfig& cfg, std::size_t n_source, std::size_t n_target,
                                       std::size_t n_target_test) {
    cfg.validate();
    for (std::size_t n : {n_source, n_target, n_target_test}) {
        if (n < 1) throw std::invalid_argument("generate_domain_pair: counts must be >= 1");
        if (n > kMaxSceneCount) throw std::invalid_argument("generate_domain_pair: counts above 100000 are rejected");
    }
    DomainPair pair;
    auto build = [&](DomainDataset& ds, const char* split, std::size_t n, std::uint64_t seed, std::uint64_t tag,
                     bool shifted, std::vector<LabelMap>* withheld) {
        ds.split = split;
        ds.num_classes = cfg.num_classes;
        ds.shift = shifted ? cfg.shift : DomainShift{};
        std::vector<LabelMap> labels;
        for (std::size_t i = 0; i < n; ++i) {
            auto scene = render_scene(cfg, stream_key(seed, tag, i), shifted);
            ds.images.push_back(std::move(scene.image));
            labels.push_back(std::move(scene.labels));
        }
        if (withheld) {
            *withheld = std::move(labels);
        } else {
            ds.labels = std::move(labels);
        }
    };
    build(pair.source_train, "train", n_source, cfg.source_seed, stream_tag::kScene, false, nullptr);
    build(pair.target_train, "train", n_target, cfg.target_seed, stream_tag::kScene, true,
          &pair.target_train_oracle_labels);
    build(pair.target_test, "test", n_target_test, cfg.target_seed, stream_tag::kSceneTest, true, nullptr);
    return pair;
}

// ---------------------------------------------------------------------------
// dataset directories
// ---------------------------------------------------------------------------

namespace detail {
inline std::string numbered(const char* prefix, std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s_%05zu.pten", prefix, i);
    return buf;
}
}  // namespace detail

inline nlohmann::json shift_to_json(const DomainShift& s) {
    return {{"vertical_offset_px", s.vertical_offset_px},
            {"intensity_gain", s.intensity_gain},
            {"intensity_bias", s.intensity_bias},
            {"noise_sigma", s.noise_sigma}};
}

/// Writes `manifest.json` plus img_%05d.pten (float32 1xHxW) and
/// lbl_%05d.pten (uint8 HxW) files.
inline void write_dataset(const DomainDataset& ds, const std::filesystem::path& dir) {
    ds.validate();
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    nlohmann::json files = nlohmann::json::array();
    for (std::size_t i = 0; i < ds.size(); ++i) {
        nlohmann::json entry = {{"image", detail::numbered("img", i)}, {"label", nullptr}};
        write_tensor(dir / detail::numbered("img", i), ds.images[i]);
        if (ds.labels) {
            const auto& lbl = (*ds.labels)[i];
            pten::Array a;
            a.dtype = pten::DType::u8;
            a.dims = {static_cast<std::uint32_t>(lbl.height), static_cast<std::uint32_t>(lbl.width)};
            a.u8 = lbl.values;
            pten::write_file(dir / detail::numbered("lbl", i), a);
            entry["label"] = detail::numbered("lbl", i);
        }
        files.push_back(std::move(entry));
    }
    nlohmann::json manifest = {
        {"version", 1},
        {"split", ds.split},
        {"num_classes", ds.num_classes},
        {"height", ds.height()},
        {"width", ds.width()},
        {"counts", {{"images", ds.size()}, {"labels", ds.labels ? ds.labels->size() : 0}}},
        {"shift", shift_to_json(ds.shift)},
        {"files", std::move(files)},
    };
    std::ofstream os(dir / "manifest.json", std::ios::trunc);
    if (!os) throw IoError("cannot write " + (dir / "manifest.json").string());
    os << manifest.dump(2) << '\n';
}

inline DomainDataset read_dataset(const std::filesystem::path& dir) {
    const auto manifest_path = dir / "manifest.json";
    std::ifstream is(manifest_path);
    if (!is) throw IoError("cannot open " + manifest_path.string());
    DomainDataset ds;
    try {
        const auto m = nlohmann::json::parse(is);
        if (m.at("version").get<int>() != 1) throw ParseError(manifest_path.string() + ": unsupported version");
        ds.split = m.at("split").get<std::string>();
        ds.num_classes = m.at("num_classes").get<int>();
        const auto& s = m.at("shift");
        ds.shift = {s.at("vertical_offset_px").get<int>(), s.at("intensity_gain").get<double>(),
                    s.at("intensity_bias").get<double>(), s.at("noise_sigma").get<double>()};
        const auto& files = m.at("files");
        if (files.size() != m.at("counts").at("images").get<std::size_t>())
            throw ParseError(manifest_path.string() + ": file list does not match counts.images");
        std::vector<LabelMap> labels;
        for (const auto& entry : files) {
            const auto img_path = dir / entry.at("image").get<std::string>();
            auto img = read_tensor<float>(img_path);
            if (img.rank() != 3 || img.dim(0) != 1) throw ParseError(img_path.string() + ": expected a 1 x H x W image");
            ds.images.push_back(std::move(img));
            if (!entry.at("label").is_null()) {
                const auto lbl_path = dir / entry.at("label").get<std::string>();
                const auto a = pten::read_file(lbl_path);
                if (a.dtype != pten::DType::u8 || a.dims.size() != 2)
                    throw ParseError(lbl_path.string() + ": expected a uint8 H x W label map");
                LabelMap lbl;
                lbl.height = a.dims[0];
                lbl.width = a.dims[1];
                lbl.values = a.u8;
                labels.push_back(std::move(lbl));
            }
        }
        if (!labels.empty()) {
            if (labels.size() != ds.images.size())
                throw ParseError(manifest_path.string() + ": some but not all images have labels");
            ds.labels = std::move(labels);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(manifest_path.string() + ": " + e.what());
    }
    try {
        ds.validate();
    } catch (const std::exception& e) {
        throw ParseError(dir.string() + ": " + e.what());
    }
    return ds;
}

}  // namespace patchalign
