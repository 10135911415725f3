#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "patchalign/synthdata.hpp"
#include "patchalign/tensor.hpp"

namespace patchalign {

/// Rows are ground truth, columns predictions; void pixels are not counted.
struct ConfusionMatrix {
    std::size_t num_classes = 0;
    std::vector<std::uint64_t> counts;

    explicit ConfusionMatrix(std::size_t c = 0) : num_classes(c), counts(c * c, 0) {}

    std::uint64_t at(std::size_t gt, std::size_t pred) const { return counts[gt * num_classes + pred]; }
    std::uint64_t& at(std::size_t gt, std::size_t pred) { return counts[gt * num_classes + pred]; }

    std::uint64_t total() const {
        std::uint64_t t = 0;
        for (auto v : counts) t += v;
        return t;
    }

    void add(const LabelMap& truth, const LabelMap& prediction) {
        if (truth.height != prediction.height || truth.width != prediction.width)
            throw ShapeError("confusion: prediction and ground truth differ in size");
        for (std::size_t i = 0; i < truth.values.size(); ++i) {
            const auto gt = truth.values[i];
            if (gt == LabelMap::kIgnore) continue;
            const auto pr = prediction.values[i];
            if (gt >= num_classes || pr >= num_classes) throw std::out_of_range("confusion: class id out of range");
            ++at(gt, pr);
        }
    }

    ConfusionMatrix& operator+=(const ConfusionMatrix& other) {
        if (other.num_classes != num_classes) throw ShapeError("confusion: class count mismatch");
        for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
        return *this;
    }

    double pixel_accuracy() const {
        std::uint64_t diag = 0;
        for (std::size_t c = 0; c < num_classes; ++c) diag += at(c, c);
        const auto t = total();
        return t ? static_cast<double>(diag) / static_cast<double>(t) : 0.0;
    }
};

struct IouResult {
    /// Empty for classes absent from both ground truth and prediction.
    std::vector<std::optional<double>> per_class;
    double miou = 0.0;
};

inline IouResult iou_from_confusion(const ConfusionMatrix& cm) {
    IouResult r;
    double acc = 0.0;
    std::size_t present = 0;
    for (std::size_t c = 0; c < cm.num_classes; ++c) {
        std::uint64_t row = 0, col = 0;
        for (std::size_t k = 0; k < cm.num_classes; ++k) {
            row += cm.at(c, k);
            col += cm.at(k, c);
        }
        const std::uint64_t uni = row + col - cm.at(c, c);
        if (uni == 0) {
            r.per_class.emplace_back(std::nullopt);
            continue;
        }
        const double iou = static_cast<double>(cm.at(c, c)) / static_cast<double>(uni);
        r.per_class.emplace_back(iou);
        acc += iou;
        ++present;
    }
    r.miou = present ? acc / static_cast<double>(present) : 0.0;
    return r;
}

/// Per-pixel argmax over channels of a C x H x W map; ties go to the lowest class.
template <typename T>
LabelMap argmax_labels(const Tensor<T>& probs) {
    if (probs.rank() != 3) throw ShapeError("argmax_labels: expected C x H x W");
    const std::size_t c = probs.dim(0), h = probs.dim(1), w = probs.dim(2), sites = h * w;
    LabelMap out(h, w);
    const T* p = probs.data().data();
    for (std::size_t s = 0; s < sites; ++s) {
        std::size_t best = 0;
        for (std::size_t k = 1; k < c; ++k)
            if (p[k * sites + s] > p[best * sites + s]) best = k;
        out.values[s] = static_cast<std::uint8_t>(best);
    }
    return out;
}

// ---------------------------------------------------------------------------
// feature export
// ---------------------------------------------------------------------------

template <typename T>
struct FeatureMap {
    Tensor<T> features;  // K x U x V
    std::string domain;
    std::string image_id;
};

namespace detail {
inline std::string format_g9(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}
}  // namespace detail

/// CSV with header id,domain,u,v,f0..f{K-1}; one row per (image, u, v),
/// sorted by (id, u, v); values printed with 9 significant digits.
template <typename T>
void export_features(std::vector<FeatureMap<T>> maps, std::ostream& os) {
    if (maps.empty()) throw std::invalid_argument("export_features: no maps");
    const std::size_t k = maps.front().features.dim(0);
    for (const auto& m : maps) {
        if (m.features.rank() != 3) throw ShapeError("export_features: maps must be K x U x V");
        if (m.features.dim(0) != k)
            throw ShapeError("export_features: K mismatch (" + std::to_string(m.features.dim(0)) + " vs " +
                             std::to_string(k) + ")");
        if (m.domain.find(',') != std::string::npos || m.image_id.find(',') != std::string::npos)
            throw std::invalid_argument("export_features: ids and domains may not contain commas");
    }
    std::stable_sort(maps.begin(), maps.end(), [](const auto& a, const auto& b) { return a.image_id < b.image_id; });
    os << "id,domain,u,v";
    for (std::size_t i = 0; i < k; ++i) os << ",f" << i;
    os << '\n';
    for (const auto& m : maps) {
        const std::size_t rows = m.features.dim(1), cols = m.features.dim(2), sites = rows * cols;
        for (std::size_t u = 0; u < rows; ++u)
            for (std::size_t v = 0; v < cols; ++v) {
                os << m.image_id << ',' << m.domain << ',' << u << ',' << v;
                for (std::size_t c = 0; c < k; ++c)
                    os << ',' << detail::format_g9(static_cast<double>(m.features[c * sites + u * cols + v]));
                os << '\n';
            }
    }
}

struct FeatureRow {
    std::string id;
    std::string domain;
    std::size_t u = 0;
    std::size_t v = 0;
    std::vector<double> values;
};

inline std::vector<FeatureRow> read_features_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line) || line.rfind("id,domain,u,v", 0) != 0)
        throw ParseError("features csv: missing header");
    std::vector<FeatureRow> rows;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string cell;
        FeatureRow r;
        std::getline(ls, r.id, ',');
        std::getline(ls, r.domain, ',');
        std::getline(ls, cell, ',');
        r.u = std::stoul(cell);
        std::getline(ls, cell, ',');
        r.v = std::stoul(cell);
        while (std::getline(ls, cell, ',')) r.values.push_back(std::stod(cell));
        rows.push_back(std::move(r));
    }
    return rows;
}

}  // namespace patchalign
