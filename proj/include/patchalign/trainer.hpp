#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "patchalign/losses.hpp"
#include "patchalign/metrics.hpp"
#include "patchalign/nets.hpp"
#include "patchalign/optim.hpp"
#include "patchalign/patchmodes.hpp"
#include "patchalign/rng.hpp"
#include "patchalign/synthdata.hpp"

namespace patchalign {

/**
 * Which terms of the generator objective are active after warm-up.
 *
 *   source_only             L_s only, for every iteration
 *   d_only                  L_s + lambda_d L_d
 *   full                    L_s + lambda_d L_d + lambda_adv L_adv, with D updates
 *   entropy_variant         L_s + lambda_d L_d + lambda_en L_en(F_t), no D
 *   soft_histogram_variant  L_s + lambda_adv L_adv where D sees 2x2 soft class
 *                           histograms of O instead of F (H unused)
 */
enum class TrainMode { full, source_only, d_only, entropy_variant, soft_histogram_variant };

inline const char* to_string(TrainMode m) {
    switch (m) {
        case TrainMode::full: return "full";
        case TrainMode::source_only: return "source_only";
        case TrainMode::d_only: return "d_only";
        case TrainMode::entropy_variant: return "entropy_variant";
        case TrainMode::soft_histogram_variant: return "soft_histogram_variant";
    }
    return "?";
}

inline TrainMode parse_train_mode(const std::string& s) {
    for (auto m : {TrainMode::full, TrainMode::source_only, TrainMode::d_only, TrainMode::entropy_variant,
                   TrainMode::soft_histogram_variant})
        if (s == to_string(m)) return m;
    throw std::invalid_argument("unknown training mode '" + s + "'");
}

struct TrainConfig {
    std::size_t num_clusters = 50;
    double lambda_d = 0.01;
    double lambda_adv = 0.0005;
    double lambda_en = 0.0005;
    double tau = 1.0;
    std::size_t warmup_iters = 500;
    std::size_t max_iters = 5000;
    double lr_g = 2.5e-4;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    double lr_d = 1e-4;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.99;
    double poly_power = 0.9;
    std::uint64_t seed = 0;
    TrainMode mode = TrainMode::full;
    std::size_t eval_every = 1000;       // 0: only at the end of warm-up and of training
    std::size_t checkpoint_every = 0;    // 0: only the final checkpoint
    std::size_t eval_source_images = 50; // leading source-train images scored as "source_train"
    std::vector<std::size_t> g_channels = {16, 32};
    std::size_t h_hidden = 64;
    std::vector<std::size_t> d_widths = {64, 128, 1};
    double leaky_slope = 0.2;

    LossWeights weights() const { return {lambda_d, lambda_adv}; }

    void validate() const {
        auto fail = [](const std::string& key, const std::string& what) {
            throw std::invalid_argument("train." + key + ": " + what);
        };
        if (num_clusters == 0) fail("K", "must be >= 1");
        if (!(lambda_d >= 0)) fail("lambda_d", "must be >= 0");
        if (!(lambda_adv >= 0)) fail("lambda_adv", "must be >= 0");
        if (!(lambda_en >= 0)) fail("lambda_en", "must be >= 0");
        if (!(tau > 0)) fail("tau", "must be > 0");
        if (max_iters == 0) fail("max_iters", "must be >= 1");
        if (warmup_iters > max_iters) fail("warmup_iters", "must not exceed max_iters");
        if (!(lr_g > 0)) fail("lr_g", "must be > 0");
        if (!(lr_d > 0)) fail("lr_d", "must be > 0");
        if (!(momentum >= 0 && momentum < 1)) fail("momentum", "must lie in [0, 1)");
        if (!(weight_decay >= 0)) fail("weight_decay", "must be >= 0");
        if (!(adam_beta1 >= 0 && adam_beta1 < 1)) fail("adam_beta1", "must lie in [0, 1)");
        if (!(adam_beta2 >= 0 && adam_beta2 < 1)) fail("adam_beta2", "must lie in [0, 1)");
        if (!(poly_power >= 0)) fail("poly_power", "must be >= 0");
        if (g_channels.empty()) fail("g_channels", "needs at least one hidden layer");
        for (auto c : g_channels)
            if (c == 0) fail("g_channels", "widths must be >= 1");
        if (h_hidden == 0) fail("h_hidden", "must be >= 1");
        if (d_widths.empty() || d_widths.back() != 1) fail("d_widths", "must end in 1");
        for (auto c : d_widths)
            if (c == 0) fail("d_widths", "widths must be >= 1");
        if (!(leaky_slope > 0 && leaky_slope < 1)) fail("leaky_slope", "must lie in (0, 1)");
    }

    GConfig g_config(std::size_t num_classes) const {
        GConfig g;
        g.num_classes = num_classes;
        g.hidden.clear();
        for (auto c : g_channels) g.hidden.push_back({c, 3, 1});
        return g;
    }
    HConfig h_config(std::size_t num_classes) const { return {num_classes, h_hidden, num_clusters, leaky_slope}; }
    DConfig d_config(std::size_t num_classes) const {
        const std::size_t in = mode == TrainMode::soft_histogram_variant ? 4 * num_classes : num_clusters;
        return {in, d_widths, leaky_slope};
    }

    bool operator==(const TrainConfig&) const = default;
};

struct IterationRecord {
    std::size_t iter = 0;
    double l_s = 0.0;
    std::optional<double> l_d;       // patch classification loss
    std::optional<double> gen_adv;   // -sum log D(F_t), or L_en in entropy_variant
    std::optional<double> l_d_disc;  // discriminator loss
    double lr_g = 0.0;
    double lr_d = 0.0;

    bool operator==(const IterationRecord&) const = default;
};

struct EvalRecord {
    std::size_t iter = 0;  // number of completed iterations
    std::string split;
    IouResult iou;
    double pixel_accuracy = 0.0;
};

struct TrainLog {
    std::vector<IterationRecord> iterations;
    std::vector<EvalRecord> evals;

    const EvalRecord* last_eval(const std::string& split) const {
        for (auto it = evals.rbegin(); it != evals.rend(); ++it)
            if (it->split == split) return &*it;
        return nullptr;
    }
};

namespace detail {
inline void csv_optional(std::ostream& os, const std::optional<double>& v) {
    os << ',';
    if (v) os << format_g9(*v);
}
}  // namespace detail

/// iter,l_s,l_d,gen_adv,l_d_disc,lr_g,lr_d; absent terms are empty fields.
inline void write_log_csv(const TrainLog& log, std::ostream& os) {
    os << "iter,l_s,l_d,gen_adv,l_d_disc,lr_g,lr_d\n";
    for (const auto& r : log.iterations) {
        os << r.iter << ',' << detail::format_g9(r.l_s);
        detail::csv_optional(os, r.l_d);
        detail::csv_optional(os, r.gen_adv);
        detail::csv_optional(os, r.l_d_disc);
        os << ',' << detail::format_g9(r.lr_g) << ',' << detail::format_g9(r.lr_d) << '\n';
    }
}

/// iter,split,class_id,iou,miou; iou is empty for classes absent from both
/// prediction and ground truth.
inline void write_eval_csv(const std::vector<EvalRecord>& evals, std::ostream& os) {
    os << "iter,split,class_id,iou,miou\n";
    for (const auto& e : evals)
        for (std::size_t c = 0; c < e.iou.per_class.size(); ++c) {
            os << e.iter << ',' << e.split << ',' << c << ',';
            if (e.iou.per_class[c]) os << detail::format_g9(*e.iou.per_class[c]);
            os << ',' << detail::format_g9(e.iou.miou) << '\n';
        }
}

/// Draws indices from a seeded permutation, reshuffling at every epoch.
class EpochSampler {
public:
    EpochSampler(std::size_t n, std::uint64_t key) : rng_(key), order_(n) {
        if (n == 0) throw std::invalid_argument("EpochSampler: empty dataset");
    }

    std::size_t next() {
        if (pos_ == order_.size()) pos_ = 0;
        if (pos_ == 0) {
            for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
            rng_.shuffle(order_);
        }
        return order_[pos_++];
    }

private:
    CounterRng rng_;
    std::vector<std::size_t> order_;
    std::size_t pos_ = 0;
};

template <typename T>
Tensor<T> image_as(const Tensor<float>& image) {
    if constexpr (std::is_same_v<T, float>) {
        return image;
    } else {
        return image.template cast<T>();
    }
}

/// Confusion over a dataset, predictions from argmax of G's output.
template <typename T>
ConfusionMatrix confusion_on(const DomainDataset& ds, const ParamSet<T>& g, const GConfig& gcfg,
                             std::size_t limit = static_cast<std::size_t>(-1)) {
    if (!ds.labels) throw std::invalid_argument("evaluation needs a labeled dataset");
    NoGradGuard no_grad;
    ConfusionMatrix cm(static_cast<std::size_t>(ds.num_classes));
    const std::size_t n = std::min(limit, ds.size());
    for (std::size_t i = 0; i < n; ++i) {
        const auto probs = g_forward(image_as<T>(ds.images[i]), g, gcfg);
        cm.add((*ds.labels)[i], argmax_labels(probs));
    }
    return cm;
}

enum class StepPhase { discriminator_updated, generator_updated };

/**
 * Alternating optimization. Iterations [0, warmup_iters) train G on L_s
 * alone; afterwards every iteration runs one D step (Adam) followed by one
 * joint G,H step (SGD), depending on the mode. Learning rates follow
 * polynomial decay over max_iters for all networks.
 */
template <typename T>
class Trainer {
public:
    Trainer(TrainConfig cfg, const DomainDataset& source, const DomainDataset& target_train,
            const DomainDataset* target_test, const ClusterModel& modes, const PatchGrid& grid)
        : cfg_(std::move(cfg)),
          source_(source),
          target_(target_train),
          target_test_(target_test),
          grid_(grid),
          num_classes_(static_cast<std::size_t>(source.num_classes)),
          gcfg_(cfg_.g_config(num_classes_)),
          hcfg_(cfg_.h_config(num_classes_)),
          dcfg_(cfg_.d_config(num_classes_)),
          g_(init_g<T>(gcfg_, cfg_.seed)),
          h_(init_h<T>(hcfg_, cfg_.seed)),
          d_(init_d<T>(dcfg_, cfg_.seed)),
          sgd_g_(OptimizerState<T>::sgd(cfg_.lr_g, cfg_.momentum, cfg_.weight_decay)),
          sgd_h_(OptimizerState<T>::sgd(cfg_.lr_g, cfg_.momentum, cfg_.weight_decay)),
          adam_d_(OptimizerState<T>::adam(cfg_.lr_d, cfg_.adam_beta1, cfg_.adam_beta2)),
          source_order_(source.size(), stream_key(cfg_.seed, stream_tag::kSourceOrder)),
          target_order_(target_train.size(), stream_key(cfg_.seed, stream_tag::kTargetOrder)) {
        cfg_.validate();
        source.validate();
        target_train.validate();
        if (!source.labels) throw std::invalid_argument("trainer: source dataset must be labeled");
        if (modes.num_clusters != cfg_.num_clusters)
            throw std::invalid_argument("trainer: cluster model has K = " + std::to_string(modes.num_clusters) +
                                        " but the config asks for K = " + std::to_string(cfg_.num_clusters));
        if (modes.dim != 4 * num_classes_)
            throw std::invalid_argument("trainer: cluster model dimension does not match 4 * num_classes");
        if (target_train.num_classes != source.num_classes ||
            (target_test && target_test->num_classes != source.num_classes))
            throw std::invalid_argument("trainer: datasets disagree on num_classes");
        if (target_train.height() != source.height() || target_train.width() != source.width())
            throw std::invalid_argument("trainer: source and target image sizes differ");
        if (grid_.covered_height() > source.height() || grid_.covered_width() > source.width() || grid_.cells() == 0)
            throw std::invalid_argument("trainer: patch grid does not fit the images");
        gamma_.reserve(source.size());
        for (const auto& lbl : *source.labels)
            gamma_.push_back(cluster_map(lbl, grid_, modes, source.num_classes));
    }

    const TrainConfig& config() const { return cfg_; }
    const GConfig& g_config() const { return gcfg_; }
    const PatchGrid& grid() const { return grid_; }
    ParamSet<T>& g() { return g_; }
    ParamSet<T>& h() { return h_; }
    ParamSet<T>& d() { return d_; }
    const ParamSet<T>& g() const { return g_; }
    const ParamSet<T>& h() const { return h_; }
    const ParamSet<T>& d() const { return d_; }
    OptimizerState<T>& sgd_g_state() { return sgd_g_; }
    OptimizerState<T>& sgd_h_state() { return sgd_h_; }
    OptimizerState<T>& adam_d_state() { return adam_d_; }
    const OptimizerState<T>& sgd_g_state() const { return sgd_g_; }
    const OptimizerState<T>& sgd_h_state() const { return sgd_h_; }
    const OptimizerState<T>& adam_d_state() const { return adam_d_; }
    const TrainLog& log() const { return log_; }
    std::size_t iteration() const { return iter_; }
    bool done() const { return iter_ >= cfg_.max_iters; }
    const std::vector<ClusterMap>& gamma() const { return gamma_; }

    /// Called after the D update and after the G,H update of a step.
    void set_phase_hook(std::function<void(StepPhase)> hook) { phase_hook_ = std::move(hook); }

    double lr_g_at(std::size_t iter) const { return poly_decay_lr(cfg_.lr_g, iter, cfg_.max_iters, cfg_.poly_power); }
    double lr_d_at(std::size_t iter) const { return poly_decay_lr(cfg_.lr_d, iter, cfg_.max_iters, cfg_.poly_power); }

    /// One SGD step on G minimizing L_s.
    IterationRecord warmup_step(const Tensor<T>& image, const LabelMap& labels) {
        IterationRecord rec = begin_record();
        g_.zero_grad();
        const auto probs = g_forward(image, g_, gcfg_);
        const auto loss = seg_loss(probs, labels);
        rec.l_s = static_cast<double>(loss.item());
        backward(loss);
        update_g(rec.lr_g);
        return finish(rec);
    }

    /**
     * One post-warm-up iteration. The D step sees detached F_s, F_t; the
     * G,H step then evaluates the adversarial term with the updated D on the
     * live target graph. G and H are unchanged between the two steps, so one
     * forward pass through G and H serves both.
     */
    IterationRecord train_step(const Tensor<T>& source_image, const LabelMap& source_labels, const ClusterMap* gamma,
                               const Tensor<T>& target_image) {
        if (cfg_.mode == TrainMode::source_only) return warmup_step(source_image, source_labels);
        if (cfg_.mode != TrainMode::soft_histogram_variant && gamma == nullptr)
            throw std::invalid_argument("train_step: missing cluster map for the source image");
        IterationRecord rec = begin_record();
        const T lr_g = static_cast<T>(rec.lr_g);
        const T lr_d = static_cast<T>(rec.lr_d);
        const auto o_s = g_forward(source_image, g_, gcfg_);
        const auto l_s = seg_loss(o_s, source_labels);
        rec.l_s = static_cast<double>(l_s.item());

        Tensor<T> l_d, adv;
        switch (cfg_.mode) {
            case TrainMode::d_only: {
                l_d = disc_cluster_loss(h_forward(o_s, h_, grid_, cfg_.leaky_slope), *gamma);
                break;
            }
            case TrainMode::entropy_variant: {
                l_d = disc_cluster_loss(h_forward(o_s, h_, grid_, cfg_.leaky_slope), *gamma);
                const auto o_t = g_forward(target_image, g_, gcfg_);
                adv = entropy_loss(h_logits(o_t, h_, grid_, cfg_.leaky_slope), EntropyConfig{cfg_.tau});
                break;
            }
            case TrainMode::full:
            case TrainMode::soft_histogram_variant: {
                const bool use_h = cfg_.mode == TrainMode::full;
                const auto o_t = g_forward(target_image, g_, gcfg_);
                Tensor<T> f_s, f_t;
                if (use_h) {
                    f_s = h_forward(o_s, h_, grid_, cfg_.leaky_slope);
                    f_t = h_forward(o_t, h_, grid_, cfg_.leaky_slope);
                    l_d = disc_cluster_loss(f_s, *gamma);
                } else {
                    f_s = soft_histogram(o_s, grid_);
                    f_t = soft_histogram(o_t, grid_);
                }
                // D step on detached representations.
                d_.zero_grad();
                const auto l_disc = discriminator_loss(d_forward(f_s.detach(), d_, cfg_.leaky_slope),
                                                       d_forward(f_t.detach(), d_, cfg_.leaky_slope));
                rec.l_d_disc = static_cast<double>(l_disc.item());
                backward(l_disc);
                auto d_params = d_.tensors();
                adam_update(std::span<Tensor<T>>(d_params), adam_d_, lr_d);
                if (phase_hook_) phase_hook_(StepPhase::discriminator_updated);
                adv = generator_adv_loss(d_forward(f_t, d_, cfg_.leaky_slope));
                break;
            }
            case TrainMode::source_only: break;
        }

        LossWeights w = cfg_.weights();
        if (cfg_.mode == TrainMode::entropy_variant) w.lambda_adv = cfg_.lambda_en;
        if (l_d.defined()) rec.l_d = static_cast<double>(l_d.item());
        if (adv.defined()) rec.gen_adv = static_cast<double>(adv.item());
        const auto total = total_generator_loss(l_s, l_d, adv, w);
        g_.zero_grad();
        h_.zero_grad();
        backward(total);
        update_g(lr_g);
        if (cfg_.mode != TrainMode::soft_histogram_variant) {
            auto h_params = h_.tensors();
            sgd_update(std::span<Tensor<T>>(h_params), sgd_h_, lr_g);
        }
        if (phase_hook_) phase_hook_(StepPhase::generator_updated);
        return finish(rec);
    }

    /// Runs the next iteration with the sampled source/target pair.
    IterationRecord step() {
        if (done()) throw std::logic_error("trainer: max_iters reached");
        const std::size_t si = source_order_.next();
        const auto source_image = image_as<T>(source_.images[si]);
        const auto& source_labels = (*source_.labels)[si];
        if (iter_ < cfg_.warmup_iters || cfg_.mode == TrainMode::source_only)
            return warmup_step(source_image, source_labels);
        std::size_t ti = 0;
        if (cfg_.mode != TrainMode::d_only) ti = target_order_.next();
        return train_step(source_image, source_labels, &gamma_[si], image_as<T>(target_.images[ti]));
    }

    EvalRecord evaluate(const DomainDataset& ds, const std::string& split,
                        std::size_t limit = static_cast<std::size_t>(-1)) const {
        const auto cm = confusion_on(ds, g_, gcfg_, limit);
        return {iter_, split, iou_from_confusion(cm), cm.pixel_accuracy()};
    }

    /// Scores source_train and (when given) target_test, appending to the log.
    void evaluate_all() {
        log_.evals.push_back(evaluate(source_, "source_train", cfg_.eval_source_images));
        if (target_test_) log_.evals.push_back(evaluate(*target_test_, "target_test"));
    }

    /// Runs to max_iters. Evaluates at the end of warm-up, every eval_every
    /// iterations and at the end; `on_checkpoint` fires every
    /// checkpoint_every iterations and at the end.
    void run(const std::function<void(const Trainer&)>& on_checkpoint = {}) {
        while (!done()) {
            step();
            const bool last = done();
            const bool eval_now = last || iter_ == cfg_.warmup_iters ||
                                  (cfg_.eval_every > 0 && iter_ % cfg_.eval_every == 0);
            if (eval_now) evaluate_all();
            if (on_checkpoint && (last || (cfg_.checkpoint_every > 0 && iter_ % cfg_.checkpoint_every == 0)))
                on_checkpoint(*this);
        }
    }

    /// Restores the iteration counter after loading a checkpoint.
    void set_iteration(std::size_t iter) { iter_ = iter; }

private:
    IterationRecord begin_record() const {
        IterationRecord rec;
        rec.iter = iter_;
        rec.lr_g = lr_g_at(iter_);
        rec.lr_d = lr_d_at(iter_);
        return rec;
    }

    IterationRecord finish(const IterationRecord& rec) {
        for (double v : {rec.l_s, rec.l_d.value_or(0.0), rec.gen_adv.value_or(0.0), rec.l_d_disc.value_or(0.0)})
            if (!std::isfinite(v)) throw std::runtime_error("trainer: non-finite loss at iteration " + std::to_string(iter_));
        log_.iterations.push_back(rec);
        ++iter_;
        return rec;
    }

    void update_g(double lr) {
        auto params = g_.tensors();
        sgd_update(std::span<Tensor<T>>(params), sgd_g_, static_cast<T>(lr));
    }

    TrainConfig cfg_;
    const DomainDataset& source_;
    const DomainDataset& target_;
    const DomainDataset* target_test_;
    PatchGrid grid_;
    std::size_t num_classes_;
    GConfig gcfg_;
    HConfig hcfg_;
    DConfig dcfg_;
    ParamSet<T> g_, h_, d_;
    OptimizerState<T> sgd_g_, sgd_h_, adam_d_;
    EpochSampler source_order_, target_order_;
    std::vector<ClusterMap> gamma_;
    TrainLog log_;
    std::size_t iter_ = 0;
    std::function<void(StepPhase)> phase_hook_;
};

template <typename T>
struct TrainingResult {
    ParamSet<T> g, h, d;
    TrainLog log;
};

template <typename T = float>
TrainingResult<T> run_training(const TrainConfig& cfg, const DomainDataset& source, const DomainDataset& target_train,
                               const DomainDataset* target_test, const ClusterModel& modes, const PatchGrid& grid,
                               const std::function<void(const Trainer<T>&)>& on_checkpoint = {}) {
    Trainer<T> trainer(cfg, source, target_train, target_test, modes, grid);
    trainer.run(on_checkpoint);
    return {trainer.g(), trainer.h(), trainer.d(), trainer.log()};
}

}  // namespace patchalign
