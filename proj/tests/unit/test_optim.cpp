#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "patchalign/optim.hpp"

namespace pa = patchalign;
using TD = pa::Tensor<double>;

namespace {

TD param(std::vector<double> v) {
    const std::size_t n = v.size();
    return TD::from_data({n}, std::move(v), true);
}

void set_grad(TD& p, std::vector<double> g) {
    auto dst = p.mutable_grad();
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] = g[i];
}

}  // namespace

TEST(Sgd, PlainStep) {
    auto p = param({1.0});
    set_grad(p, {1.0});
    auto s = pa::OptimizerState<double>::sgd(0.1, 0.0, 0.0);
    std::vector<TD> ps{p};
    pa::sgd_update(std::span<TD>(ps), s, 0.1);
    EXPECT_DOUBLE_EQ(p[0], 0.9);
    EXPECT_EQ(s.step, 1u);
}

TEST(Sgd, ZeroGradLeavesParams) {
    auto p = param({1.5, -2.0});
    set_grad(p, {0.0, 0.0});
    auto s = pa::OptimizerState<double>::sgd(0.1, 0.9, 0.0);
    std::vector<TD> ps{p};
    pa::sgd_update(std::span<TD>(ps), s, 0.1);
    EXPECT_EQ(p[0], 1.5);
    EXPECT_EQ(p[1], -2.0);
}

TEST(Sgd, MomentumUnrolledTwice) {
    auto p = param({0.0});
    auto s = pa::OptimizerState<double>::sgd(1.0, 0.9, 0.0);
    std::vector<TD> ps{p};
    for (int i = 0; i < 2; ++i) {
        set_grad(p, {1.0});
        pa::sgd_update(std::span<TD>(ps), s, 1.0);
    }
    EXPECT_DOUBLE_EQ(p[0], -2.9);
    EXPECT_EQ(s.step, 2u);
}

TEST(Sgd, WeightDecayFoldedBeforeMomentum) {
    auto p = param({2.0});
    auto s = pa::OptimizerState<double>::sgd(0.5, 0.9, 0.1);
    std::vector<TD> ps{p};
    set_grad(p, {1.0});
    pa::sgd_update(std::span<TD>(ps), s, 0.5);
    // v = 1 + 0.1*2 = 1.2; p = 2 - 0.6
    EXPECT_DOUBLE_EQ(p[0], 1.4);
    set_grad(p, {1.0});
    pa::sgd_update(std::span<TD>(ps), s, 0.5);
    // v = 0.9*1.2 + 1 + 0.14 = 2.22; p = 1.4 - 1.11
    EXPECT_NEAR(p[0], 0.29, 1e-15);
}

TEST(Sgd, MissingGradCountsAsZero) {
    auto p = param({1.0});
    auto s = pa::OptimizerState<double>::sgd(0.1, 0.0, 0.0);
    std::vector<TD> ps{p};
    pa::sgd_update(std::span<TD>(ps), s, 0.1);
    EXPECT_EQ(p[0], 1.0);
}

TEST(Sgd, BufferShapeMismatchRejected) {
    auto p = param({1.0});
    auto q = param({1.0, 2.0});
    auto s = pa::OptimizerState<double>::sgd(0.1, 0.9, 0.0);
    std::vector<TD> ps{p};
    pa::sgd_update(std::span<TD>(ps), s, 0.1);
    std::vector<TD> qs{q};
    EXPECT_THROW(pa::sgd_update(std::span<TD>(qs), s, 0.1), pa::ShapeError);
}

TEST(Sgd, WrongKindRejected) {
    auto p = param({1.0});
    auto s = pa::OptimizerState<double>::adam(0.1, 0.9, 0.99);
    std::vector<TD> ps{p};
    EXPECT_THROW(pa::sgd_update(std::span<TD>(ps), s, 0.1), std::logic_error);
}

TEST(Adam, FirstStepIsSignStep) {
    for (double g : {3.0, -0.01, 250.0}) {
        auto p = param({0.5});
        set_grad(p, {g});
        auto s = pa::OptimizerState<double>::adam(0.01, 0.9, 0.99);
        std::vector<TD> ps{p};
        pa::adam_update(std::span<TD>(ps), s, 0.01);
        EXPECT_NEAR(p[0] - 0.5, -0.01 * (g > 0 ? 1 : -1), 0.01 * 1e-4);
    }
}

TEST(Adam, ZeroGradLeavesParams) {
    auto p = param({0.5, 1.0});
    auto s = pa::OptimizerState<double>::adam(0.1, 0.9, 0.99);
    std::vector<TD> ps{p};
    for (int i = 0; i < 5; ++i) {
        set_grad(p, {0.0, 0.0});
        pa::adam_update(std::span<TD>(ps), s, 0.1);
    }
    EXPECT_EQ(p[0], 0.5);
    EXPECT_EQ(p[1], 1.0);
    EXPECT_EQ(s.step, 5u);
}

TEST(Adam, MatchesReferenceRecurrence) {
    auto p = param({0.0});
    auto s = pa::OptimizerState<double>::adam(0.1, 0.9, 0.99);
    std::vector<TD> ps{p};
    double ref = 0.0, m = 0.0, v = 0.0;
    for (int t = 1; t <= 3; ++t) {
        set_grad(p, {1.0});
        pa::adam_update(std::span<TD>(ps), s, 0.1);
        m = 0.9 * m + 0.1;
        v = 0.99 * v + 0.01;
        ref -= 0.1 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.99, t))) + 1e-8);
        EXPECT_NEAR(p[0], ref, 1e-14);
    }
    // constant gradient: each bias-corrected step is lr / (1 + eps)
    EXPECT_NEAR(ref, -0.3, 1e-8);
}

TEST(Optimizer, UpdatesAreDeterministic) {
    auto run = [] {
        auto p = param({0.3, -0.7, 1.1});
        auto s = pa::OptimizerState<double>::adam(0.05, 0.9, 0.99);
        std::vector<TD> ps{p};
        for (int i = 0; i < 10; ++i) {
            set_grad(p, {std::sin(i), std::cos(i), 0.1 * i});
            pa::adam_update(std::span<TD>(ps), s, 0.05);
        }
        return std::vector<double>(p.data().begin(), p.data().end());
    };
    EXPECT_EQ(run(), run());
}

TEST(PolyDecay, Endpoints) {
    EXPECT_EQ(pa::poly_decay_lr(2.5e-4, 0, 100, 0.9), 2.5e-4);
    EXPECT_EQ(pa::poly_decay_lr(2.5e-4, 100, 100, 0.9), 0.0);
    EXPECT_DOUBLE_EQ(pa::poly_decay_lr(1.0, 50, 100, 0.9), std::pow(0.5, 0.9));
}

TEST(PolyDecay, Errors) {
    EXPECT_THROW(pa::poly_decay_lr(1.0, 101, 100, 0.9), std::out_of_range);
    EXPECT_THROW(pa::poly_decay_lr(1.0, 0, 0, 0.9), std::invalid_argument);
}
