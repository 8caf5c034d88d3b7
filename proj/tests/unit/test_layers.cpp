#include <cmath>
#include <limits>
#include <vector>

#include "doctest.h"
#include "hiertax/error.hpp"
#include "hiertax/gradcheck.hpp"
#include "hiertax/layers.hpp"
#include "hiertax/matrix.hpp"
#include "hiertax/rng.hpp"

using namespace hiertax;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng) {
    Matrix m(r, c);
    for (double& v : m.data) v = rng.uniform(-1.5, 1.5);
    return m;
}

}  // namespace

TEST_CASE("glorot init respects the fan bound and zeroes the bias") {
    Rng rng(41);
    LinearParams p(24, 16);
    init_glorot(p, rng);
    double bound = std::sqrt(6.0 / (16 + 24));
    double lo = 1e9, hi = -1e9;
    for (double v : p.weight.data) {
        CHECK(std::abs(v) <= bound);
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    // Spread should roughly fill the interval, not collapse.
    CHECK(hi - lo > bound);
    for (double b : p.bias) CHECK(b == 0.0);

    LinearParams q(24, 16);
    Rng rng2(41);
    init_glorot(q, rng2);
    CHECK(q.weight.data == p.weight.data);
}

TEST_CASE("linear_forward matches the by-hand formula") {
    LinearParams p(2, 3);
    p.weight.data = {1, 2, 3, 4, 5, 6};  // 2x3
    p.bias = {0.5, -0.5};
    Matrix x(2, 3);
    x.data = {1, 0, -1, 2, 1, 0};
    Matrix y = linear_forward(p, x);
    REQUIRE(y.rows == 2);
    REQUIRE(y.cols == 2);
    CHECK(y.at(0, 0) == doctest::Approx(1 * 1 + 2 * 0 + 3 * -1 + 0.5));
    CHECK(y.at(0, 1) == doctest::Approx(4 * 1 + 5 * 0 + 6 * -1 - 0.5));
    CHECK(y.at(1, 0) == doctest::Approx(1 * 2 + 2 * 1 + 3 * 0 + 0.5));
    CHECK(y.at(1, 1) == doctest::Approx(4 * 2 + 5 * 1 + 6 * 0 - 0.5));
}

TEST_CASE("linear_backward gradients pass finite differences at 1e-6") {
    Rng rng(42);
    LinearParams p(4, 5);
    init_glorot(p, rng);
    Matrix x = random_matrix(3, 5, rng);
    Matrix probe = random_matrix(3, 4, rng);  // fixed linearization weights

    auto loss_fn = [&]() {
        p.zero_grad();
        Matrix y = linear_forward(p, x);
        double loss = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i) loss += y.data[i] * probe.data[i];
        linear_backward(p, x, probe);
        return loss;
    };
    std::vector<ParamBlockRef> blocks = {
        {"weight", &p.weight.data, &p.grad_weight.data},
        {"bias", &p.bias, &p.grad_bias},
    };
    GradCheckReport report = gradient_check(loss_fn, blocks, 1e-6);
    CHECK(report.pass);
    CHECK(report.max_rel_error < 1e-6);
}

TEST_CASE("linear_backward input gradient matches finite differences") {
    Rng rng(43);
    LinearParams p(3, 4);
    init_glorot(p, rng);
    Matrix x = random_matrix(2, 4, rng);
    Matrix probe = random_matrix(2, 3, rng);

    p.zero_grad();
    Matrix dx = linear_backward(p, x, probe);
    const double h = 1e-6;
    for (std::size_t i = 0; i < x.size(); ++i) {
        double saved = x.data[i];
        auto eval = [&](double v) {
            x.data[i] = v;
            Matrix y = linear_forward(p, x);
            double s = 0.0;
            for (std::size_t k = 0; k < y.size(); ++k) s += y.data[k] * probe.data[k];
            return s;
        };
        double numeric = (eval(saved + h) - eval(saved - h)) / (2 * h);
        x.data[i] = saved;
        CHECK(dx.data[i] == doctest::Approx(numeric).epsilon(1e-5));
    }
}

TEST_CASE("backward accumulates rather than overwrites") {
    Rng rng(44);
    LinearParams p(2, 3);
    init_glorot(p, rng);
    Matrix x = random_matrix(2, 3, rng);
    Matrix g = random_matrix(2, 2, rng);
    p.zero_grad();
    linear_backward(p, x, g);
    Matrix once = p.grad_weight;
    linear_backward(p, x, g);
    for (std::size_t i = 0; i < once.size(); ++i) {
        CHECK(p.grad_weight.data[i] == doctest::Approx(2 * once.data[i]));
    }
}

TEST_CASE("relu clamps and gates") {
    Matrix x(1, 4);
    x.data = {-2, 0, 0.5, 3};
    Matrix y = relu_forward(x);
    CHECK(y.data == std::vector<double>{0, 0, 0.5, 3});
    Matrix g(1, 4);
    g.data = {1, 1, 1, 1};
    Matrix dx = relu_backward(x, g);
    // Subgradient at exactly zero is zero.
    CHECK(dx.data == std::vector<double>{0, 0, 1, 1});
}

TEST_CASE("dropout is the identity in eval mode and at rate zero") {
    Rng rng(45);
    Matrix x = random_matrix(4, 6, rng);
    Matrix mask;
    Matrix eval_out = dropout_forward(x, 0.5, false, rng, &mask);
    CHECK(eval_out.data == x.data);
    Matrix zero_rate = dropout_forward(x, 0.0, true, rng, &mask);
    CHECK(zero_rate.data == x.data);
}

TEST_CASE("train-mode dropout zeroes or rescales every entry") {
    Rng rng(46);
    Matrix x = random_matrix(30, 40, rng);
    Matrix mask;
    const double rate = 0.3;
    Matrix y = dropout_forward(x, rate, true, rng, &mask);
    REQUIRE(mask.same_shape(x));
    long survivors = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (mask.data[i] == 0.0) {
            CHECK(y.data[i] == 0.0);
        } else {
            CHECK(mask.data[i] == doctest::Approx(1.0 / (1.0 - rate)));
            CHECK(y.data[i] == doctest::Approx(x.data[i] / (1.0 - rate)));
            ++survivors;
        }
    }
    // 1200 Bernoulli(0.7) draws: expect 840 +- ~80 at 5 sigma.
    CHECK(survivors > 740);
    CHECK(survivors < 940);

    Matrix g = random_matrix(30, 40, rng);
    Matrix dx = dropout_backward(mask, g);
    for (std::size_t i = 0; i < g.size(); ++i) {
        CHECK(dx.data[i] == doctest::Approx(g.data[i] * mask.data[i]));
    }
}

TEST_CASE("dropout draws are deterministic per stream") {
    Rng a(47), b(47);
    Matrix x(5, 5, 1.0);
    Matrix ma, mb;
    Matrix ya = dropout_forward(x, 0.4, true, a, &ma);
    Matrix yb = dropout_forward(x, 0.4, true, b, &mb);
    CHECK(ya.data == yb.data);
    CHECK(ma.data == mb.data);
}

TEST_CASE("softmax rows are distributions and shift-invariant") {
    Rng rng(48);
    Matrix logits = random_matrix(6, 9, rng);
    Matrix probs = row_softmax(logits);
    for (std::size_t r = 0; r < probs.rows; ++r) {
        double sum = 0.0;
        for (std::size_t c = 0; c < probs.cols; ++c) {
            CHECK(probs.at(r, c) >= 0.0);
            sum += probs.at(r, c);
        }
        CHECK(std::abs(sum - 1.0) <= 1e-12);
    }
    Matrix shifted = logits;
    for (std::size_t r = 0; r < shifted.rows; ++r) {
        for (std::size_t c = 0; c < shifted.cols; ++c) shifted.at(r, c) += 123.45;
    }
    Matrix probs2 = row_softmax(shifted);
    for (std::size_t i = 0; i < probs.size(); ++i) {
        CHECK(probs2.data[i] == doctest::Approx(probs.data[i]).epsilon(1e-12));
    }
    // Extreme logits stay finite thanks to max-subtraction.
    Matrix extreme(1, 3);
    extreme.data = {1000.0, -1000.0, 999.0};
    Matrix p = row_softmax(extreme);
    CHECK(all_finite(p));
    CHECK(p.at(0, 0) == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))));

    std::vector<double> v = softmax({0.0, 0.0});
    CHECK(v[0] == doctest::Approx(0.5));
    CHECK(v[1] == doctest::Approx(0.5));
}

TEST_CASE("one AdamW step with fresh moments moves by about lr") {
    LinearParams p(1, 1);
    p.weight.data = {2.0};
    p.grad_weight.data = {1.0};
    AdamWConfig config;
    config.lr = 0.1;
    config.weight_decay = 0.0;
    adamw_step(p, config, 1);
    // Bias correction makes the first update lr * g / (|g| + eps).
    CHECK(p.weight.data[0] == doctest::Approx(2.0 - 0.1).epsilon(1e-6));
}

TEST_CASE("decoupled weight decay acts even with zero gradient") {
    LinearParams p(1, 1);
    p.weight.data = {1.0};
    p.grad_weight.data = {0.0};
    AdamWConfig config;
    config.lr = 0.1;
    config.weight_decay = 0.01;
    adamw_step(p, config, 1);
    CHECK(p.weight.data[0] == doctest::Approx(0.999).epsilon(1e-12));
}

TEST_CASE("two AdamW steps track the closed-form recurrence") {
    const double g1 = 0.7, g2 = -0.3, lr = 0.05, b1 = 0.9, b2 = 0.999, eps = 1e-8,
                 wd = 0.01;
    LinearParams p(1, 1);
    p.weight.data = {0.4};
    AdamWConfig config{lr, b1, b2, eps, wd};

    double theta = 0.4, m = 0.0, v = 0.0;
    double grads[2] = {g1, g2};
    for (int t = 1; t <= 2; ++t) {
        double g = grads[t - 1];
        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * g * g;
        double mhat = m / (1 - std::pow(b1, t));
        double vhat = v / (1 - std::pow(b2, t));
        theta -= lr * mhat / (std::sqrt(vhat) + eps) + lr * wd * theta;

        p.grad_weight.data = {g};
        adamw_step(p, config, t);
        CHECK(p.weight.data[0] == doctest::Approx(theta).epsilon(1e-12));
    }
    // Moment buffers persist across steps.
    CHECK(p.m_weight.data[0] == doctest::Approx(m).epsilon(1e-12));
    CHECK(p.v_weight.data[0] == doctest::Approx(v).epsilon(1e-12));
}

TEST_CASE("bias parameters get the same AdamW treatment") {
    LinearParams p(1, 1);
    p.bias = {1.0};
    p.grad_bias = {1.0};
    AdamWConfig config;
    config.lr = 0.1;
    config.weight_decay = 0.0;
    adamw_step(p, config, 1);
    CHECK(p.bias[0] == doctest::Approx(0.9).epsilon(1e-6));
}

TEST_CASE("AdamW rejects non-finite gradients") {
    LinearParams p(1, 1);
    p.grad_weight.data = {std::numeric_limits<double>::quiet_NaN()};
    CHECK_THROWS_AS(adamw_step(p, AdamWConfig{}, 1), DivergenceError);
}

TEST_CASE("equal seeds give bit-identical parameter trajectories") {
    auto run = [](std::uint64_t seed) {
        Rng rng(seed);
        LinearParams p(4, 6);
        init_glorot(p, rng);
        AdamWConfig config;
        for (int t = 1; t <= 20; ++t) {
            Matrix x = random_matrix(3, 6, rng);
            Matrix probe = random_matrix(3, 4, rng);
            p.zero_grad();
            linear_forward(p, x);
            linear_backward(p, x, probe);
            adamw_step(p, config, t);
        }
        return p.weight.data;
    };
    CHECK(run(99) == run(99));
    CHECK(run(99) != run(100));
}

TEST_CASE("gradient_check flags a corrupted backward pass") {
    Rng rng(49);
    LinearParams p(3, 4);
    init_glorot(p, rng);
    Matrix x = random_matrix(2, 4, rng);
    Matrix probe = random_matrix(2, 3, rng);
    auto bad_loss_fn = [&]() {
        p.zero_grad();
        Matrix y = linear_forward(p, x);
        double loss = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i) loss += y.data[i] * probe.data[i];
        linear_backward(p, x, probe);
        for (double& g : p.grad_weight.data) g *= 1.02;  // deliberate corruption
        return loss;
    };
    std::vector<ParamBlockRef> blocks = {
        {"weight", &p.weight.data, &p.grad_weight.data},
    };
    GradCheckReport report = gradient_check(bad_loss_fn, blocks, 1e-4);
    CHECK_FALSE(report.pass);
    CHECK(report.max_rel_error > 1e-3);
}

TEST_CASE("gradient_check sampling probes a deterministic subset") {
    Rng rng(50);
    LinearParams p(8, 8);
    init_glorot(p, rng);
    Matrix x = random_matrix(2, 8, rng);
    Matrix probe = random_matrix(2, 8, rng);
    auto loss_fn = [&]() {
        p.zero_grad();
        Matrix y = linear_forward(p, x);
        double loss = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i) loss += y.data[i] * probe.data[i];
        linear_backward(p, x, probe);
        return loss;
    };
    std::vector<ParamBlockRef> blocks = {
        {"weight", &p.weight.data, &p.grad_weight.data},
    };
    GradCheckReport a = gradient_check(loss_fn, blocks, 1e-5, 1e-5, 10, 7);
    GradCheckReport b = gradient_check(loss_fn, blocks, 1e-5, 1e-5, 10, 7);
    CHECK(a.pass);
    REQUIRE(a.blocks.size() == 1);
    CHECK(a.blocks[0].entries_checked == 10);
    CHECK(a.blocks[0].max_rel_error == b.blocks[0].max_rel_error);
}
