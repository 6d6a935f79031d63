#include <doctest.h>

#include <cmath>

#include "demspec/error.hpp"
#include "demspec/optim.hpp"
#include "demspec/uncertainty.hpp"

using namespace demspec;

namespace {

// Golden-section search on a unimodal function over [lo, hi].
template <typename F>
double golden_argmin(F f, double lo, double hi) {
    const double r = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = lo, b = hi;
    double c = b - r * (b - a), d = a + r * (b - a);
    for (int i = 0; i < 200; ++i) {
        if (f(c) < f(d)) b = d;
        else a = c;
        c = b - r * (b - a);
        d = a + r * (b - a);
    }
    return 0.5 * (a + b);
}

}  // namespace

TEST_CASE("weighted_loss oracles") {
    CHECK(weighted_loss(2.0, 0.0).value == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(weighted_loss(4.0, std::log(4.0)).value == doctest::Approx(1.19315).epsilon(1e-5));
    CHECK(weighted_loss(4.0, std::log(4.0)).value ==
          doctest::Approx(0.5 * (1.0 + std::log(4.0))).epsilon(1e-15));

    for (double loss : {0.3, 1.0, 4.0, 17.0}) {
        const double eta = golden_argmin([&](double e) { return weighted_loss(loss, e).value; }, -10.0, 10.0);
        CHECK(eta == doctest::Approx(std::log(loss)).epsilon(1e-6));
        CHECK(std::abs(weighted_loss(loss, std::log(loss)).d_eta) < 1e-15);
    }
}

TEST_CASE("weighted_loss rejects bad input") {
    CHECK_THROWS_AS(weighted_loss(std::nan(""), 0.0), Error);
    CHECK_THROWS_AS(weighted_loss(1.0, INFINITY), Error);
    CHECK_THROWS_AS(weighted_loss(-1.0, 0.0), Error);
    try {
        weighted_loss(INFINITY, 0.0);
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::non_finite);
    }
    CHECK_THROWS_AS(combined_loss(1.0, std::nan(""), {}), Error);
}

TEST_CASE("combined_loss oracles") {
    CHECK(combined_loss(2, 2, {}).value == doctest::Approx(2.0).epsilon(1e-15));
    CHECK(combined_loss(0, 0, {}).value == 0.0);
    CHECK(combined_loss(4, 1, {std::log(4.0), 0.0}).value == doctest::Approx(1.69315).epsilon(1e-5));
}

TEST_CASE("combined_loss gradients match finite differences") {
    const double h = 1e-6;
    for (auto [lm, ld, em, ed] : {std::tuple{2.0, 0.7, 0.0, 0.0}, std::tuple{5.3, 0.1, 1.2, -2.0},
                                  std::tuple{0.01, 3.0, -0.5, 0.8}}) {
        const CombinedLoss c = combined_loss(lm, ld, {em, ed});
        const double fd_em =
            (combined_loss(lm, ld, {em + h, ed}).value - combined_loss(lm, ld, {em - h, ed}).value) / (2 * h);
        const double fd_ed =
            (combined_loss(lm, ld, {em, ed + h}).value - combined_loss(lm, ld, {em, ed - h}).value) / (2 * h);
        const double fd_lm =
            (combined_loss(lm + h, ld, {em, ed}).value - combined_loss(lm - h, ld, {em, ed}).value) / (2 * h);
        const double fd_ld =
            (combined_loss(lm, ld + h, {em, ed}).value - combined_loss(lm, ld - h, {em, ed}).value) / (2 * h);
        const double num = std::hypot(c.d_eta_mlm - fd_em, c.d_eta_dem - fd_ed);
        CHECK(num / std::hypot(fd_em, fd_ed) <= 1e-5);
        CHECK(c.d_mlm == doctest::Approx(fd_lm).epsilon(1e-5));
        CHECK(c.d_dem == doctest::Approx(fd_ld).epsilon(1e-5));
    }
}

TEST_CASE("task weight is strictly decreasing in eta") {
    double previous = INFINITY;
    for (double eta = -5.0; eta <= 5.0; eta += 0.25) {
        const double w = task_weight(eta);
        CHECK(w < previous);
        CHECK(w == doctest::Approx(weighted_loss(1.0, eta).d_loss));
        previous = w;
    }
}

TEST_CASE("eta moves monotonically toward ln L under gradient descent at fixed loss") {
    for (double loss : {0.2, 4.0}) {
        const double target = std::log(loss);
        double eta = 0.0;
        double distance = std::abs(eta - target);
        for (int step = 0; step < 2000; ++step) {
            eta -= 0.1 * weighted_loss(loss, eta).d_eta;
            const double d = std::abs(eta - target);
            CHECK(d <= distance);
            distance = d;
        }
        CHECK(distance < 1e-6);
    }
}

TEST_CASE("Adam drives eta to the stationary point") {
    ParamSet eta;
    eta.add("eta", 1, 1, false);
    ParamSet grad = eta.zeros_like();
    Adam adam(AdamOptions{0.01});
    const double loss = 0.6931;
    for (int step = 0; step < 3000; ++step) {
        grad[0](0, 0) = weighted_loss(loss, eta[0](0, 0)).d_eta;
        adam.step(slots_for(eta, grad));
    }
    CHECK(eta[0](0, 0) == doctest::Approx(std::log(loss)).epsilon(1e-2));
}

TEST_CASE("Adam first step and decoupled weight decay") {
    ParamSet p;
    p.add("w", 1, 2, true);
    p.add("b", 1, 1, false);
    p[0] << 1.0, -2.0;
    p[1](0, 0) = 3.0;
    ParamSet g = p.zeros_like();
    g[0] << 0.5, -4.0;
    g[1](0, 0) = 0.0;
    Adam adam(AdamOptions{0.1, 0.9, 0.999, 1e-8, 0.01});
    adam.step(slots_for(p, g));
    // Bias-corrected first step moves every coordinate by lr * sign(g).
    CHECK(p[0](0, 0) == doctest::Approx(1.0 * (1 - 0.001) - 0.1).epsilon(1e-7));
    CHECK(p[0](0, 1) == doctest::Approx(-2.0 * (1 - 0.001) + 0.1).epsilon(1e-7));
    CHECK(p[1](0, 0) == 3.0);  // no decay, zero gradient
}

TEST_CASE("clip_grad_norm") {
    ParamSet g;
    g.add("a", 1, 2);
    g[0] << 3.0, 4.0;
    CHECK(clip_grad_norm(g, 10.0) == doctest::Approx(5.0));
    CHECK(g[0](0, 1) == 4.0);
    CHECK(clip_grad_norm(g, 1.0) == doctest::Approx(5.0));
    CHECK(g[0].norm() == doctest::Approx(1.0));
}
