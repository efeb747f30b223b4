#include <cmath>
#include <stdexcept>

#include "ctm/checks.hpp"
#include "doctest.h"

using namespace ctm;

TEST_CASE("loglog_slope recovers exact power laws") {
    const std::vector<double> x{0.1, 0.2, 0.5, 1.0, 3.0};
    std::vector<double> y1, y2;
    for (double v : x) {
        y1.push_back(3.0 * v);
        y2.push_back(0.5 * v * v);
    }
    CHECK(loglog_slope(x, y1) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(loglog_slope(x, y2) == doctest::Approx(2.0).epsilon(1e-12));
    CHECK_THROWS_AS(loglog_slope({1.0}, {1.0}), std::invalid_argument);
    CHECK_THROWS_AS(loglog_slope({1.0, 2.0}, {1.0}), std::invalid_argument);
}

TEST_CASE("g approaches the denoiser linearly as s approaches t") {
    const GaussianMixture single = GaussianMixture::standard_normal(1);
    const Lemma1Report r = lemma1_probe(single, 1.0, {0.1, 0.05, 0.02, 0.01, 0.005}, {-2.0, -0.5, 1.0, 2.0});
    CHECK(r.slope == doctest::Approx(1.0).epsilon(0.1));

    // Single Gaussian: G(x,t,s) = k x with k = sqrt((1+s^2)/(1+t^2)), D(x,t) = x/(1+t^2),
    // so g - D = x [(k - s/t)/(1 - s/t) - 1/(1+t^2)] in closed form.
    const double t = 1.0;
    for (std::size_t i = 0; i < r.gaps.size(); ++i) {
        const double s = t - r.gaps[i];
        const double k = std::sqrt((1.0 + s * s) / (1.0 + t * t));
        const double a = s / t;
        const double expected = 2.0 * std::abs((k - a) / (1.0 - a) - 1.0 / (1.0 + t * t));
        CHECK(r.errors[i] == doctest::Approx(expected).epsilon(1e-6));
    }

    const Lemma1Report m = lemma1_probe(GaussianMixture::two_mode(), 1.0, {0.04, 0.02, 0.01, 0.005}, {-1.0, 0.3, 1.5});
    CHECK(m.slope == doctest::Approx(1.0).epsilon(0.2));
    CHECK_THROWS_AS(lemma1_probe(single, 1.0, {1.5}, {0.0}), std::invalid_argument);
    CHECK_THROWS_AS(lemma1_probe(GaussianMixture::standard_normal(2), 1.0, {0.1}, {0.0}), std::invalid_argument);
}

TEST_CASE("single Gaussian maps have a constant Lipschitz ratio within the bound") {
    Rng rng(3);
    const double t = 2.0, s = 0.05;
    const BilipReport r = bilip_probe(GaussianMixture::standard_normal(1), t, s, 200, rng);
    const double k = std::sqrt((1.0 + s * s) / (1.0 + t * t));
    CHECK(r.min_ratio == doctest::Approx(k).epsilon(1e-5));
    CHECK(r.max_ratio == doctest::Approx(k).epsilon(1e-5));
    CHECK(r.order_preserved);
    CHECK(r.lower_bound <= r.min_ratio);
    CHECK(r.upper_bound >= r.max_ratio);

    const BilipReport m = bilip_probe(GaussianMixture::two_mode(), t, s, 200, rng);
    CHECK(m.order_preserved);
    CHECK(m.min_ratio > 0.0);
    CHECK(std::isinf(m.upper_bound));
    CHECK_THROWS_AS(bilip_probe(GaussianMixture::standard_normal(1), t, s, 1, rng), std::invalid_argument);
}

TEST_CASE("solver order probe reports first and second order") {
    const SolverOrderReport r = solver_order_probe(GaussianMixture::standard_normal(1), 5.0, 0.5, {8, 16, 32, 64});
    CHECK(r.euler.order == doctest::Approx(1.0).epsilon(0.2));
    CHECK(r.heun.order == doctest::Approx(2.0).epsilon(0.1));
    CHECK_FALSE(r.heun.saturated);
}

TEST_CASE("nll lattice agrees with the analytic density") {
    const GaussianMixture mix = GaussianMixture::two_mode();
    const NllLatticeReport r = nll_lattice(oracle_score(mix), mix, {-1.5, -0.5, 0.0, 0.7, 1.8}, 0.002, 80.0, 1000);
    CHECK(r.xs.size() == 5);
    CHECK(r.max_error <= 0.01);
    CHECK(r.self_convergence < 1e-3);
    // Independent analytic value at x = 0 for the two-mode mixture: equal weights, means +-1, var 0.2^2 + 0.002^2.
    const double var = 0.04 + 0.002 * 0.002;
    const double expected = -std::log(std::exp(-0.5 / var) / std::sqrt(2.0 * M_PI * var));
    CHECK(r.analytic[2] == doctest::Approx(expected).epsilon(1e-10));
}

TEST_CASE("run_check dispatches suites and rejects unknown names") {
    RunConfig cfg;
    cfg.seed = 5;
    const auto lemma = run_check("lemma1", cfg);
    REQUIRE(lemma.size() == 1);
    CHECK(lemma[0].name == "lemma1");
    CHECK(lemma[0].passed);
    CHECK(lemma[0].details.contains("property"));

    const auto order = run_check("order", cfg);
    CHECK(order[0].passed);
    const auto bilip = run_check("bilip", cfg);
    CHECK(bilip[0].passed);

    cfg.eval.nll_points = 5;
    const auto nll = run_check("nll", cfg);
    CHECK(nll[0].passed);

    CHECK_THROWS_AS(run_check("nonsense", cfg), std::invalid_argument);
    CHECK(suite_names().size() == 6);
}

TEST_CASE("variance suite passes on the analytic teacher") {
    RunConfig cfg;
    cfg.seed = 9;
    cfg.eval.variance_chains = 20000;
    const auto v = run_check("variance", cfg);
    CHECK(v[0].passed);
    CHECK(v[0].details["runs"].size() == 3);
}
