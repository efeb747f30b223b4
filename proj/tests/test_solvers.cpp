#include <cmath>

#include "ctm/solvers.hpp"
#include "doctest.h"

using namespace ctm;

namespace {

Point p1(double v) { return Point::Constant(1, v); }
Batch b1(double v) { return Batch::Constant(1, 1, v); }

}  // namespace

TEST_CASE("solver_step hand evaluations") {
    const auto den = oracle_denoiser(GaussianMixture::standard_normal());
    // Euler: 0.5*2 + 0.5*D(2,1) = 1 + 0.5 = 1.5
    CHECK(solver_step(SolverMethod::euler, den, p1(2), 1.0, 0.5)[0] == doctest::Approx(1.5).epsilon(1e-15));
    // Heun: x_E = 1.5, D(1.5, 0.5) = 1.2
    CHECK(solver_step(SolverMethod::heun, den, p1(2), 1.0, 0.5)[0] == doctest::Approx(1.6).epsilon(1e-15));
    CHECK(solver_step(SolverMethod::euler, den, p1(2), 1.0, 1.0)[0] == 2.0);
    CHECK(solver_step(SolverMethod::heun, den, p1(2), 1.0, 1.0)[0] == 2.0);
}

TEST_CASE("solver_step domain errors") {
    const auto den = oracle_denoiser(GaussianMixture::standard_normal());
    CHECK_THROWS_AS(solver_step(SolverMethod::heun, den, p1(2), 1.0, 0.0), std::domain_error);
    CHECK_THROWS_AS(solver_step(SolverMethod::euler, den, p1(2), 1.0, 2.0), std::domain_error);
    CHECK_THROWS_AS(solver_step(SolverMethod::euler, den, p1(2), 0.0, 0.0), std::domain_error);
    CHECK_NOTHROW(solver_step(SolverMethod::euler, den, p1(2), 1.0, 0.0));
    CHECK_THROWS_AS(parse_solver_method("rk4"), std::invalid_argument);
}

TEST_CASE("solver_step counts denoiser calls") {
    const auto den = oracle_denoiser(GaussianMixture::standard_normal());
    std::size_t nfe = 0;
    const Eigen::VectorXd t = Eigen::VectorXd::Constant(3, 1.0), s = Eigen::VectorXd::Constant(3, 0.5);
    solver_step(SolverMethod::heun, den, Batch::Ones(1, 3), t, s, &nfe);
    CHECK(nfe == 2);
    solver_step(SolverMethod::euler, den, Batch::Ones(1, 3), t, s, &nfe);
    CHECK(nfe == 3);
}

TEST_CASE("solve_ode") {
    const auto sn = GaussianMixture::standard_normal();
    const auto den = oracle_denoiser(sn);
    SUBCASE("heun 100 steps to sigma_min is within 1e-4 of the closed form") {
        const SolveResult r = solve_ode(SolverMethod::heun, den, b1(2), 1.0, 0.002, 100);
        CHECK(std::abs(r.x(0, 0) - exact_transition(sn, p1(2), 1.0, 0.002)[0]) < 1e-4);
    }
    SUBCASE("integrating to exactly 0 finishes with an Euler step") {
        const SolveResult r = solve_ode(SolverMethod::heun, den, b1(2), 1.0, 0.0, 200, 7.0, true);
        CHECK(std::abs(r.x(0, 0) - std::sqrt(2.0)) < 1e-3);
        REQUIRE(r.trace.times.size() == 201);
        CHECK(r.trace.times.back() == 0.0);
        CHECK(r.trace.step_count == 2 * 199 + 1);
    }
    SUBCASE("non-finite states raise with the trace attached") {
        const DenoiserFn bad = [](const Batch& x, const Eigen::VectorXd& t) {
            Batch out = x;
            if (t[0] < 0.5) out.setConstant(std::numeric_limits<double>::quiet_NaN());
            return out;
        };
        try {
            solve_ode(SolverMethod::euler, bad, b1(1), 1.0, 0.1, 10, 7.0, true);
            FAIL("expected IntegrationError");
        } catch (const IntegrationError& e) {
            CHECK(!e.trace().times.empty());
            CHECK(e.trace().times.back() > 0.1);
        }
    }
    CHECK_THROWS_AS(solve_ode(SolverMethod::heun, den, b1(2), 1.0, 1.0, 5), std::domain_error);
}

TEST_CASE("reference_solution") {
    const auto sn = GaussianMixture::standard_normal();
    const auto den = oracle_denoiser(sn);
    CHECK(reference_solution(den, b1(2), 1.0, 1.0)(0, 0) == 2.0);
    for (double s : {0.5, 0.1, 0.002}) {
        const double got = reference_solution(den, b1(2), 1.0, s)(0, 0);
        CHECK(std::abs(got - exact_transition(sn, p1(2), 1.0, s)[0]) < 1e-6);
    }
    const double far = reference_solution(den, b1(30), 80.0, 0.002)(0, 0);
    CHECK(std::abs(far - exact_transition(sn, p1(30), 80.0, 0.002)[0]) < 1e-6);
}

TEST_CASE("solve_on_grid") {
    const auto sn = GaussianMixture::standard_normal();
    const auto den = oracle_denoiser(sn);
    const std::vector<double> grid{4.0, 2.0, 1.0, 0.5, 0.0};
    Batch x(1, 4);
    x << 2.0, 2.0, 2.0, 2.0;
    const std::vector<std::size_t> from{0, 2, 1, 3}, to{2, 3, 1, 4};
    const Batch out = solve_on_grid(SolverMethod::heun, den, x, grid, from, to);
    // Column by column with explicit steps.
    const double c0 = solver_step(SolverMethod::heun, den, solver_step(SolverMethod::heun, den, p1(2), 4.0, 2.0), 2.0, 1.0)[0];
    const double c1 = solver_step(SolverMethod::heun, den, p1(2), 1.0, 0.5)[0];
    const double c3 = solver_step(SolverMethod::euler, den, p1(2), 0.5, 0.0)[0];
    CHECK(out(0, 0) == doctest::Approx(c0).epsilon(1e-15));
    CHECK(out(0, 1) == doctest::Approx(c1).epsilon(1e-15));
    CHECK(out(0, 2) == 2.0);
    CHECK(out(0, 3) == doctest::Approx(c3).epsilon(1e-15));
    CHECK_THROWS_AS(solve_on_grid(SolverMethod::heun, den, x, grid, {1, 0, 0, 0}, {0, 0, 0, 0}), std::invalid_argument);
}

TEST_CASE("sde_euler_maruyama_step") {
    const auto sn = GaussianMixture::standard_normal();
    SUBCASE("drift only") {
        // With the noise draw removed: 2 + 2*1*0.5*(-1) = 1.
        const ScoreFn score = oracle_score(sn);
        const Batch drift = score(b1(2), Eigen::VectorXd::Constant(1, 1.0));
        CHECK(2.0 + 2.0 * 1.0 * 0.5 * drift(0, 0) == doctest::Approx(1.0));
        // Same rng stream: the step minus its noise equals the drift update.
        Rng a(3), b(3);
        const double step = sde_euler_maruyama_step(score, b1(2), 1.0, 0.5, a)(0, 0);
        std::normal_distribution<double> normal(0.0, 1.0);
        const double z = normal(b);
        CHECK(step - std::sqrt(2.0 * 0.5) * z == doctest::Approx(1.0).epsilon(1e-14));
    }
    SUBCASE("zero score keeps the mean") {
        const ScoreFn zero = [](const Batch& x, const Eigen::VectorXd&) { return Batch::Zero(x.rows(), x.cols()); };
        Rng rng(8);
        const Batch out = sde_euler_maruyama_step(zero, Batch::Constant(1, 100000, 3.0), 1.0, 0.5, rng);
        CHECK(std::abs(out.mean() - 3.0) < 4.0 / std::sqrt(100000.0));
    }
    Rng rng(1);
    CHECK_THROWS_AS(sde_euler_maruyama_step(oracle_score(sn), b1(1), 1.0, 2.0, rng), std::domain_error);
}

TEST_CASE("convergence_order_probe") {
    const auto sn = GaussianMixture::standard_normal();
    const auto den = oracle_denoiser(sn);
    const ExactMapFn exact = [&](const Batch& x, double t, double s) {
        Batch out(x.rows(), x.cols());
        for (Eigen::Index j = 0; j < x.cols(); ++j) out.col(j) = exact_transition(sn, x.col(j), t, s);
        return out;
    };
    Batch x(1, 4);
    x << -2.0, -0.5, 1.0, 3.0;
    const std::vector<std::size_t> steps{8, 16, 32, 64, 128};
    const auto e = convergence_order_probe(solver_integrator(SolverMethod::euler, den), exact, x, 5.0, 0.5, steps);
    const auto h = convergence_order_probe(solver_integrator(SolverMethod::heun, den), exact, x, 5.0, 0.5, steps);
    CHECK(e.order >= 0.8);
    CHECK(e.order <= 1.2);
    CHECK(h.order >= 1.8);
    CHECK(h.order <= 2.2);
    const auto sat = convergence_order_probe({}, exact, x, 5.0, 0.5, steps);
    CHECK(sat.saturated);
    const auto few = convergence_order_probe(solver_integrator(SolverMethod::euler, den), exact, x, 5.0, 0.5, {8});
    CHECK(!few.diagnostics.empty());
}

TEST_CASE("semigroup: t->u->s converges to t->s") {
    const auto den = oracle_denoiser(GaussianMixture::two_mode(0.2));
    const Batch x = b1(0.7);
    double prev = 1e9;
    for (std::size_t n : {8u, 32u, 128u}) {
        const Batch mid = solve_ode(SolverMethod::heun, den, x, 3.0, 0.8, n).x;
        const Batch two = solve_ode(SolverMethod::heun, den, mid, 0.8, 0.1, n).x;
        const Batch one = solve_ode(SolverMethod::heun, den, x, 3.0, 0.1, 2 * n).x;
        const double gap = std::abs(two(0, 0) - one(0, 0));
        CHECK(gap < prev);
        prev = gap;
    }
    CHECK(prev < 1e-3);
}
