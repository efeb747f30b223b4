#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "ctm/eval.hpp"
#include "doctest.h"

using namespace ctm;

namespace {

Point p1(double v) { return Point::Constant(1, v); }

// Equal-weight 1-D W1 as the best assignment over all permutations.
double brute_force_w1(const std::vector<double>& a, std::vector<double> b) {
    std::sort(b.begin(), b.end());
    double best = std::numeric_limits<double>::infinity();
    do {
        double c = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) c += std::abs(a[i] - b[i]);
        best = std::min(best, c / static_cast<double>(a.size()));
    } while (std::next_permutation(b.begin(), b.end()));
    return best;
}

}  // namespace

TEST_CASE("wasserstein1 examples") {
    CHECK(wasserstein1(std::vector<double>{0.3, -1.0, 2.0}, std::vector<double>{2.0, 0.3, -1.0}) == 0.0);
    CHECK(wasserstein1(std::vector<double>{0.0}, std::vector<double>{1.0}) == 1.0);
    CHECK(wasserstein1(std::vector<double>{0.0, 2.0}, std::vector<double>{1.0, 3.0}) == 1.0);
    CHECK(brute_force_w1({0.0, 2.0}, {1.0, 3.0}) == 1.0);
}

TEST_CASE("wasserstein1 agrees with brute force over couplings") {
    Rng rng(1);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int trial = 0; trial < 30; ++trial) {
        std::vector<double> a(6), b(6);
        for (auto& v : a) v = normal(rng);
        for (auto& v : b) v = 2.0 * normal(rng) + 0.5;
        CHECK(wasserstein1(a, b) == doctest::Approx(brute_force_w1(a, b)).epsilon(1e-12));
    }
}

TEST_CASE("wasserstein1 with unequal sizes is seeded") {
    std::vector<double> a(100), b(37);
    std::iota(a.begin(), a.end(), 0.0);
    std::iota(b.begin(), b.end(), 0.5);
    const double x = wasserstein1(a, b, 3);
    CHECK(x == wasserstein1(a, b, 3));
    CHECK(x == wasserstein1(b, a, 3));
    CHECK(std::isfinite(x));
    CHECK_THROWS(wasserstein1(std::vector<double>{}, b));
}

TEST_CASE("batched wasserstein1") {
    Rng rng(2);
    Batch a = Batch::Random(1, 50), b = Batch::Random(1, 50);
    std::vector<double> va(a.data(), a.data() + 50), vb(b.data(), b.data() + 50);
    CHECK(wasserstein1(a, b) == doctest::Approx(wasserstein1(va, vb)).epsilon(1e-14));
    Batch a2 = Batch::Random(2, 200);
    CHECK(wasserstein1(a2, a2) == 0.0);
    Batch shifted = a2;
    shifted.row(0).array() += 1.0;
    CHECK(wasserstein1(a2, shifted) > 0.1);
}

TEST_CASE("w1_to_data") {
    const auto mix = GaussianMixture::two_mode();
    const auto q = quantile_reference(mix, 500);
    Batch b(1, 500);
    for (int i = 0; i < 500; ++i) b(0, i) = q[static_cast<std::size_t>(i)];
    CHECK(w1_to_data(b, mix) == 0.0);
    b.array() += 0.1;
    CHECK(w1_to_data(b, mix) == doctest::Approx(0.1).epsilon(1e-12));
}

TEST_CASE("student_score of a zero-head network is the N(0, sigma_d^2) score") {
    const CtmNetwork net(CtmArchitecture{}, ScheduleConfig{});
    Rng rng(3);
    const CtmParams p = net.init_params(rng);
    const ScoreFn score = student_score(net, p);
    const GaussianMixture ref({1.0}, {p1(0.0)}, {0.5});
    for (double t : {0.1, 1.0, 7.0}) {
        const Batch s = score(Batch::Constant(1, 1, 0.8), Eigen::VectorXd::Constant(1, t));
        CHECK(s(0, 0) == doctest::Approx(ref.score_t(p1(0.8), t)[0]).epsilon(1e-12));
    }
}

TEST_CASE("nll_pf_ode") {
    const auto sn = GaussianMixture::standard_normal();
    const ScoreFn score = oracle_score(sn);
    Batch x(1, 2);
    x << 0.0, 1.0;
    const Eigen::VectorXd nll = nll_pf_ode(score, x, 0.002, 80.0, 400);
    CHECK(std::abs(nll[0] - 0.5 * std::log(2 * std::numbers::pi)) < 0.01);
    CHECK(std::abs(nll[0] - 0.918939) < 0.01);
    CHECK(std::abs(nll[1] - 1.418939) < 0.01);
    const Eigen::VectorXd fine = nll_pf_ode(score, x, 0.002, 80.0, 800);
    CHECK((fine - nll).cwiseAbs().maxCoeff() < 1e-3);
    CHECK_THROWS_AS(nll_pf_ode(score, x, 0.002, 80.0, 10), std::invalid_argument);
    CHECK_THROWS_AS(nll_pf_ode(score, Batch::Zero(5, 1), 0.002, 80.0, 200), std::invalid_argument);

    SUBCASE("a diverging score is reported with the time it failed at") {
        const ScoreFn bad = [](const Batch& y, const Eigen::VectorXd& t) {
            Batch out = -y;
            if (t[0] > 1.0) out.setConstant(std::numeric_limits<double>::quiet_NaN());
            return out;
        };
        try {
            nll_pf_ode(bad, x, 0.002, 80.0, 200);
            FAIL("expected NumericIncident");
        } catch (const NumericIncident& e) {
            CHECK(e.time() > 0.5);
        }
    }
}

TEST_CASE("variance_probe") {
    const auto sn = GaussianMixture::standard_normal();
    const GFn g = oracle_g(sn);
    Rng rng(4);
    SUBCASE("gamma = 1 from t = 1 to 0.5: 2 -> 1.25") {
        const auto r = variance_probe(g, sn, {1.0, 0.5, 0.0}, 1.0, 100000, rng);
        REQUIRE(r.steps.size() >= 1);
        CHECK(r.steps[0].expected == doctest::Approx(1.25));
        CHECK(std::abs(r.steps[0].variance - 1.25) < 3.0 * r.steps[0].stderr_);
        CHECK(r.bounds_ok);
        CHECK(r.invariance_ok);
    }
    SUBCASE("gamma = 0 follows the deterministic contraction ratios") {
        const std::vector<double> grid{5.0, 2.0, 0.7, 0.0};
        const auto r = variance_probe(g, sn, grid, 0.0, 50000, rng);
        REQUIRE(r.steps.size() == 3);
        for (std::size_t i = 1; i < r.steps.size(); ++i) {
            const double ratio = r.steps[i].variance / r.steps[i - 1].variance;
            const double want = (1.0 + grid[i + 1] * grid[i + 1]) / (1.0 + grid[i] * grid[i]);
            CHECK(ratio == doctest::Approx(want).epsilon(1e-10));
        }
    }
    CHECK_THROWS_AS(variance_probe(g, sn, {1.0, 0.0}, 0.5, 1, rng), std::invalid_argument);
    CHECK_THROWS_AS(variance_probe(g, GaussianMixture::two_mode(), {1.0, 0.0}, 0.5, 100, rng), std::invalid_argument);
}

TEST_CASE("smooth field and perturbed G") {
    const SmoothField f = SmoothField::random(16, 3);
    CHECK(f.amplitude.squaredNorm() / 2.0 == doctest::Approx(1.0).epsilon(1e-14));
    CHECK_THROWS(SmoothField::random(0, 1));
    const auto sn = GaussianMixture::standard_normal();
    const GFn g = perturbed_g(oracle_g(sn), f, 0.01);
    const Batch x = Batch::Random(1, 10);
    CHECK(g(x, 2.0, 2.0) == x);
    const Batch diff = g(x, 2.0, 0.0) - oracle_g(sn)(x, 2.0, 0.0);
    CHECK((diff - 0.01 * f(x)).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("accumulation_study") {
    const auto sn = GaussianMixture::standard_normal();
    AccumulationOptions o;
    o.replicates = 4;
    SUBCASE("a single jump gives identical results for every gamma") {
        const auto t = accumulation_study(perturbed_family(oracle_g(sn), 16, 1, 0.01), sn, ScheduleConfig{},
                                          {0.0, 0.5, 1.0}, {1}, 5000, 1, o);
        REQUIRE(t.rows.size() == 3);
        CHECK(t.rows[0].w1 == t.rows[1].w1);
        CHECK(t.rows[1].w1 == t.rows[2].w1);
    }
    SUBCASE("the exact teacher sits at the Monte-Carlo floor for every gamma") {
        const auto t = accumulation_study(oracle_g(sn), sn, ScheduleConfig{}, {0.0, 1.0}, {8}, 20000, 2, o);
        for (const auto& row : t.rows) CHECK(row.w1 < 0.01);
    }
    SUBCASE("a perturbed teacher degrades with gamma at NFE 16") {
        o.replicates = 8;
        const auto t = accumulation_study(perturbed_family(oracle_g(sn), 16, 1, 0.01), sn, ScheduleConfig{},
                                          {0.0, 1.0}, {16}, 20000, 3, o);
        CHECK(t.rows[1].w1 > t.rows[0].w1);
        REQUIRE(t.verdicts.size() == 1);
        CHECK(t.verdicts[0].gaps[0] > 0.0);
    }
    CHECK_THROWS_AS(accumulation_study(oracle_g(sn), GaussianMixture::standard_normal(2), ScheduleConfig{}, {0.0},
                                       {1}, 100, 1, o),
                    std::invalid_argument);
}

TEST_CASE("evaluate_samples") {
    const auto mix = GaussianMixture::two_mode();
    Rng rng(5);
    const Batch x = mix.sample_marginal(0.0, 50000, rng);
    const EvalReport r = evaluate_samples(x, mix, 1);
    CHECK(r.w1 < 0.02);
    CHECK(std::abs(r.mean_error[0]) < 4.0 * std::sqrt(1.04 / 50000));
    CHECK(std::abs(r.variance_error[0]) < 0.03);
    CHECK(!r.nll.has_value());
    CHECK(r.n_samples == 50000);
    CHECK_THROWS(evaluate_samples(Batch::Zero(2, 10), mix, 1));
}

TEST_CASE("denoiser_sup_error of the exact denoiser is zero") {
    const auto mix = GaussianMixture::two_mode();
    CHECK(denoiser_sup_error(oracle_denoiser(mix), mix, {0.1, 1.0, 5.0}, {-3.0, 0.0, 3.0}) == 0.0);
    const DenoiserFn off = [&](const Batch& x, const Eigen::VectorXd& t) {
        Batch out = mix.denoise_batch(x, t);
        out.array() += 0.2;
        return out;
    };
    CHECK(denoiser_sup_error(off, mix, {0.5}, {1.0}) == doctest::Approx(0.2));
}
