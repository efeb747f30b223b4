#include "ctm/checks.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace ctm {

using nlohmann::json;

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("loglog_slope: need >= 2 paired points");
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double lx = std::log(x[i]);
        const double ly = std::log(y[i]);
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    const double n = static_cast<double>(x.size());
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

namespace {

Batch row_batch(const std::vector<double>& xs) {
    return Eigen::Map<const Eigen::RowVectorXd>(xs.data(), static_cast<Eigen::Index>(xs.size()));
}

GaussianMixture single_gaussian_or_default(const GaussianMixture& mix) {
    if (mix.components() == 1 && mix.dim() == 1) return mix;
    return GaussianMixture::standard_normal(1);
}

GaussianMixture one_dim_or_default(const GaussianMixture& mix) {
    if (mix.dim() == 1) return mix;
    return GaussianMixture::standard_normal(1);
}

std::string fmt(double v) {
    std::ostringstream s;
    s.precision(6);
    s << v;
    return s.str();
}

}  // namespace

Lemma1Report lemma1_probe(const GaussianMixture& mix, double t, const std::vector<double>& gaps,
                          const std::vector<double>& xs) {
    if (mix.dim() != 1) throw std::invalid_argument("lemma1_probe: 1-D mixtures only");
    const GFn g_map = oracle_g(mix);
    const Batch x = row_batch(xs);
    const Batch den = mix.denoise_batch(x, Eigen::VectorXd::Constant(x.cols(), t));
    Lemma1Report r;
    for (double gap : gaps) {
        if (!(gap > 0.0 && gap < t)) throw std::invalid_argument("lemma1_probe: gaps must lie in (0, t)");
        const double s = t - gap;
        const double a = s / t;
        const Batch g = (g_map(x, t, s) - a * x) / (1.0 - a);
        r.gaps.push_back(gap);
        r.errors.push_back((g - den).cwiseAbs().maxCoeff());
    }
    r.slope = loglog_slope(r.gaps, r.errors);
    return r;
}

BilipReport bilip_probe(const GaussianMixture& mix, double t, double s, std::size_t n_points, Rng& rng) {
    if (mix.dim() != 1) throw std::invalid_argument("bilip_probe: 1-D mixtures only");
    if (n_points < 2) throw std::invalid_argument("bilip_probe: need >= 2 points");
    Batch x = mix.sample_marginal(t, n_points, rng);
    std::sort(x.data(), x.data() + x.size());
    const Batch y = oracle_g(mix)(x, t, s);
    BilipReport r;
    r.min_ratio = std::numeric_limits<double>::infinity();
    r.max_ratio = 0.0;
    for (Eigen::Index j = 1; j < x.cols(); ++j) {
        const double dx = x(0, j) - x(0, j - 1);
        if (dx <= 0.0) continue;
        const double dy = y(0, j) - y(0, j - 1);
        if (!(dy > 0.0)) r.order_preserved = false;
        r.min_ratio = std::min(r.min_ratio, dy / dx);
        r.max_ratio = std::max(r.max_ratio, dy / dx);
    }
    if (mix.components() == 1) {
        const double l = mix.single_component_lipschitz();
        r.lower_bound = std::exp(-l * (t - s));
        r.upper_bound = std::exp(l * (t - s));
    } else {
        r.lower_bound = 0.0;
        r.upper_bound = std::numeric_limits<double>::infinity();
    }
    return r;
}

SolverOrderReport solver_order_probe(const GaussianMixture& single, double t, double s,
                                     const std::vector<std::size_t>& step_counts) {
    const DenoiserFn den = oracle_denoiser(single);
    const GFn exact = oracle_g(single);
    const ExactMapFn exact_map = [exact](const Batch& x, double a, double b) { return exact(x, a, b); };
    const Batch x = row_batch({-2.0, -0.5, 1.0, 3.0}) * std::sqrt(1.0 + t * t);
    SolverOrderReport r;
    r.euler = convergence_order_probe(solver_integrator(SolverMethod::euler, den), exact_map, x, t, s, step_counts);
    r.heun = convergence_order_probe(solver_integrator(SolverMethod::heun, den), exact_map, x, t, s, step_counts);
    return r;
}

NllLatticeReport nll_lattice(const ScoreFn& score, const GaussianMixture& mix, const std::vector<double>& xs,
                             double t_min, double t_max, std::size_t n_steps) {
    const Batch x = row_batch(xs);
    const Eigen::VectorXd coarse = nll_pf_ode(score, x, t_min, t_max, n_steps);
    const Eigen::VectorXd fine = nll_pf_ode(score, x, t_min, t_max, 2 * n_steps);
    NllLatticeReport r;
    r.xs = xs;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        Point p(1);
        p[0] = xs[i];
        const double truth = -mix.log_density_t(p, t_min);
        const auto k = static_cast<Eigen::Index>(i);
        r.estimated.push_back(coarse[k]);
        r.analytic.push_back(truth);
        r.max_error = std::max(r.max_error, std::abs(coarse[k] - truth));
        r.self_convergence = std::max(r.self_convergence, std::abs(coarse[k] - fine[k]));
    }
    return r;
}

const std::vector<std::string>& suite_names() {
    static const std::vector<std::string> names{"lemma1", "bilip", "variance", "accumulation", "order", "nll"};
    return names;
}

namespace {

SuiteResult suite_lemma1(const RunConfig& cfg) {
    const GaussianMixture mix = single_gaussian_or_default(cfg.mixture.build());
    const Lemma1Report r = lemma1_probe(mix, 1.0, {0.1, 0.05, 0.02, 0.01, 0.005, 0.002, 0.001},
                                        {-2.0, -1.0, -0.5, 0.5, 1.0, 2.0});
    SuiteResult out{"lemma1", r.slope >= 0.8 && r.slope <= 1.2, "", json::object()};
    out.details = {{"property", "g(x,t,s) from the exact map tends to the denoiser linearly as s -> t"},
                   {"t", 1.0}, {"gaps", r.gaps}, {"errors", r.errors}, {"slope", r.slope},
                   {"accepted_slope", {0.8, 1.2}}};
    out.summary = "log-error vs log(t-s) slope " + fmt(r.slope) + " (accept [0.8, 1.2])";
    return out;
}

SuiteResult suite_bilip(const RunConfig& cfg) {
    Rng rng(cfg.seed);
    const GaussianMixture single = GaussianMixture::standard_normal(1);
    const GaussianMixture mix = one_dim_or_default(cfg.mixture.build());
    const BilipReport a = bilip_probe(single, 2.0, 0.05, 400, rng);
    const BilipReport b = bilip_probe(mix, 2.0, 0.05, 400, rng);
    const bool single_ok = a.order_preserved && a.min_ratio >= a.lower_bound && a.max_ratio <= a.upper_bound;
    const bool mix_ok = b.order_preserved && b.min_ratio > 0.0 && std::isfinite(b.max_ratio);
    SuiteResult out{"bilip", single_ok && mix_ok, "", json::object()};
    auto j = [](const BilipReport& r) {
        return json{{"min_ratio", r.min_ratio}, {"max_ratio", r.max_ratio}, {"lower_bound", r.lower_bound},
                    {"upper_bound", std::isfinite(r.upper_bound) ? json(r.upper_bound) : json(nullptr)},
                    {"order_preserved", r.order_preserved}};
    };
    out.details = {{"property", "exact trajectory maps are bi-Lipschitz and never cross"},
                   {"t", 2.0}, {"s", 0.05}, {"single_gaussian", j(a)}, {"mixture", j(b)}};
    out.summary = "single Gaussian ratios [" + fmt(a.min_ratio) + ", " + fmt(a.max_ratio) + "] within [" +
                  fmt(a.lower_bound) + ", " + fmt(a.upper_bound) + "]; mixture order " +
                  (b.order_preserved ? "preserved" : "VIOLATED");
    return out;
}

SuiteResult suite_variance(const RunConfig& cfg) {
    const GaussianMixture mix = single_gaussian_or_default(cfg.mixture.build());
    const std::vector<double> grid = sampling_grid(cfg.schedule, cfg.eval.variance_nfe);
    SuiteResult out{"variance", true, "", json::object()};
    out.details["property"] = "gamma-sampling variance obeys the two-sided zeta bound and stays on sigma0^2 + t^2";
    out.details["chains"] = cfg.eval.variance_chains;
    json runs = json::array();
    std::ostringstream summary;
    for (double gamma : {0.0, 0.5, 1.0}) {
        Rng rng(cfg.seed + static_cast<unsigned long long>(gamma * 1000.0));
        const VarianceProbeReport r = variance_probe(oracle_g(mix), mix, grid, gamma, cfg.eval.variance_chains, rng);
        out.passed = out.passed && r.bounds_ok && r.invariance_ok;
        double worst = 0.0;
        json steps = json::array();
        for (const VarianceStep& st : r.steps) {
            worst = std::max(worst, std::abs(st.variance - st.expected) / st.stderr_);
            steps.push_back({{"step", st.step}, {"t", st.t}, {"var", st.variance}, {"expected", st.expected},
                             {"stderr", st.stderr_}, {"lower_bound", st.lower}, {"upper_bound", st.upper}});
        }
        runs.push_back({{"gamma", gamma}, {"bounds_ok", r.bounds_ok}, {"invariance_ok", r.invariance_ok},
                        {"worst_deviation_se", worst}, {"steps", steps}});
        summary << "gamma=" << gamma << ": worst " << fmt(worst) << " SE" << (gamma < 1.0 ? "; " : "");
    }
    out.details["runs"] = runs;
    out.summary = summary.str();
    return out;
}

SuiteResult suite_accumulation(const RunConfig& cfg) {
    const GaussianMixture mix = GaussianMixture::standard_normal(1);
    const GFactory g = perturbed_family(oracle_g(mix), cfg.eval.field_terms, cfg.eval.field_seed,
                                        cfg.eval.perturbation);
    AccumulationOptions opts;
    opts.replicates = cfg.eval.accumulation_replicates;
    const AccumulationTable table = accumulation_study(g, mix, cfg.schedule, {0.0, 0.5, 1.0},
                                                       {cfg.eval.accumulation_nfe}, cfg.eval.accumulation_samples,
                                                       cfg.seed, opts);
    const AccumulationVerdict& v = table.verdicts.front();
    SuiteResult out{"accumulation", v.increasing, "", json::object()};
    json rows = json::array();
    for (const auto& row : table.rows) {
        rows.push_back({{"gamma", row.gamma}, {"nfe", row.nfe}, {"w1", row.w1}, {"stderr", row.stderr_}});
    }
    out.details = {{"property", "terminal W1 of a perturbed teacher grows with gamma"},
                   {"perturbation", cfg.eval.perturbation}, {"field", "fresh smooth field per replicate"},
                   {"rows", rows}, {"gaps", v.gaps},
                   {"gap_stderr", v.gap_stderr}, {"margin_se", opts.margin_se}};
    std::ostringstream s;
    s << "NFE=" << v.nfe << " W1 by gamma:";
    for (const auto& row : table.rows) s << " " << fmt(row.w1);
    s << "; gaps/SE:";
    for (std::size_t i = 0; i < v.gaps.size(); ++i) s << " " << fmt(v.gaps[i] / v.gap_stderr[i]);
    out.summary = s.str();
    return out;
}

SuiteResult suite_order(const RunConfig& cfg) {
    const GaussianMixture mix = single_gaussian_or_default(cfg.mixture.build());
    const SolverOrderReport r = solver_order_probe(mix, 5.0, 0.5, {8, 16, 32, 64, 128});
    const bool ok = std::abs(r.euler.order - 1.0) <= 0.2 && std::abs(r.heun.order - 2.0) <= 0.2 &&
                    !r.euler.saturated && !r.heun.saturated;
    SuiteResult out{"order", ok, "", json::object()};
    out.details = {{"property", "Euler is first order and Heun second order on the exact trajectory"},
                   {"t", 5.0}, {"s", 0.5}, {"step_counts", r.euler.step_counts},
                   {"euler_errors", r.euler.errors}, {"heun_errors", r.heun.errors},
                   {"euler_order", r.euler.order}, {"heun_order", r.heun.order}};
    out.summary = "Euler order " + fmt(r.euler.order) + ", Heun order " + fmt(r.heun.order);
    return out;
}

SuiteResult suite_nll(const RunConfig& cfg) {
    const GaussianMixture mix = one_dim_or_default(cfg.mixture.build());
    std::vector<double> xs;
    const std::size_t n = std::max<std::size_t>(cfg.eval.nll_points, 2);
    for (std::size_t i = 0; i < n; ++i) xs.push_back(-2.0 + 4.0 * static_cast<double>(i) / static_cast<double>(n - 1));
    const NllLatticeReport r = nll_lattice(oracle_score(mix), mix, xs, cfg.schedule.sigma_min,
                                           cfg.schedule.sigma_max, cfg.eval.nll_steps);
    const bool ok = r.max_error <= 0.01 && r.self_convergence < 1e-3;
    SuiteResult out{"nll", ok, "", json::object()};
    out.details = {{"property", "augmented PF ODE likelihood matches the analytic density"},
                   {"xs", r.xs}, {"nll", r.estimated}, {"analytic", r.analytic}, {"max_error", r.max_error},
                   {"self_convergence", r.self_convergence}, {"n_steps", cfg.eval.nll_steps}};
    out.summary = "max |NLL - analytic| " + fmt(r.max_error) + " nats (accept 0.01); step-doubling change " +
                  fmt(r.self_convergence);
    return out;
}

}  // namespace

std::vector<SuiteResult> run_check(const std::string& suite, const RunConfig& cfg) {
    using Fn = SuiteResult (*)(const RunConfig&);
    const std::vector<std::pair<std::string, Fn>> table{{"lemma1", suite_lemma1},   {"bilip", suite_bilip},
                                                        {"variance", suite_variance}, {"accumulation", suite_accumulation},
                                                        {"order", suite_order},     {"nll", suite_nll}};
    std::vector<SuiteResult> out;
    for (const auto& [name, fn] : table) {
        if (suite == "all" || suite == name) out.push_back(fn(cfg));
    }
    if (out.empty()) throw std::invalid_argument("unknown suite '" + suite + "'");
    return out;
}

}  // namespace ctm
