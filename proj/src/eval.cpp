#include "ctm/eval.hpp"

#include <algorithm>
#include <boost/math/distributions/normal.hpp>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

namespace ctm {

double wasserstein1(std::vector<double> a, std::vector<double> b, unsigned long long seed) {
    if (a.empty() || b.empty()) throw std::invalid_argument("wasserstein1: empty sample");
    if (a.size() != b.size()) {
        std::vector<double>& big = a.size() > b.size() ? a : b;
        const std::size_t m = std::min(a.size(), b.size());
        Rng rng(seed);
        std::shuffle(big.begin(), big.end(), rng);
        big.resize(m);
    }
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) sum += std::abs(a[i] - b[i]);
    return sum / static_cast<double>(a.size());
}

namespace {

std::vector<double> project(const Batch& x, const Eigen::VectorXd& dir) {
    const Eigen::RowVectorXd p = dir.transpose() * x;
    return std::vector<double>(p.data(), p.data() + p.size());
}

}  // namespace

double wasserstein1(const Batch& a, const Batch& b, std::size_t n_projections, unsigned long long seed) {
    if (a.rows() != b.rows()) throw std::invalid_argument("wasserstein1: dimension mismatch");
    const Eigen::Index dim = a.rows();
    if (dim == 1) return wasserstein1(project(a, Eigen::VectorXd::Ones(1)), project(b, Eigen::VectorXd::Ones(1)), seed);
    std::vector<Eigen::VectorXd> dirs;
    for (Eigen::Index i = 0; i < dim; ++i) dirs.push_back(Eigen::VectorXd::Unit(dim, i));
    Rng rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t k = 0; k < n_projections; ++k) {
        Eigen::VectorXd v(dim);
        for (Eigen::Index i = 0; i < dim; ++i) v[i] = normal(rng);
        dirs.push_back(v.normalized());
    }
    double total = 0.0;
    for (const auto& d : dirs) total += wasserstein1(project(a, d), project(b, d), seed);
    return total / static_cast<double>(dirs.size());
}

double w1_to_data(const Batch& samples, const GaussianMixture& mix) {
    if (mix.dim() != 1 || samples.rows() != 1) throw std::invalid_argument("w1_to_data: 1-D samples only");
    std::vector<double> x(samples.data(), samples.data() + samples.size());
    std::sort(x.begin(), x.end());
    const std::vector<double> q = quantile_reference(mix, x.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) sum += std::abs(x[i] - q[i]);
    return sum / static_cast<double>(x.size());
}

ScoreFn student_score(const CtmNetwork& net, const CtmParams& params) {
    return [net, params](const Batch& x, const Eigen::VectorXd& t) -> Batch {
        const Batch g = net.g_forward(params, x, t, t);
        return (g - x) * t.cwiseAbs2().cwiseInverse().asDiagonal();
    };
}

namespace {

struct FieldAndDivergence {
    Batch f;
    Eigen::VectorXd div;
};

// f = -t score(x, t) at every column plus its divergence by central differences.
FieldAndDivergence pf_field(const ScoreFn& score, const Batch& x, double t) {
    const Eigen::Index dim = x.rows();
    const Eigen::Index n = x.cols();
    const Eigen::Index blocks = 1 + 2 * dim;
    Batch stacked(dim, blocks * n);
    Eigen::MatrixXd h(dim, n);
    stacked.leftCols(n) = x;
    for (Eigen::Index i = 0; i < dim; ++i) {
        h.row(i) = 1e-4 * (1.0 + x.row(i).array().abs());
        Batch plus = x, minus = x;
        plus.row(i) += h.row(i);
        minus.row(i) -= h.row(i);
        stacked.middleCols((1 + 2 * i) * n, n) = plus;
        stacked.middleCols((2 + 2 * i) * n, n) = minus;
    }
    const Batch sc = score(stacked, Eigen::VectorXd::Constant(blocks * n, t));
    FieldAndDivergence out;
    out.f = -t * sc.leftCols(n);
    out.div = Eigen::VectorXd::Zero(n);
    for (Eigen::Index i = 0; i < dim; ++i) {
        const Eigen::ArrayXd fp = -t * sc.row(i).segment((1 + 2 * i) * n, n).array();
        const Eigen::ArrayXd fm = -t * sc.row(i).segment((2 + 2 * i) * n, n).array();
        out.div.array() += (fp - fm) / (2.0 * h.row(i).transpose().array());
    }
    if (!out.f.allFinite() || !out.div.allFinite()) {
        throw NumericIncident("nll_pf_ode: non-finite field or divergence at t = " + std::to_string(t), t);
    }
    return out;
}

}  // namespace

Eigen::VectorXd nll_pf_ode(const ScoreFn& score, const Batch& x, double t_min, double t_max, std::size_t n_steps) {
    if (n_steps < 100) throw std::invalid_argument("nll_pf_ode: n_steps must be >= 100");
    if (!(t_min > 0.0 && t_max > t_min)) throw std::invalid_argument("nll_pf_ode: need 0 < t_min < t_max");
    if (x.rows() > 4) throw std::invalid_argument("nll_pf_ode: dimension must be <= 4");
    std::vector<double> ts = rho_subgrid(t_max, t_min, n_steps, 7.0);
    std::reverse(ts.begin(), ts.end());

    Batch y = x;
    Eigen::VectorXd integral = Eigen::VectorXd::Zero(x.cols());
    for (std::size_t k = 0; k + 1 < ts.size(); ++k) {
        const double dt = ts[k + 1] - ts[k];
        const FieldAndDivergence a = pf_field(score, y, ts[k]);
        const Batch y_euler = y + dt * a.f;
        const FieldAndDivergence b = pf_field(score, y_euler, ts[k + 1]);
        y += 0.5 * dt * (a.f + b.f);
        integral += 0.5 * dt * (a.div + b.div);
    }
    const double dim = static_cast<double>(x.rows());
    const Eigen::ArrayXd prior = -0.5 * y.colwise().squaredNorm().transpose().array() / (t_max * t_max) -
                                 0.5 * dim * std::log(2.0 * std::numbers::pi * t_max * t_max);
    return -(prior + integral.array()).matrix();
}

VarianceProbeReport variance_probe(const GFn& g, const GaussianMixture& mix, const std::vector<double>& grid,
                                   double gamma, std::size_t n_chains, Rng& rng, double tolerance_se) {
    if (n_chains < 2) throw std::invalid_argument("variance_probe: variance needs at least two chains");
    if (mix.components() != 1) throw UnsupportedMixtureError("variance_probe: bounds need a single Gaussian");
    SamplerSpec spec;
    spec.gamma = gamma;
    spec.grid = grid;
    spec.record_trace = true;
    const Batch x_t = mix.sample_marginal(grid.front(), n_chains, rng);
    const SampleResult run = gamma_sample(g, spec, x_t, rng);

    auto variance = [](const Batch& x) {
        const Eigen::ArrayXd row = x.row(0).transpose().array();
        return (row - row.mean()).square().sum() / static_cast<double>(row.size() - 1);
    };
    const double v0 = mix.stds()[0] * mix.stds()[0];
    const double se_factor = std::sqrt(2.0 / static_cast<double>(n_chains - 1));
    const double keep = std::sqrt(1.0 - gamma * gamma);

    VarianceProbeReport report;
    report.gamma = gamma;
    report.lipschitz = mix.single_component_lipschitz();
    double prev = variance(run.trace.states[0]);
    for (std::size_t n = 0; n + 1 < grid.size(); ++n) {
        VarianceStep st;
        st.step = n + 1;
        st.t = grid[n + 1];
        st.variance = variance(run.trace.states[n + 1]);
        st.expected = v0 + st.t * st.t;
        st.stderr_ = st.expected * se_factor;
        const double zeta = std::exp(2.0 * report.lipschitz * (grid[n] - keep * st.t));
        const double noise = gamma * gamma * st.t * st.t;
        st.lower = prev / zeta + noise;
        st.upper = zeta * prev + noise;
        const double slack = tolerance_se * st.stderr_;
        st.within_bounds = st.variance >= st.lower - slack && st.variance <= st.upper + slack;
        st.matches_expected = std::abs(st.variance - st.expected) <= slack;
        report.bounds_ok = report.bounds_ok && st.within_bounds;
        report.invariance_ok = report.invariance_ok && st.matches_expected;
        report.steps.push_back(st);
        prev = st.variance;
    }
    return report;
}

SmoothField SmoothField::random(std::size_t n_terms, unsigned long long seed) {
    if (n_terms == 0) throw std::invalid_argument("smooth field needs at least one term");
    Rng rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> uniform(0.0, 2.0 * std::numbers::pi);
    SmoothField f;
    const auto k = static_cast<Eigen::Index>(n_terms);
    f.amplitude.resize(k);
    f.frequency.resize(k);
    f.phase.resize(k);
    for (Eigen::Index i = 0; i < k; ++i) {
        f.frequency[i] = normal(rng);
        f.phase[i] = uniform(rng);
        f.amplitude[i] = normal(rng);
    }
    f.amplitude /= std::sqrt(f.amplitude.squaredNorm() / 2.0);
    return f;
}

Batch SmoothField::operator()(const Batch& x) const {
    Batch out = Batch::Zero(x.rows(), x.cols());
    for (Eigen::Index k = 0; k < amplitude.size(); ++k) {
        out.array() += amplitude[k] * (frequency[k] * x.array() + phase[k]).sin();
    }
    return out;
}

GFn perturbed_g(GFn base, SmoothField field, double eps) {
    return [base = std::move(base), field = std::move(field), eps](const Batch& x, double t, double s) -> Batch {
        if (s == t) return x;
        return base(x, t, s) + (eps * (1.0 - s / t)) * field(x);
    };
}

namespace {

// n stratified standard-normal draws in random order.
Eigen::RowVectorXd latin_normal(std::size_t n, Rng& rng) {
    static const boost::math::normal_distribution<double> unit;
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Eigen::RowVectorXd z(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
        double p = (static_cast<double>(perm[i]) + u(rng)) / static_cast<double>(n);
        p = std::clamp(p, 1e-300, 1.0 - 1e-16);
        z[static_cast<Eigen::Index>(i)] = boost::math::quantile(unit, p);
    }
    return z;
}

Eigen::RowVectorXd plain_normal(std::size_t n, Rng& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::RowVectorXd z(static_cast<Eigen::Index>(n));
    for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = normal(rng);
    return z;
}

double mean_of(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); }

double stderr_of(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean_of(v);
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
}

}  // namespace

GFactory perturbed_family(GFn base, std::size_t n_terms, unsigned long long field_seed, double eps) {
    return [base = std::move(base), n_terms, field_seed, eps](std::size_t r) {
        return perturbed_g(base, SmoothField::random(n_terms, field_seed + r), eps);
    };
}

AccumulationTable accumulation_study(const GFn& g, const GaussianMixture& mix, const ScheduleConfig& schedule,
                                     const std::vector<double>& gammas, const std::vector<std::size_t>& nfes,
                                     std::size_t n_samples, unsigned long long seed,
                                     const AccumulationOptions& opts) {
    return accumulation_study([g](std::size_t) { return g; }, mix, schedule, gammas, nfes, n_samples, seed, opts);
}

AccumulationTable accumulation_study(const GFactory& model, const GaussianMixture& mix,
                                     const ScheduleConfig& schedule, const std::vector<double>& gammas,
                                     const std::vector<std::size_t>& nfes, std::size_t n_samples,
                                     unsigned long long seed, const AccumulationOptions& opts) {
    if (mix.dim() != 1) throw std::invalid_argument("accumulation_study: 1-D mixtures only");
    if (opts.replicates < 2) throw std::invalid_argument("accumulation_study: need >= 2 replicates for errors");
    if (n_samples < 2) throw std::invalid_argument("accumulation_study: need >= 2 samples");
    const std::vector<double> reference = quantile_reference(mix, n_samples);
    auto draw = [&](Rng& rng) { return opts.latin_hypercube ? latin_normal(n_samples, rng) : plain_normal(n_samples, rng); };

    AccumulationTable table;
    for (std::size_t nfe : nfes) {
        const std::vector<double> grid = sampling_grid(schedule, nfe);
        std::vector<std::vector<double>> w(gammas.size());
        for (std::size_t r = 0; r < opts.replicates; ++r) {
            std::seed_seq seq{seed, static_cast<unsigned long long>(nfe), static_cast<unsigned long long>(r)};
            Rng rng(seq);
            const GFn g = model(r);
            const Eigen::RowVectorXd prior = grid[0] * draw(rng);
            std::vector<Eigen::RowVectorXd> noise;
            for (std::size_t n = 0; n + 2 < grid.size(); ++n) noise.push_back(draw(rng));
            for (std::size_t gi = 0; gi < gammas.size(); ++gi) {
                const double gamma = gammas[gi];
                const double keep = std::sqrt(1.0 - gamma * gamma);
                Batch x = prior;
                for (std::size_t n = 0; n + 1 < grid.size(); ++n) {
                    x = g(x, grid[n], keep * grid[n + 1]);
                    if (n + 2 < grid.size()) x += (gamma * grid[n + 1]) * noise[n];
                }
                std::vector<double> sorted(x.data(), x.data() + x.size());
                std::sort(sorted.begin(), sorted.end());
                double sum = 0.0;
                for (std::size_t i = 0; i < n_samples; ++i) sum += std::abs(sorted[i] - reference[i]);
                w[gi].push_back(sum / static_cast<double>(n_samples));
            }
        }
        AccumulationVerdict verdict;
        verdict.nfe = nfe;
        for (std::size_t gi = 0; gi < gammas.size(); ++gi) {
            table.rows.push_back({gammas[gi], nfe, mean_of(w[gi]), stderr_of(w[gi])});
            if (gi == 0) continue;
            std::vector<double> diff(opts.replicates);
            for (std::size_t r = 0; r < opts.replicates; ++r) diff[r] = w[gi][r] - w[gi - 1][r];
            const double gap = mean_of(diff);
            const double se = stderr_of(diff);
            verdict.gaps.push_back(gap);
            verdict.gap_stderr.push_back(se);
            verdict.increasing = verdict.increasing && gap > 0.0 && gap > opts.margin_se * se;
        }
        table.verdicts.push_back(verdict);
    }
    return table;
}

EvalReport evaluate_samples(const Batch& samples, const GaussianMixture& mix, std::size_t nfe) {
    if (samples.rows() != mix.dim()) throw std::invalid_argument("evaluate_samples: dimension mismatch");
    if (samples.cols() < 2) throw std::invalid_argument("evaluate_samples: need >= 2 samples");
    EvalReport r;
    r.nfe = nfe;
    r.n_samples = static_cast<std::size_t>(samples.cols());
    if (mix.dim() == 1) {
        r.w1 = w1_to_data(samples, mix);
    } else {
        Rng rng(kW1ResampleSeed);
        r.w1 = wasserstein1(samples, mix.sample_marginal(0.0, r.n_samples, rng));
    }
    const Eigen::VectorXd mean = samples.rowwise().mean();
    r.mean_error = mean - mix.marginal_mean();
    r.variance_error.resize(mix.dim());
    const Batch centered = samples.colwise() - mean;
    for (int c = 0; c < mix.dim(); ++c) {
        const double var = centered.row(c).squaredNorm() / static_cast<double>(samples.cols() - 1);
        r.variance_error[c] = var - mix.marginal_variance(c, 0.0);
    }
    if (!std::isfinite(r.w1) || !r.mean_error.allFinite() || !r.variance_error.allFinite()) {
        throw NumericIncident("evaluate_samples: non-finite metric", 0.0);
    }
    return r;
}

double denoiser_sup_error(const DenoiserFn& den, const GaussianMixture& mix, const std::vector<double>& ts,
                          const std::vector<double>& xs) {
    const Eigen::Index nx = static_cast<Eigen::Index>(xs.size());
    Batch x(1, nx * static_cast<Eigen::Index>(ts.size()));
    Eigen::VectorXd t(x.cols());
    for (std::size_t i = 0; i < ts.size(); ++i) {
        for (Eigen::Index j = 0; j < nx; ++j) {
            x(0, static_cast<Eigen::Index>(i) * nx + j) = xs[static_cast<std::size_t>(j)];
            t[static_cast<Eigen::Index>(i) * nx + j] = ts[i];
        }
    }
    return (den(x, t) - mix.denoise_batch(x, t)).cwiseAbs().maxCoeff();
}

}  // namespace ctm
