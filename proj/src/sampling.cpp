#include "ctm/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace ctm {

namespace {

Batch gaussian_batch(int dim, Eigen::Index n, Rng& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Batch z(dim, n);
    for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = normal(rng);
    return z;
}

void record(SampleResult& out, bool on, double t, const Batch& x) {
    if (!on) return;
    out.trace.times.push_back(t);
    out.trace.states.push_back(x);
}

}  // namespace

GFn oracle_g(const GaussianMixture& mix, const ReferenceOptions& opts) {
    if (mix.components() == 1) {
        const Point mu = mix.means()[0];
        const double v0 = mix.stds()[0] * mix.stds()[0];
        return [mu, v0](const Batch& x, double t, double s) -> Batch {
            if (s == t) return x;
            const double ratio = std::sqrt((v0 + s * s) / (v0 + t * t));
            return ((x.colwise() - mu) * ratio).colwise() + mu;
        };
    }
    DenoiserFn den = oracle_denoiser(mix);
    return [den, opts](const Batch& x, double t, double s) -> Batch {
        if (s == t) return x;
        return reference_solution(den, x, t, s, opts);
    };
}

GFn student_g(const CtmNetwork& net, const CtmParams& params) {
    return [net, params](const Batch& x, double t, double s) -> Batch {
        const Eigen::VectorXd tv = Eigen::VectorXd::Constant(x.cols(), t);
        const Eigen::VectorXd sv = Eigen::VectorXd::Constant(x.cols(), s);
        return net.big_g_forward(params, x, tv, sv);
    };
}

SamplerVariant parse_sampler_variant(const std::string& name) {
    if (name == "ctm_gamma") return SamplerVariant::ctm_gamma;
    if (name == "edm_stochastic") return SamplerVariant::edm_stochastic;
    throw std::invalid_argument("unknown sampler variant '" + name + "' (expected ctm_gamma|edm_stochastic)");
}

std::string to_string(SamplerVariant v) { return v == SamplerVariant::ctm_gamma ? "ctm_gamma" : "edm_stochastic"; }

void SamplerSpec::validate() const {
    if (variant == SamplerVariant::ctm_gamma && !(gamma >= 0.0 && gamma <= 1.0)) {
        throw std::invalid_argument("sampler.gamma must lie in [0, 1]");
    }
    if (variant == SamplerVariant::edm_stochastic && !(gamma >= 0.0)) {
        throw std::invalid_argument("sampler.gamma must be >= 0");
    }
    if (grid.size() < 2) throw std::invalid_argument("sampler.grid needs at least two levels");
    if (grid.back() != 0.0) throw std::invalid_argument("sampler.grid must end at 0");
    for (std::size_t i = 1; i < grid.size(); ++i) {
        if (!(grid[i] < grid[i - 1])) throw std::invalid_argument("sampler.grid must be strictly decreasing");
    }
}

Batch prior_sample(double t_max, int dim, std::size_t n, Rng& rng) {
    return t_max * gaussian_batch(dim, static_cast<Eigen::Index>(n), rng);
}

SampleResult gamma_sample(const GFn& g, const SamplerSpec& spec, const Batch& x_t, Rng& rng) {
    spec.validate();
    const double keep = std::sqrt(1.0 - spec.gamma * spec.gamma);
    SampleResult out;
    out.x = x_t;
    record(out, spec.record_trace, spec.grid[0], out.x);
    const std::size_t steps = spec.grid.size() - 1;
    for (std::size_t n = 0; n < steps; ++n) {
        const double t = spec.grid[n];
        const double next = spec.grid[n + 1];
        const double s = keep * next;
        out.x = g(out.x, t, s);
        ++out.nfe;
        if (next > 0.0 && spec.gamma > 0.0) {
            out.x += (spec.gamma * next) * gaussian_batch(static_cast<int>(out.x.rows()), out.x.cols(), rng);
        }
        record(out, spec.record_trace, next, out.x);
    }
    return out;
}

SampleResult edm_stochastic_sample(const DenoiserFn& den, const SamplerSpec& spec, const Batch& x_t, Rng& rng) {
    spec.validate();
    SampleResult out;
    out.x = x_t;
    record(out, spec.record_trace, spec.grid[0], out.x);
    const double t_cap = spec.grid[0];
    const Eigen::Index n = x_t.cols();
    for (std::size_t i = 0; i + 1 < spec.grid.size(); ++i) {
        const double t = spec.grid[i];
        double t_hat = (1.0 + spec.gamma) * t;
        if (t_hat > t_cap) {
            t_hat = t_cap;
            ++out.clamped_steps;
        }
        if (t_hat > t) {
            out.x += std::sqrt(t_hat * t_hat - t * t) * gaussian_batch(static_cast<int>(out.x.rows()), n, rng);
        }
        const double next = spec.grid[i + 1];
        const SolverMethod method = next > 0.0 ? SolverMethod::heun : SolverMethod::euler;
        std::size_t nfe = 0;
        out.x = solver_step(method, den, out.x, Eigen::VectorXd::Constant(n, t_hat), Eigen::VectorXd::Constant(n, next),
                            &nfe);
        out.nfe += nfe;
        record(out, spec.record_trace, next, out.x);
    }
    return out;
}

RejectionResult classifier_rejection_sample(const GFn& g, const SamplerSpec& spec, const PosteriorFn& posterior,
                                            int class_k, double rejection_ratio, std::size_t n_keep, int dim,
                                            Rng& rng) {
    if (!(rejection_ratio >= 0.0 && rejection_ratio < 1.0)) {
        throw std::invalid_argument("rejection ratio must lie in [0, 1)");
    }
    if (n_keep == 0) throw std::invalid_argument("n_keep must be >= 1");
    // Guard the ceiling against representation error in n / (1 - r).
    const double raw = static_cast<double>(n_keep) / (1.0 - rejection_ratio);
    const std::size_t candidates = static_cast<std::size_t>(std::ceil(raw - 1e-9 * raw));

    const Batch x_t = prior_sample(spec.grid[0], dim, candidates, rng);
    const SampleResult sampled = gamma_sample(g, spec, x_t, rng);

    RejectionResult out;
    out.candidates = candidates;
    out.candidate_scores.resize(static_cast<Eigen::Index>(candidates));
    for (std::size_t j = 0; j < candidates; ++j) {
        const Eigen::VectorXd post = posterior(sampled.x.col(static_cast<Eigen::Index>(j)), 0.0);
        if (class_k < 0 || class_k >= post.size()) throw std::invalid_argument("class index out of range");
        out.candidate_scores[static_cast<Eigen::Index>(j)] = post[class_k];
    }
    std::vector<std::size_t> order(candidates);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return out.candidate_scores[static_cast<Eigen::Index>(a)] > out.candidate_scores[static_cast<Eigen::Index>(b)];
    });
    out.kept.resize(dim, static_cast<Eigen::Index>(n_keep));
    out.kept_scores.resize(static_cast<Eigen::Index>(n_keep));
    for (std::size_t j = 0; j < n_keep; ++j) {
        out.kept.col(static_cast<Eigen::Index>(j)) = sampled.x.col(static_cast<Eigen::Index>(order[j]));
        out.kept_scores[static_cast<Eigen::Index>(j)] = out.candidate_scores[static_cast<Eigen::Index>(order[j])];
    }
    out.average_nfe = static_cast<double>(sampled.nfe * candidates) / static_cast<double>(n_keep);
    return out;
}

LossGradFn squared_distance_grad() {
    return [](const Batch& x, const Batch& target) -> Batch { return 2.0 * (x - target); };
}

SampleResult guided_trajectory_sample(const GFn& g, const ScoreFn& score, const SamplerSpec& spec, const Batch& x_t,
                                      const Batch& x_ref, const LossGradFn& loss_grad, const GuidanceOptions& opts,
                                      Rng& rng) {
    spec.validate();
    if (!(opts.step_size >= 0.0)) throw std::invalid_argument("guidance step size must be >= 0");
    if (x_ref.rows() != x_t.rows() || (x_ref.cols() != x_t.cols() && x_ref.cols() != 1)) {
        throw std::invalid_argument("reference must match the batch or be a single point");
    }
    const Eigen::Index n = x_t.cols();
    const int dim = static_cast<int>(x_t.rows());
    const Batch ref = x_ref.cols() == n ? x_ref : Batch(x_ref.replicate(1, n));
    const double keep = std::sqrt(1.0 - spec.gamma * spec.gamma);

    SampleResult out;
    out.x = x_t;
    record(out, spec.record_trace, spec.grid[0], out.x);
    for (std::size_t i = 0; i + 1 < spec.grid.size(); ++i) {
        const double t = spec.grid[i];
        const double next = spec.grid[i + 1];
        const double t_tilde = keep * next;
        out.x = g(out.x, t, t_tilde);
        ++out.nfe;
        if (t_tilde > 0.0 && opts.step_size > 0.0) {
            const Eigen::VectorXd tv = Eigen::VectorXd::Constant(n, t_tilde);
            for (std::size_t m = 0; m < opts.corrector_steps; ++m) {
                const Batch noisy_ref = ref + t_tilde * gaussian_batch(dim, n, rng);
                Batch drift = score(out.x, tv);
                ++out.nfe;
                if (loss_grad) drift -= opts.guidance_scale * loss_grad(out.x, noisy_ref);
                out.x += 0.5 * opts.step_size * drift;
                if (opts.corrector_noise) out.x += std::sqrt(opts.step_size) * gaussian_batch(dim, n, rng);
            }
        }
        if (next > 0.0 && spec.gamma > 0.0) out.x += (spec.gamma * next) * gaussian_batch(dim, n, rng);
        record(out, spec.record_trace, next, out.x);
    }
    return out;
}

}  // namespace ctm
