#include "ctm/solvers.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace ctm {

DenoiserFn oracle_denoiser(const GaussianMixture& mix) {
    return [mix](const Batch& x, const Eigen::VectorXd& t) { return mix.denoise_batch(x, t); };
}

ScoreFn oracle_score(const GaussianMixture& mix) {
    return [mix](const Batch& x, const Eigen::VectorXd& t) {
        Batch out(x.rows(), x.cols());
        for (Eigen::Index j = 0; j < x.cols(); ++j) out.col(j) = mix.score_t(x.col(j), t[j]);
        return out;
    };
}

SolverMethod parse_solver_method(const std::string& name) {
    if (name == "euler") return SolverMethod::euler;
    if (name == "heun") return SolverMethod::heun;
    throw std::invalid_argument("unknown solver method '" + name + "' (expected euler|heun)");
}

Batch solver_step(SolverMethod method, const DenoiserFn& den, const Batch& x, const Eigen::VectorXd& t,
                  const Eigen::VectorXd& s, std::size_t* nfe) {
    const Eigen::Index n = x.cols();
    for (Eigen::Index j = 0; j < n; ++j) {
        if (!(t[j] > 0.0 && s[j] >= 0.0 && s[j] <= t[j])) throw std::domain_error("solver_step: requires 0 <= s <= t, t > 0");
        if (method == SolverMethod::heun && s[j] == 0.0 && t[j] != 0.0) {
            throw std::domain_error("solver_step: Heun is undefined at s = 0; use an Euler step");
        }
    }
    const Batch d_t = den(x, t);
    if (nfe) ++*nfe;
    Batch euler(x.rows(), n);
    for (Eigen::Index j = 0; j < n; ++j) {
        if (s[j] == t[j]) {
            euler.col(j) = x.col(j);
            continue;
        }
        const double ratio = s[j] / t[j];
        euler.col(j) = ratio * x.col(j) + (1.0 - ratio) * d_t.col(j);
    }
    if (method == SolverMethod::euler) return euler;

    // The second evaluation at s uses s itself; columns with s == t keep x and
    // their (discarded) evaluation point is moved to t to stay in-domain.
    const Batch d_s = den(euler, s);
    if (nfe) ++*nfe;
    Batch out(x.rows(), n);
    for (Eigen::Index j = 0; j < n; ++j) {
        if (s[j] == t[j]) {
            out.col(j) = x.col(j);
            continue;
        }
        const double h = t[j] - s[j];
        out.col(j) = x.col(j) - 0.5 * h * ((x.col(j) - d_t.col(j)) / t[j] + (euler.col(j) - d_s.col(j)) / s[j]);
    }
    return out;
}

Point solver_step(SolverMethod method, const DenoiserFn& den, const Point& x, double t, double s) {
    const Batch out = solver_step(method, den, Batch(x), Eigen::VectorXd::Constant(1, t), Eigen::VectorXd::Constant(1, s));
    return out.col(0);
}

namespace {

void check_finite(const Batch& x, double t, SolveTrace& trace) {
    if (!x.allFinite()) {
        std::ostringstream msg;
        msg << "ODE integration produced a non-finite state at t = " << t;
        throw IntegrationError(msg.str(), std::move(trace));
    }
}

}  // namespace

SolveResult solve_ode(SolverMethod method, const DenoiserFn& den, const Batch& x, double t, double s,
                      std::size_t n_steps, double rho, bool record_trace) {
    if (!(t > s && s >= 0.0)) throw std::domain_error("solve_ode: requires t > s >= 0");
    if (n_steps < 1) throw std::invalid_argument("solve_ode: n_steps must be >= 1");
    const std::vector<double> times = rho_subgrid(t, s, n_steps, rho);
    SolveResult result{x, {}};
    if (record_trace) {
        result.trace.times.push_back(t);
        result.trace.states.push_back(x);
    }
    const Eigen::Index n = x.cols();
    for (std::size_t i = 0; i + 1 < times.size(); ++i) {
        const double from = times[i];
        const double to = times[i + 1];
        const SolverMethod step_method = (to == 0.0) ? SolverMethod::euler : method;
        std::size_t calls = 0;
        result.x = solver_step(step_method, den, result.x, Eigen::VectorXd::Constant(n, from),
                               Eigen::VectorXd::Constant(n, to), &calls);
        result.trace.step_count += calls;
        if (record_trace) {
            result.trace.times.push_back(to);
            result.trace.states.push_back(result.x);
        }
        check_finite(result.x, to, result.trace);
    }
    return result;
}

Batch solve_on_grid(SolverMethod method, const DenoiserFn& den, const Batch& x, const std::vector<double>& grid,
                    const std::vector<std::size_t>& from, const std::vector<std::size_t>& to) {
    const Eigen::Index n = x.cols();
    if (static_cast<Eigen::Index>(from.size()) != n || static_cast<Eigen::Index>(to.size()) != n) {
        throw std::invalid_argument("solve_on_grid: index vectors must match the batch size");
    }
    std::size_t max_steps = 0;
    for (Eigen::Index j = 0; j < n; ++j) {
        if (to[j] < from[j] || to[j] >= grid.size()) throw std::invalid_argument("solve_on_grid: bad grid indices");
        max_steps = std::max(max_steps, to[j] - from[j]);
    }
    Batch cur = x;
    // Only columns still travelling are stepped. Heun is undefined when landing on 0,
    // so those columns take an Euler step.
    auto step_subset = [&](const std::vector<Eigen::Index>& cols, SolverMethod m, std::size_t k) {
        if (cols.empty()) return;
        const auto c = static_cast<Eigen::Index>(cols.size());
        Batch xs(cur.rows(), c);
        Eigen::VectorXd ts(c), ss(c);
        for (Eigen::Index i = 0; i < c; ++i) {
            const auto j = cols[static_cast<std::size_t>(i)];
            xs.col(i) = cur.col(j);
            ts[i] = grid[from[j] + k];
            ss[i] = grid[from[j] + k + 1];
        }
        const Batch ys = solver_step(m, den, xs, ts, ss);
        for (Eigen::Index i = 0; i < c; ++i) cur.col(cols[static_cast<std::size_t>(i)]) = ys.col(i);
    };
    for (std::size_t k = 0; k < max_steps; ++k) {
        std::vector<Eigen::Index> to_zero, other;
        for (Eigen::Index j = 0; j < n; ++j) {
            if (from[j] + k >= to[j]) continue;
            const bool lands_on_zero = grid[from[j] + k + 1] == 0.0;
            (lands_on_zero && method == SolverMethod::heun ? to_zero : other).push_back(j);
        }
        step_subset(to_zero, SolverMethod::euler, k);
        step_subset(other, method, k);
    }
    return cur;
}

Batch reference_solution(const DenoiserFn& den, const Batch& x, double t, double s, const ReferenceOptions& opts) {
    if (s == t) return x;
    const std::size_t steps = std::max(opts.min_steps, opts.steps == 0 ? std::size_t{4096} : opts.steps);
    return solve_ode(SolverMethod::heun, den, x, t, s, steps, opts.rho).x;
}

Batch sde_euler_maruyama_step(const ScoreFn& score, const Batch& x, double t, double dt, Rng& rng) {
    if (!(t > 0.0 && dt > 0.0 && dt <= t)) throw std::domain_error("sde step: requires t >= dt > 0");
    std::normal_distribution<double> normal(0.0, 1.0);
    const Batch drift = score(x, Eigen::VectorXd::Constant(x.cols(), t));
    Batch out = x + 2.0 * t * dt * drift;
    const double noise_sd = std::sqrt(2.0 * t * dt);
    for (Eigen::Index j = 0; j < out.cols(); ++j) {
        for (Eigen::Index d = 0; d < out.rows(); ++d) out(d, j) += noise_sd * normal(rng);
    }
    return out;
}

std::function<Batch(const Batch&, double, double, std::size_t)> solver_integrator(SolverMethod method,
                                                                                  const DenoiserFn& den, double rho) {
    return [method, den, rho](const Batch& x, double t, double s, std::size_t steps) {
        return solve_ode(method, den, x, t, s, steps, rho).x;
    };
}

OrderProbeReport convergence_order_probe(const std::function<Batch(const Batch&, double, double, std::size_t)>& method,
                                         const ExactMapFn& exact, const Batch& x, double t, double s,
                                         const std::vector<std::size_t>& step_counts) {
    OrderProbeReport report;
    report.step_counts = step_counts;
    if (step_counts.size() < 2) {
        report.diagnostics = "need at least two step counts";
        return report;
    }
    const Batch truth = exact(x, t, s);
    const double scale = std::max(1.0, truth.cwiseAbs().maxCoeff());
    for (std::size_t n : step_counts) {
        const Batch approx = method ? method(x, t, s, n) : exact(x, t, s);
        report.errors.push_back((approx - truth).cwiseAbs().maxCoeff());
    }
    const double noise = 1e3 * std::numeric_limits<double>::epsilon() * scale;
    if (*std::max_element(report.errors.begin(), report.errors.end()) <= noise) {
        report.saturated = true;
        report.diagnostics = "errors at machine precision; order undefined";
        return report;
    }
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    std::size_t m = 0;
    for (std::size_t i = 0; i < step_counts.size(); ++i) {
        if (report.errors[i] <= noise) continue;
        const double lx = std::log(static_cast<double>(step_counts[i]));
        const double ly = std::log(report.errors[i]);
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
        ++m;
    }
    const double denom = static_cast<double>(m) * sxx - sx * sx;
    if (m < 2 || std::abs(denom) < 1e-12) {
        report.diagnostics = "degenerate fit: fewer than two usable error points";
        return report;
    }
    report.order = -(static_cast<double>(m) * sxy - sx * sy) / denom;
    std::ostringstream msg;
    msg << "fitted on " << m << " points";
    report.diagnostics = msg.str();
    return report;
}

}  // namespace ctm
