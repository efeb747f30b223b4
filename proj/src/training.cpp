#include "ctm/training.hpp"

#include <cmath>
#include <stdexcept>

namespace ctm {

TeacherMode parse_teacher_mode(const std::string& name) {
    if (name == "oracle") return TeacherMode::oracle;
    if (name == "pretrained_free") return TeacherMode::pretrained_free;
    throw std::invalid_argument("unknown teacher mode '" + name + "' (expected oracle|pretrained_free)");
}

std::string to_string(TeacherMode mode) { return mode == TeacherMode::oracle ? "oracle" : "pretrained_free"; }

void TrainConfig::validate() const {
    if (!(lambda_dsm >= 0.0)) throw std::invalid_argument("training.lambda_dsm must be >= 0");
    if (!(lambda_gan >= 0.0)) throw std::invalid_argument("training.lambda_gan must be >= 0");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("training.learning_rate must be > 0");
    if (!(disc_learning_rate > 0.0)) throw std::invalid_argument("training.disc_learning_rate must be > 0");
    if (batch_size < 1) throw std::invalid_argument("training.batch_size must be >= 1");
    if (!(ema_decay > 0.0 && ema_decay < 1.0)) throw std::invalid_argument("training.ema_decay must lie in (0, 1)");
    if (max_ode_steps < 1) throw std::invalid_argument("training.max_ode_steps must be >= 1");
    if (disc_width < 1 || disc_depth < 1) throw std::invalid_argument("training.disc_width/disc_depth must be >= 1");
}

void AdamState::step(Eigen::VectorXd& params, const Eigen::VectorXd& grad, double lr) {
    constexpr double beta1 = 0.9;
    constexpr double beta2 = 0.999;
    constexpr double eps = 1e-8;
    ++steps;
    m = beta1 * m + (1.0 - beta1) * grad;
    v = beta2 * v + (1.0 - beta2) * grad.cwiseAbs2();
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(steps));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(steps));
    params.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
}

Eigen::VectorXd Discriminator::init_params(Rng& rng) const {
    Eigen::VectorXd eta = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(mlp_.parameter_count()));
    mlp_.initialize(eta, rng, /*zero_head=*/false);
    return eta;
}

Eigen::MatrixXd Discriminator::logits(const Eigen::VectorXd& eta, const Batch& x, Mlp::Cache* cache) const {
    return mlp_.forward(eta, x, cache);
}

namespace {

// Time pairs for a map G(., from, to) where from == to is allowed to be 0. Such
// columns are moved to (1, 1), where the parametrization is the exact identity.
std::pair<Eigen::VectorXd, Eigen::VectorXd> identity_safe(const Eigen::VectorXd& from, const Eigen::VectorXd& to) {
    Eigen::VectorXd a = from, b = to;
    for (Eigen::Index j = 0; j < a.size(); ++j) {
        if (a[j] == b[j]) a[j] = b[j] = 1.0;
    }
    return {a, b};
}

}  // namespace

EstimateForward forward_estimate(const CtmNetwork& net, const CtmParams& theta, const CtmParams& frozen,
                                 const Batch& x_t, const Eigen::VectorXd& t, const Eigen::VectorXd& s) {
    EstimateForward fwd;
    fwd.inner = net.big_g_forward(theta, x_t, t, s, &fwd.inner_cache);
    const auto [from, to] = identity_safe(s, Eigen::VectorXd::Zero(s.size()));
    fwd.x_est = net.big_g_forward(frozen, fwd.inner, from, to, &fwd.outer_cache);
    return fwd;
}

void backward_estimate(const CtmNetwork& net, const CtmParams& theta, const CtmParams& frozen,
                       const EstimateForward& fwd, const Batch& d_x_est, Eigen::VectorXd& grad_theta) {
    const Batch d_inner = net.big_g_backward(frozen, fwd.outer_cache, d_x_est, nullptr);
    net.big_g_backward(theta, fwd.inner_cache, d_inner, &grad_theta);
}

namespace {

void triplet_times(const TimeGrid& grid, const std::vector<TrainingTriplet>& triplets, Eigen::VectorXd& t,
                   Eigen::VectorXd& s, Eigen::VectorXd& u) {
    const auto n = static_cast<Eigen::Index>(triplets.size());
    t.resize(n);
    s.resize(n);
    u.resize(n);
    for (Eigen::Index j = 0; j < n; ++j) {
        const TrainingTriplet& tr = triplets[static_cast<std::size_t>(j)];
        if (!(tr.t_index < tr.u_index && tr.u_index <= tr.s_index && tr.s_index < grid.size())) {
            throw std::invalid_argument("training triplet must satisfy s <= u < t on the grid");
        }
        t[j] = grid[tr.t_index];
        s[j] = grid[tr.s_index];
        u[j] = grid[tr.u_index];
    }
}

}  // namespace

Batch ctm_target(const CtmNetwork& net, const CtmParams& frozen, const DenoiserFn& teacher, SolverMethod solver,
                 const TimeGrid& grid, const Batch& x_t, const std::vector<TrainingTriplet>& triplets) {
    Eigen::VectorXd t, s, u;
    triplet_times(grid, triplets, t, s, u);
    std::vector<std::size_t> from(triplets.size()), to(triplets.size());
    for (std::size_t j = 0; j < triplets.size(); ++j) {
        from[j] = triplets[j].t_index;
        to[j] = triplets[j].u_index;
    }
    const Batch x_u = solve_on_grid(solver, teacher, x_t, grid.times, from, to);
    const auto [u_from, u_to] = identity_safe(u, s);
    const Batch x_s = net.big_g_forward(frozen, x_u, u_from, u_to);
    const auto [s_from, s_to] = identity_safe(s, Eigen::VectorXd::Zero(s.size()));
    return net.big_g_forward(frozen, x_s, s_from, s_to);
}

Batch pretrained_free_target(const CtmNetwork& net, const CtmParams& frozen, SolverMethod solver,
                             const TimeGrid& grid, const Batch& x_t, const std::vector<TrainingTriplet>& triplets) {
    return ctm_target(net, frozen, net.denoiser(frozen), solver, grid, x_t, triplets);
}

CtmLossResult ctm_loss(const CtmNetwork& net, const CtmParams& theta, const CtmParams& frozen,
                       const DenoiserFn& teacher, SolverMethod solver, const TimeGrid& grid, const Batch& x_t,
                       const std::vector<TrainingTriplet>& triplets) {
    Eigen::VectorXd t, s, u;
    triplet_times(grid, triplets, t, s, u);
    CtmLossResult out;
    out.x_target = ctm_target(net, frozen, teacher, solver, grid, x_t, triplets);
    out.estimate = forward_estimate(net, theta, frozen, x_t, t, s);
    const Batch diff = out.estimate.x_est - out.x_target;
    const double n = static_cast<double>(x_t.cols());
    out.loss = diff.squaredNorm() / n;
    out.d_x_est = (2.0 / n) * diff;
    return out;
}

double dsm_loss(const CtmNetwork& net, const CtmParams& theta, const Batch& x0, const Eigen::VectorXd& t,
                const Batch& noise, Eigen::VectorXd* grad, double weight) {
    const Batch x_t = x0 + noise * t.asDiagonal();
    CtmNetwork::Cache cache;
    const Batch g = net.g_forward(theta, x_t, t, t, grad ? &cache : nullptr);
    const Batch diff = g - x0;
    const double n = static_cast<double>(x0.cols());
    if (grad && weight != 0.0) net.g_backward(theta, cache, (2.0 * weight / n) * diff, grad);
    return diff.squaredNorm() / n;
}

namespace {

constexpr double kLogClamp = -16.11809565095832;  // log(1e-7)

// softplus(z) = log(1 + e^z), computed without overflow.
double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }
double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace

GanResult gan_losses(const Discriminator& disc, const Eigen::VectorXd& eta, const Batch& real, const Batch& generated,
                     bool want_gradients) {
    GanResult out;
    Mlp::Cache real_cache, fake_cache;
    const Eigen::MatrixXd z_real = disc.logits(eta, real, want_gradients ? &real_cache : nullptr);
    const Eigen::MatrixXd z_fake = disc.logits(eta, generated, want_gradients ? &fake_cache : nullptr);
    const double n_real = static_cast<double>(real.cols());
    const double n_fake = static_cast<double>(generated.cols());

    Eigen::MatrixXd d_real(1, real.cols()), d_fake(1, generated.cols());
    double real_term = 0.0, fake_term = 0.0;
    for (Eigen::Index j = 0; j < real.cols(); ++j) {
        const double z = z_real(0, j);
        const double log_d = -softplus(-z);
        const bool clamped = log_d < kLogClamp;
        real_term += clamped ? kLogClamp : log_d;
        d_real(0, j) = clamped ? 0.0 : (1.0 - sigmoid(z)) / n_real;
    }
    for (Eigen::Index j = 0; j < generated.cols(); ++j) {
        const double z = z_fake(0, j);
        const double log_1md = -softplus(z);
        const bool clamped = log_1md < kLogClamp;
        fake_term += clamped ? kLogClamp : log_1md;
        d_fake(0, j) = clamped ? 0.0 : -sigmoid(z) / n_fake;
    }
    out.generator = fake_term / n_fake;
    out.discriminator = real_term / n_real + out.generator;
    if (want_gradients) {
        out.grad_eta = Eigen::VectorXd::Zero(eta.size());
        disc.mlp().backward(eta, real_cache, d_real, &out.grad_eta);
        out.d_generated = disc.mlp().backward(eta, fake_cache, d_fake, &out.grad_eta);
    }
    return out;
}

namespace {

TimeGrid training_levels(const ScheduleConfig& schedule, bool terminal_zero) {
    TimeGrid grid = build_time_grid(schedule);
    if (terminal_zero) grid.times.push_back(0.0);
    return grid;
}

}  // namespace

Trainer::Trainer(CtmNetwork net, GaussianMixture mix, TrainConfig cfg)
    : net_(std::move(net)),
      mix_(std::move(mix)),
      cfg_(cfg),
      grid_(training_levels(net_.schedule(), cfg.terminal_zero)),
      triplets_(grid_.size(), cfg.max_ode_steps),
      disc_(net_.architecture().dim, cfg.disc_width, cfg.disc_depth) {
    cfg_.validate();
    if (mix_.dim() != net_.architecture().dim) throw std::invalid_argument("mixture and model dimensions differ");
}

TrainState Trainer::init_state(unsigned long long seed) const {
    TrainState state;
    state.rng.seed(seed);
    state.params = net_.init_params(state.rng);
    state.ema.shadow = state.params.values;
    state.ema.decay = cfg_.ema_decay;
    state.disc = disc_.init_params(state.rng);
    state.opt_theta = AdamState(state.params.values.size());
    state.opt_disc = AdamState(state.disc.size());
    return state;
}

TrainBatch Trainer::draw_batch(Rng& rng) const {
    const std::size_t n = cfg_.batch_size;
    const int d = mix_.dim();
    TrainBatch batch;
    batch.x0 = mix_.sample_marginal(0.0, n, rng);
    std::normal_distribution<double> normal(0.0, 1.0);
    batch.noise.resize(d, static_cast<Eigen::Index>(n));
    for (Eigen::Index i = 0; i < batch.noise.size(); ++i) batch.noise.data()[i] = normal(rng);
    batch.triplets.resize(n);
    for (std::size_t j = 0; j < n; ++j) batch.triplets[j] = triplets_.sample(rng);
    batch.dsm_times.resize(static_cast<Eigen::Index>(n));
    for (std::size_t j = 0; j < n; ++j) batch.dsm_times[static_cast<Eigen::Index>(j)] = sample_dsm_time(net_.schedule(), rng);
    batch.dsm_noise.resize(d, static_cast<Eigen::Index>(n));
    for (Eigen::Index i = 0; i < batch.dsm_noise.size(); ++i) batch.dsm_noise.data()[i] = normal(rng);
    return batch;
}

DenoiserFn Trainer::teacher(const TrainState& state) const {
    if (cfg_.teacher == TeacherMode::oracle) return oracle_denoiser(mix_);
    CtmParams frozen{state.ema.shadow, state.params.frequencies};
    return net_.denoiser(frozen);
}

TotalLossResult Trainer::total_loss(const TrainState& state, const TrainBatch& batch) const {
    const CtmParams frozen{state.ema.shadow, state.params.frequencies};
    TotalLossResult out;
    out.grad_theta = Eigen::VectorXd::Zero(state.params.values.size());
    out.grad_eta = Eigen::VectorXd::Zero(state.disc.size());
    LossBreakdown& b = out.breakdown;
    b.lambda_dsm = cfg_.lambda_dsm;
    b.lambda_gan_effective = state.iteration < cfg_.warmup() ? 0.0 : cfg_.lambda_gan;

    Eigen::VectorXd t(batch.x0.cols());
    for (Eigen::Index j = 0; j < t.size(); ++j) t[j] = grid_[batch.triplets[static_cast<std::size_t>(j)].t_index];
    const Batch x_t = batch.x0 + batch.noise * t.asDiagonal();

    CtmLossResult ctm = ctm_loss(net_, state.params, frozen, teacher(state), cfg_.solver, grid_, x_t, batch.triplets);
    b.ctm = ctm.loss;

    b.dsm = dsm_loss(net_, state.params, batch.x0, batch.dsm_times, batch.dsm_noise, &out.grad_theta, cfg_.lambda_dsm);

    const bool gan_active = b.lambda_gan_effective > 0.0;
    GanResult gan = gan_losses(disc_, state.disc, batch.x0, ctm.estimate.x_est, gan_active);
    b.gan_g = gan.generator;
    b.gan_d = gan.discriminator;

    Batch d_x_est = ctm.d_x_est;
    if (gan_active) {
        d_x_est += b.lambda_gan_effective * gan.d_generated;
        out.grad_eta = gan.grad_eta;
    }
    backward_estimate(net_, state.params, frozen, ctm.estimate, d_x_est, out.grad_theta);
    b.total = b.ctm + b.lambda_dsm * b.dsm + b.lambda_gan_effective * b.gan_g;
    return out;
}

LossBreakdown Trainer::train_step(TrainState& state) const {
    const TrainBatch batch = draw_batch(state.rng);
    TotalLossResult result;
    try {
        result = total_loss(state, batch);
    } catch (const NonFiniteError&) {
        ++state.incidents;
        return {};
    }
    if (!std::isfinite(result.breakdown.total) || !result.grad_theta.allFinite() || !result.grad_eta.allFinite()) {
        ++state.incidents;
        return result.breakdown;
    }
    Eigen::VectorXd theta = state.params.values;
    AdamState opt_theta = state.opt_theta;
    opt_theta.step(theta, result.grad_theta, cfg_.learning_rate);
    Eigen::VectorXd eta = state.disc;
    AdamState opt_disc = state.opt_disc;
    if (result.breakdown.lambda_gan_effective > 0.0) {
        // Ascent on L_GAN: descend its negation.
        opt_disc.step(eta, -result.grad_eta, cfg_.disc_learning_rate);
    }
    if (!theta.allFinite() || !eta.allFinite()) {
        ++state.incidents;
        return result.breakdown;
    }
    state.params.values = std::move(theta);
    state.opt_theta = std::move(opt_theta);
    state.disc = std::move(eta);
    state.opt_disc = std::move(opt_disc);
    ema_update(state.ema, state.params.values);
    ++state.iteration;
    return result.breakdown;
}

void run_training(const Trainer& trainer, TrainState& state,
                  const std::function<void(const TrainState&, const LossBreakdown&)>& on_step) {
    std::size_t attempts = 0;
    const std::size_t budget = trainer.config().total_iters;
    while (state.iteration < budget) {
        const std::size_t before = state.iteration;
        const LossBreakdown b = trainer.train_step(state);
        if (state.iteration == before) {
            if (++attempts > 100) throw NonFiniteError("training aborted: repeated non-finite updates", before);
            continue;
        }
        attempts = 0;
        if (on_step) on_step(state, b);
    }
}

}  // namespace ctm
