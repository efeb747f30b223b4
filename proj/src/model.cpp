#include "ctm/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

#include "json.hpp"

namespace ctm {

void CtmArchitecture::validate() const {
    if (dim < 1) throw std::invalid_argument("model.dim must be >= 1");
    if (width < 1) throw std::invalid_argument("model.width must be >= 1");
    if (depth < 1) throw std::invalid_argument("model.depth must be >= 1");
    if (n_frequencies < 1) throw std::invalid_argument("model.n_frequencies must be >= 1");
}

CtmNetwork::CtmNetwork(CtmArchitecture arch, ScheduleConfig schedule)
    : arch_(arch), schedule_(schedule) {
    arch_.validate();
    schedule_.validate();
    mlp_ = Mlp(arch_.dim + 4 * arch_.n_frequencies, arch_.dim, arch_.width, arch_.depth);
    log_norm_ = std::log1p(schedule_.sigma_max / schedule_.sigma_min);
}

CtmParams CtmNetwork::init_params(Rng& rng) const {
    CtmParams p;
    p.values = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(mlp_.parameter_count()));
    mlp_.initialize(p.values, rng, /*zero_head=*/true);
    // Geometric frequencies from 1/4 to 4 cycles over the unit log-time range. The top
    // period stays well above the grid spacing so off-grid times interpolate smoothly.
    const int f = arch_.n_frequencies;
    p.frequencies.resize(f);
    for (int k = 0; k < f; ++k) p.frequencies[k] = 0.25 * std::pow(16.0, f > 1 ? static_cast<double>(k) / (f - 1) : 0.0);
    return p;
}

void CtmNetwork::check_params(const CtmParams& params) const {
    if (params.count() != mlp_.parameter_count() || params.frequencies.size() != arch_.n_frequencies) {
        throw std::invalid_argument("ctm network: parameter shape does not match architecture");
    }
}

Eigen::VectorXd CtmNetwork::time_features(const CtmParams& params, double t) const {
    const int f = arch_.n_frequencies;
    const double tau = std::log1p(t / schedule_.sigma_min) / log_norm_;
    Eigen::VectorXd out(2 * f);
    for (int k = 0; k < f; ++k) {
        const double phase = 2.0 * std::numbers::pi * params.frequencies[k] * tau;
        out[k] = std::sin(phase);
        out[f + k] = std::cos(phase);
    }
    return out;
}

Eigen::VectorXd CtmNetwork::embed_times(const CtmParams& params, double t, double s) const {
    return time_features(params, t) + time_features(params, s);
}

Eigen::MatrixXd CtmNetwork::build_input(const CtmParams& params, const Batch& x, const Eigen::VectorXd& t,
                                        const Eigen::VectorXd& s, const Eigen::VectorXd& c_in) const {
    const int d = arch_.dim;
    const int f2 = 2 * arch_.n_frequencies;
    Eigen::MatrixXd in(mlp_.in_dim(), x.cols());
    in.topRows(d) = x * c_in.asDiagonal();
    // Columns frequently share (t, s); reuse the features of the previous column.
    Eigen::VectorXd ft, fs;
    double last_t = std::nan(""), last_s = std::nan("");
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
        if (!(t[j] == last_t)) {
            ft = time_features(params, t[j]);
            last_t = t[j];
        }
        if (!(s[j] == last_s)) {
            fs = time_features(params, s[j]);
            last_s = s[j];
        }
        in.block(d, j, f2, 1) = ft;
        in.block(d + f2, j, f2, 1) = ft + fs;
    }
    return in;
}

Batch CtmNetwork::g_forward(const CtmParams& params, const Batch& x, const Eigen::VectorXd& t,
                            const Eigen::VectorXd& s, Cache* cache) const {
    check_params(params);
    if (x.rows() != arch_.dim || t.size() != x.cols() || s.size() != x.cols()) {
        throw std::invalid_argument("ctm network: input shapes do not agree");
    }
    const double sd2 = schedule_.sigma_data * schedule_.sigma_data;
    const Eigen::ArrayXd t2 = t.array().square();
    const Eigen::VectorXd c_in = (t2 + sd2).rsqrt().matrix();
    const Eigen::VectorXd c_skip = (sd2 / (t2 + sd2)).matrix();
    const Eigen::VectorXd c_out = (t.array() * schedule_.sigma_data * (t2 + sd2).rsqrt()).matrix();

    const Eigen::MatrixXd in = build_input(params, x, t, s, c_in);
    Mlp::Cache local;
    const Eigen::MatrixXd nn = mlp_.forward(params.values, in, cache ? &cache->mlp : &local);
    Batch g = x * c_skip.asDiagonal() + nn * c_out.asDiagonal();
    if (!g.allFinite()) throw NonFiniteError("ctm network: non-finite output (check parameters)", 0);
    if (cache) {
        cache->t = t;
        cache->s = s;
        cache->c_in = c_in;
        cache->c_skip = c_skip;
        cache->c_out = c_out;
    }
    return g;
}

Batch CtmNetwork::big_g_forward(const CtmParams& params, const Batch& x, const Eigen::VectorXd& t,
                                const Eigen::VectorXd& s, Cache* cache) const {
    for (Eigen::Index j = 0; j < t.size(); ++j) {
        if (!(t[j] > 0.0 && s[j] >= 0.0 && s[j] <= t[j])) throw std::domain_error("G_theta: requires 0 <= s <= t, t > 0");
    }
    const Batch g = g_forward(params, x, t, s, cache);
    Batch out(x.rows(), x.cols());
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
        const double ratio = s[j] / t[j];
        // s == t gives ratio 1 and a zero g coefficient, so out == x exactly.
        out.col(j) = ratio * x.col(j) + (1.0 - ratio) * g.col(j);
    }
    return out;
}

Batch CtmNetwork::g_backward(const CtmParams& params, const Cache& cache, const Batch& d_g,
                             Eigen::VectorXd* grad) const {
    const Eigen::MatrixXd d_nn = d_g * cache.c_out.asDiagonal();
    const Eigen::MatrixXd d_in = mlp_.backward(params.values, cache.mlp, d_nn, grad);
    return d_g * cache.c_skip.asDiagonal() + d_in.topRows(arch_.dim) * cache.c_in.asDiagonal();
}

Batch CtmNetwork::big_g_backward(const CtmParams& params, const Cache& cache, const Batch& d_big_g,
                                 Eigen::VectorXd* grad) const {
    const Eigen::ArrayXd ratio = cache.s.array() / cache.t.array();
    const Eigen::VectorXd a = ratio.matrix();
    const Eigen::VectorXd b = (1.0 - ratio).matrix();
    const Batch d_g = d_big_g * b.asDiagonal();
    return d_big_g * a.asDiagonal() + g_backward(params, cache, d_g, grad);
}

Point CtmNetwork::g_forward(const CtmParams& params, const Point& x, double t, double s) const {
    return g_forward(params, Batch(x), Eigen::VectorXd::Constant(1, t), Eigen::VectorXd::Constant(1, s)).col(0);
}

Point CtmNetwork::big_g_forward(const CtmParams& params, const Point& x, double t, double s) const {
    return big_g_forward(params, Batch(x), Eigen::VectorXd::Constant(1, t), Eigen::VectorXd::Constant(1, s)).col(0);
}

DenoiserFn CtmNetwork::denoiser(const CtmParams& params) const {
    return [net = *this, params](const Batch& x, const Eigen::VectorXd& t) { return net.g_forward(params, x, t, t); };
}

LossAndGradient loss_gradient(const Eigen::VectorXd& params, const LossClosure& closure) {
    LossAndGradient out;
    out.gradient = Eigen::VectorXd::Zero(params.size());
    out.loss = closure(params, out.gradient);
    if (!std::isfinite(out.loss)) throw NonFiniteError("loss is not finite", 0);
    for (Eigen::Index i = 0; i < out.gradient.size(); ++i) {
        if (!std::isfinite(out.gradient[i])) {
            throw NonFiniteError("non-finite gradient at parameter " + std::to_string(i), static_cast<std::size_t>(i));
        }
    }
    return out;
}

void ema_update(EmaState& ema, const Eigen::VectorXd& params) {
    if (ema.shadow.size() != params.size()) throw std::invalid_argument("ema_update: shape mismatch");
    if (!(ema.decay >= 0.0 && ema.decay <= 1.0)) throw std::invalid_argument("ema_update: decay must lie in [0, 1]");
    if (ema.decay == 0.0) {
        ema.shadow = params;
    } else if (ema.decay != 1.0) {
        ema.shadow = ema.decay * ema.shadow + (1.0 - ema.decay) * params;
    }
}

namespace {

using nlohmann::json;

void write_doubles(std::ostream& os, const Eigen::VectorXd& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        std::uint64_t bits = std::bit_cast<std::uint64_t>(v[i]);
        unsigned char bytes[8];
        for (int b = 0; b < 8; ++b) bytes[b] = static_cast<unsigned char>((bits >> (8 * b)) & 0xffu);
        os.write(reinterpret_cast<const char*>(bytes), 8);
    }
}

Eigen::VectorXd read_doubles(std::istream& is, std::size_t n) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
        unsigned char bytes[8];
        if (!is.read(reinterpret_cast<char*>(bytes), 8)) throw CheckpointError("checkpoint: truncated payload");
        std::uint64_t bits = 0;
        for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(bytes[b]) << (8 * b);
        v[static_cast<Eigen::Index>(i)] = std::bit_cast<double>(bits);
    }
    return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    json header;
    header["format"] = "ctm-checkpoint";
    header["version"] = kCheckpointVersion;
    header["architecture"] = {{"dim", ckpt.architecture.dim},
                              {"width", ckpt.architecture.width},
                              {"depth", ckpt.architecture.depth},
                              {"n_frequencies", ckpt.architecture.n_frequencies}};
    header["schedule"] = {{"sigma_min", ckpt.schedule.sigma_min}, {"sigma_max", ckpt.schedule.sigma_max},
                          {"rho", ckpt.schedule.rho},             {"sigma_data", ckpt.schedule.sigma_data},
                          {"n_grid", ckpt.schedule.n_grid}};
    header["param_count"] = ckpt.params.count();
    header["ema_decay"] = ckpt.ema.decay;
    header["iteration"] = ckpt.iteration;
    header["config_hash"] = ckpt.config_hash;
    header["seed"] = ckpt.seed;
    header["sections"] = {"frequencies", "params", "ema"};

    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw CheckpointError("checkpoint: cannot open '" + path + "' for writing");
    os << header.dump() << '\n';
    write_doubles(os, ckpt.params.frequencies);
    write_doubles(os, ckpt.params.values);
    write_doubles(os, ckpt.ema.shadow);
    if (!os) throw CheckpointError("checkpoint: write failed for '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw CheckpointError("checkpoint: cannot open '" + path + "'");
    std::string line;
    if (!std::getline(is, line)) throw CheckpointError("checkpoint: missing header");
    json header;
    try {
        header = json::parse(line);
    } catch (const json::exception& e) {
        throw CheckpointError(std::string("checkpoint: malformed header: ") + e.what());
    }
    if (header.value("format", "") != "ctm-checkpoint") throw CheckpointError("checkpoint: not a ctm checkpoint");
    if (header.value("version", -1) != kCheckpointVersion) {
        throw CheckpointError("checkpoint: unsupported version " + header["version"].dump());
    }
    Checkpoint ckpt;
    try {
        const json& a = header.at("architecture");
        ckpt.architecture = {a.at("dim").get<int>(), a.at("width").get<int>(), a.at("depth").get<int>(),
                             a.at("n_frequencies").get<int>()};
        const json& s = header.at("schedule");
        ckpt.schedule.sigma_min = s.at("sigma_min").get<double>();
        ckpt.schedule.sigma_max = s.at("sigma_max").get<double>();
        ckpt.schedule.rho = s.at("rho").get<double>();
        ckpt.schedule.sigma_data = s.at("sigma_data").get<double>();
        ckpt.schedule.n_grid = s.at("n_grid").get<std::size_t>();
        ckpt.ema.decay = header.at("ema_decay").get<double>();
        ckpt.iteration = header.at("iteration").get<std::size_t>();
        ckpt.config_hash = header.at("config_hash").get<std::string>();
        ckpt.seed = header.at("seed").get<unsigned long long>();
    } catch (const json::exception& e) {
        throw CheckpointError(std::string("checkpoint: bad header field: ") + e.what());
    }
    const CtmNetwork net(ckpt.architecture, ckpt.schedule);
    const std::size_t count = header.at("param_count").get<std::size_t>();
    if (count != net.parameter_count()) throw CheckpointError("checkpoint: parameter count does not match architecture");
    ckpt.params.frequencies = read_doubles(is, static_cast<std::size_t>(ckpt.architecture.n_frequencies));
    ckpt.params.values = read_doubles(is, count);
    ckpt.ema.shadow = read_doubles(is, count);
    return ckpt;
}

}  // namespace ctm
