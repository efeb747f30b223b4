#include "ctm/config.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace ctm {

using nlohmann::json;

namespace {

// Reads typed fields out of one object block and rejects anything it was not asked for.
class Block {
public:
    Block(const json& doc, std::string path) : doc_(doc), path_(std::move(path)) {
        if (!doc_.is_object()) throw ConfigError(path_ + ": expected an object");
    }

    template <typename T>
    void get(const char* key, T& out) {
        seen_.insert(key);
        auto it = doc_.find(key);
        if (it == doc_.end()) return;
        try {
            out = it->template get<T>();
        } catch (const json::exception&) {
            throw ConfigError(field(key) + ": wrong type");
        }
    }

    void get_count(const char* key, std::size_t& out) {
        seen_.insert(key);
        auto it = doc_.find(key);
        if (it == doc_.end()) return;
        if (!it->is_number_integer() || it->get<long long>() < 0) {
            throw ConfigError(field(key) + ": expected a non-negative integer");
        }
        out = it->get<std::size_t>();
    }

    const json* child(const char* key) {
        seen_.insert(key);
        auto it = doc_.find(key);
        return it == doc_.end() ? nullptr : &*it;
    }

    void finish() const {
        for (auto it = doc_.begin(); it != doc_.end(); ++it) {
            if (!seen_.count(it.key())) throw ConfigError(field(it.key().c_str()) + ": unknown key");
        }
    }

    std::string field(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

private:
    const json& doc_;
    std::string path_;
    std::set<std::string> seen_;
};

template <typename Fn>
void checked(const std::string& block, Fn&& fn) {
    try {
        fn();
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        const std::string what = e.what();
        throw ConfigError(what.rfind(block + ".", 0) == 0 ? what : block + ": " + what);
    }
}

}  // namespace

GaussianMixture MixtureConfig::build() const {
    if (kind == "two_mode") return GaussianMixture::two_mode(std);
    if (kind == "standard_normal") return GaussianMixture::standard_normal(dim);
    if (kind == "custom") {
        std::vector<Point> pts;
        for (const auto& m : means) pts.push_back(Eigen::Map<const Eigen::VectorXd>(m.data(), static_cast<Eigen::Index>(m.size())));
        return GaussianMixture(weights, pts, stds);
    }
    throw ConfigError("mixture.kind: expected two_mode|standard_normal|custom, got '" + kind + "'");
}

void RunConfig::validate() const {
    checked("schedule", [&] { schedule.validate(); });
    checked("mixture", [&] { (void)mixture.build(); });
    checked("model", [&] { model.validate(); });
    checked("training", [&] { training.validate(); });
    if (model.dim != mixture.build().dim()) throw ConfigError("model.dim: does not match the mixture dimension");
    if (sampler.nfe < 1) throw ConfigError("sampler.nfe: must be >= 1");
    if (sampler.n_samples < 1) throw ConfigError("sampler.n_samples: must be >= 1");
    checked("sampler", [&] {
        SamplerSpec spec;
        spec.gamma = sampler.gamma;
        spec.variant = sampler.variant;
        spec.grid = sampling_grid(schedule, sampler.nfe);
        spec.validate();
    });
    if (eval.n_samples < 2) throw ConfigError("eval.n_samples: must be >= 2");
    if (eval.nll_steps < 100) throw ConfigError("eval.nll_steps: must be >= 100");
    if (eval.variance_chains < 2) throw ConfigError("eval.variance_chains: must be >= 2");
    if (eval.accumulation_replicates < 2) throw ConfigError("eval.accumulation_replicates: must be >= 2");
    if (!(eval.perturbation >= 0.0)) throw ConfigError("eval.perturbation: must be >= 0");
    if (eval.field_terms < 1) throw ConfigError("eval.field_terms: must be >= 1");
    if (output_dir.empty()) throw ConfigError("output_dir: must not be empty");
}

RunConfig parse_run_config(const json& doc) {
    RunConfig cfg;
    Block root(doc, "");
    root.get("seed", cfg.seed);
    root.get("output_dir", cfg.output_dir);

    if (const json* j = root.child("schedule")) {
        Block b(*j, "schedule");
        b.get("sigma_min", cfg.schedule.sigma_min);
        b.get("sigma_max", cfg.schedule.sigma_max);
        b.get("rho", cfg.schedule.rho);
        b.get("sigma_data", cfg.schedule.sigma_data);
        b.get_count("n_grid", cfg.schedule.n_grid);
        b.finish();
    }
    if (const json* j = root.child("mixture")) {
        Block b(*j, "mixture");
        b.get("kind", cfg.mixture.kind);
        b.get("std", cfg.mixture.std);
        b.get("dim", cfg.mixture.dim);
        b.get("weights", cfg.mixture.weights);
        b.get("means", cfg.mixture.means);
        b.get("stds", cfg.mixture.stds);
        b.finish();
    }
    if (const json* j = root.child("model")) {
        Block b(*j, "model");
        b.get("dim", cfg.model.dim);
        b.get("width", cfg.model.width);
        b.get("depth", cfg.model.depth);
        b.get("n_frequencies", cfg.model.n_frequencies);
        b.finish();
    } else {
        cfg.model.dim = cfg.mixture.kind == "standard_normal" ? cfg.mixture.dim : cfg.model.dim;
    }
    if (const json* j = root.child("training")) {
        Block b(*j, "training");
        TrainConfig& t = cfg.training;
        b.get("lambda_dsm", t.lambda_dsm);
        b.get("lambda_gan", t.lambda_gan);
        if (j->contains("gan_warmup_iters")) {
            std::size_t w = 0;
            b.get_count("gan_warmup_iters", w);
            t.gan_warmup_iters = w;
        } else {
            (void)b.child("gan_warmup_iters");
        }
        b.get("learning_rate", t.learning_rate);
        b.get("disc_learning_rate", t.disc_learning_rate);
        b.get_count("batch_size", t.batch_size);
        b.get_count("total_iters", t.total_iters);
        std::string teacher = to_string(t.teacher);
        b.get("teacher", teacher);
        checked("training.teacher", [&] { t.teacher = parse_teacher_mode(teacher); });
        b.get("ema_decay", t.ema_decay);
        b.get_count("max_ode_steps", t.max_ode_steps);
        std::string solver = t.solver == SolverMethod::heun ? "heun" : "euler";
        b.get("solver", solver);
        checked("training.solver", [&] { t.solver = parse_solver_method(solver); });
        b.get("disc_width", t.disc_width);
        b.get("disc_depth", t.disc_depth);
        b.get_count("checkpoint_every", t.checkpoint_every);
        b.get("terminal_zero", t.terminal_zero);
        b.finish();
    }
    if (const json* j = root.child("sampler")) {
        Block b(*j, "sampler");
        b.get("gamma", cfg.sampler.gamma);
        b.get_count("nfe", cfg.sampler.nfe);
        std::string variant = to_string(cfg.sampler.variant);
        b.get("variant", variant);
        checked("sampler.variant", [&] { cfg.sampler.variant = parse_sampler_variant(variant); });
        b.get_count("n_samples", cfg.sampler.n_samples);
        b.finish();
    }
    if (const json* j = root.child("eval")) {
        Block b(*j, "eval");
        EvalConfig& e = cfg.eval;
        b.get_count("n_samples", e.n_samples);
        b.get("nll", e.nll);
        b.get_count("nll_points", e.nll_points);
        b.get_count("nll_steps", e.nll_steps);
        b.get_count("variance_chains", e.variance_chains);
        b.get_count("variance_nfe", e.variance_nfe);
        b.get_count("accumulation_nfe", e.accumulation_nfe);
        b.get_count("accumulation_samples", e.accumulation_samples);
        b.get_count("accumulation_replicates", e.accumulation_replicates);
        b.get("perturbation", e.perturbation);
        b.get_count("field_terms", e.field_terms);
        b.get("field_seed", e.field_seed);
        b.finish();
    }
    root.finish();
    cfg.validate();
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file '" + path + "'");
    json doc;
    try {
        doc = json::parse(in, nullptr, true, /*ignore_comments=*/true);
    } catch (const json::exception& e) {
        throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
    }
    return parse_run_config(doc);
}

json to_json(const RunConfig& c) {
    json j;
    j["seed"] = c.seed;
    j["output_dir"] = c.output_dir;
    j["schedule"] = {{"sigma_min", c.schedule.sigma_min}, {"sigma_max", c.schedule.sigma_max},
                     {"rho", c.schedule.rho},             {"sigma_data", c.schedule.sigma_data},
                     {"n_grid", c.schedule.n_grid}};
    j["mixture"] = {{"kind", c.mixture.kind}, {"std", c.mixture.std}, {"dim", c.mixture.dim},
                    {"weights", c.mixture.weights}, {"means", c.mixture.means}, {"stds", c.mixture.stds}};
    j["model"] = {{"dim", c.model.dim}, {"width", c.model.width}, {"depth", c.model.depth},
                  {"n_frequencies", c.model.n_frequencies}};
    const TrainConfig& t = c.training;
    j["training"] = {{"lambda_dsm", t.lambda_dsm},
                     {"lambda_gan", t.lambda_gan},
                     {"gan_warmup_iters", t.warmup()},
                     {"learning_rate", t.learning_rate},
                     {"disc_learning_rate", t.disc_learning_rate},
                     {"batch_size", t.batch_size},
                     {"total_iters", t.total_iters},
                     {"teacher", to_string(t.teacher)},
                     {"ema_decay", t.ema_decay},
                     {"max_ode_steps", t.max_ode_steps},
                     {"solver", t.solver == SolverMethod::heun ? "heun" : "euler"},
                     {"disc_width", t.disc_width},
                     {"disc_depth", t.disc_depth},
                     {"checkpoint_every", t.checkpoint_every},
                     {"terminal_zero", t.terminal_zero}};
    j["sampler"] = {{"gamma", c.sampler.gamma}, {"nfe", c.sampler.nfe}, {"variant", to_string(c.sampler.variant)},
                    {"n_samples", c.sampler.n_samples}};
    const EvalConfig& e = c.eval;
    j["eval"] = {{"n_samples", e.n_samples},
                 {"nll", e.nll},
                 {"nll_points", e.nll_points},
                 {"nll_steps", e.nll_steps},
                 {"variance_chains", e.variance_chains},
                 {"variance_nfe", e.variance_nfe},
                 {"accumulation_nfe", e.accumulation_nfe},
                 {"accumulation_samples", e.accumulation_samples},
                 {"accumulation_replicates", e.accumulation_replicates},
                 {"perturbation", e.perturbation},
                 {"field_terms", e.field_terms},
                 {"field_seed", e.field_seed}};
    return j;
}

std::string config_hash(const RunConfig& cfg) {
    const std::string text = to_json(cfg).dump();
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string resolve_output_dir(const RunConfig& cfg) {
    const char* root = std::getenv("CTM_OUTPUT_ROOT");
    if (root && *root) return (std::filesystem::path(root) / cfg.output_dir).string();
    return cfg.output_dir;
}

std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

CsvWriter::CsvWriter(const std::string& path, const std::string& hash, unsigned long long seed,
                     const std::vector<std::string>& columns)
    : file_(std::fopen(path.c_str(), "w")), columns_(columns.size()) {
    if (!file_) throw std::runtime_error("cannot open '" + path + "' for writing");
    std::fprintf(file_, "# config_hash=%s seed=%llu\n", hash.c_str(), seed);
    row_text(columns);
}

CsvWriter::~CsvWriter() {
    if (file_) std::fclose(file_);
}

void CsvWriter::row(const std::vector<double>& values) {
    std::vector<std::string> cells;
    cells.reserve(values.size());
    for (double v : values) cells.push_back(format_double(v));
    row_text(cells);
}

void CsvWriter::row_text(const std::vector<std::string>& cells) {
    if (cells.size() != columns_) throw std::invalid_argument("csv row has the wrong number of cells");
    for (std::size_t i = 0; i < cells.size(); ++i) {
        std::fputs(cells[i].c_str(), file_);
        std::fputc(i + 1 == cells.size() ? '\n' : ',', file_);
    }
}

}  // namespace ctm
