// Command-line front end: train, sample, eval, check.
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "ctm/checks.hpp"
#include "ctm/config.hpp"
#include "ctm/eval.hpp"
#include "ctm/sampling.hpp"
#include "ctm/training.hpp"

namespace fs = std::filesystem;
using namespace ctm;
using nlohmann::json;

namespace {

enum ExitCode { kOk = 0, kCheckFailed = 1, kConfigError = 2, kNumericIncident = 3 };

struct SamplerFlags {
    std::string checkpoint;
    bool oracle = false;
    std::optional<double> gamma;
    std::optional<std::size_t> nfe;
    std::optional<std::size_t> n;
    std::optional<std::string> variant;
};

void add_sampler_flags(CLI::App* cmd, SamplerFlags& f) {
    cmd->add_option("--checkpoint", f.checkpoint, "Trained checkpoint (EMA weights are used)");
    cmd->add_flag("--oracle", f.oracle, "Use the analytic teacher instead of a checkpoint");
    cmd->add_option("--gamma", f.gamma, "Override sampler.gamma");
    cmd->add_option("--nfe", f.nfe, "Override sampler.nfe");
    cmd->add_option("--n", f.n, "Override the sample count");
    cmd->add_option("--variant", f.variant, "Override sampler.variant (ctm_gamma|edm_stochastic)");
}

void apply_sampler_flags(RunConfig& cfg, const SamplerFlags& f) {
    if (f.gamma) cfg.sampler.gamma = *f.gamma;
    if (f.nfe) cfg.sampler.nfe = *f.nfe;
    if (f.n) cfg.sampler.n_samples = *f.n;
    if (f.variant) {
        try {
            cfg.sampler.variant = parse_sampler_variant(*f.variant);
        } catch (const std::invalid_argument& e) {
            throw ConfigError(std::string("sampler.variant: ") + e.what());
        }
    }
    cfg.validate();
}

// The generator under test: either the teacher or a checkpointed student.
struct Generator {
    GFn g;
    DenoiserFn den;
    ScoreFn score;
    std::string label;
};

Generator make_generator(const RunConfig& cfg, const GaussianMixture& mix, const SamplerFlags& f) {
    if (f.oracle == !f.checkpoint.empty()) throw ConfigError("exactly one of --checkpoint or --oracle is required");
    if (f.oracle) return {oracle_g(mix), oracle_denoiser(mix), oracle_score(mix), "oracle"};
    Checkpoint ck = load_checkpoint(f.checkpoint);
    if (ck.architecture.dim != mix.dim()) {
        throw CheckpointError("checkpoint dimension " + std::to_string(ck.architecture.dim) +
                              " does not match the configured mixture (" + std::to_string(mix.dim()) + ")");
    }
    (void)cfg;
    CtmNetwork net(ck.architecture, ck.schedule);
    CtmParams ema{ck.ema.shadow, ck.params.frequencies};
    return {student_g(net, ema), net.denoiser(ema), student_score(net, ema), f.checkpoint};
}

SamplerSpec make_spec(const RunConfig& cfg) {
    SamplerSpec spec;
    spec.gamma = cfg.sampler.gamma;
    spec.variant = cfg.sampler.variant;
    spec.seed = cfg.seed;
    spec.grid = sampling_grid(cfg.schedule, cfg.sampler.nfe);
    spec.validate();
    return spec;
}

SampleResult draw(const Generator& gen, const SamplerSpec& spec, int dim, std::size_t n, Rng& rng) {
    const Batch x_t = prior_sample(spec.grid.front(), dim, n, rng);
    if (spec.variant == SamplerVariant::edm_stochastic) {
        SampleResult r = edm_stochastic_sample(gen.den, spec, x_t, rng);
        if (r.clamped_steps > 0) {
            std::cerr << "warning: " << r.clamped_steps << " churned levels exceeded sigma_max and were clamped\n";
        }
        return r;
    }
    return gamma_sample(gen.g, spec, x_t, rng);
}

fs::path prepare_output(const RunConfig& cfg) {
    const fs::path dir = resolve_output_dir(cfg);
    fs::create_directories(dir);
    return dir;
}

void write_json(const fs::path& path, const json& j) {
    std::ofstream out(path);
    out << j.dump(2) << "\n";
}

int cmd_train(const std::string& config_path) {
    const RunConfig cfg = load_run_config(config_path);
    const GaussianMixture mix = cfg.mixture.build();
    const fs::path dir = prepare_output(cfg);
    const std::string hash = config_hash(cfg);

    CtmNetwork net(cfg.model, cfg.schedule);
    Trainer trainer(net, mix, cfg.training);
    TrainState state = trainer.init_state(cfg.seed);

    auto checkpoint = [&](const fs::path& path) {
        Checkpoint ck{cfg.model, cfg.schedule, state.params, state.ema, state.iteration, hash, cfg.seed};
        save_checkpoint(path.string(), ck);
    };

    CsvWriter curve((dir / "training_curve.csv").string(), hash, cfg.seed,
                    {"iteration", "ctm", "dsm", "gan_g", "gan_d", "total"});
    const auto t0 = std::chrono::steady_clock::now();
    std::size_t last_incidents = 0;
    try {
        run_training(trainer, state, [&](const TrainState& s, const LossBreakdown& b) {
            curve.row({static_cast<double>(s.iteration), b.ctm, b.dsm, b.gan_g, b.gan_d, b.total});
            if (s.incidents != last_incidents) {
                std::cerr << "iteration " << s.iteration << ": " << (s.incidents - last_incidents)
                          << " non-finite update(s) rejected\n";
                last_incidents = s.incidents;
            }
            if (cfg.training.checkpoint_every > 0 && s.iteration % cfg.training.checkpoint_every == 0) {
                checkpoint(dir / ("checkpoint_" + std::to_string(s.iteration) + ".ckpt"));
            }
        });
    } catch (const NonFiniteError& e) {
        checkpoint(dir / "last_good.ckpt");
        std::cerr << "numeric incident: " << e.what() << " (last good state saved at iteration " << state.iteration
                  << ")\n";
        return kNumericIncident;
    }
    checkpoint(dir / "final.ckpt");
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << "trained " << state.iteration << " iterations in " << secs << " s; rejected updates "
              << state.incidents << "\ncheckpoint: " << (dir / "final.ckpt").string() << "\n";
    return kOk;
}

int cmd_sample(const std::string& config_path, const SamplerFlags& flags) {
    RunConfig cfg = load_run_config(config_path);
    apply_sampler_flags(cfg, flags);
    const GaussianMixture mix = cfg.mixture.build();
    const Generator gen = make_generator(cfg, mix, flags);
    const SamplerSpec spec = make_spec(cfg);
    Rng rng(cfg.seed);
    const SampleResult r = draw(gen, spec, mix.dim(), cfg.sampler.n_samples, rng);

    const fs::path dir = prepare_output(cfg);
    std::vector<std::string> cols;
    for (int i = 0; i < mix.dim(); ++i) cols.push_back("x" + std::to_string(i));
    for (const char* c : {"seed", "gamma", "nfe"}) cols.push_back(c);
    CsvWriter out((dir / "samples.csv").string(), config_hash(cfg), cfg.seed, cols);
    for (Eigen::Index j = 0; j < r.x.cols(); ++j) {
        std::vector<std::string> row;
        for (int i = 0; i < mix.dim(); ++i) row.push_back(format_double(r.x(i, j)));
        row.push_back(std::to_string(cfg.seed));
        row.push_back(format_double(cfg.sampler.gamma));
        row.push_back(std::to_string(r.nfe));
        out.row_text(row);
    }
    std::cout << "generator: " << gen.label << "\nsamples: " << r.x.cols() << "\nNFE per sample: " << r.nfe
              << "\ntotal NFE: " << r.nfe * static_cast<std::size_t>(r.x.cols())
              << "\nwritten: " << (dir / "samples.csv").string() << "\n";
    return kOk;
}

int cmd_eval(const std::string& config_path, const SamplerFlags& flags) {
    RunConfig cfg = load_run_config(config_path);
    apply_sampler_flags(cfg, flags);
    const GaussianMixture mix = cfg.mixture.build();
    const Generator gen = make_generator(cfg, mix, flags);
    const SamplerSpec spec = make_spec(cfg);
    Rng rng(cfg.seed);
    const SampleResult r = draw(gen, spec, mix.dim(), cfg.eval.n_samples, rng);
    EvalReport rep = evaluate_samples(r.x, mix, r.nfe);

    json report;
    report["generator"] = gen.label;
    report["config_hash"] = config_hash(cfg);
    report["seed"] = cfg.seed;
    report["gamma"] = cfg.sampler.gamma;
    report["variant"] = to_string(cfg.sampler.variant);
    report["nfe"] = rep.nfe;
    report["n_samples"] = rep.n_samples;
    report["w1"] = rep.w1;
    report["mean_error"] = std::vector<double>(rep.mean_error.data(), rep.mean_error.data() + rep.mean_error.size());
    report["variance_error"] =
        std::vector<double>(rep.variance_error.data(), rep.variance_error.data() + rep.variance_error.size());
    if (cfg.eval.nll) {
        if (mix.dim() > 4) throw ConfigError("eval.nll: likelihood needs dimension <= 4");
        Rng data_rng(cfg.seed + 1);
        const Batch data = mix.sample_marginal(0.0, cfg.eval.nll_points, data_rng);
        const Eigen::VectorXd nll =
            nll_pf_ode(gen.score, data, cfg.schedule.sigma_min, cfg.schedule.sigma_max, cfg.eval.nll_steps);
        double analytic = 0.0;
        for (Eigen::Index j = 0; j < data.cols(); ++j) analytic -= mix.log_density_t(data.col(j), cfg.schedule.sigma_min);
        rep.nll = nll.mean();
        report["nll"] = *rep.nll;
        report["nll_analytic"] = analytic / static_cast<double>(data.cols());
        if (!std::isfinite(*rep.nll)) throw NumericIncident("non-finite NLL", 0.0);
    }

    const fs::path dir = prepare_output(cfg);
    write_json(dir / "eval_report.json", report);
    if (mix.dim() == 1) {
        AccumulationOptions opts;
        opts.replicates = cfg.eval.accumulation_replicates;
        std::vector<std::size_t> nfes{1};
        if (cfg.eval.accumulation_nfe > 1) nfes.push_back(cfg.eval.accumulation_nfe);
        const AccumulationTable table = accumulation_study(gen.g, mix, cfg.schedule, {0.0, 0.5, 1.0}, nfes,
                                                           cfg.eval.accumulation_samples, cfg.seed, opts);
        CsvWriter acc((dir / "accumulation.csv").string(), config_hash(cfg), cfg.seed, {"gamma", "nfe", "w1", "stderr"});
        for (const auto& row : table.rows) acc.row({row.gamma, static_cast<double>(row.nfe), row.w1, row.stderr_});
    }
    std::cout << "W1 to data: " << rep.w1 << " at NFE " << rep.nfe << " (" << rep.n_samples << " samples)\n";
    if (rep.nll) std::cout << "NLL: " << *rep.nll << " nats per sample\n";
    std::cout << "written: " << (dir / "eval_report.json").string() << "\n";
    return kOk;
}

int cmd_check(const std::string& config_path, const std::string& suite) {
    const RunConfig cfg = load_run_config(config_path);
    const auto& names = suite_names();
    if (suite != "all" && std::find(names.begin(), names.end(), suite) == names.end()) {
        std::cerr << "unknown suite '" << suite << "' (expected lemma1|bilip|variance|accumulation|order|nll|all)\n";
        return kConfigError;
    }
    const std::vector<SuiteResult> results = run_check(suite, cfg);
    bool all_ok = true;
    json verdict;
    verdict["config_hash"] = config_hash(cfg);
    verdict["seed"] = cfg.seed;
    for (const SuiteResult& r : results) {
        all_ok = all_ok && r.passed;
        verdict["suites"][r.name] = {{"pass", r.passed}, {"summary", r.summary}, {"details", r.details}};
        std::cout << (r.passed ? "PASS " : "FAIL ") << r.name << ": " << r.summary << "\n";
    }
    verdict["pass"] = all_ok;
    const fs::path dir = prepare_output(cfg);
    write_json(dir / "check_report.json", verdict);
    for (const SuiteResult& r : results) {
        if (r.name != "variance") continue;
        CsvWriter csv((dir / "variance_traces.csv").string(), config_hash(cfg), cfg.seed,
                      {"gamma", "step", "t", "var", "lower_bound", "upper_bound"});
        for (const auto& run : r.details["runs"]) {
            for (const auto& st : run["steps"]) {
                csv.row({run["gamma"].get<double>(), st["step"].get<double>(), st["t"].get<double>(),
                         st["var"].get<double>(), st["lower_bound"].get<double>(), st["upper_bound"].get<double>()});
            }
        }
    }
    std::cout << (all_ok ? "all suites passed" : "some suites FAILED") << "\n";
    return all_ok ? kOk : kCheckFailed;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Consistency trajectory models on analytic Gaussian-mixture teachers"};
    app.require_subcommand(1);
    std::string config;
    std::string suite = "all";
    SamplerFlags sample_flags, eval_flags;

    auto* train = app.add_subcommand("train", "Train a student and write checkpoints plus the loss curve");
    train->add_option("config", config, "Run config (JSON)")->required();
    auto* sample = app.add_subcommand("sample", "Draw samples to CSV");
    sample->add_option("config", config, "Run config (JSON)")->required();
    add_sampler_flags(sample, sample_flags);
    auto* eval = app.add_subcommand("eval", "Sample-quality, likelihood and accumulation report");
    eval->add_option("config", config, "Run config (JSON)")->required();
    add_sampler_flags(eval, eval_flags);
    auto* check = app.add_subcommand("check", "Property suites against the analytic teacher");
    check->add_option("config", config, "Run config (JSON)")->required();
    check->add_option("--suite", suite, "lemma1|bilip|variance|accumulation|order|nll|all");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfigError;
    }

    try {
        if (*train) return cmd_train(config);
        if (*sample) return cmd_sample(config, sample_flags);
        if (*eval) return cmd_eval(config, eval_flags);
        if (*check) return cmd_check(config, suite);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfigError;
    } catch (const CheckpointError& e) {
        std::cerr << "checkpoint error: " << e.what() << "\n";
        return kConfigError;
    } catch (const NonFiniteError& e) {
        std::cerr << "numeric incident: " << e.what() << "\n";
        return kNumericIncident;
    } catch (const NumericIncident& e) {
        std::cerr << "numeric incident: " << e.what() << "\n";
        return kNumericIncident;
    } catch (const IntegrationError& e) {
        std::cerr << "numeric incident: " << e.what() << "\n";
        return kNumericIncident;
    } catch (const std::invalid_argument& e) {
        std::cerr << "invalid input: " << e.what() << "\n";
        return kConfigError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kNumericIncident;
    }
    return kOk;
}
