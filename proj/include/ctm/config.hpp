#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "ctm/model.hpp"
#include "ctm/oracle.hpp"
#include "ctm/sampling.hpp"
#include "ctm/schedule.hpp"
#include "ctm/training.hpp"
#include "json.hpp"

namespace ctm {

/// Invalid or unreadable run configuration; the message names the field.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct MixtureConfig {
    std::string kind = "two_mode";  ///< two_mode | standard_normal | custom
    double std = 0.2;               ///< two_mode component std
    int dim = 1;                    ///< standard_normal dimension
    std::vector<double> weights;    ///< custom only
    std::vector<std::vector<double>> means;
    std::vector<double> stds;
    GaussianMixture build() const;
};

struct SamplerConfig {
    double gamma = 0.0;
    std::size_t nfe = 1;
    SamplerVariant variant = SamplerVariant::ctm_gamma;
    std::size_t n_samples = 10000;
};

struct EvalConfig {
    std::size_t n_samples = 100000;
    bool nll = false;
    std::size_t nll_points = 20;
    std::size_t nll_steps = 1000;
    std::size_t variance_chains = 100000;
    std::size_t variance_nfe = 17;
    std::size_t accumulation_nfe = 16;
    std::size_t accumulation_samples = 100000;
    std::size_t accumulation_replicates = 16;
    double perturbation = 0.01;
    std::size_t field_terms = 16;
    unsigned long long field_seed = 1;
};

struct RunConfig {
    ScheduleConfig schedule;
    MixtureConfig mixture;
    CtmArchitecture model;
    TrainConfig training;
    SamplerConfig sampler;
    EvalConfig eval;
    unsigned long long seed = 0;
    std::string output_dir = "runs/default";

    /// Validates every block; throws ConfigError.
    void validate() const;
};

RunConfig parse_run_config(const nlohmann::json& doc);
RunConfig load_run_config(const std::string& path);
nlohmann::json to_json(const RunConfig& cfg);

/// FNV-1a 64 of the canonical JSON dump, as 16 hex digits.
std::string config_hash(const RunConfig& cfg);

/// output_dir, or $CTM_OUTPUT_ROOT/<output_dir> when the variable is set.
std::string resolve_output_dir(const RunConfig& cfg);

/// CSV with a leading "# config_hash=... seed=..." line and %.17g numbers.
class CsvWriter {
public:
    CsvWriter(const std::string& path, const std::string& hash, unsigned long long seed,
              const std::vector<std::string>& columns);
    ~CsvWriter();
    CsvWriter(const CsvWriter&) = delete;
    CsvWriter& operator=(const CsvWriter&) = delete;
    void row(const std::vector<double>& values);
    void row_text(const std::vector<std::string>& cells);

private:
    std::FILE* file_;
    std::size_t columns_;
};

std::string format_double(double v);

}  // namespace ctm
