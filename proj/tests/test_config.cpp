#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "ctm/config.hpp"
#include "doctest.h"

using namespace ctm;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string error_of(const json& doc) {
    try {
        (void)parse_run_config(doc);
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Independent FNV-1a 64 written from the published constants.
std::string fnv1a_hex(const std::string& text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    std::ostringstream os;
    os << std::hex;
    os.width(16);
    os.fill('0');
    os << h;
    return os.str();
}

fs::path scratch_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("ctm_test_config_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

}  // namespace

TEST_CASE("an empty document yields the default run") {
    const RunConfig cfg = parse_run_config(json::object());
    CHECK(cfg.schedule.sigma_min == 0.002);
    CHECK(cfg.schedule.sigma_max == 80.0);
    CHECK(cfg.schedule.n_grid == 18);
    CHECK(cfg.mixture.kind == "two_mode");
    CHECK(cfg.sampler.gamma == 0.0);
    CHECK(cfg.eval.nll_steps == 1000);
}

TEST_CASE("unknown keys are rejected with their full path") {
    CHECK(error_of({{"bogus", 1}}).find("bogus") != std::string::npos);
    CHECK(error_of({{"training", {{"lr", 0.1}}}}).find("training.lr") != std::string::npos);
    CHECK(error_of({{"eval", {{"nll_step", 10}}}}).find("eval.nll_step") != std::string::npos);
}

TEST_CASE("type and range errors name the field") {
    CHECK(error_of({{"schedule", {{"rho", "seven"}}}}).find("schedule.rho") != std::string::npos);
    CHECK(error_of({{"training", {{"batch_size", -3}}}}).find("training.batch_size") != std::string::npos);
    CHECK(error_of({{"training", {{"teacher", "nobody"}}}}).find("training.teacher") != std::string::npos);
    CHECK(error_of({{"sampler", {{"gamma", 1.5}}}}).find("sampler") != std::string::npos);
    CHECK(error_of({{"sampler", {{"nfe", 0}}}}).find("sampler.nfe") != std::string::npos);
    CHECK(error_of({{"mixture", {{"kind", "triangle"}}}}).find("mixture.kind") != std::string::npos);
    CHECK(error_of({{"schedule", {{"sigma_min", 100.0}}}}).find("schedule") != std::string::npos);
    CHECK(error_of({{"eval", {{"nll_steps", 10}}}}).find("eval.nll_steps") != std::string::npos);
    CHECK(error_of({{"output_dir", ""}}).find("output_dir") != std::string::npos);
    CHECK(error_of({{"model", {{"dim", 2}}}}).find("model.dim") != std::string::npos);
}

TEST_CASE("standard_normal mixture sets the model dimension") {
    const RunConfig cfg = parse_run_config({{"mixture", {{"kind", "standard_normal"}, {"dim", 3}}}});
    CHECK(cfg.model.dim == 3);
    CHECK(cfg.mixture.build().dim() == 3);
}

TEST_CASE("custom mixtures build from weights, means and stds") {
    const json doc = {{"mixture",
                       {{"kind", "custom"}, {"weights", {0.25, 0.75}}, {"means", {{-1.0}, {2.0}}}, {"stds", {0.1, 0.3}}}}};
    const GaussianMixture mix = parse_run_config(doc).mixture.build();
    CHECK(mix.components() == 2);
    CHECK(mix.weights()[1] == doctest::Approx(0.75));
}

TEST_CASE("config round-trips through to_json with a stable hash") {
    json doc = {{"seed", 11}, {"training", {{"batch_size", 32}, {"teacher", "pretrained_free"}}}, {"sampler", {{"gamma", 0.3}}}};
    const RunConfig a = parse_run_config(doc);
    const RunConfig b = parse_run_config(to_json(a));
    CHECK(to_json(a) == to_json(b));
    CHECK(config_hash(a) == config_hash(b));
    CHECK(config_hash(a).size() == 16);
    CHECK(config_hash(a) == fnv1a_hex(to_json(a).dump()));

    doc["sampler"]["gamma"] = 0.31;
    CHECK(config_hash(parse_run_config(doc)) != config_hash(a));
}

TEST_CASE("load_run_config accepts comments and reports unreadable files") {
    const fs::path dir = scratch_dir("load");
    {
        std::ofstream out(dir / "cfg.json");
        out << "// a comment\n{\"seed\": 3, /* inline */ \"output_dir\": \"x\"}\n";
    }
    const RunConfig cfg = load_run_config((dir / "cfg.json").string());
    CHECK(cfg.seed == 3);
    CHECK(cfg.output_dir == "x");

    {
        std::ofstream out(dir / "bad.json");
        out << "{\"seed\": ";
    }
    CHECK_THROWS_AS(load_run_config((dir / "bad.json").string()), ConfigError);
    CHECK_THROWS_AS(load_run_config((dir / "missing.json").string()), ConfigError);
}

TEST_CASE("output root prefixes the output directory") {
    RunConfig cfg;
    cfg.output_dir = "runs/a";
    ::unsetenv("CTM_OUTPUT_ROOT");
    CHECK(resolve_output_dir(cfg) == "runs/a");
    ::setenv("CTM_OUTPUT_ROOT", "/tmp/root", 1);
    CHECK(resolve_output_dir(cfg) == (fs::path("/tmp/root") / "runs/a").string());
    ::unsetenv("CTM_OUTPUT_ROOT");
}

TEST_CASE("format_double round-trips exactly") {
    CHECK(format_double(0.1) == "0.10000000000000001");
    CHECK(format_double(1.0) == "1");
    for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, 80.0}) {
        CHECK(std::strtod(format_double(v).c_str(), nullptr) == v);
    }
}

TEST_CASE("CsvWriter writes the provenance line, header and rows") {
    const fs::path dir = scratch_dir("csv");
    const fs::path file = dir / "out.csv";
    {
        CsvWriter w(file.string(), "00000000deadbeef", 42, {"a", "b"});
        w.row({0.5, 1.0 / 3.0});
        w.row_text({"x", "y"});
        CHECK_THROWS_AS(w.row({1.0}), std::invalid_argument);
    }
    CHECK(read_file(file) == "# config_hash=00000000deadbeef seed=42\na,b\n0.5,0.33333333333333331\nx,y\n");
    CHECK_THROWS(CsvWriter((dir / "no/such/dir/x.csv").string(), "h", 0, {"a"}));
}
