// Command-line driver for the multimorbidity pattern pipeline.

#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mmp/config.hpp"
#include "mmp/errors.hpp"
#include "mmp/pipeline.hpp"

namespace {

enum ExitCode { ok = 0, other = 1, config_error = 2, data_error = 3, numerical_error = 4 };

// Flags that map one-to-one onto config keys.
struct Override {
    const char* flag;
    const char* key;
    const char* help;
};

const Override kOverrides[] = {
    {"--events", "paths.events", "event CSV (patient_id,code,age_years,strata)"},
    {"--meta", "paths.meta", "patient metadata CSV"},
    {"--vocabulary", "paths.vocabulary", "code vocabulary, one code per line"},
    {"--comorbid-lookup", "paths.comorbid_lookup", "comorbid pair CSV (code_a,code_b)"},
    {"--causal-lookup", "paths.causal_lookup", "causal pair CSV (cause,effect)"},
    {"--max-age", "ingest.max_age", "number of yearly age bins"},
    {"--sigma", "matrix.sigma", "Gaussian smoothing width in years"},
    {"--sigmas", "matrix.sigma_list", "comma-separated sigma grid"},
    {"--ranks", "nmf.ranks", "rank, or comma-separated ranks for a scan"},
    {"--max-iters", "nmf.max_iters", "NMF iteration cap"},
    {"--seed", "nmf.seed", "NMF base seed"},
    {"--restarts", "nmf.restarts", "NMF restarts for a single fit"},
    {"--n-runs", "rank_selection.n_runs", "restarts per rank in a scan"},
    {"--fraction", "ascendancy.binarize_fraction", "binarization fraction of the maximum"},
    {"--top-k", "ascendancy.top_k_edges", "edges kept in the network"},
    {"--L", "evaluation.L_list", "comma-separated top-L sizes"},
    {"--n-perms", "evaluation.n_perms", "permutations for p-values"},
};

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Temporal multimorbidity patterns: NMF over concatenated patient timelines"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path;
    std::string out_dir;
    std::vector<std::string> sets;
    int threads = -1;
    bool quiet = false;
    app.add_option("-c,--config", config_path, "INI config file")->check(CLI::ExistingFile);
    app.add_option("-o,--out", out_dir, "output directory (overrides MMP_OUTPUT_DIR and paths.output_dir)");
    app.add_option("--set", sets, "override any config key: section.key=value")->take_all();
    app.add_option("--threads", threads, "thread cap, 0 for the OpenMP default")->check(CLI::NonNegativeNumber);
    app.add_flag("-q,--quiet", quiet, "suppress progress messages");

    std::vector<std::string> override_values(std::size(kOverrides));
    for (std::size_t i = 0; i < std::size(kOverrides); ++i)
        app.add_option(kOverrides[i].flag, override_values[i], kOverrides[i].help);

    auto* ingest = app.add_subcommand("ingest", "filter events and metadata into <out>/ingest");
    auto* build = app.add_subcommand("build-matrix", "weighted, smoothed, concatenated matrix from <out>/ingest");
    auto* factorize = app.add_subcommand("factorize", "fit one rank on <out>/matrix");
    auto* scan = app.add_subcommand("rank-scan", "cophenetic coefficient for every rank in nmf.ranks");
    auto* grid = app.add_subcommand("grid-search", "C_L over the sigma x rank grid");
    auto* ascend = app.add_subcommand("ascendancy", "kappa/tau matrices and the cluster network");
    auto* evaluate = app.add_subcommand("evaluate", "C_L and A_L scores with permutation p-values");
    auto* sim = app.add_subcommand("simulate", "write a synthetic cohort, lookup and config to <out>");
    auto* run = app.add_subcommand("run", "all stages end to end");
    auto* show = app.add_subcommand("config", "print the effective config");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? ok : config_error;
    }

    try {
        mmp::set_log_quiet(quiet);
        mmp::PipelineConfig config;
        if (!config_path.empty()) config = mmp::load_config(config_path);
        if (const char* env = std::getenv("MMP_OUTPUT_DIR"); env && *env) config.paths.output_dir = env;
        for (const auto& s : sets) {
            const auto eq = s.find('=');
            if (eq == std::string::npos) throw mmp::ConfigError("--set expects section.key=value, got " + s);
            mmp::set_config_value(config, s.substr(0, eq), s.substr(eq + 1));
        }
        for (std::size_t i = 0; i < std::size(kOverrides); ++i)
            if (app.count(kOverrides[i].flag) > 0) mmp::set_config_value(config, kOverrides[i].key, override_values[i]);
        if (!out_dir.empty()) config.paths.output_dir = out_dir;
        if (threads >= 0) config.run.threads = threads;
        mmp::validate(config);
        mmp::set_thread_limit(config.run.threads);

        const mmp::RunLayout layout{config.paths.output_dir};
        auto stage = [&](const char* name, auto fn) { mmp::run_stage(name, config, layout, [&] { return fn(config, layout); }); };

        if (*show) {
            std::cout << mmp::format_config(config);
        } else if (*ingest) {
            mmp::run_stage("ingest", config, layout, [&] { return mmp::stage_ingest(config, layout); });
        } else if (*build) {
            stage("matrix", mmp::stage_matrix);
        } else if (*factorize) {
            stage("factorize", mmp::stage_factorize);
        } else if (*scan) {
            stage("rank_scan", mmp::stage_rank_scan);
        } else if (*grid) {
            mmp::grid_search(config, layout);
        } else if (*ascend) {
            stage("pairwise", mmp::stage_pairwise);
            stage("network", mmp::stage_network);
        } else if (*evaluate) {
            stage("c_score", mmp::stage_c_score);
            stage("a_score", mmp::stage_a_score);
        } else if (*sim) {
            mmp::simulate(config, config.paths.output_dir);
        } else if (*run) {
            mmp::run_pipeline(config);
        }
    } catch (const mmp::ConfigError& e) {
        std::cerr << "mmp: config error: " << e.what() << '\n';
        return config_error;
    } catch (const std::invalid_argument& e) {
        std::cerr << "mmp: config error: " << e.what() << '\n';
        return config_error;
    } catch (const mmp::DataError& e) {
        std::cerr << "mmp: data error: " << e.what() << '\n';
        return data_error;
    } catch (const mmp::NumericalError& e) {
        std::cerr << "mmp: numerical error: " << e.what() << '\n';
        return numerical_error;
    } catch (const std::exception& e) {
        std::cerr << "mmp: " << e.what() << '\n';
        return other;
    }
    return ok;
}
