#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "mmp/ascendancy.hpp"
#include "mmp/ingest.hpp"
#include "mmp/matrix.hpp"

namespace mmp {

// Every tunable of the pipeline. The text form is INI with one section per
// module; keys are addressed as `section.key`.
struct PipelineConfig {
    struct Paths {
        std::string events;
        std::string meta;
        std::string vocabulary;
        std::string comorbid_lookup; // optional
        std::string causal_lookup;   // optional
        std::string output_dir = "mmp_out";
    } paths;

    struct Ingest {
        int max_age = kDefaultMaxAge; // T: ages 0..max_age-1
        int min_followup = 5;
        int washout = 1;
        WashoutMode washout_mode = WashoutMode::drop_record;
        bool stratify = false;           // one run per stratum
        std::vector<std::string> strata; // restrict to these strata (empty: all)
    } ingest;

    struct Matrix {
        double sigma = 3.0;
        std::vector<double> sigma_list; // grid search axis (empty: {sigma})
        double truncate = 4.0;
        Boundary boundary = Boundary::zero_pad;
        bool apply_ipf = true;
    } matrix;

    struct Nmf {
        std::vector<std::size_t> ranks{34}; // more than one: rank scan instead of a single fit
        int max_iters = 500;
        double tol = 1e-6;
        int window = 10;
        double epsilon = 1e-12;
        std::uint64_t seed = 1;
        std::size_t restarts = 1; // the lowest-divergence restart is kept
    } nmf;

    struct RankSelection {
        std::size_t n_runs = 30;
    } rank_selection;

    struct Ascendancy {
        double binarize_fraction = 0.75;
        Aggregation aggregation = Aggregation::per_patient;
        BinarizeScope binarize_scope = BinarizeScope::global;
        double alpha = 0.0;
        std::size_t top_k_edges = 60;
        std::size_t top_diseases = 3;
    } ascendancy;

    struct Evaluation {
        std::vector<std::size_t> L_list{15};
        std::size_t n_perms = 1000;
        std::uint64_t seed = 1;
    } evaluation;

    struct Simulate {
        std::size_t rank = 5;
        std::size_t codes = 30;
        std::size_t ages = 60;
        std::size_t patients = 500;
        double noise_rate = 0.002;
        double peak_rate = 0.08;
        double scale_log_sigma = 0.5;
        std::uint64_t seed = 7;
        std::size_t lookup_L = 3; // planted within-cluster pairs written as a comorbid lookup
    } simulate;

    struct Run {
        int threads = 0; // 0: OpenMP default
    } run;
};

// All recognised `section.key` names in file order.
const std::vector<std::string>& config_keys();

std::string get_config_value(const PipelineConfig& config, std::string_view key);
// Throws ConfigError for an unknown key or a value that does not parse.
void set_config_value(PipelineConfig& config, std::string_view key, std::string_view value);

// Throws ConfigError on out-of-range values.
void validate(const PipelineConfig& config);

PipelineConfig parse_config(const std::string& text);
PipelineConfig load_config(const std::filesystem::path& path);
std::string format_config(const PipelineConfig& config);
void save_config(const PipelineConfig& config, const std::filesystem::path& path);

// Flat {"section.key": "value"} map.
nlohmann::json config_to_json(const PipelineConfig& config);

} // namespace mmp
