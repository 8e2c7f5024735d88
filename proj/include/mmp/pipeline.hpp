#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmp/config.hpp"

namespace mmp {

// Directory layout of one run. Each stage reads the previous stage's files,
// so stages can be rerun on their own.
struct RunLayout {
    std::filesystem::path root;

    std::filesystem::path ingest_dir() const { return root / "ingest"; }
    std::filesystem::path matrix_stem() const { return root / "matrix" / "D"; }
    std::filesystem::path model_dir() const { return root / "model"; }
    std::filesystem::path ascendancy_dir() const { return root / "ascendancy"; }
    std::filesystem::path evaluation_dir() const { return root / "evaluation"; }
    std::filesystem::path rank_scan_tsv() const { return root / "rank_scan.tsv"; }
    std::filesystem::path manifest() const { return root / "manifest.json"; }
};

struct StageRecord {
    std::string name{};
    std::string status = "ok"; // ok | skipped | failed
    std::vector<std::string> outputs{}; // relative to the run root
    nlohmann::json details = nlohmann::json::object();
    std::string error{};

    nlohmann::json to_json() const;
};

// Stage names in run order.
inline const std::vector<std::string> kStageNames{"ingest",  "matrix",  "factorize", "pairwise",
                                                  "network", "c_score", "a_score"};

// Loads events, metadata and vocabulary from config.paths, applies the strata
// filter and inclusion rules. `stratum` (if non-empty) keeps only that stratum.
StageRecord stage_ingest(const PipelineConfig& config, const RunLayout& run, const std::string& stratum = {});
StageRecord stage_matrix(const PipelineConfig& config, const RunLayout& run);
// Fits the single configured rank; the lowest-divergence restart is kept.
StageRecord stage_factorize(const PipelineConfig& config, const RunLayout& run);
StageRecord stage_rank_scan(const PipelineConfig& config, const RunLayout& run);
StageRecord stage_pairwise(const PipelineConfig& config, const RunLayout& run);
StageRecord stage_network(const PipelineConfig& config, const RunLayout& run);
// Skipped when the corresponding lookup path is empty.
StageRecord stage_c_score(const PipelineConfig& config, const RunLayout& run);
StageRecord stage_a_score(const PipelineConfig& config, const RunLayout& run);

// Adds or replaces one stage entry in the run manifest together with the
// full config.
void record_stage(const PipelineConfig& config, const RunLayout& run, const StageRecord& record);

// Runs a stage, records it, and on failure records the error before
// rethrowing an exception of the same category prefixed with the stage name.
StageRecord run_stage(const std::string& name, const PipelineConfig& config, const RunLayout& run,
                      const std::function<StageRecord()>& stage);

// All stages into config.paths.output_dir (one sub-directory per stratum when
// ingest.stratify is set). A rank list runs the rank scan instead of the
// factorize/ascendancy/evaluation stages. Returns the output root.
std::filesystem::path run_pipeline(const PipelineConfig& config);

// C_L for every (sigma, Q, L) cell; requires a comorbid lookup. Reads the
// ingest stage from `run` (running it first when absent) and writes
// grid_search.tsv. Failed cells are marked and the grid continues.
struct GridCell {
    double sigma = 0.0;
    std::size_t rank = 0;
    std::size_t L = 0;
    std::size_t a = 0;
    std::size_t b = 0;
    std::optional<double> score{};
    std::optional<double> p_value{};
    std::string status = "ok";
    bool best = false; // highest C_L among cells with the same L
};

std::vector<GridCell> grid_search(const PipelineConfig& config, const RunLayout& run);

// Writes a synthetic cohort from config.simulate plus a comorbid lookup of the
// planted pairs and a ready-to-run config.ini pointing at them.
void simulate(const PipelineConfig& config, const std::filesystem::path& dir);

} // namespace mmp
