#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "mmp/ingest.hpp"

namespace mmp {

// Ground truth for a synthetic cohort: the yearly event hazard for patient p,
// disease c at age t is sum_q s_pq * templates(q, t) * clusters(q, c) + noise_rate,
// with s_pq ~ LogNormal(0, scale_log_sigma).
struct PlantedModel {
    Eigen::MatrixXd clusters;  // Q x C
    Eigen::MatrixXd templates; // Q x T
    double scale_log_sigma = 0.5;
    double noise_rate = 0.0;

    std::size_t rank() const { return static_cast<std::size_t>(clusters.rows()); }
    std::size_t codes() const { return static_cast<std::size_t>(clusters.cols()); }
    std::size_t ages() const { return static_cast<std::size_t>(templates.cols()); }

    // Throws ConfigError unless factors are non-negative, shapes agree and
    // every cluster row has a unique maximum.
    void validate() const;
};

// Gaussian bump of height `peak` centred at `center`, cut to zero beyond `cutoff` years.
Eigen::VectorXd gaussian_template(std::size_t ages, double center, double width, double peak, double cutoff);
// Constant `rate` on ages [first, last], zero elsewhere.
Eigen::VectorXd window_template(std::size_t ages, std::size_t first, std::size_t last, double rate);

// Q clusters over contiguous, disjoint disease blocks (weights 1.0 down to
// 0.5 inside a block) expressed in disjoint age windows.
PlantedModel disjoint_planted_model(std::size_t rank, std::size_t codes, std::size_t ages, double noise_rate,
                                    double peak_rate = 0.08);

struct GeneratorOptions {
    int first_age = 1; // earliest age receiving trials; keeps events outside the default washout
    std::vector<std::string> strata{"all"};
    std::string id_prefix = "P";
};

struct SyntheticCohort {
    DiseaseVocabulary vocabulary;
    std::vector<EventRecord> events;
    std::vector<PatientMeta> patients;
    Eigen::MatrixXd scales; // N x Q expression scales
    nlohmann::json truth;
};

SyntheticCohort generate_cohort(const PlantedModel& model, std::size_t patients, std::uint64_t seed,
                                const GeneratorOptions& options = {});

// Within-cluster pairs among the top-L diseases of each planted cluster.
std::vector<std::pair<std::size_t, std::size_t>> planted_pairs(const PlantedModel& model, std::size_t L);

struct ClusterMatch {
    std::vector<std::pair<std::size_t, std::size_t>> assignment; // (recovered row, truth row)
    std::vector<double> cosines;                                   // per assignment entry
    double mean_cosine = 0.0;                                      // over truth rows; unmatched rows count 0
};

double cosine_similarity(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

// One-to-one assignment maximizing total cosine similarity; exhaustive when
// both sides have at most 8 rows, greedy otherwise.
ClusterMatch match_clusters(const Eigen::MatrixXd& recovered, const Eigen::MatrixXd& truth);

void write_cohort(const SyntheticCohort& cohort, const std::filesystem::path& dir);

} // namespace mmp
