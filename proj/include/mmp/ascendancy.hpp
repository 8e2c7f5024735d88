#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "mmp/nmf.hpp"

namespace mmp {

struct BinaryTimeCourse {
    std::vector<std::uint8_t> active;
    std::size_t cluster_id = 0;
    double threshold_used = 0.0;
    bool degenerate = false; // source course was all zero
};

// active[i] = course[i] >= fraction * max(course). Requires 0 < fraction <= 1.
BinaryTimeCourse binarize(std::span<const double> course, double fraction, std::size_t cluster_id = 0);

// Same rule applied to each consecutive block of `block` entries using that
// block's own maximum. threshold_used reports the global-max threshold.
BinaryTimeCourse binarize_per_block(std::span<const double> course, std::size_t block, double fraction,
                                    std::size_t cluster_id = 0);

// Joint activation counts z = (11, 10, 01, 00) and their frequencies.
struct ThetaEstimate {
    std::array<std::uint64_t, 4> z{};
    std::array<double, 4> theta{};
};

ThetaEstimate theta_from_counts(const std::array<std::uint64_t, 4>& z, double alpha = 0.0);

// Optional add-alpha smoothing of the frequencies (alpha = 0 is the plain
// maximum-likelihood estimate). Throws std::invalid_argument on empty or
// unequal-length inputs.
ThetaEstimate estimate_theta(std::span<const std::uint8_t> v, std::span<const std::uint8_t> w, double alpha = 0.0);
inline ThetaEstimate estimate_theta(const BinaryTimeCourse& v, const BinaryTimeCourse& w, double alpha = 0.0)
{
    return estimate_theta(v.active, w.active, alpha);
}

struct KappaTerms {
    double expected = 0.0; // E, joint activation under independence
    double upper = 0.0;    // largest attainable theta1 for the marginals
    double lower = 0.0;    // smallest attainable theta1 for the marginals
    double balance = 0.0;  // interpolation weight between the two bounds
    double kappa = 0.0;
};

// Connectivity in [-1, 1]; 0 under independence.
KappaTerms kappa_terms(const std::array<double, 4>& theta);
double kappa(const ThetaEstimate& estimate);
double kappa(const std::array<double, 4>& theta);

// Ascendancy in [-1, 1]; positive when v is ascendant to w. Empty when both
// marginals are zero.
std::optional<double> tau(const ThetaEstimate& estimate);
std::optional<double> tau(const std::array<double, 4>& theta);

enum class Aggregation {
    per_patient, // statistics per patient block, then averaged
    pooled,      // one estimate over all rows
};

enum class BinarizeScope {
    global,      // threshold from the whole concatenated course
    per_patient, // threshold from each patient block
};

std::string to_string(Aggregation aggregation);
Aggregation parse_aggregation(std::string_view text);
std::string to_string(BinarizeScope scope);
BinarizeScope parse_binarize_scope(std::string_view text);

struct PairwiseOptions {
    double fraction = 0.75;
    Aggregation aggregation = Aggregation::per_patient;
    BinarizeScope scope = BinarizeScope::global;
    double alpha = 0.0;
};

// Q x Q mean kappa (symmetric) and tau (antisymmetric). Entries with no
// contributing patient are NaN and flagged invalid. tau(q, r) > 0 means
// cluster q is ascendant to cluster r.
struct PairwiseStatistics {
    Eigen::MatrixXd kappa;
    Eigen::MatrixXd tau;
    Eigen::MatrixXi contributors;
    Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> valid;
    std::vector<double> thresholds;
};

PairwiseStatistics pairwise_statistics(const RowMatrix& time_courses, std::size_t ages,
                                       const PairwiseOptions& options = {});
inline PairwiseStatistics pairwise_statistics(const FactorModel& model, std::size_t ages,
                                              const PairwiseOptions& options = {})
{
    return pairwise_statistics(model.A, ages, options);
}

struct WeightedCode {
    std::size_t index = 0;
    std::string code;
    double weight = 0.0;
};

struct ClusterNode {
    std::size_t id = 0;
    std::vector<WeightedCode> top_diseases;
    std::string color;
};

struct AscendancyEdge {
    std::size_t from = 0;
    std::size_t to = 0;
    double kappa = 0.0;
    double tau = 0.0;
    bool undirected = false; // tau exactly zero
};

struct AscendancyNetwork {
    std::vector<ClusterNode> nodes;
    std::vector<AscendancyEdge> edges; // kappa descending
    double kappa_threshold = 0.0;      // smallest retained kappa
};

// Keeps the top_k_edges cluster pairs by kappa and orients each from the
// ascendant cluster. `clusters` is the (reporting-normalized) B matrix.
AscendancyNetwork build_network(const PairwiseStatistics& statistics, const Eigen::MatrixXd& clusters,
                                std::span<const std::string> codes, std::size_t top_k_edges,
                                std::size_t top_diseases = 3);

void write_pair_matrix_tsv(const std::filesystem::path& path, const Eigen::MatrixXd& values);
nlohmann::json network_to_json(const AscendancyNetwork& network);
AscendancyNetwork network_from_json(const nlohmann::json& j);
std::string network_to_dot(const AscendancyNetwork& network);

} // namespace mmp
