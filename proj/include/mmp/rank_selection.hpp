#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "mmp/nmf.hpp"
#include "mmp/sparse.hpp"

namespace mmp {

// Index of the cluster holding each disease's largest weight; ties go to the
// lowest cluster index.
std::vector<std::size_t> dominant_cluster(const Eigen::MatrixXd& clusters);

// C x C matrix with 1 where two diseases share a dominant cluster.
Eigen::MatrixXd connectivity(const Eigen::MatrixXd& clusters);
inline Eigen::MatrixXd connectivity(const FactorModel& model) { return connectivity(model.B); }

struct ConsensusMatrix {
    Eigen::MatrixXd values;
    std::size_t n_runs = 0;
};

// Mean connectivity over at least two models with equal C.
ConsensusMatrix consensus(std::span<const FactorModel> models);

// Cophenetic distances of an average-linkage (UPGMA) tree built on a
// symmetric dissimilarity matrix.
Eigen::MatrixXd average_linkage_cophenetic(const Eigen::MatrixXd& dissimilarity);

// Pearson correlation between 1 - consensus and its average-linkage cophenetic
// distances, over the strict upper triangle. Constant dissimilarities give 1.
double cophenetic_coefficient(const ConsensusMatrix& consensus);

struct RankScore {
    std::size_t rank = 0;
    double cophenetic = 0.0;
    double mean_divergence = 0.0;
    std::size_t successful_runs = 0;
    std::size_t failed_runs = 0;
};

// Seed used for all restarts at one rank; depends on the rank, not on its
// position in the scan list.
std::uint64_t rank_seed(std::uint64_t base_seed, std::size_t rank);

std::vector<RankScore> rank_scan(const SparseMatrix& data, std::span<const std::size_t> ranks, std::size_t n_runs,
                                 const NmfConfig& base_config);

// Tab-separated `Q, cophenetic, mean_divergence` rows with a header line.
void write_rank_scan_tsv(const std::filesystem::path& path, std::span<const RankScore> scores);

// Row-major f64 little-endian values plus a JSON sidecar (`<stem>.bin`, `<stem>.json`).
void write_consensus(const ConsensusMatrix& consensus, const std::filesystem::path& stem);

} // namespace mmp
