#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mmp/sparse.hpp"

namespace mmp {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct NmfConfig {
    std::size_t rank = 1;
    int max_iters = 500;
    // Stop when the objective dropped by less than tol (relative) over `window` iterations.
    double tol = 1e-6;
    int window = 10;
    // Underflow floor applied to every factor entry after each update.
    double epsilon = 1e-12;
    std::uint64_t seed = 0;
};

// D ~ A * B with A: rows x rank time courses, B: rank x C disease clusters.
struct FactorModel {
    RowMatrix A;
    Eigen::MatrixXd B;
    std::size_t rank = 0;
    std::uint64_t seed = 0;
    int iterations = 0;
    bool converged = false;
    // Objective at initialization followed by one value per iteration.
    std::vector<double> divergence_trace;

    double final_divergence() const { return divergence_trace.empty() ? 0.0 : divergence_trace.back(); }
};

// Generalized Kullback-Leibler divergence sum[d ln(d / ab) - d + ab].
double kl_divergence(const SparseMatrix& data, const RowMatrix& A, const Eigen::MatrixXd& B);

// One multiplicative update: B first, then A against the updated B. Both
// factors are floored at epsilon afterwards.
void update_step(const SparseMatrix& data, RowMatrix& A, Eigen::MatrixXd& B, double epsilon, double exponent = 1.0);

// Uniform (0, 1] factors rescaled so that mean(A * B) == mean(D).
void initialize_factors(const SparseMatrix& data, std::size_t rank, std::uint64_t seed, RowMatrix& A,
                        Eigen::MatrixXd& B);

// Throws std::invalid_argument for an invalid config or negative data and
// NumericalError when the objective becomes non-finite.
FactorModel factorize(const SparseMatrix& data, const NmfConfig& config);
FactorModel factorize(const SparseMatrix& data, const NmfConfig& config, RowMatrix A, Eigen::MatrixXd B);

struct RunFailure {
    std::uint64_t seed = 0;
    std::string message;
};

struct RestartBatch {
    std::vector<FactorModel> models; // successful runs, seed order
    std::vector<RunFailure> failures;
};

// Runs with seeds seed, seed+1, ..., seed+n_runs-1, in parallel.
RestartBatch multi_restart(const SparseMatrix& data, const NmfConfig& config, std::size_t n_runs);

// Rescales each row of B to a maximum of 1 and compensates the columns of A.
FactorModel normalized_for_reporting(const FactorModel& model);

// manifest.json + A.bin / B.bin (row-major f64 little-endian) + B.tsv.
void write_model(const FactorModel& model, const std::filesystem::path& dir, std::span<const std::string> codes);
FactorModel read_model(const std::filesystem::path& dir);

} // namespace mmp
