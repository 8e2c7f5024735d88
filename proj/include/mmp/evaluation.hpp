#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "mmp/ascendancy.hpp"
#include "mmp/ingest.hpp"

namespace mmp {

enum class LookupKind { comorbid, causal };

// Reference disease pairs as vocabulary indices. Comorbid pairs are stored
// with first < second; causal pairs as (cause, effect).
struct PairLookup {
    LookupKind kind = LookupKind::comorbid;
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    RejectSummary rejects;
};

// Builds a lookup, normalizing and deduplicating pairs. Self-pairs and codes
// outside [0, codes) are rejected with a count.
PairLookup make_lookup(LookupKind kind, std::span<const std::pair<std::size_t, std::size_t>> pairs,
                       std::size_t codes);

// CSV with header `code_a,code_b` (comorbid) or `cause,effect` (causal).
PairLookup load_lookup(const std::filesystem::path& path, const DiseaseVocabulary& vocabulary, LookupKind kind);
void write_lookup(const std::filesystem::path& path, const PairLookup& lookup, const DiseaseVocabulary& vocabulary);

struct MetricResult {
    std::string metric;
    std::size_t L = 0;
    std::size_t a = 0;
    std::size_t b = 0;
    std::optional<double> score; // empty when b == 0
    std::optional<double> p_value;
    std::size_t n_perms = 0;
    std::uint64_t seed = 0;

    nlohmann::json to_json() const;
};

// Indices of the L largest weights of one cluster row, ascending index order.
// Ties at the cut-off go to the lower index.
std::vector<std::size_t> top_L(std::span<const double> weights, std::size_t L);
std::vector<std::size_t> top_L(const Eigen::MatrixXd& clusters, Eigen::Index row, std::size_t L);

// Comorbid-pair capture: b counts pairs with an endpoint in any cluster's
// top-L, a counts pairs with both endpoints in one cluster's top-L.
MetricResult c_score(const Eigen::MatrixXd& clusters, const PairLookup& lookup, std::size_t L);

// Causal-pair capture along directed network edges.
MetricResult a_score(std::span<const AscendancyEdge> edges, const Eigen::MatrixXd& clusters, const PairLookup& lookup,
                     std::size_t L);

// Applies a code relabeling: column c of the input becomes column perm[c].
Eigen::MatrixXd permute_columns(const Eigen::MatrixXd& clusters, std::span<const std::size_t> perm);

// Uniform random permutation of [0, n) drawn from a generator seeded by
// (seed, index).
std::vector<std::size_t> draw_permutation(std::size_t n, std::uint64_t seed, std::size_t index);

struct NullDistribution {
    std::optional<double> observed;
    std::vector<std::optional<double>> samples; // empty entries: metric undefined for that draw
    std::optional<double> p_value;
    std::size_t exceed = 0;
};

// Metric evaluated on a relabeled cluster matrix.
using PermutedMetric = std::function<std::optional<double>(const Eigen::MatrixXd&)>;

// p = (1 + #{null >= observed}) / (1 + n_perms). Draws run in parallel and
// are reproducible for a fixed seed regardless of thread count.
NullDistribution permutation_null(const PermutedMetric& metric, const Eigen::MatrixXd& clusters,
                                  std::size_t n_perms, std::uint64_t seed);

// c_score / a_score plus their permutation p-values.
MetricResult evaluate_c_score(const Eigen::MatrixXd& clusters, const PairLookup& lookup, std::size_t L,
                              std::size_t n_perms, std::uint64_t seed);
MetricResult evaluate_a_score(std::span<const AscendancyEdge> edges, const Eigen::MatrixXd& clusters,
                              const PairLookup& lookup, std::size_t L, std::size_t n_perms, std::uint64_t seed);

} // namespace mmp
