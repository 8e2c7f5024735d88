#include "mmp/rank_selection.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include <json.hpp>

#include "binary_io.hpp"
#include "mmp/errors.hpp"
#include "text_io.hpp"

namespace mmp {

std::vector<std::size_t> dominant_cluster(const Eigen::MatrixXd& clusters)
{
    std::vector<std::size_t> owner(static_cast<std::size_t>(clusters.cols()), 0);
    for (Eigen::Index c = 0; c < clusters.cols(); ++c) {
        Eigen::Index best = 0;
        for (Eigen::Index q = 1; q < clusters.rows(); ++q)
            if (clusters(q, c) > clusters(best, c)) best = q;
        owner[static_cast<std::size_t>(c)] = static_cast<std::size_t>(best);
    }
    return owner;
}

Eigen::MatrixXd connectivity(const Eigen::MatrixXd& clusters)
{
    if (clusters.rows() < 1) throw std::invalid_argument("connectivity needs a fitted cluster matrix");
    const auto owner = dominant_cluster(clusters);
    const auto n = clusters.cols();
    Eigen::MatrixXd conn(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j)
            conn(i, j) = owner[static_cast<std::size_t>(i)] == owner[static_cast<std::size_t>(j)] ? 1.0 : 0.0;
    return conn;
}

ConsensusMatrix consensus(std::span<const FactorModel> models)
{
    if (models.size() < 2) throw std::invalid_argument("consensus needs at least two models");
    const auto n = models.front().B.cols();
    ConsensusMatrix out;
    out.values = Eigen::MatrixXd::Zero(n, n);
    for (const auto& m : models) {
        if (m.B.cols() != n) throw std::invalid_argument("consensus over models with different code counts");
        out.values += connectivity(m);
    }
    out.n_runs = models.size();
    out.values /= static_cast<double>(models.size());
    return out;
}

Eigen::MatrixXd average_linkage_cophenetic(const Eigen::MatrixXd& dissimilarity)
{
    const auto n = static_cast<std::size_t>(dissimilarity.rows());
    if (dissimilarity.cols() != dissimilarity.rows()) throw std::invalid_argument("dissimilarity must be square");

    // Active clusters: member lists plus the current average-linkage distance table.
    std::vector<std::vector<std::size_t>> members(n);
    for (std::size_t i = 0; i < n; ++i) members[i] = {i};
    Eigen::MatrixXd dist = dissimilarity;
    std::vector<bool> active(n, true);
    Eigen::MatrixXd coph = Eigen::MatrixXd::Zero(dissimilarity.rows(), dissimilarity.cols());

    for (std::size_t step = 1; step < n; ++step) {
        double best = std::numeric_limits<double>::infinity();
        std::size_t bi = 0;
        std::size_t bj = 0;
        for (std::size_t i = 0; i < n; ++i) {
            if (!active[i]) continue;
            for (std::size_t j = i + 1; j < n; ++j) {
                if (!active[j]) continue;
                const double d = dist(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
                if (d < best) {
                    best = d;
                    bi = i;
                    bj = j;
                }
            }
        }
        for (auto a : members[bi])
            for (auto b : members[bj]) {
                coph(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = best;
                coph(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(a)) = best;
            }

        const auto size_i = static_cast<double>(members[bi].size());
        const auto size_j = static_cast<double>(members[bj].size());
        for (std::size_t k = 0; k < n; ++k) {
            if (!active[k] || k == bi || k == bj) continue;
            const auto ki = static_cast<Eigen::Index>(k);
            const double merged = (size_i * dist(ki, static_cast<Eigen::Index>(bi)) +
                                   size_j * dist(ki, static_cast<Eigen::Index>(bj))) /
                                  (size_i + size_j);
            dist(ki, static_cast<Eigen::Index>(bi)) = merged;
            dist(static_cast<Eigen::Index>(bi), ki) = merged;
        }
        members[bi].insert(members[bi].end(), members[bj].begin(), members[bj].end());
        members[bj].clear();
        active[bj] = false;
    }
    return coph;
}

double cophenetic_coefficient(const ConsensusMatrix& consensus)
{
    const auto n = consensus.values.rows();
    if (n < 3) {
        log_warning("cophenetic coefficient with fewer than three items is defined as 1");
        return 1.0;
    }
    const Eigen::MatrixXd dissimilarity = (1.0 - consensus.values.array()).matrix();
    const auto coph = average_linkage_cophenetic(dissimilarity);

    double mean_x = 0.0;
    double mean_y = 0.0;
    double count = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i + 1; j < n; ++j) {
            mean_x += dissimilarity(i, j);
            mean_y += coph(i, j);
            count += 1.0;
        }
    mean_x /= count;
    mean_y /= count;

    double sxx = 0.0;
    double syy = 0.0;
    double sxy = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i + 1; j < n; ++j) {
            const double dx = dissimilarity(i, j) - mean_x;
            const double dy = coph(i, j) - mean_y;
            sxx += dx * dx;
            syy += dy * dy;
            sxy += dx * dy;
        }
    if (sxx <= 0.0) {
        log_warning("consensus dissimilarities are constant; cophenetic coefficient defined as 1");
        return 1.0;
    }
    if (syy <= 0.0) return 0.0;
    return sxy / std::sqrt(sxx * syy);
}

std::uint64_t rank_seed(std::uint64_t base_seed, std::size_t rank)
{
    // splitmix64 finalizer over (base, rank).
    std::uint64_t z = base_seed + 0x9E3779B97F4A7C15ull * (static_cast<std::uint64_t>(rank) + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

std::vector<RankScore> rank_scan(const SparseMatrix& data, std::span<const std::size_t> ranks, std::size_t n_runs,
                                 const NmfConfig& base_config)
{
    if (ranks.empty()) throw std::invalid_argument("rank_scan needs at least one rank");
    std::vector<RankScore> scores;
    scores.reserve(ranks.size());
    for (auto rank : ranks) {
        auto config = base_config;
        config.rank = rank;
        config.seed = rank_seed(base_config.seed, rank);
        auto batch = multi_restart(data, config, n_runs);
        if (batch.models.size() < 2)
            throw NumericalError("rank " + std::to_string(rank) + ": fewer than two successful NMF runs");

        RankScore score;
        score.rank = rank;
        score.successful_runs = batch.models.size();
        score.failed_runs = batch.failures.size();
        for (const auto& m : batch.models) score.mean_divergence += m.final_divergence();
        score.mean_divergence /= static_cast<double>(batch.models.size());
        score.cophenetic = cophenetic_coefficient(consensus(batch.models));
        log_info("rank " + std::to_string(rank) + ": cophenetic " + std::to_string(score.cophenetic));
        scores.push_back(score);
    }
    return scores;
}

void write_rank_scan_tsv(const std::filesystem::path& path, std::span<const RankScore> scores)
{
    auto out = detail::open_output(path);
    out.precision(17);
    out << "Q\tcophenetic\tmean_divergence\n";
    for (const auto& s : scores) out << s.rank << '\t' << s.cophenetic << '\t' << s.mean_divergence << '\n';
}

void write_consensus(const ConsensusMatrix& consensus, const std::filesystem::path& stem)
{
    auto bin_path = stem;
    bin_path += ".bin";
    auto json_path = stem;
    json_path += ".json";
    auto out = detail::open_output(bin_path, true);
    for (Eigen::Index i = 0; i < consensus.values.rows(); ++i)
        for (Eigen::Index j = 0; j < consensus.values.cols(); ++j) detail::write_le<double>(out, consensus.values(i, j));
    auto meta = detail::open_output(json_path);
    meta << nlohmann::json{{"format", "dense-f64-row-major-le"},
                           {"rows", consensus.values.rows()},
                           {"cols", consensus.values.cols()},
                           {"n_runs", consensus.n_runs}}
                .dump(2)
         << '\n';
}

} // namespace mmp
