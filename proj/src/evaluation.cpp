#include "mmp/evaluation.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <set>
#include <stdexcept>

#include "mmp/errors.hpp"
#include "parallel.hpp"
#include "text_io.hpp"

namespace mmp {

namespace {

// membership[q][c] = code c is in the top-L of cluster q.
std::vector<std::vector<std::uint8_t>> top_membership(const Eigen::MatrixXd& clusters, std::size_t L)
{
    std::vector<std::vector<std::uint8_t>> membership(static_cast<std::size_t>(clusters.rows()),
                                                      std::vector<std::uint8_t>(static_cast<std::size_t>(clusters.cols()), 0));
    for (Eigen::Index q = 0; q < clusters.rows(); ++q)
        for (auto c : top_L(clusters, q, L)) membership[static_cast<std::size_t>(q)][c] = 1;
    return membership;
}

std::optional<double> ratio(std::size_t a, std::size_t b)
{
    if (b == 0) return std::nullopt;
    return static_cast<double>(a) / static_cast<double>(b);
}

} // namespace

PairLookup make_lookup(LookupKind kind, std::span<const std::pair<std::size_t, std::size_t>> pairs, std::size_t codes)
{
    PairLookup lookup;
    lookup.kind = kind;
    std::set<std::pair<std::size_t, std::size_t>> seen;
    for (auto [first, second] : pairs) {
        if (first >= codes || second >= codes) {
            lookup.rejects.add("unknown_code");
            continue;
        }
        if (first == second) {
            lookup.rejects.add("self_pair");
            continue;
        }
        if (kind == LookupKind::comorbid && first > second) std::swap(first, second);
        if (!seen.emplace(first, second).second) {
            lookup.rejects.add("duplicate");
            continue;
        }
        lookup.pairs.emplace_back(first, second);
    }
    return lookup;
}

PairLookup load_lookup(const std::filesystem::path& path, const DiseaseVocabulary& vocabulary, LookupKind kind)
{
    auto in = detail::open_input(path);
    const auto header = detail::read_header(in);
    const auto fields = detail::split(header);
    const std::pair<std::string_view, std::string_view> expected =
        kind == LookupKind::comorbid ? std::pair<std::string_view, std::string_view>{"code_a", "code_b"}
                                     : std::pair<std::string_view, std::string_view>{"cause", "effect"};
    if (fields.size() != 2 || fields[0] != expected.first || fields[1] != expected.second)
        throw DataError("lookup header mismatch in " + path.string() + ": expected '" + std::string(expected.first) +
                        "," + std::string(expected.second) + "'");

    RejectSummary unresolved;
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    std::string line;
    while (std::getline(in, line)) {
        if (detail::trim(line).empty()) continue;
        const auto row = detail::split(line);
        if (row.size() != 2) {
            unresolved.add("malformed");
            continue;
        }
        const auto a = vocabulary.find(row[0]);
        const auto b = vocabulary.find(row[1]);
        if (!a || !b) {
            unresolved.add("unknown_code");
            continue;
        }
        pairs.emplace_back(*a, *b);
    }
    auto lookup = make_lookup(kind, pairs, vocabulary.size());
    for (const auto& [reason, count] : unresolved.reasons) {
        lookup.rejects.rejected += count;
        lookup.rejects.reasons[reason] += count;
    }
    if (lookup.rejects.rejected > 0)
        log_warning("lookup " + path.string() + ": " + lookup.rejects.to_json().dump());
    return lookup;
}

void write_lookup(const std::filesystem::path& path, const PairLookup& lookup, const DiseaseVocabulary& vocabulary)
{
    auto out = detail::open_output(path);
    out << (lookup.kind == LookupKind::comorbid ? "code_a,code_b" : "cause,effect") << '\n';
    for (const auto& [a, b] : lookup.pairs) out << vocabulary.code(a) << ',' << vocabulary.code(b) << '\n';
}

nlohmann::json MetricResult::to_json() const
{
    nlohmann::json j = {{"L", L}, {"metric", metric}, {"a", a}, {"b", b}, {"n_perms", n_perms}, {"seed", seed}};
    j["score"] = score ? nlohmann::json(*score) : nlohmann::json(nullptr);
    j["p_value"] = p_value ? nlohmann::json(*p_value) : nlohmann::json(nullptr);
    return j;
}

std::vector<std::size_t> top_L(std::span<const double> weights, std::size_t L)
{
    if (L < 1 || L > weights.size())
        throw std::invalid_argument("top_L needs 1 <= L <= C (L=" + std::to_string(L) + ", C=" +
                                    std::to_string(weights.size()) + ")");
    std::vector<std::size_t> order(weights.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return weights[a] > weights[b]; });
    order.resize(L);
    std::sort(order.begin(), order.end());
    return order;
}

std::vector<std::size_t> top_L(const Eigen::MatrixXd& clusters, Eigen::Index row, std::size_t L)
{
    std::vector<double> weights(static_cast<std::size_t>(clusters.cols()));
    for (Eigen::Index c = 0; c < clusters.cols(); ++c) weights[static_cast<std::size_t>(c)] = clusters(row, c);
    return top_L(weights, L);
}

MetricResult c_score(const Eigen::MatrixXd& clusters, const PairLookup& lookup, std::size_t L)
{
    if (lookup.kind != LookupKind::comorbid) throw std::invalid_argument("c_score needs a comorbid lookup");
    const auto membership = top_membership(clusters, L);
    std::vector<std::uint8_t> in_any(static_cast<std::size_t>(clusters.cols()), 0);
    for (const auto& row : membership)
        for (std::size_t c = 0; c < row.size(); ++c) in_any[c] |= row[c];

    MetricResult result;
    result.metric = "C_L";
    result.L = L;
    for (const auto& [i, j] : lookup.pairs) {
        if (i >= in_any.size() || j >= in_any.size()) throw std::out_of_range("lookup code outside cluster matrix");
        if (!in_any[i] && !in_any[j]) continue;
        ++result.b;
        for (const auto& row : membership)
            if (row[i] && row[j]) {
                ++result.a;
                break;
            }
    }
    result.score = ratio(result.a, result.b);
    return result;
}

MetricResult a_score(std::span<const AscendancyEdge> edges, const Eigen::MatrixXd& clusters, const PairLookup& lookup,
                     std::size_t L)
{
    if (lookup.kind != LookupKind::causal) throw std::invalid_argument("a_score needs a causal lookup");
    MetricResult result;
    result.metric = "A_L";
    result.L = L;
    if (edges.empty()) return result;

    const auto membership = top_membership(clusters, L);
    std::vector<std::uint8_t> in_edge_cluster(static_cast<std::size_t>(clusters.cols()), 0);
    for (const auto& e : edges) {
        if (e.from >= membership.size() || e.to >= membership.size())
            throw std::out_of_range("network edge references a missing cluster");
        for (std::size_t c = 0; c < in_edge_cluster.size(); ++c)
            in_edge_cluster[c] |= membership[e.from][c] | membership[e.to][c];
    }

    for (const auto& [cause, effect] : lookup.pairs) {
        if (cause >= in_edge_cluster.size() || effect >= in_edge_cluster.size())
            throw std::out_of_range("lookup code outside cluster matrix");
        if (!in_edge_cluster[cause] && !in_edge_cluster[effect]) continue;
        ++result.b;
        for (const auto& e : edges) {
            const bool forward = membership[e.from][cause] && membership[e.to][effect];
            const bool backward = e.undirected && membership[e.to][cause] && membership[e.from][effect];
            if (forward || backward) {
                ++result.a;
                break;
            }
        }
    }
    result.score = ratio(result.a, result.b);
    return result;
}

Eigen::MatrixXd permute_columns(const Eigen::MatrixXd& clusters, std::span<const std::size_t> perm)
{
    if (perm.size() != static_cast<std::size_t>(clusters.cols()))
        throw std::invalid_argument("permutation length does not match cluster matrix width");
    Eigen::MatrixXd out(clusters.rows(), clusters.cols());
    for (Eigen::Index c = 0; c < clusters.cols(); ++c)
        out.col(static_cast<Eigen::Index>(perm[static_cast<std::size_t>(c)])) = clusters.col(c);
    return out;
}

std::vector<std::size_t> draw_permutation(std::size_t n, std::uint64_t seed, std::size_t index)
{
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(static_cast<std::uint64_t>(index) >> 32)};
    std::mt19937_64 rng(seq);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    return perm;
}

NullDistribution permutation_null(const PermutedMetric& metric, const Eigen::MatrixXd& clusters, std::size_t n_perms,
                                  std::uint64_t seed)
{
    if (n_perms < 1) throw std::invalid_argument("permutation_null needs n_perms >= 1");
    NullDistribution null;
    null.observed = metric(clusters);
    null.samples.resize(n_perms);
    const auto codes = static_cast<std::size_t>(clusters.cols());
    detail::parallel_for(n_perms, [&](std::size_t k) {
        const auto perm = draw_permutation(codes, seed, k);
        null.samples[k] = metric(permute_columns(clusters, perm));
    });
    if (!null.observed) {
        log_warning("metric undefined on observed data; no p-value");
        return null;
    }
    for (const auto& s : null.samples)
        if (s && *s >= *null.observed) ++null.exceed;
    null.p_value = static_cast<double>(1 + null.exceed) / static_cast<double>(1 + n_perms);
    return null;
}

MetricResult evaluate_c_score(const Eigen::MatrixXd& clusters, const PairLookup& lookup, std::size_t L,
                              std::size_t n_perms, std::uint64_t seed)
{
    auto result = c_score(clusters, lookup, L);
    result.seed = seed;
    if (!result.score) {
        log_warning("C_L undefined at L=" + std::to_string(L) + ": no lookup pair touches any top-L set");
        return result;
    }
    if (n_perms == 0) return result;
    result.n_perms = n_perms;
    const auto null = permutation_null(
        [&](const Eigen::MatrixXd& b) { return c_score(b, lookup, L).score; }, clusters, n_perms, seed);
    result.p_value = null.p_value;
    return result;
}

MetricResult evaluate_a_score(std::span<const AscendancyEdge> edges, const Eigen::MatrixXd& clusters,
                              const PairLookup& lookup, std::size_t L, std::size_t n_perms, std::uint64_t seed)
{
    auto result = a_score(edges, clusters, lookup, L);
    result.seed = seed;
    if (!result.score) {
        log_warning("A_L undefined at L=" + std::to_string(L) + (edges.empty() ? ": empty network" : ": b = 0"));
        return result;
    }
    if (n_perms == 0) return result;
    result.n_perms = n_perms;
    const auto null = permutation_null(
        [&](const Eigen::MatrixXd& b) { return a_score(edges, b, lookup, L).score; }, clusters, n_perms, seed);
    result.p_value = null.p_value;
    return result;
}

} // namespace mmp
