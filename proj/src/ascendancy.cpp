#include "mmp/ascendancy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "mmp/errors.hpp"
#include "parallel.hpp"
#include "text_io.hpp"

namespace mmp {

namespace {

void check_fraction(double fraction)
{
    if (!(fraction > 0.0 && fraction <= 1.0)) throw std::invalid_argument("binarization fraction must be in (0, 1]");
}

// Colors cycle per node; edges take the color of their source node.
constexpr std::array<const char*, 12> kPalette = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b",
                                                  "#e377c2", "#7f7f7f", "#bcbd22", "#17becf", "#393b79", "#637939"};

} // namespace

BinaryTimeCourse binarize(std::span<const double> course, double fraction, std::size_t cluster_id)
{
    check_fraction(fraction);
    BinaryTimeCourse out;
    out.cluster_id = cluster_id;
    out.active.assign(course.size(), 0);
    const double peak = course.empty() ? 0.0 : *std::max_element(course.begin(), course.end());
    if (!(peak > 0.0)) {
        out.degenerate = true;
        log_warning("time course of cluster " + std::to_string(cluster_id) + " is all zero");
        return out;
    }
    out.threshold_used = fraction * peak;
    for (std::size_t i = 0; i < course.size(); ++i) out.active[i] = course[i] >= out.threshold_used ? 1 : 0;
    return out;
}

BinaryTimeCourse binarize_per_block(std::span<const double> course, std::size_t block, double fraction,
                                    std::size_t cluster_id)
{
    check_fraction(fraction);
    if (block == 0 || course.size() % block != 0)
        throw std::invalid_argument("course length is not a multiple of the block length");
    BinaryTimeCourse out;
    out.cluster_id = cluster_id;
    out.active.assign(course.size(), 0);
    const double peak = course.empty() ? 0.0 : *std::max_element(course.begin(), course.end());
    out.threshold_used = fraction * peak;
    out.degenerate = !(peak > 0.0);
    for (std::size_t start = 0; start < course.size(); start += block) {
        const auto segment = course.subspan(start, block);
        const double local = *std::max_element(segment.begin(), segment.end());
        if (!(local > 0.0)) continue;
        for (std::size_t i = 0; i < block; ++i) out.active[start + i] = segment[i] >= fraction * local ? 1 : 0;
    }
    return out;
}

ThetaEstimate theta_from_counts(const std::array<std::uint64_t, 4>& z, double alpha)
{
    if (!(alpha >= 0.0)) throw std::invalid_argument("theta smoothing alpha must be >= 0");
    ThetaEstimate est;
    est.z = z;
    const double total = static_cast<double>(z[0] + z[1] + z[2] + z[3]) + 4.0 * alpha;
    if (!(total > 0.0)) throw std::invalid_argument("theta estimate needs at least one observation");
    for (std::size_t i = 0; i < 4; ++i) est.theta[i] = (static_cast<double>(z[i]) + alpha) / total;
    return est;
}

ThetaEstimate estimate_theta(std::span<const std::uint8_t> v, std::span<const std::uint8_t> w, double alpha)
{
    if (v.size() != w.size()) throw std::invalid_argument("binary time courses differ in length");
    if (v.empty()) throw std::invalid_argument("binary time courses are empty");
    std::array<std::uint64_t, 4> z{};
    for (std::size_t i = 0; i < v.size(); ++i) {
        const bool a = v[i] != 0;
        const bool b = w[i] != 0;
        ++z[a ? (b ? 0 : 1) : (b ? 2 : 3)];
    }
    return theta_from_counts(z, alpha);
}

KappaTerms kappa_terms(const std::array<double, 4>& theta)
{
    const auto [t1, t2, t3, t4] = theta;
    const double v_marginal = t1 + t2;
    const double w_marginal = t1 + t3;

    KappaTerms terms;
    terms.expected = v_marginal * w_marginal;
    terms.upper = std::min(v_marginal, w_marginal);
    terms.lower = std::max(0.0, t1 - t4); // 2*t1 + t2 + t3 - 1 when the cells sum to one

    // The differences below are written in product form so that they are
    // exactly zero whenever they vanish analytically.
    const double excess = t1 * t4 - t2 * t3;
    const double room_above = v_marginal <= w_marginal ? v_marginal * (t2 + t4) : w_marginal * (t3 + t4);
    const double room_below = t1 <= t4 ? terms.expected : (t2 + t4) * (t3 + t4);
    if (excess == 0.0) {
        terms.balance = 0.5;
        terms.kappa = 0.0;
        return terms;
    }
    if (excess > 0.0)
        terms.balance = excess / (2.0 * room_above) + 0.5;
    else
        terms.balance = 0.5 - excess / (2.0 * room_below);

    const double denominator = terms.balance * room_above + (1.0 - terms.balance) * room_below;
    if (!(denominator > 0.0)) throw std::logic_error("kappa denominator vanished away from independence");
    terms.kappa = std::clamp(excess / denominator, -1.0, 1.0);
    return terms;
}

double kappa(const std::array<double, 4>& theta) { return kappa_terms(theta).kappa; }
double kappa(const ThetaEstimate& estimate) { return kappa(estimate.theta); }

std::optional<double> tau(const std::array<double, 4>& theta)
{
    const double v_marginal = theta[0] + theta[1];
    const double w_marginal = theta[0] + theta[2];
    if (theta[1] >= theta[2]) {
        if (!(v_marginal > 0.0)) return std::nullopt;
        return 1.0 - w_marginal / v_marginal;
    }
    return v_marginal / w_marginal - 1.0;
}

std::optional<double> tau(const ThetaEstimate& estimate) { return tau(estimate.theta); }

std::string to_string(Aggregation aggregation)
{
    return aggregation == Aggregation::per_patient ? "per_patient" : "pooled";
}

Aggregation parse_aggregation(std::string_view text)
{
    if (text == "per_patient") return Aggregation::per_patient;
    if (text == "pooled") return Aggregation::pooled;
    throw ConfigError("unknown aggregation mode: " + std::string(text));
}

std::string to_string(BinarizeScope scope) { return scope == BinarizeScope::global ? "global" : "per_patient"; }

BinarizeScope parse_binarize_scope(std::string_view text)
{
    if (text == "global") return BinarizeScope::global;
    if (text == "per_patient") return BinarizeScope::per_patient;
    throw ConfigError("unknown binarize scope: " + std::string(text));
}

PairwiseStatistics pairwise_statistics(const RowMatrix& time_courses, std::size_t ages, const PairwiseOptions& options)
{
    check_fraction(options.fraction);
    const auto rows = static_cast<std::size_t>(time_courses.rows());
    const auto q_count = static_cast<std::size_t>(time_courses.cols());
    if (ages == 0 || rows % ages != 0)
        throw std::invalid_argument("time course length " + std::to_string(rows) + " is not a multiple of T=" +
                                    std::to_string(ages));
    const std::size_t patients = rows / ages;

    std::vector<BinaryTimeCourse> courses(q_count);
    std::vector<double> column(rows);
    for (std::size_t q = 0; q < q_count; ++q) {
        for (std::size_t r = 0; r < rows; ++r)
            column[r] = time_courses(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(q));
        courses[q] = options.scope == BinarizeScope::global ? binarize(column, options.fraction, q)
                                                            : binarize_per_block(column, ages, options.fraction, q);
    }

    // Per-patient "any active" flags for the degeneracy rule.
    std::vector<std::vector<std::uint8_t>> any_active(q_count, std::vector<std::uint8_t>(patients, 0));
    for (std::size_t q = 0; q < q_count; ++q)
        for (std::size_t p = 0; p < patients; ++p)
            for (std::size_t t = 0; t < ages; ++t)
                if (courses[q].active[p * ages + t]) {
                    any_active[q][p] = 1;
                    break;
                }

    const auto n = static_cast<Eigen::Index>(q_count);
    PairwiseStatistics stats;
    stats.kappa = Eigen::MatrixXd::Constant(n, n, std::numeric_limits<double>::quiet_NaN());
    stats.tau = Eigen::MatrixXd::Constant(n, n, std::numeric_limits<double>::quiet_NaN());
    stats.contributors = Eigen::MatrixXi::Zero(n, n);
    stats.valid = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(n, n, false);
    for (const auto& c : courses) stats.thresholds.push_back(c.threshold_used);

    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t q = 0; q < q_count; ++q)
        for (std::size_t r = q; r < q_count; ++r) pairs.emplace_back(q, r);

    struct PairResult {
        double kappa_sum = 0.0;
        double tau_sum = 0.0;
        int count = 0;
    };
    std::vector<PairResult> results(pairs.size());

    detail::parallel_for(pairs.size(), [&](std::size_t i) {
        const auto [q, r] = pairs[i];
        const auto& v = courses[q].active;
        const auto& w = courses[r].active;
        auto& out = results[i];
        if (options.aggregation == Aggregation::pooled) {
            if (courses[q].degenerate || courses[r].degenerate) return;
            const auto est = estimate_theta(v, w, options.alpha);
            const auto t = tau(est);
            if (!t) return;
            out.kappa_sum = kappa(est);
            out.tau_sum = *t;
            out.count = 1;
            return;
        }
        for (std::size_t p = 0; p < patients; ++p) {
            if (!any_active[q][p] || !any_active[r][p]) continue;
            const auto offset = p * ages;
            const auto est = estimate_theta(std::span(v).subspan(offset, ages), std::span(w).subspan(offset, ages),
                                            options.alpha);
            const auto t = tau(est);
            if (!t) continue;
            out.kappa_sum += kappa(est);
            out.tau_sum += *t;
            ++out.count;
        }
    });

    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const auto q = static_cast<Eigen::Index>(pairs[i].first);
        const auto r = static_cast<Eigen::Index>(pairs[i].second);
        const auto& res = results[i];
        stats.contributors(q, r) = stats.contributors(r, q) = res.count;
        if (res.count == 0) continue;
        const double k = res.kappa_sum / res.count;
        const double t = res.tau_sum / res.count;
        stats.kappa(q, r) = stats.kappa(r, q) = k;
        stats.tau(q, r) = t;
        stats.tau(r, q) = -t;
        stats.valid(q, r) = stats.valid(r, q) = true;
    }
    return stats;
}

AscendancyNetwork build_network(const PairwiseStatistics& statistics, const Eigen::MatrixXd& clusters,
                                std::span<const std::string> codes, std::size_t top_k_edges, std::size_t top_diseases)
{
    const auto q_count = clusters.rows();
    if (statistics.kappa.rows() != q_count || statistics.tau.rows() != q_count)
        throw std::invalid_argument("pairwise statistics do not match the number of clusters");
    if (codes.size() != static_cast<std::size_t>(clusters.cols()))
        throw std::invalid_argument("code list does not match cluster matrix width");

    AscendancyNetwork network;
    for (Eigen::Index q = 0; q < q_count; ++q) {
        ClusterNode node;
        node.id = static_cast<std::size_t>(q);
        node.color = kPalette[static_cast<std::size_t>(q) % kPalette.size()];
        std::vector<std::size_t> order(static_cast<std::size_t>(clusters.cols()));
        for (std::size_t c = 0; c < order.size(); ++c) order[c] = c;
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return clusters(q, static_cast<Eigen::Index>(a)) > clusters(q, static_cast<Eigen::Index>(b));
        });
        for (std::size_t k = 0; k < std::min(top_diseases, order.size()); ++k)
            node.top_diseases.push_back({order[k], codes[order[k]], clusters(q, static_cast<Eigen::Index>(order[k]))});
        network.nodes.push_back(std::move(node));
    }

    struct Candidate {
        Eigen::Index q, r;
        double kappa;
    };
    std::vector<Candidate> candidates;
    for (Eigen::Index q = 0; q < q_count; ++q)
        for (Eigen::Index r = q + 1; r < q_count; ++r)
            if (statistics.valid(q, r) && std::isfinite(statistics.tau(q, r)))
                candidates.push_back({q, r, statistics.kappa(q, r)});
    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const Candidate& a, const Candidate& b) { return a.kappa > b.kappa; });

    if (top_k_edges > candidates.size()) {
        if (top_k_edges > 0)
            log_warning("requested " + std::to_string(top_k_edges) + " edges but only " +
                        std::to_string(candidates.size()) + " cluster pairs are available");
        top_k_edges = candidates.size();
    }
    for (std::size_t i = 0; i < top_k_edges; ++i) {
        const auto& c = candidates[i];
        const double t = statistics.tau(c.q, c.r);
        AscendancyEdge edge;
        edge.kappa = c.kappa;
        if (t >= 0.0) {
            edge.from = static_cast<std::size_t>(c.q);
            edge.to = static_cast<std::size_t>(c.r);
            edge.tau = t;
            edge.undirected = t == 0.0;
        } else {
            edge.from = static_cast<std::size_t>(c.r);
            edge.to = static_cast<std::size_t>(c.q);
            edge.tau = -t;
        }
        network.edges.push_back(edge);
    }
    network.kappa_threshold = network.edges.empty() ? 0.0 : network.edges.back().kappa;
    return network;
}

void write_pair_matrix_tsv(const std::filesystem::path& path, const Eigen::MatrixXd& values)
{
    auto out = detail::open_output(path);
    out.precision(17);
    out << "cluster";
    for (Eigen::Index q = 0; q < values.cols(); ++q) out << "\tDC" << q;
    out << '\n';
    for (Eigen::Index q = 0; q < values.rows(); ++q) {
        out << "DC" << q;
        for (Eigen::Index r = 0; r < values.cols(); ++r) {
            out << '\t';
            if (std::isfinite(values(q, r)))
                out << values(q, r);
            else
                out << "NA";
        }
        out << '\n';
    }
}

nlohmann::json network_to_json(const AscendancyNetwork& network)
{
    nlohmann::json nodes = nlohmann::json::array();
    for (const auto& node : network.nodes) {
        nlohmann::json top = nlohmann::json::array();
        for (const auto& d : node.top_diseases) top.push_back({{"code", d.code}, {"index", d.index}, {"weight", d.weight}});
        nodes.push_back({{"id", node.id}, {"top_diseases", top}, {"color", node.color}});
    }
    nlohmann::json edges = nlohmann::json::array();
    for (const auto& e : network.edges)
        edges.push_back(
            {{"from", e.from}, {"to", e.to}, {"kappa", e.kappa}, {"tau", e.tau}, {"undirected", e.undirected}});
    return {{"kappa_threshold", network.kappa_threshold}, {"nodes", nodes}, {"edges", edges}};
}

AscendancyNetwork network_from_json(const nlohmann::json& j)
{
    AscendancyNetwork network;
    try {
        network.kappa_threshold = j.at("kappa_threshold").get<double>();
        for (const auto& n : j.at("nodes")) {
            ClusterNode node;
            node.id = n.at("id").get<std::size_t>();
            node.color = n.value("color", std::string{});
            for (const auto& d : n.at("top_diseases"))
                node.top_diseases.push_back(
                    {d.value("index", std::size_t{0}), d.at("code").get<std::string>(), d.at("weight").get<double>()});
            network.nodes.push_back(std::move(node));
        }
        for (const auto& e : j.at("edges"))
            network.edges.push_back({e.at("from").get<std::size_t>(), e.at("to").get<std::size_t>(),
                                     e.at("kappa").get<double>(), e.at("tau").get<double>(),
                                     e.value("undirected", false)});
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed network JSON: " + std::string(e.what()));
    }
    return network;
}

std::string network_to_dot(const AscendancyNetwork& network)
{
    std::ostringstream dot;
    dot.precision(4);
    dot << "digraph ascendancy {\n";
    dot << "  // edge color = color of the ascendant (source) node\n";
    dot << "  node [shape=box, style=rounded];\n";
    for (const auto& node : network.nodes) {
        dot << "  DC" << node.id << " [label=\"DC" << node.id;
        for (const auto& d : node.top_diseases) dot << "\\n" << d.code << " (" << std::fixed << d.weight << ')';
        dot.unsetf(std::ios::floatfield);
        dot << "\", color=\"" << node.color << "\"];\n";
    }
    std::vector<std::string> colors(network.nodes.size());
    for (const auto& node : network.nodes)
        if (node.id < colors.size()) colors[node.id] = node.color;
    for (const auto& e : network.edges) {
        dot << "  DC" << e.from << " -> DC" << e.to << " [kappa=" << e.kappa << ", tau=" << e.tau;
        if (e.from < colors.size() && !colors[e.from].empty()) dot << ", color=\"" << colors[e.from] << '"';
        if (e.undirected) dot << ", dir=none";
        dot << "];\n";
    }
    dot << "}\n";
    return dot.str();
}

} // namespace mmp
