#include "mmp/synth.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>

#include "mmp/errors.hpp"
#include "parallel.hpp"
#include "text_io.hpp"

namespace mmp {

void PlantedModel::validate() const
{
    if (clusters.rows() < 1 || clusters.cols() < 2) throw ConfigError("planted model needs Q >= 1 and C >= 2");
    if (templates.rows() != clusters.rows() || templates.cols() < 1)
        throw ConfigError("planted templates must have one row per cluster");
    if ((clusters.array() < 0.0).any() || (templates.array() < 0.0).any() || !clusters.allFinite() ||
        !templates.allFinite())
        throw ConfigError("planted factors must be finite and non-negative");
    if (!(noise_rate >= 0.0 && noise_rate <= 1.0)) throw ConfigError("noise rate must lie in [0, 1]");
    if (!(scale_log_sigma >= 0.0)) throw ConfigError("scale log-sigma must be >= 0");
    for (Eigen::Index q = 0; q < clusters.rows(); ++q) {
        const double peak = clusters.row(q).maxCoeff();
        if ((clusters.row(q).array() == peak).count() != 1)
            throw ConfigError("planted cluster " + std::to_string(q) + " has no unique top disease");
    }
}

Eigen::VectorXd gaussian_template(std::size_t ages, double center, double width, double peak, double cutoff)
{
    Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(ages));
    for (std::size_t t = 0; t < ages; ++t) {
        const double d = static_cast<double>(t) - center;
        if (std::abs(d) > cutoff) continue;
        out(static_cast<Eigen::Index>(t)) = peak * std::exp(-0.5 * d * d / (width * width));
    }
    return out;
}

Eigen::VectorXd window_template(std::size_t ages, std::size_t first, std::size_t last, double rate)
{
    Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(ages));
    for (std::size_t t = first; t <= last && t < ages; ++t) out(static_cast<Eigen::Index>(t)) = rate;
    return out;
}

PlantedModel disjoint_planted_model(std::size_t rank, std::size_t codes, std::size_t ages, double noise_rate,
                                    double peak_rate)
{
    if (rank < 1 || codes < 2 * rank) throw ConfigError("disjoint planted model needs at least two codes per cluster");
    if (ages < 4 * rank) throw ConfigError("disjoint planted model needs at least four ages per cluster");

    PlantedModel model;
    model.noise_rate = noise_rate;
    model.clusters = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(rank), static_cast<Eigen::Index>(codes));
    model.templates = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(rank), static_cast<Eigen::Index>(ages));

    const std::size_t block = codes / rank;
    const double slot = static_cast<double>(ages) / static_cast<double>(rank);
    for (std::size_t q = 0; q < rank; ++q) {
        const std::size_t first = q * block;
        const std::size_t last = q + 1 == rank ? codes : first + block;
        const auto size = last - first;
        for (std::size_t c = first; c < last; ++c) {
            const double step = size > 1 ? 0.5 * static_cast<double>(c - first) / static_cast<double>(size - 1) : 0.0;
            model.clusters(static_cast<Eigen::Index>(q), static_cast<Eigen::Index>(c)) = 1.0 - step;
        }
        const double center = slot * (static_cast<double>(q) + 0.5);
        model.templates.row(static_cast<Eigen::Index>(q)) =
            gaussian_template(ages, center, slot / 4.0, peak_rate, slot / 2.0 - 0.5).transpose();
    }
    model.validate();
    return model;
}

SyntheticCohort generate_cohort(const PlantedModel& model, std::size_t patients, std::uint64_t seed,
                                const GeneratorOptions& options)
{
    model.validate();
    if (options.strata.empty()) throw ConfigError("generator needs at least one stratum label");
    if (options.first_age < 0) throw ConfigError("generator first_age must be >= 0");
    const auto rank = static_cast<Eigen::Index>(model.rank());
    const auto codes = model.codes();
    const auto ages = model.ages();

    std::vector<std::string> code_names(codes);
    const int digits = static_cast<int>(std::to_string(codes - 1).size());
    for (std::size_t c = 0; c < codes; ++c) {
        std::ostringstream name;
        name << 'D' << std::setw(std::max(2, digits)) << std::setfill('0') << c;
        code_names[c] = name.str();
    }

    SyntheticCohort cohort;
    cohort.vocabulary = DiseaseVocabulary(code_names);
    cohort.scales = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(patients), rank);
    std::vector<std::vector<EventRecord>> per_patient(patients);
    cohort.patients.resize(patients);

    const int id_digits = static_cast<int>(std::to_string(patients).size());
    detail::parallel_for(patients, [&](std::size_t p) {
        std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                          static_cast<std::uint32_t>(p), static_cast<std::uint32_t>(static_cast<std::uint64_t>(p) >> 32)};
        std::mt19937_64 rng(seq);
        std::normal_distribution<double> log_scale(0.0, 1.0);
        std::uniform_real_distribution<double> unit(0.0, 1.0);

        Eigen::VectorXd s(rank);
        for (Eigen::Index q = 0; q < rank; ++q) s(q) = std::exp(model.scale_log_sigma * log_scale(rng));
        cohort.scales.row(static_cast<Eigen::Index>(p)) = s.transpose();
        // Hazard over (age, disease) for this patient.
        const Eigen::MatrixXd hazard = model.templates.transpose() * s.asDiagonal() * model.clusters;

        std::ostringstream id;
        id << options.id_prefix << std::setw(std::max(6, id_digits)) << std::setfill('0') << p;
        const auto& stratum = options.strata[p % options.strata.size()];
        cohort.patients[p] = PatientMeta{id.str(), 0, static_cast<int>(ages), stratum};

        for (std::size_t c = 0; c < codes; ++c) {
            for (std::size_t t = static_cast<std::size_t>(options.first_age); t < ages; ++t) {
                const double rate =
                    std::min(1.0, hazard(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(c)) + model.noise_rate);
                if (unit(rng) < rate) {
                    per_patient[p].push_back(EventRecord{id.str(), code_names[c], c, static_cast<int>(t), stratum});
                    break;
                }
            }
        }
        std::sort(per_patient[p].begin(), per_patient[p].end(), [](const EventRecord& a, const EventRecord& b) {
            return a.age_years != b.age_years ? a.age_years < b.age_years : a.code_index < b.code_index;
        });
    });

    for (auto& list : per_patient)
        for (auto& e : list) cohort.events.push_back(std::move(e));
    if (cohort.events.empty()) log_warning("synthetic cohort contains no events");

    auto to_rows = [](const Eigen::MatrixXd& m) {
        std::vector<std::vector<double>> rows(static_cast<std::size_t>(m.rows()));
        for (Eigen::Index i = 0; i < m.rows(); ++i)
            for (Eigen::Index j = 0; j < m.cols(); ++j) rows[static_cast<std::size_t>(i)].push_back(m(i, j));
        return rows;
    };
    cohort.truth = {{"Q_true", model.rank()},
                    {"N", patients},
                    {"T", ages},
                    {"C", codes},
                    {"seed", seed},
                    {"noise_rate", model.noise_rate},
                    {"scale_log_sigma", model.scale_log_sigma},
                    {"first_age", options.first_age},
                    {"codes", code_names},
                    {"B_true", to_rows(model.clusters)},
                    {"templates", to_rows(model.templates)}};
    return cohort;
}

std::vector<std::pair<std::size_t, std::size_t>> planted_pairs(const PlantedModel& model, std::size_t L)
{
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    const auto codes = model.codes();
    for (Eigen::Index q = 0; q < model.clusters.rows(); ++q) {
        std::vector<std::size_t> order(codes);
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return model.clusters(q, static_cast<Eigen::Index>(a)) > model.clusters(q, static_cast<Eigen::Index>(b));
        });
        order.resize(std::min(L, codes));
        for (std::size_t i = 0; i < order.size(); ++i)
            for (std::size_t j = i + 1; j < order.size(); ++j)
                pairs.emplace_back(std::min(order[i], order[j]), std::max(order[i], order[j]));
    }
    return pairs;
}

double cosine_similarity(const Eigen::VectorXd& a, const Eigen::VectorXd& b)
{
    const double na = a.norm();
    const double nb = b.norm();
    if (na == 0.0 || nb == 0.0) return 0.0;
    return a.dot(b) / (na * nb);
}

ClusterMatch match_clusters(const Eigen::MatrixXd& recovered, const Eigen::MatrixXd& truth)
{
    if (recovered.cols() != truth.cols()) throw std::invalid_argument("cluster matrices differ in code count");
    if (recovered.rows() < 1 || truth.rows() < 1) throw std::invalid_argument("cluster matrices must be non-empty");
    const auto n_rec = static_cast<std::size_t>(recovered.rows());
    const auto n_true = static_cast<std::size_t>(truth.rows());

    Eigen::MatrixXd cos(recovered.rows(), truth.rows());
    for (Eigen::Index i = 0; i < recovered.rows(); ++i)
        for (Eigen::Index j = 0; j < truth.rows(); ++j)
            cos(i, j) = cosine_similarity(recovered.row(i).transpose(), truth.row(j).transpose());

    ClusterMatch match;
    if (n_rec <= 8 && n_true <= 8) {
        // Permute the larger side; its first k entries pair with 0..k-1 of the smaller side.
        const bool permute_recovered = n_rec >= n_true;
        const auto k = std::min(n_rec, n_true);
        std::vector<std::size_t> perm(std::max(n_rec, n_true));
        std::iota(perm.begin(), perm.end(), 0);
        double best = -1.0;
        std::vector<std::size_t> best_perm = perm;
        do {
            double total = 0.0;
            for (std::size_t i = 0; i < k; ++i)
                total += permute_recovered ? cos(static_cast<Eigen::Index>(perm[i]), static_cast<Eigen::Index>(i))
                                           : cos(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(perm[i]));
            if (total > best + 1e-15) {
                best = total;
                best_perm = perm;
            }
        } while (std::next_permutation(perm.begin(), perm.end()));
        for (std::size_t i = 0; i < k; ++i) {
            if (permute_recovered)
                match.assignment.emplace_back(best_perm[i], i);
            else
                match.assignment.emplace_back(i, best_perm[i]);
        }
    } else {
        std::vector<bool> used_rec(n_rec, false);
        std::vector<bool> used_true(n_true, false);
        for (std::size_t step = 0; step < std::min(n_rec, n_true); ++step) {
            double best = -1.0;
            std::size_t bi = 0;
            std::size_t bj = 0;
            for (std::size_t i = 0; i < n_rec; ++i) {
                if (used_rec[i]) continue;
                for (std::size_t j = 0; j < n_true; ++j) {
                    if (used_true[j]) continue;
                    const double c = cos(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
                    if (c > best) {
                        best = c;
                        bi = i;
                        bj = j;
                    }
                }
            }
            used_rec[bi] = used_true[bj] = true;
            match.assignment.emplace_back(bi, bj);
        }
    }
    std::sort(match.assignment.begin(), match.assignment.end(),
              [](const auto& a, const auto& b) { return a.second < b.second; });

    double total = 0.0;
    for (const auto& [i, j] : match.assignment) {
        match.cosines.push_back(cos(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
        total += match.cosines.back();
    }
    match.mean_cosine = total / static_cast<double>(n_true);
    return match;
}

void write_cohort(const SyntheticCohort& cohort, const std::filesystem::path& dir)
{
    std::filesystem::create_directories(dir);
    write_events(dir / "events.csv", cohort.events);
    write_meta(dir / "meta.csv", cohort.patients);
    write_vocabulary(dir / "vocabulary.txt", cohort.vocabulary);
    auto out = detail::open_output(dir / "truth.json");
    out << cohort.truth.dump(2) << '\n';
}

} // namespace mmp
