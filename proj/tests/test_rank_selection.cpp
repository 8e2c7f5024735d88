#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "mmp/matrix.hpp"
#include "mmp/rank_selection.hpp"
#include "mmp/synth.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace mmp;

namespace {

FactorModel model_with(const Eigen::MatrixXd& B)
{
    FactorModel m;
    m.B = B;
    m.rank = static_cast<std::size_t>(B.rows());
    return m;
}

// Clusters whose dominant rows follow `labels`.
Eigen::MatrixXd clusters_for(const std::vector<int>& labels, int rank)
{
    Eigen::MatrixXd B = Eigen::MatrixXd::Constant(rank, static_cast<Eigen::Index>(labels.size()), 0.1);
    for (std::size_t c = 0; c < labels.size(); ++c) B(labels[c], static_cast<Eigen::Index>(c)) = 1.0;
    return B;
}

Eigen::MatrixXd block_consensus(const std::vector<int>& labels)
{
    const auto n = static_cast<Eigen::Index>(labels.size());
    Eigen::MatrixXd c(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) c(i, j) = labels[i] == labels[j] ? 1.0 : 0.0;
    return c;
}

} // namespace

TEST_CASE("connectivity")
{
    SUBCASE("single cluster connects everything")
    {
        const Eigen::MatrixXd B = Eigen::MatrixXd::Random(1, 5).cwiseAbs();
        CHECK(connectivity(B) == Eigen::MatrixXd::Ones(5, 5));
    }
    SUBCASE("one disease per cluster gives the identity")
    {
        CHECK(connectivity(Eigen::MatrixXd::Identity(4, 4)) == Eigen::MatrixXd::Identity(4, 4));
    }
    SUBCASE("hand-traced argmax")
    {
        Eigen::MatrixXd B(2, 3);
        B << 0.9, 0.6, 0.1, //
            0.2, 0.3, 0.8;
        Eigen::MatrixXd expected(3, 3);
        expected << 1, 1, 0, //
            1, 1, 0,         //
            0, 0, 1;
        CHECK(connectivity(B) == expected);
        CHECK(connectivity(model_with(B)) == expected);
    }
    SUBCASE("ties go to the lowest cluster")
    {
        Eigen::MatrixXd B(3, 2);
        B << 0.5, 0.1, //
            0.5, 0.7,  //
            0.2, 0.7;
        CHECK(dominant_cluster(B) == std::vector<std::size_t>{0, 1});
    }
}

TEST_CASE("consensus")
{
    const auto a = model_with(clusters_for({0, 0, 1, 1}, 2));
    SUBCASE("identical models")
    {
        const std::vector<FactorModel> models{a, a, a};
        const auto c = consensus(models);
        CHECK(c.values == connectivity(a));
        CHECK(c.n_runs == 3);
    }
    SUBCASE("disjoint pairings average to one half")
    {
        const std::vector<FactorModel> models{model_with(clusters_for({0, 0}, 2)), model_with(clusters_for({0, 1}, 2))};
        const auto c = consensus(models);
        CHECK(c.values(0, 1) == 0.5);
        CHECK(c.values(1, 0) == 0.5);
        CHECK(c.values(0, 0) == 1.0);
    }
    SUBCASE("errors")
    {
        const std::vector<FactorModel> one{a};
        CHECK_THROWS_AS(consensus(one), std::invalid_argument);
        const std::vector<FactorModel> mixed{a, model_with(clusters_for({0, 1, 1}, 2))};
        CHECK_THROWS_AS(consensus(mixed), std::invalid_argument);
    }
    SUBCASE("random models give a symmetric matrix in [0, 1] with unit diagonal")
    {
        std::mt19937_64 rng(1);
        std::uniform_int_distribution<int> label(0, 3);
        std::vector<FactorModel> models;
        for (int r = 0; r < 7; ++r) {
            std::vector<int> labels(12);
            for (auto& l : labels) l = label(rng);
            models.push_back(model_with(clusters_for(labels, 4)));
        }
        const auto c = consensus(models);
        CHECK(c.values == c.values.transpose());
        CHECK(c.values.minCoeff() >= 0.0);
        CHECK(c.values.maxCoeff() <= 1.0);
        CHECK(c.values.diagonal() == Eigen::VectorXd::Ones(12));
    }
}

TEST_CASE("average linkage matches a brute-force tree")
{
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        const Eigen::Index n = 3 + trial % 10;
        Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n, n);
        for (Eigen::Index i = 0; i < n; ++i)
            for (Eigen::Index j = i + 1; j < n; ++j) d(i, j) = d(j, i) = u(rng);
        CHECK((average_linkage_cophenetic(d) - oracle::brute_force_upgma_cophenetic(d)).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("cophenetic_coefficient")
{
    SUBCASE("exact blocks are perfectly stable")
    {
        ConsensusMatrix c{block_consensus({0, 0, 1, 1, 1, 2, 2}), 10};
        CHECK(cophenetic_coefficient(c) == doctest::Approx(1.0).epsilon(1e-12));
    }
    SUBCASE("three-item hand trace")
    {
        Eigen::MatrixXd d(3, 3);
        d << 0.0, 0.1, 0.9, //
            0.1, 0.0, 0.9,  //
            0.9, 0.9, 0.0;
        const Eigen::MatrixXd coph = average_linkage_cophenetic(d);
        CHECK(coph(0, 1) == doctest::Approx(0.1));
        CHECK(coph(0, 2) == doctest::Approx(0.9));
        CHECK(coph(1, 2) == doctest::Approx(0.9));
        ConsensusMatrix c{Eigen::MatrixXd::Ones(3, 3) - d, 2};
        CHECK(cophenetic_coefficient(c) == doctest::Approx(1.0).epsilon(1e-12));
    }
    SUBCASE("noise is less stable than blocks")
    {
        std::mt19937_64 rng(9);
        std::uniform_int_distribution<int> label(0, 3);
        std::vector<int> truth(20);
        for (auto& l : truth) l = label(rng);
        const ConsensusMatrix blocks{block_consensus(truth), 30};

        std::vector<FactorModel> noisy;
        for (int r = 0; r < 30; ++r) {
            std::vector<int> labels(20);
            for (auto& l : labels) l = label(rng);
            noisy.push_back(model_with(clusters_for(labels, 4)));
        }
        const auto noise = consensus(noisy);
        const double noise_score = cophenetic_coefficient(noise);
        const Eigen::MatrixXd dissimilarity = Eigen::MatrixXd::Ones(20, 20) - noise.values;
        CHECK(noise_score == doctest::Approx(oracle::pearson_upper(
                                                 dissimilarity, oracle::brute_force_upgma_cophenetic(dissimilarity)))
                                 .epsilon(1e-10));
        CHECK(noise_score < cophenetic_coefficient(blocks));
    }
    SUBCASE("constant dissimilarity is treated as stable")
    {
        CHECK(cophenetic_coefficient({Eigen::MatrixXd::Ones(5, 5), 3}) == 1.0);
    }
    SUBCASE("invariant to cluster relabeling")
    {
        std::mt19937_64 rng(2);
        std::uniform_int_distribution<int> label(0, 2);
        std::vector<FactorModel> models, relabeled;
        const std::vector<int> swap{2, 0, 1};
        for (int r = 0; r < 6; ++r) {
            std::vector<int> labels(10);
            for (auto& l : labels) l = label(rng);
            models.push_back(model_with(clusters_for(labels, 3)));
            for (auto& l : labels) l = swap[static_cast<std::size_t>(l)];
            relabeled.push_back(model_with(clusters_for(labels, 3)));
        }
        CHECK(cophenetic_coefficient(consensus(models)) == cophenetic_coefficient(consensus(relabeled)));
    }
}

TEST_CASE("rank_scan")
{
    const auto planted = disjoint_planted_model(4, 24, 48, 0.002);
    const auto cohort = generate_cohort(planted, 200, 3);
    std::vector<std::string> ids;
    for (const auto& p : cohort.patients) ids.push_back(p.patient_id);
    const auto design = build_design_matrix(ids, cohort.events, 24, {.ages = 48, .sigma = 3.0});

    const NmfConfig base{.max_iters = 500, .seed = 5};
    const std::vector<std::size_t> ranks{2, 3, 4, 5, 6, 7};
    const auto scores = rank_scan(design.values, ranks, 8, base);
    REQUIRE(scores.size() == ranks.size());
    std::size_t best = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        CHECK(scores[i].rank == ranks[i]);
        CHECK(std::isfinite(scores[i].cophenetic));
        CHECK(scores[i].successful_runs == 8);
        if (scores[i].cophenetic > scores[best].cophenetic) best = i;
    }
    CHECK(scores[best].rank == 4);

    // Reordering the list does not change a rank's score.
    const std::vector<std::size_t> reversed{6, 4};
    const auto again = rank_scan(design.values, reversed, 8, base);
    CHECK(again[0].cophenetic == scores[4].cophenetic);
    CHECK(again[1].cophenetic == scores[2].cophenetic);
    CHECK(again[1].mean_divergence == scores[2].mean_divergence);

    const std::vector<std::size_t> single{3};
    CHECK(rank_scan(design.values, single, 2, base).size() == 1);

    test::TempDir dir;
    write_rank_scan_tsv(dir / "scan.tsv", scores);
    const auto tsv = test::read_text(dir / "scan.tsv");
    CHECK(tsv.rfind("Q\tcophenetic\tmean_divergence\n2\t", 0) == 0);
    CHECK(std::count(tsv.begin(), tsv.end(), '\n') == 7);
}

TEST_CASE("rank_seed depends on the rank only")
{
    CHECK(rank_seed(1, 4) == rank_seed(1, 4));
    CHECK(rank_seed(1, 4) != rank_seed(1, 5));
    CHECK(rank_seed(1, 4) != rank_seed(2, 4));
}

TEST_CASE("consensus export")
{
    test::TempDir dir;
    const ConsensusMatrix c{block_consensus({0, 1, 1}), 4};
    write_consensus(c, dir / "consensus");
    const auto blob = test::read_text(dir / "consensus.bin");
    REQUIRE(blob.size() == 9 * 8);
    double v = 0.0;
    std::memcpy(&v, blob.data() + 5 * 8, 8); // (1, 2)
    CHECK(v == 1.0);
    CHECK(std::filesystem::exists(dir / "consensus.json"));
}
