#include <doctest.h>

#include <map>
#include <random>
#include <set>

#include "mmp/errors.hpp"
#include "mmp/matrix.hpp"
#include "mmp/nmf.hpp"
#include "mmp/synth.hpp"
#include "test_util.hpp"

using namespace mmp;

TEST_CASE("templates")
{
    const auto w = window_template(10, 3, 5, 0.2);
    for (Eigen::Index t = 0; t < 10; ++t) CHECK(w(t) == ((t >= 3 && t <= 5) ? 0.2 : 0.0));
    const auto g = gaussian_template(20, 10.0, 2.0, 0.5, 4.0);
    CHECK(g(10) == 0.5);
    CHECK(g(9) == doctest::Approx(g(11)));
    CHECK(g(5) == 0.0);
    CHECK(g(6) > 0.0);
}

TEST_CASE("planted model validation")
{
    auto model = disjoint_planted_model(4, 20, 40, 0.001);
    CHECK_NOTHROW(model.validate());
    CHECK(model.rank() == 4);
    CHECK(model.codes() == 20);
    CHECK(model.ages() == 40);

    auto tied = model;
    tied.clusters.row(0).setConstant(0.5);
    CHECK_THROWS_AS(tied.validate(), ConfigError);
    auto negative = model;
    negative.templates(1, 1) = -0.1;
    CHECK_THROWS_AS(negative.validate(), ConfigError);
    auto shapes = model;
    shapes.templates.conservativeResize(3, Eigen::NoChange);
    CHECK_THROWS_AS(shapes.validate(), ConfigError);
}

TEST_CASE("generate_cohort")
{
    SUBCASE("events stay inside the active window without noise")
    {
        PlantedModel model;
        model.clusters = Eigen::MatrixXd::Zero(1, 6);
        model.clusters.row(0) << 1.0, 0.8, 0.6, 0.4, 0.2, 0.1;
        model.templates = window_template(80, 40, 50, 0.3).transpose();
        model.noise_rate = 0.0;
        const auto cohort = generate_cohort(model, 300, 1);
        REQUIRE_FALSE(cohort.events.empty());
        for (const auto& e : cohort.events) {
            CHECK(e.age_years >= 40);
            CHECK(e.age_years <= 50);
        }
    }
    SUBCASE("empty cohort")
    {
        const auto cohort = generate_cohort(disjoint_planted_model(2, 6, 20, 0.0), 0, 1);
        CHECK(cohort.events.empty());
        CHECK(cohort.patients.empty());
    }
    SUBCASE("first incidence, determinism and inclusion")
    {
        const auto model = disjoint_planted_model(3, 12, 30, 0.01);
        const auto a = generate_cohort(model, 100, 42);
        const auto b = generate_cohort(model, 100, 42);
        const auto c = generate_cohort(model, 100, 43);
        REQUIRE(a.events.size() == b.events.size());
        for (std::size_t i = 0; i < a.events.size(); ++i) {
            CHECK(a.events[i].patient_id == b.events[i].patient_id);
            CHECK(a.events[i].code == b.events[i].code);
            CHECK(a.events[i].age_years == b.events[i].age_years);
        }
        CHECK(a.scales == b.scales);
        CHECK(a.scales != c.scales);

        std::set<std::pair<std::string, std::size_t>> seen;
        for (const auto& e : a.events) CHECK(seen.insert({e.patient_id, e.code_index}).second);

        const auto kept = apply_inclusion(a.events, a.patients, {});
        CHECK(kept.events.size() == a.events.size());
        CHECK(kept.patients.size() == 100);
    }
    SUBCASE("cohort files load back")
    {
        test::TempDir dir;
        const auto cohort = generate_cohort(disjoint_planted_model(2, 6, 20, 0.01), 20, 5);
        write_cohort(cohort, dir.path());
        const auto vocab = load_vocabulary(dir / "vocabulary.txt");
        CHECK(vocab.size() == 6);
        const auto events = load_events(dir / "events.csv", vocab, 19);
        CHECK(events.records.size() == cohort.events.size());
        CHECK(events.rejects.rejected == 0);
        CHECK(load_meta(dir / "meta.csv").patients.size() == 20);
        const auto truth = nlohmann::json::parse(test::read_text(dir / "truth.json"));
        CHECK(truth.at("seed") == 5);
        CHECK(truth.at("B_true").size() == 2);
    }
}

TEST_CASE("match_clusters")
{
    const auto truth = disjoint_planted_model(5, 30, 50, 0.0).clusters;
    SUBCASE("row permutation and scaling")
    {
        Eigen::MatrixXd recovered(5, 30);
        const std::vector<Eigen::Index> order{3, 0, 4, 1, 2};
        for (Eigen::Index q = 0; q < 5; ++q) recovered.row(q) = (q + 1.5) * truth.row(order[q]);
        const auto m = match_clusters(recovered, truth);
        CHECK(m.mean_cosine == doctest::Approx(1.0).epsilon(1e-12));
        for (const auto& [r, t] : m.assignment) CHECK(order[r] == static_cast<Eigen::Index>(t));
    }
    SUBCASE("zero row")
    {
        Eigen::MatrixXd recovered = truth;
        recovered.row(2).setZero();
        const auto m = match_clusters(recovered, truth);
        CHECK(m.mean_cosine == doctest::Approx(0.8).epsilon(1e-12));
        CHECK(cosine_similarity(recovered.row(2).transpose(), truth.row(2).transpose()) == 0.0);
    }
    SUBCASE("random matrices score well below one")
    {
        std::mt19937_64 rng(8);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        double total = 0.0;
        for (int draw = 0; draw < 100; ++draw) {
            Eigen::MatrixXd recovered(5, 30);
            for (auto& x : recovered.reshaped()) x = u(rng);
            total += match_clusters(recovered, truth).mean_cosine;
        }
        CHECK(total / 100.0 < 0.8);
    }
    SUBCASE("fewer recovered rows than truth")
    {
        const auto m = match_clusters(truth.topRows(3), truth);
        CHECK(m.assignment.size() == 3);
        CHECK(m.mean_cosine == doctest::Approx(0.6).epsilon(1e-12));
    }
    SUBCASE("greedy path above eight rows")
    {
        const auto big = disjoint_planted_model(10, 40, 60, 0.0).clusters;
        Eigen::MatrixXd reversed = big.colwise().reverse();
        CHECK(match_clusters(reversed, big).mean_cosine == doctest::Approx(1.0));
    }
}

TEST_CASE("planted clusters are recovered without noise")
{
    const auto model = disjoint_planted_model(4, 24, 48, 0.0);
    const auto cohort = generate_cohort(model, 200, 3);
    std::vector<std::string> ids;
    for (const auto& p : cohort.patients) ids.push_back(p.patient_id);
    const auto design = build_design_matrix(ids, cohort.events, 24, {.ages = 48, .sigma = 3.0});
    const auto batch = multi_restart(design.values, {.rank = 4, .seed = 1}, 3);
    const FactorModel* best = &batch.models.front();
    for (const auto& m : batch.models)
        if (m.final_divergence() < best->final_divergence()) best = &m;
    CHECK(match_clusters(best->B, model.clusters).mean_cosine >= 0.9);
}

TEST_CASE("planted pairs")
{
    const auto model = disjoint_planted_model(2, 10, 20, 0.0);
    const auto pairs = planted_pairs(model, 3);
    CHECK(pairs == std::vector<std::pair<std::size_t, std::size_t>>{{0, 1}, {0, 2}, {1, 2}, {5, 6}, {5, 7}, {6, 7}});
}
