#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>

#include "mmp/errors.hpp"
#include "mmp/matrix.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace mmp;

namespace {

EventRecord ev(std::size_t code, int age) { return EventRecord{"p", "c" + std::to_string(code), code, age, "F"}; }

PatientMatrix random_sparse_patient(std::mt19937_64& rng, std::size_t ages, std::size_t codes, const std::string& id)
{
    std::vector<EventRecord> events;
    std::uniform_int_distribution<int> age(0, static_cast<int>(ages) - 1);
    std::bernoulli_distribution present(0.3);
    for (std::size_t c = 0; c < codes; ++c)
        if (present(rng)) events.push_back(ev(c, age(rng)));
    return build_patient_matrix(id, events, ages, codes);
}

} // namespace

TEST_CASE("build_patient_matrix")
{
    SUBCASE("single event")
    {
        const std::vector<EventRecord> events{ev(3, 40)};
        const auto m = build_patient_matrix("p", events, 114, 5);
        CHECK(m.at(40, 3) == 1.0);
        CHECK(m.sum() == 1.0);
        CHECK(m.entries().size() == 1);
    }
    SUBCASE("no events")
    {
        const auto m = build_patient_matrix("p", {}, 10, 4);
        CHECK(m.to_dense().isZero());
    }
    SUBCASE("two codes in the same year")
    {
        const std::vector<EventRecord> events{ev(0, 5), ev(2, 5)};
        const auto m = build_patient_matrix("p", events, 8, 3);
        Eigen::MatrixXd expected = Eigen::MatrixXd::Zero(8, 3);
        expected(5, 0) = 1.0;
        expected(5, 2) = 1.0;
        CHECK(m.to_dense() == expected);
    }
    SUBCASE("age beyond T and repeated codes are rejected")
    {
        const std::vector<EventRecord> late{ev(0, 10)};
        CHECK_THROWS_AS(build_patient_matrix("p", late, 10, 3), std::out_of_range);
        const std::vector<EventRecord> repeated{ev(1, 2), ev(1, 4)};
        CHECK_THROWS_AS(build_patient_matrix("p", repeated, 10, 3), std::invalid_argument);
    }
}

TEST_CASE("compute_ipf")
{
    std::vector<PatientMatrix> patients;
    for (int p = 0; p < 10; ++p) {
        std::vector<EventRecord> events{ev(0, 20)};
        if (p == 0) events.push_back(ev(1, 30));
        patients.push_back(build_patient_matrix("p" + std::to_string(p), events, 50, 3));
    }
    const auto w = compute_ipf(patients);
    CHECK(w.patients == 10);
    CHECK(w.weight[0] == 0.0);                                        // in every patient
    CHECK(w.weight[1] == doctest::Approx(2.302585092994046).epsilon(1e-15)); // ln(10)
    CHECK(w.weight[2] == 0.0);                                        // in no patient
    CHECK(w.patient_counts == std::vector<std::size_t>{10, 1, 0});
    CHECK(w.absent_codes == std::vector<std::size_t>{2});
}

TEST_CASE("apply_ipf")
{
    IpfWeights w;
    w.weight = {1.0, 2.302585, 1.0};
    const auto empty = build_patient_matrix("p", {}, 6, 3);
    CHECK(apply_ipf(empty, w).to_dense().isZero());

    const std::vector<EventRecord> one{ev(1, 4)};
    const auto weighted = apply_ipf(build_patient_matrix("p", one, 6, 3), w);
    CHECK(weighted.at(4, 1) == 2.302585);
    CHECK(weighted.sum() == 2.302585);

    IpfWeights ones;
    ones.weight = {1.0, 1.0, 1.0};
    const std::vector<EventRecord> two{ev(0, 1), ev(2, 5)};
    const auto m = build_patient_matrix("p", two, 6, 3);
    CHECK(apply_ipf(m, ones).to_dense() == m.to_dense());

    IpfWeights wrong;
    wrong.weight = {1.0};
    CHECK_THROWS_AS(apply_ipf(m, wrong), std::invalid_argument);
}

TEST_CASE("smoothing kernel")
{
    const auto k = SmoothingKernel::gaussian(3.0);
    CHECK(k.radius() == 12);
    double total = 0.0;
    for (double t : k.taps()) total += t;
    CHECK(std::abs(total - 1.0) < 1e-12);
    for (int o = 1; o <= k.radius(); ++o) CHECK(k.tap(o) == k.tap(-o));
    CHECK(SmoothingKernel::gaussian(0.25).radius() == 1);
    CHECK(SmoothingKernel::identity().taps().size() == 1);
    CHECK_THROWS_AS(SmoothingKernel::gaussian(-1.0), ConfigError);
}

TEST_CASE("smooth_columns")
{
    SUBCASE("identity kernel leaves the matrix unchanged")
    {
        const std::vector<EventRecord> events{ev(0, 3), ev(1, 0)};
        const auto m = build_patient_matrix("p", events, 10, 2);
        CHECK(smooth_columns(m, SmoothingKernel::identity()).to_dense() == m.to_dense());
    }
    SUBCASE("interior spike spreads symmetrically and keeps its mass")
    {
        const std::vector<EventRecord> events{ev(0, 50)};
        const auto s = smooth_columns(build_patient_matrix("p", events, 114, 1), SmoothingKernel::gaussian(2.0));
        CHECK(std::abs(s.sum() - 1.0) < 1e-9);
        for (int o = 1; o <= 8; ++o) CHECK(s.at(50 + o, 0) == doctest::Approx(s.at(50 - o, 0)).epsilon(1e-15));
        CHECK(s.at(59, 0) == 0.0);
    }
    SUBCASE("spike at age 0 loses mass to zero padding")
    {
        const std::vector<EventRecord> events{ev(0, 0)};
        const auto m = build_patient_matrix("p", events, 30, 1);
        const auto s = smooth_columns(m, SmoothingKernel::gaussian(2.0));
        CHECK(s.sum() < 1.0);
        const Eigen::MatrixXd dense = m.to_dense();
        const auto oracle = oracle::dense_gaussian_convolution(std::vector<double>(dense.data(), dense.data() + 30), 2.0);
        for (std::size_t t = 0; t < 30; ++t) CHECK(std::abs(s.at(t, 0) - oracle[t]) < 1e-12);

        const auto renorm = smooth_columns(m, SmoothingKernel::gaussian(2.0), Boundary::renormalize);
        CHECK(std::abs(renorm.sum() - 1.0) < 1e-12);
    }
    SUBCASE("matches dense convolution on random weighted columns")
    {
        std::mt19937_64 rng(5);
        std::uniform_real_distribution<double> weight(0.1, 3.0);
        for (double sigma : {0.5, 1.0, 3.0, 7.5}) {
            const auto m = random_sparse_patient(rng, 40, 6, "p");
            std::vector<MatrixEntry> weighted(m.entries().begin(), m.entries().end());
            for (auto& e : weighted) e.value = weight(rng);
            const PatientMatrix base("p", 40, 6, weighted);
            const auto s = smooth_columns(base, SmoothingKernel::gaussian(sigma));
            const Eigen::MatrixXd dense = base.to_dense();
            for (Eigen::Index c = 0; c < 6; ++c) {
                std::vector<double> column(dense.col(c).data(), dense.col(c).data() + 40);
                const auto expected = oracle::dense_gaussian_convolution(column, sigma);
                for (std::size_t t = 0; t < 40; ++t) {
                    CHECK(std::abs(s.at(t, static_cast<std::size_t>(c)) - expected[t]) < 1e-12);
                    CHECK(s.at(t, static_cast<std::size_t>(c)) >= 0.0);
                }
            }
        }
    }
}

TEST_CASE("IPF and smoothing commute")
{
    std::mt19937_64 rng(17);
    std::vector<PatientMatrix> patients;
    for (int p = 0; p < 20; ++p) patients.push_back(random_sparse_patient(rng, 50, 8, "p" + std::to_string(p)));
    const auto weights = compute_ipf(patients);
    const auto kernel = SmoothingKernel::gaussian(2.5);
    for (const auto& m : patients) {
        const Eigen::MatrixXd a = smooth_columns(apply_ipf(m, weights), kernel).to_dense();
        const Eigen::MatrixXd b = apply_ipf(smooth_columns(m, kernel), weights).to_dense();
        CHECK((a - b).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("concatenate")
{
    SUBCASE("single patient")
    {
        const std::vector<EventRecord> events{ev(1, 2)};
        const std::vector<PatientMatrix> ms{build_patient_matrix("only", events, 4, 2)};
        const auto d = concatenate(ms);
        CHECK(d.values.to_dense() == ms[0].to_dense());
        CHECK(d.patient_index == std::vector<std::string>{"only"});
    }
    SUBCASE("two patients stack in order")
    {
        const std::vector<EventRecord> e1{ev(0, 0), ev(1, 2)};
        const std::vector<EventRecord> e2{ev(1, 1)};
        const std::vector<PatientMatrix> ms{build_patient_matrix("a", e1, 3, 2), build_patient_matrix("b", e2, 3, 2)};
        const auto d = concatenate(ms);
        Eigen::MatrixXd expected(6, 2);
        expected << 1, 0, //
            0, 0,         //
            0, 1,         //
            0, 0,         //
            0, 1,         //
            0, 0;
        CHECK(d.values.to_dense() == expected);
        CHECK(d.ages == 3);
        CHECK(d.patients == 2);
        CHECK(d.patient_index == std::vector<std::string>{"a", "b"});
    }
    SUBCASE("all-zero patients")
    {
        const std::vector<PatientMatrix> ms(5, build_patient_matrix("z", {}, 7, 3));
        const auto d = concatenate(ms);
        CHECK(d.values.rows() == 35);
        CHECK(d.values.nnz() == 0);
    }
    SUBCASE("shape mismatch")
    {
        const std::vector<PatientMatrix> ms{build_patient_matrix("a", {}, 3, 2), build_patient_matrix("b", {}, 4, 2)};
        CHECK_THROWS_AS(concatenate(ms), std::invalid_argument);
    }
    SUBCASE("mass is preserved exactly")
    {
        std::mt19937_64 rng(3);
        std::vector<PatientMatrix> ms;
        double total = 0.0;
        for (int p = 0; p < 12; ++p) {
            ms.push_back(smooth_columns(random_sparse_patient(rng, 30, 5, "p"), SmoothingKernel::gaussian(1.5)));
        }
        const auto d = concatenate(ms);
        for (std::size_t r = 0; r < d.values.rows(); ++r) {
            for (std::size_t k = d.values.row_ptr()[r]; k < d.values.row_ptr()[r + 1]; ++k) {
                const auto p = r / 30;
                CHECK(d.values.values()[k] == ms[p].at(r % 30, d.values.col_index()[k]));
            }
        }
        for (const auto& m : ms)
            for (const auto& e : m.entries()) total += e.value;
        std::size_t nnz = 0;
        for (const auto& m : ms) nnz += m.entries().size();
        CHECK(d.values.nnz() == nnz);
        CHECK(std::abs(d.values.sum() - total) <= 1e-12 * total);
    }
}

TEST_CASE("build_design_matrix runs the full chain")
{
    const std::vector<std::string> ids{"a", "b", "c"};
    std::vector<EventRecord> events{ev(0, 5), ev(1, 6)};
    events[0].patient_id = "a";
    events[1].patient_id = "c";
    const auto d = build_design_matrix(ids, events, 2, {.ages = 10, .sigma = 0.0, .apply_ipf = true});
    CHECK(d.values.rows() == 30);
    // Each code occurs in one of three patients: weight ln 3.
    CHECK(d.values.to_dense()(5, 0) == doctest::Approx(std::log(3.0)));
    CHECK(d.values.to_dense()(26, 1) == doctest::Approx(std::log(3.0)));
    CHECK(d.provenance.ipf_applied);
}

TEST_CASE("concatenated matrix binary format")
{
    test::TempDir dir;
    const std::vector<EventRecord> e1{ev(0, 0), ev(1, 2)};
    const std::vector<EventRecord> e2{ev(1, 1)};
    const std::vector<PatientMatrix> ms{build_patient_matrix("a", e1, 3, 2), build_patient_matrix("b", e2, 3, 2)};
    MatrixProvenance prov;
    prov.sigma = 1.5;
    prov.kernel_radius = 6;
    const auto d = concatenate(ms, prov);
    write_concatenated(d, dir / "D");

    const auto bytes = test::read_text(dir / "D.bin");
    REQUIRE(bytes.size() == 3 * 20);
    // Second triplet: row 2 (u64), col 1 (u32), 1.0 (f64), little-endian.
    const std::string second = bytes.substr(20, 20);
    CHECK(second == std::string("\x02\0\0\0\0\0\0\0\x01\0\0\0\0\0\0\0\0\0\xF0\x3F", 20));

    const auto back = read_concatenated(dir / "D");
    CHECK(back.values.to_dense() == d.values.to_dense());
    CHECK(back.patient_index == d.patient_index);
    CHECK(back.ages == 3);
    CHECK(back.provenance.sigma == 1.5);
    CHECK_THROWS_AS(read_concatenated(dir / "missing"), DataError);
}
