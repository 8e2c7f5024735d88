#include <doctest.h>

#include <random>
#include <set>

#include "mmp/errors.hpp"
#include "mmp/ingest.hpp"
#include "test_util.hpp"

using namespace mmp;
using mmp::test::TempDir;
using mmp::test::write_text;

namespace {

DiseaseVocabulary abc() { return DiseaseVocabulary({"A00", "B10", "C20"}); }

EventRecord ev(std::string patient, std::size_t code, int age)
{
    static const std::vector<std::string> names{"A00", "B10", "C20"};
    return EventRecord{std::move(patient), names.at(code), code, age, "F"};
}

} // namespace

TEST_CASE("vocabulary rejects duplicates and tiny code sets")
{
    CHECK_THROWS_AS(DiseaseVocabulary({"A", "A"}), DataError);
    CHECK_THROWS_AS(DiseaseVocabulary({"A"}), DataError);
    const auto v = abc();
    CHECK(v.size() == 3);
    CHECK(v.index("B10") == 1);
    CHECK_FALSE(v.find("Z99").has_value());
    CHECK_THROWS_AS(v.index("Z99"), DataError);
}

TEST_CASE("vocabulary file order defines column order")
{
    TempDir dir;
    write_text(dir / "vocab.txt", "\xEF\xBB\xBF" "C20\nA00\n\nB10\n");
    const auto v = load_vocabulary(dir / "vocab.txt");
    REQUIRE(v.size() == 3);
    CHECK(v.code(0) == "C20");
    CHECK(v.index("B10") == 2);
}

TEST_CASE("load_events")
{
    TempDir dir;
    const auto vocab = abc();

    SUBCASE("well-formed rows")
    {
        write_text(dir / "e.csv", "patient_id,code,age_years,strata\np1,A00,40,F\np1,B10,41,F\np2,C20,7,M\n");
        const auto t = load_events(dir / "e.csv", vocab);
        CHECK(t.records.size() == 3);
        CHECK(t.rejects.rejected == 0);
        CHECK(t.records[2] == EventRecord{"p2", "C20", 2, 7, "M"});
    }
    SUBCASE("unknown code is counted, not dropped silently")
    {
        write_text(dir / "e.csv", "patient_id,code,age_years,strata\np1,A00,40,F\np1,ZZZ,41,F\np2,C20,7,M\n");
        const auto t = load_events(dir / "e.csv", vocab);
        CHECK(t.records.size() == 2);
        CHECK(t.rejects.rejected == 1);
        CHECK(t.rejects.reasons.at("unknown_code") == 1);
        CHECK(t.rejects.to_json().dump() == R"({"reasons":{"unknown_code":1},"rejected":1})");
    }
    SUBCASE("header only")
    {
        write_text(dir / "e.csv", "patient_id,code,age_years,strata\n");
        const auto t = load_events(dir / "e.csv", vocab);
        CHECK(t.records.empty());
        CHECK(t.rejects.rejected == 0);
    }
    SUBCASE("ages are floored and range-checked")
    {
        write_text(dir / "e.csv",
                   "patient_id,code,age_years,strata\r\np1,A00,40.9,F\r\np1,B10,114,F\r\np1,C20,-0.5,F\r\np2,A00,x,F\r\n"
                   "p3,A00\r\n");
        const auto t = load_events(dir / "e.csv", vocab);
        REQUIRE(t.records.size() == 1);
        CHECK(t.records[0].age_years == 40);
        CHECK(t.rejects.reasons.at("age_out_of_range") == 2);
        CHECK(t.rejects.reasons.at("malformed") == 2);
    }
    SUBCASE("missing file and wrong header are hard errors")
    {
        CHECK_THROWS_AS(load_events(dir / "absent.csv", vocab), DataError);
        write_text(dir / "e.csv", "patient,code,age,strata\np1,A00,40,F\n");
        CHECK_THROWS_AS(load_events(dir / "e.csv", vocab), DataError);
    }
}

TEST_CASE("load_meta validates rows")
{
    TempDir dir;
    write_text(dir / "m.csv",
               "patient_id,registration_age_years,followup_years,strata\np1,30,10,F\np1,31,10,F\np2,20,-1,M\np3,25,6,M\n");
    const auto t = load_meta(dir / "m.csv");
    REQUIRE(t.patients.size() == 2);
    CHECK(t.patients[1] == PatientMeta{"p3", 25, 6, "M"});
    CHECK(t.rejects.reasons.at("duplicate_patient") == 1);
    CHECK(t.rejects.reasons.at("negative_years") == 1);
}

TEST_CASE("event and metadata files round-trip")
{
    TempDir dir;
    const std::vector<EventRecord> events{ev("p1", 0, 40), ev("p2", 2, 3)};
    const std::vector<PatientMeta> meta{{"p1", 30, 10, "F"}, {"p2", 0, 8, "F"}};
    write_events(dir / "e.csv", events);
    write_meta(dir / "m.csv", meta);
    CHECK(load_events(dir / "e.csv", abc()).records == events);
    CHECK(load_meta(dir / "m.csv").patients == meta);
}

TEST_CASE("apply_inclusion rules")
{
    SUBCASE("short follow-up removes the whole patient")
    {
        const std::vector<PatientMeta> meta{{"p1", 30, 4, "F"}, {"p2", 30, 5, "F"}};
        const std::vector<EventRecord> events{ev("p1", 0, 40), ev("p1", 1, 42), ev("p2", 0, 40)};
        const auto r = apply_inclusion(events, meta, {.min_followup = 5, .washout = 1});
        REQUIRE(r.events.size() == 1);
        CHECK(r.events[0].patient_id == "p2");
        CHECK(r.patients.size() == 1);
        CHECK(r.summary.patients_removed_followup == 1);
        CHECK(r.summary.events_removed_followup == 2);
    }
    SUBCASE("only the first occurrence of a code is kept")
    {
        const std::vector<PatientMeta> meta{{"p1", 30, 20, "F"}};
        const std::vector<EventRecord> events{ev("p1", 0, 45), ev("p1", 0, 40)};
        const auto r = apply_inclusion(events, meta);
        REQUIRE(r.events.size() == 1);
        CHECK(r.events[0].age_years == 40);
        CHECK(r.summary.events_removed_repeat == 1);
    }
    SUBCASE("washout is applied before first-occurrence selection")
    {
        // Registration at 30, washout 1: A00@30 falls in the washout window,
        // A00@32 becomes the first eligible occurrence, B10@31 is eligible.
        const std::vector<PatientMeta> meta{{"p1", 30, 20, "F"}};
        const std::vector<EventRecord> events{ev("p1", 0, 30), ev("p1", 0, 32), ev("p1", 1, 31)};

        const auto dropped = apply_inclusion(events, meta, {.washout_mode = WashoutMode::drop_record});
        REQUIRE(dropped.events.size() == 2);
        CHECK(dropped.events[0] == ev("p1", 1, 31));
        CHECK(dropped.events[1] == ev("p1", 0, 32));
        CHECK(dropped.summary.events_removed_washout == 1);

        const auto excluded = apply_inclusion(events, meta, {.washout_mode = WashoutMode::exclude_disease});
        REQUIRE(excluded.events.size() == 1);
        CHECK(excluded.events[0] == ev("p1", 1, 31));
    }
    SUBCASE("events of unknown patients are counted")
    {
        const std::vector<PatientMeta> meta{{"p1", 0, 20, "F"}};
        const std::vector<EventRecord> events{ev("p9", 0, 30)};
        const auto r = apply_inclusion(events, meta);
        CHECK(r.events.empty());
        CHECK(r.summary.events_removed_no_patient == 1);
    }
}

TEST_CASE("apply_inclusion properties on random cohorts")
{
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        std::uniform_int_distribution<int> n_patients(1, 8);
        std::uniform_int_distribution<int> age(0, 80);
        std::uniform_int_distribution<int> followup(0, 12);
        std::uniform_int_distribution<int> code(0, 2);
        std::vector<PatientMeta> meta;
        std::vector<EventRecord> events;
        const int n = n_patients(rng);
        for (int p = 0; p < n; ++p) {
            const auto id = "p" + std::to_string(p);
            meta.push_back({id, age(rng) / 2, followup(rng), "F"});
            const int k = std::uniform_int_distribution<int>(0, 10)(rng);
            for (int e = 0; e < k; ++e) events.push_back(ev(id, static_cast<std::size_t>(code(rng)), age(rng)));
        }
        events.push_back(ev("ghost", 0, 50));

        for (auto mode : {WashoutMode::drop_record, WashoutMode::exclude_disease}) {
            const InclusionOptions options{.min_followup = 5, .washout = 1, .washout_mode = mode};
            const auto once = apply_inclusion(events, meta, options);
            CHECK(once.events.size() <= events.size());

            std::set<std::pair<std::string, std::size_t>> seen;
            for (const auto& e : once.events) CHECK(seen.emplace(e.patient_id, e.code_index).second);

            const auto twice = apply_inclusion(once.events, meta, options);
            CHECK(twice.events == once.events);
            const auto twice_filtered_meta = apply_inclusion(once.events, once.patients, options);
            CHECK(twice_filtered_meta.events == once.events);
        }
    }
}

TEST_CASE("washout mode names parse")
{
    CHECK(parse_washout_mode(to_string(WashoutMode::exclude_disease)) == WashoutMode::exclude_disease);
    CHECK_THROWS_AS(parse_washout_mode("sometimes"), ConfigError);
}
