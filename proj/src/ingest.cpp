#include "mmp/ingest.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <unordered_set>

#include "mmp/errors.hpp"
#include "text_io.hpp"

namespace mmp {

namespace {

constexpr std::string_view kEventHeader = "patient_id,code,age_years,strata";
constexpr std::string_view kMetaHeader = "patient_id,registration_age_years,followup_years,strata";

void expect_header(std::istream& in, std::string_view expected, const std::filesystem::path& path)
{
    const auto header = detail::read_header(in);
    std::string compact;
    for (auto field : detail::split(header)) {
        if (!compact.empty()) compact += ',';
        compact += field;
    }
    if (compact != expected)
        throw DataError("header mismatch in " + path.string() + ": expected '" + std::string(expected) +
                        "', got '" + header + "'");
}

} // namespace

DiseaseVocabulary::DiseaseVocabulary(std::vector<std::string> codes) : codes_(std::move(codes))
{
    if (codes_.size() < 2) throw DataError("vocabulary needs at least two codes");
    index_.reserve(codes_.size());
    for (std::size_t i = 0; i < codes_.size(); ++i) {
        if (codes_[i].empty()) throw DataError("vocabulary contains an empty code");
        if (!index_.emplace(codes_[i], i).second)
            throw DataError("duplicate code in vocabulary: " + codes_[i]);
    }
}

std::optional<std::size_t> DiseaseVocabulary::find(std::string_view code) const
{
    const auto it = index_.find(std::string(code));
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

std::size_t DiseaseVocabulary::index(std::string_view code) const
{
    if (auto found = find(code)) return *found;
    throw DataError("unknown code: " + std::string(code));
}

DiseaseVocabulary load_vocabulary(const std::filesystem::path& path)
{
    auto in = detail::open_input(path);
    std::vector<std::string> codes;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        std::string_view view = line;
        if (first && view.size() >= 3 && view.substr(0, 3) == "\xEF\xBB\xBF") view.remove_prefix(3);
        first = false;
        view = detail::trim(view);
        if (view.empty()) continue;
        codes.emplace_back(view);
    }
    return DiseaseVocabulary(std::move(codes));
}

void write_vocabulary(const std::filesystem::path& path, const DiseaseVocabulary& vocabulary)
{
    auto out = detail::open_output(path);
    for (const auto& code : vocabulary.codes()) out << code << '\n';
}

void RejectSummary::add(const std::string& reason)
{
    ++rejected;
    ++reasons[reason];
}

nlohmann::json RejectSummary::to_json() const
{
    nlohmann::json reasons_json = nlohmann::json::object();
    for (const auto& [reason, count] : reasons) reasons_json[reason] = count;
    return {{"rejected", rejected}, {"reasons", reasons_json}};
}

EventTable load_events(const std::filesystem::path& path, const DiseaseVocabulary& vocabulary, int max_age)
{
    auto in = detail::open_input(path);
    expect_header(in, kEventHeader, path);

    EventTable table;
    std::string line;
    while (std::getline(in, line)) {
        if (detail::trim(line).empty()) continue;
        const auto fields = detail::split(line);
        if (fields.size() != 4 || fields[0].empty()) {
            table.rejects.add("malformed");
            continue;
        }
        const auto age = detail::parse_number<double>(fields[2]);
        if (!age || !std::isfinite(*age)) {
            table.rejects.add("malformed");
            continue;
        }
        const double floored = std::floor(*age);
        if (floored < 0.0 || floored >= static_cast<double>(max_age)) {
            table.rejects.add("age_out_of_range");
            continue;
        }
        const auto code_index = vocabulary.find(fields[1]);
        if (!code_index) {
            table.rejects.add("unknown_code");
            continue;
        }
        table.records.push_back(EventRecord{std::string(fields[0]), std::string(fields[1]), *code_index,
                                            static_cast<int>(floored), std::string(fields[3])});
    }
    if (table.rejects.rejected > 0)
        log_warning("rejected " + std::to_string(table.rejects.rejected) + " event rows from " + path.string() +
                    ": " + table.rejects.to_json().dump());
    return table;
}

MetaTable load_meta(const std::filesystem::path& path)
{
    auto in = detail::open_input(path);
    expect_header(in, kMetaHeader, path);

    MetaTable table;
    std::unordered_set<std::string> seen;
    std::string line;
    while (std::getline(in, line)) {
        if (detail::trim(line).empty()) continue;
        const auto fields = detail::split(line);
        if (fields.size() != 4 || fields[0].empty()) {
            table.rejects.add("malformed");
            continue;
        }
        const auto registration = detail::parse_number<int>(fields[1]);
        const auto followup = detail::parse_number<int>(fields[2]);
        if (!registration || !followup) {
            table.rejects.add("malformed");
            continue;
        }
        if (*followup < 0 || *registration < 0) {
            table.rejects.add("negative_years");
            continue;
        }
        if (!seen.emplace(fields[0]).second) {
            table.rejects.add("duplicate_patient");
            continue;
        }
        table.patients.push_back(PatientMeta{std::string(fields[0]), *registration, *followup, std::string(fields[3])});
    }
    if (table.rejects.rejected > 0)
        log_warning("rejected " + std::to_string(table.rejects.rejected) + " metadata rows from " + path.string() +
                    ": " + table.rejects.to_json().dump());
    return table;
}

void write_events(const std::filesystem::path& path, std::span<const EventRecord> events)
{
    auto out = detail::open_output(path);
    out << kEventHeader << '\n';
    for (const auto& e : events) out << e.patient_id << ',' << e.code << ',' << e.age_years << ',' << e.strata << '\n';
}

void write_meta(const std::filesystem::path& path, std::span<const PatientMeta> patients)
{
    auto out = detail::open_output(path);
    out << kMetaHeader << '\n';
    for (const auto& p : patients)
        out << p.patient_id << ',' << p.registration_age_years << ',' << p.followup_years << ',' << p.strata << '\n';
}

std::string to_string(WashoutMode mode)
{
    return mode == WashoutMode::drop_record ? "drop_record" : "exclude_disease";
}

WashoutMode parse_washout_mode(std::string_view text)
{
    if (text == "drop_record") return WashoutMode::drop_record;
    if (text == "exclude_disease") return WashoutMode::exclude_disease;
    throw ConfigError("unknown washout mode: " + std::string(text));
}

nlohmann::json InclusionSummary::to_json() const
{
    return {{"patients_in", patients_in},
            {"patients_removed_followup", patients_removed_followup},
            {"patients_out", patients_out},
            {"events_in", events_in},
            {"events_removed_no_patient", events_removed_no_patient},
            {"events_removed_followup", events_removed_followup},
            {"events_removed_washout", events_removed_washout},
            {"events_removed_repeat", events_removed_repeat},
            {"events_out", events_out}};
}

InclusionResult apply_inclusion(std::span<const EventRecord> events, std::span<const PatientMeta> meta,
                                const InclusionOptions& options)
{
    if (options.min_followup < 0 || options.washout < 0)
        throw ConfigError("min_followup and washout must be non-negative");

    InclusionResult result;
    auto& summary = result.summary;
    summary.patients_in = meta.size();
    summary.events_in = events.size();

    // Patient position in metadata order; -1 marks removed patients.
    std::unordered_map<std::string_view, std::ptrdiff_t> position;
    position.reserve(meta.size());
    for (const auto& patient : meta) {
        if (patient.followup_years < options.min_followup) {
            ++summary.patients_removed_followup;
            position.emplace(patient.patient_id, -1);
            continue;
        }
        position.emplace(patient.patient_id, static_cast<std::ptrdiff_t>(result.patients.size()));
        result.patients.push_back(patient);
    }
    summary.patients_out = result.patients.size();

    struct Candidate {
        std::size_t patient;
        const EventRecord* event;
    };
    std::vector<Candidate> candidates;
    candidates.reserve(events.size());
    // (patient, code) pairs recorded inside the washout window.
    std::set<std::pair<std::size_t, std::size_t>> washout_codes;

    for (const auto& event : events) {
        const auto it = position.find(event.patient_id);
        if (it == position.end()) {
            ++summary.events_removed_no_patient;
            continue;
        }
        if (it->second < 0) {
            ++summary.events_removed_followup;
            continue;
        }
        const auto patient = static_cast<std::size_t>(it->second);
        const auto& meta_row = result.patients[patient];
        if (event.age_years < meta_row.registration_age_years + options.washout) {
            ++summary.events_removed_washout;
            washout_codes.emplace(patient, event.code_index);
            continue;
        }
        candidates.push_back({patient, &event});
    }

    if (options.washout_mode == WashoutMode::exclude_disease && !washout_codes.empty()) {
        const auto before = candidates.size();
        std::erase_if(candidates, [&](const Candidate& c) {
            return washout_codes.contains({c.patient, c.event->code_index});
        });
        summary.events_removed_washout += before - candidates.size();
    }

    std::stable_sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
        if (a.patient != b.patient) return a.patient < b.patient;
        if (a.event->code_index != b.event->code_index) return a.event->code_index < b.event->code_index;
        return a.event->age_years < b.event->age_years;
    });

    std::vector<Candidate> first;
    first.reserve(candidates.size());
    for (const auto& c : candidates) {
        if (!first.empty() && first.back().patient == c.patient &&
            first.back().event->code_index == c.event->code_index) {
            ++summary.events_removed_repeat;
            continue;
        }
        first.push_back(c);
    }

    std::stable_sort(first.begin(), first.end(), [](const Candidate& a, const Candidate& b) {
        if (a.patient != b.patient) return a.patient < b.patient;
        if (a.event->age_years != b.event->age_years) return a.event->age_years < b.event->age_years;
        return a.event->code_index < b.event->code_index;
    });

    result.events.reserve(first.size());
    for (const auto& c : first) result.events.push_back(*c.event);
    summary.events_out = result.events.size();
    return result;
}

} // namespace mmp
