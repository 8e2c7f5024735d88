#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

namespace mmp {

// Number of tracked yearly age bins (ages 0..113).
inline constexpr int kDefaultMaxAge = 114;

// Ordered, duplicate-free list of disease codes. Position defines the matrix column.
class DiseaseVocabulary {
public:
    DiseaseVocabulary() = default;
    explicit DiseaseVocabulary(std::vector<std::string> codes);

    std::size_t size() const { return codes_.size(); }
    const std::string& code(std::size_t index) const { return codes_.at(index); }
    const std::vector<std::string>& codes() const { return codes_; }

    std::optional<std::size_t> find(std::string_view code) const;
    // Throws DataError when the code is not part of the vocabulary.
    std::size_t index(std::string_view code) const;

private:
    std::vector<std::string> codes_;
    std::unordered_map<std::string, std::size_t> index_;
};

DiseaseVocabulary load_vocabulary(const std::filesystem::path& path);
void write_vocabulary(const std::filesystem::path& path, const DiseaseVocabulary& vocabulary);

struct EventRecord {
    std::string patient_id;
    std::string code;
    std::size_t code_index = 0;
    int age_years = 0;
    std::string strata;

    friend bool operator==(const EventRecord&, const EventRecord&) = default;
};

struct PatientMeta {
    std::string patient_id;
    int registration_age_years = 0;
    int followup_years = 0;
    std::string strata;

    friend bool operator==(const PatientMeta&, const PatientMeta&) = default;
};

// Record-level rejections, keyed by reason.
struct RejectSummary {
    std::size_t rejected = 0;
    std::map<std::string, std::size_t> reasons;

    void add(const std::string& reason);
    nlohmann::json to_json() const;
};

struct EventTable {
    std::vector<EventRecord> records;
    RejectSummary rejects;
};

struct MetaTable {
    std::vector<PatientMeta> patients;
    RejectSummary rejects;
};

// Reads `patient_id,code,age_years,strata`. Fractional ages are floored.
// Throws DataError for a missing file or a header mismatch; bad rows are
// counted in `rejects` and skipped.
EventTable load_events(const std::filesystem::path& path, const DiseaseVocabulary& vocabulary,
                       int max_age = kDefaultMaxAge);

// Reads `patient_id,registration_age_years,followup_years,strata`.
MetaTable load_meta(const std::filesystem::path& path);

void write_events(const std::filesystem::path& path, std::span<const EventRecord> events);
void write_meta(const std::filesystem::path& path, std::span<const PatientMeta> patients);

enum class WashoutMode {
    drop_record,     // only records inside the washout window are dropped
    exclude_disease, // a code seen inside the washout window is excluded for that patient
};

std::string to_string(WashoutMode mode);
WashoutMode parse_washout_mode(std::string_view text);

struct InclusionOptions {
    int min_followup = 5;
    int washout = 1;
    WashoutMode washout_mode = WashoutMode::drop_record;
};

struct InclusionSummary {
    std::size_t patients_in = 0;
    std::size_t patients_removed_followup = 0;
    std::size_t patients_out = 0;
    std::size_t events_in = 0;
    std::size_t events_removed_no_patient = 0;
    std::size_t events_removed_followup = 0;
    std::size_t events_removed_washout = 0;
    std::size_t events_removed_repeat = 0;
    std::size_t events_out = 0;

    nlohmann::json to_json() const;
};

struct InclusionResult {
    std::vector<EventRecord> events;   // ordered by patient (metadata order), age, code
    std::vector<PatientMeta> patients; // retained patients, metadata order
    InclusionSummary summary;
};

// Follow-up filter, washout window, then first-occurrence selection.
InclusionResult apply_inclusion(std::span<const EventRecord> events, std::span<const PatientMeta> meta,
                                const InclusionOptions& options = {});

} // namespace mmp
