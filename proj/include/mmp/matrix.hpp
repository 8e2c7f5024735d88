#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "mmp/ingest.hpp"
#include "mmp/sparse.hpp"

namespace mmp {

struct MatrixEntry {
    std::uint32_t age = 0;
    std::uint32_t code = 0;
    double value = 0.0;
};

// Per-patient T x C matrix (rows = age in years, columns = disease), stored
// as its nonzeros ordered by (code, age).
class PatientMatrix {
public:
    PatientMatrix() = default;
    PatientMatrix(std::string patient_id, std::size_t ages, std::size_t codes, std::vector<MatrixEntry> entries);

    const std::string& patient_id() const { return patient_id_; }
    std::size_t ages() const { return ages_; }
    std::size_t codes() const { return codes_; }
    std::span<const MatrixEntry> entries() const { return entries_; }

    // Nonzeros of one column, ordered by age.
    std::span<const MatrixEntry> column(std::size_t code) const;
    bool has_code(std::size_t code) const { return !column(code).empty(); }

    double at(std::size_t age, std::size_t code) const;
    double sum() const;
    Eigen::MatrixXd to_dense() const;

private:
    std::string patient_id_;
    std::size_t ages_ = 0;
    std::size_t codes_ = 0;
    std::vector<MatrixEntry> entries_;
    std::vector<std::size_t> column_start_; // codes_ + 1 offsets into entries_
};

// Binary first-incidence matrix. Throws std::out_of_range when an event age
// is >= ages and std::invalid_argument when a code appears twice.
PatientMatrix build_patient_matrix(std::string_view patient_id, std::span<const EventRecord> events,
                                   std::size_t ages, std::size_t codes);

// Inverse patient frequency ln(N / N_i); codes present in no patient get weight 0.
struct IpfWeights {
    std::vector<double> weight;
    std::size_t patients = 0;
    std::vector<std::size_t> patient_counts;
    std::vector<std::size_t> absent_codes;
};

IpfWeights compute_ipf(std::span<const PatientMatrix> matrices);
PatientMatrix apply_ipf(const PatientMatrix& matrix, const IpfWeights& weights);

enum class Boundary {
    zero_pad,    // taps falling outside [0, T) are lost
    renormalize, // taps inside [0, T) are rescaled to sum to one
};

std::string to_string(Boundary boundary);
Boundary parse_boundary(std::string_view text);

class SmoothingKernel {
public:
    // Gaussian truncated at radius ceil(truncate * sigma), normalized over the
    // retained taps. sigma == 0 yields the identity kernel.
    static SmoothingKernel gaussian(double sigma, double truncate = 4.0);
    static SmoothingKernel identity() { return gaussian(0.0); }

    double sigma() const { return sigma_; }
    int radius() const { return radius_; }
    std::span<const double> taps() const { return taps_; }
    double tap(int offset) const { return taps_[static_cast<std::size_t>(offset + radius_)]; }

private:
    double sigma_ = 0.0;
    int radius_ = 0;
    std::vector<double> taps_{1.0};
};

// Convolves every column along the age axis.
PatientMatrix smooth_columns(const PatientMatrix& matrix, const SmoothingKernel& kernel,
                             Boundary boundary = Boundary::zero_pad);

struct MatrixProvenance {
    bool ipf_applied = false;
    double sigma = 0.0;
    int kernel_radius = 0;
    Boundary boundary = Boundary::zero_pad;
    std::vector<double> ipf_weights;

    nlohmann::json to_json() const;
    static MatrixProvenance from_json(const nlohmann::json& j);
};

// (T*N) x C matrix; row block [p*T, (p+1)*T) belongs to patient_index[p].
struct ConcatenatedMatrix {
    SparseMatrix values;
    std::vector<std::string> patient_index;
    std::size_t ages = 0;
    std::size_t patients = 0;
    std::size_t codes = 0;
    MatrixProvenance provenance;
};

ConcatenatedMatrix concatenate(std::span<const PatientMatrix> matrices, MatrixProvenance provenance = {});

struct DesignOptions {
    std::size_t ages = kDefaultMaxAge;
    double sigma = 0.0;
    double truncate = 4.0; // kernel radius in units of sigma
    Boundary boundary = Boundary::zero_pad;
    bool apply_ipf = true;
};

// Build -> IPF -> smooth -> concatenate over the given patient order. Events of
// patients not listed are ignored; listed patients without events contribute
// zero blocks.
ConcatenatedMatrix build_design_matrix(std::span<const std::string> patient_ids, std::span<const EventRecord> events,
                                       std::size_t codes, const DesignOptions& options);

// `<stem>.bin` holds (row u64, col u32, value f64) little-endian triplets;
// `<stem>.json` holds shape, patient index and provenance.
void write_concatenated(const ConcatenatedMatrix& matrix, const std::filesystem::path& stem);
ConcatenatedMatrix read_concatenated(const std::filesystem::path& stem);

} // namespace mmp
