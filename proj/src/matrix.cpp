#include "mmp/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_map>

#include "binary_io.hpp"
#include "mmp/errors.hpp"
#include "parallel.hpp"
#include "text_io.hpp"

namespace mmp {

PatientMatrix::PatientMatrix(std::string patient_id, std::size_t ages, std::size_t codes,
                             std::vector<MatrixEntry> entries)
    : patient_id_(std::move(patient_id)), ages_(ages), codes_(codes), entries_(std::move(entries))
{
    std::sort(entries_.begin(), entries_.end(), [](const MatrixEntry& a, const MatrixEntry& b) {
        return a.code != b.code ? a.code < b.code : a.age < b.age;
    });
    column_start_.assign(codes_ + 1, 0);
    for (std::size_t k = 0; k < entries_.size(); ++k) {
        const auto& e = entries_[k];
        if (e.age >= ages_ || e.code >= codes_)
            throw std::out_of_range("entry (" + std::to_string(e.age) + ", " + std::to_string(e.code) +
                                    ") outside patient matrix of " + patient_id_);
        if (!(e.value >= 0.0)) throw std::invalid_argument("negative or NaN entry in patient matrix " + patient_id_);
        if (k > 0 && entries_[k - 1].code == e.code && entries_[k - 1].age == e.age)
            throw std::invalid_argument("duplicate entry in patient matrix " + patient_id_);
        ++column_start_[e.code + 1];
    }
    for (std::size_t c = 0; c < codes_; ++c) column_start_[c + 1] += column_start_[c];
}

std::span<const MatrixEntry> PatientMatrix::column(std::size_t code) const
{
    if (code >= codes_) throw std::out_of_range("column index out of range");
    return std::span<const MatrixEntry>(entries_).subspan(column_start_[code],
                                                          column_start_[code + 1] - column_start_[code]);
}

double PatientMatrix::at(std::size_t age, std::size_t code) const
{
    if (age >= ages_) throw std::out_of_range("age index out of range");
    for (const auto& e : column(code))
        if (e.age == age) return e.value;
    return 0.0;
}

double PatientMatrix::sum() const
{
    double total = 0.0;
    for (const auto& e : entries_) total += e.value;
    return total;
}

Eigen::MatrixXd PatientMatrix::to_dense() const
{
    Eigen::MatrixXd dense = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(ages_), static_cast<Eigen::Index>(codes_));
    for (const auto& e : entries_) dense(e.age, e.code) = e.value;
    return dense;
}

PatientMatrix build_patient_matrix(std::string_view patient_id, std::span<const EventRecord> events,
                                   std::size_t ages, std::size_t codes)
{
    std::vector<MatrixEntry> entries;
    entries.reserve(events.size());
    std::vector<bool> seen(codes, false);
    for (const auto& event : events) {
        if (event.age_years < 0 || static_cast<std::size_t>(event.age_years) >= ages)
            throw std::out_of_range("event age " + std::to_string(event.age_years) + " outside [0, " +
                                    std::to_string(ages) + ") for patient " + std::string(patient_id));
        if (event.code_index >= codes) throw std::out_of_range("event code index outside vocabulary");
        if (seen[event.code_index])
            throw std::invalid_argument("patient " + std::string(patient_id) + " has more than one event for code " +
                                        event.code + "; apply inclusion first");
        seen[event.code_index] = true;
        entries.push_back({static_cast<std::uint32_t>(event.age_years), static_cast<std::uint32_t>(event.code_index),
                           1.0});
    }
    return PatientMatrix(std::string(patient_id), ages, codes, std::move(entries));
}

IpfWeights compute_ipf(std::span<const PatientMatrix> matrices)
{
    if (matrices.empty()) throw std::invalid_argument("compute_ipf needs at least one patient");
    const auto codes = matrices.front().codes();

    IpfWeights weights;
    weights.patients = matrices.size();
    weights.patient_counts.assign(codes, 0);
    for (const auto& m : matrices) {
        if (m.codes() != codes) throw std::invalid_argument("patient matrices disagree on code count");
        for (std::size_t c = 0; c < codes; ++c)
            if (m.has_code(c)) ++weights.patient_counts[c];
    }

    const auto n = static_cast<double>(weights.patients);
    weights.weight.assign(codes, 0.0);
    for (std::size_t c = 0; c < codes; ++c) {
        if (weights.patient_counts[c] == 0) {
            weights.absent_codes.push_back(c);
            continue;
        }
        weights.weight[c] = std::log(n / static_cast<double>(weights.patient_counts[c]));
    }
    if (!weights.absent_codes.empty())
        log_warning(std::to_string(weights.absent_codes.size()) + " codes occur in no patient; IPF weight set to 0");
    return weights;
}

PatientMatrix apply_ipf(const PatientMatrix& matrix, const IpfWeights& weights)
{
    if (weights.weight.size() != matrix.codes())
        throw std::invalid_argument("IPF weight vector length " + std::to_string(weights.weight.size()) +
                                    " does not match " + std::to_string(matrix.codes()) + " codes");
    std::vector<MatrixEntry> entries;
    entries.reserve(matrix.entries().size());
    for (auto e : matrix.entries()) {
        e.value *= weights.weight[e.code];
        if (e.value != 0.0) entries.push_back(e);
    }
    return PatientMatrix(matrix.patient_id(), matrix.ages(), matrix.codes(), std::move(entries));
}

std::string to_string(Boundary boundary)
{
    return boundary == Boundary::zero_pad ? "zero_pad" : "renormalize";
}

Boundary parse_boundary(std::string_view text)
{
    if (text == "zero_pad") return Boundary::zero_pad;
    if (text == "renormalize") return Boundary::renormalize;
    throw ConfigError("unknown boundary mode: " + std::string(text));
}

SmoothingKernel SmoothingKernel::gaussian(double sigma, double truncate)
{
    if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw ConfigError("smoothing sigma must be finite and >= 0");
    if (!(truncate > 0.0)) throw ConfigError("kernel truncation must be > 0");

    SmoothingKernel kernel;
    kernel.sigma_ = sigma;
    if (sigma == 0.0) return kernel;

    kernel.radius_ = static_cast<int>(std::ceil(truncate * sigma));
    kernel.taps_.resize(static_cast<std::size_t>(2 * kernel.radius_ + 1));
    double total = 0.0;
    for (int k = -kernel.radius_; k <= kernel.radius_; ++k) {
        const double x = static_cast<double>(k) / sigma;
        const double w = std::exp(-0.5 * x * x);
        kernel.taps_[static_cast<std::size_t>(k + kernel.radius_)] = w;
        total += w;
    }
    for (auto& w : kernel.taps_) w /= total;
    return kernel;
}

PatientMatrix smooth_columns(const PatientMatrix& matrix, const SmoothingKernel& kernel, Boundary boundary)
{
    const auto ages = static_cast<int>(matrix.ages());
    const int radius = kernel.radius();
    std::vector<MatrixEntry> entries;
    entries.reserve(matrix.entries().size() * static_cast<std::size_t>(2 * radius + 1));

    std::vector<double> buffer(matrix.ages(), 0.0);
    for (std::size_t c = 0; c < matrix.codes(); ++c) {
        const auto column = matrix.column(c);
        if (column.empty()) continue;
        int lo = ages;
        int hi = -1;
        for (const auto& e : column) {
            const int age = static_cast<int>(e.age);
            const int start = std::max(0, age - radius);
            const int stop = std::min(ages - 1, age + radius);
            double scale = 1.0;
            if (boundary == Boundary::renormalize) {
                double inside = 0.0;
                for (int t = start; t <= stop; ++t) inside += kernel.tap(t - age);
                scale = 1.0 / inside;
            }
            for (int t = start; t <= stop; ++t) buffer[static_cast<std::size_t>(t)] += e.value * kernel.tap(t - age) * scale;
            lo = std::min(lo, start);
            hi = std::max(hi, stop);
        }
        for (int t = lo; t <= hi; ++t) {
            auto& v = buffer[static_cast<std::size_t>(t)];
            if (v != 0.0) entries.push_back({static_cast<std::uint32_t>(t), static_cast<std::uint32_t>(c), v});
            v = 0.0;
        }
    }
    return PatientMatrix(matrix.patient_id(), matrix.ages(), matrix.codes(), std::move(entries));
}

nlohmann::json MatrixProvenance::to_json() const
{
    return {{"ipf_applied", ipf_applied},
            {"sigma", sigma},
            {"kernel_radius", kernel_radius},
            {"boundary", to_string(boundary)},
            {"ipf_weights", ipf_weights}};
}

MatrixProvenance MatrixProvenance::from_json(const nlohmann::json& j)
{
    MatrixProvenance p;
    p.ipf_applied = j.at("ipf_applied").get<bool>();
    p.sigma = j.at("sigma").get<double>();
    p.kernel_radius = j.at("kernel_radius").get<int>();
    p.boundary = parse_boundary(j.at("boundary").get<std::string>());
    p.ipf_weights = j.at("ipf_weights").get<std::vector<double>>();
    return p;
}

ConcatenatedMatrix concatenate(std::span<const PatientMatrix> matrices, MatrixProvenance provenance)
{
    ConcatenatedMatrix out;
    out.provenance = std::move(provenance);
    out.patients = matrices.size();
    if (matrices.empty()) {
        out.values = SparseMatrix::from_triplets(0, 0, {});
        return out;
    }
    out.ages = matrices.front().ages();
    out.codes = matrices.front().codes();

    std::size_t nnz = 0;
    for (const auto& m : matrices) {
        if (m.ages() != out.ages || m.codes() != out.codes)
            throw std::invalid_argument("patient matrix " + m.patient_id() + " has shape " + std::to_string(m.ages()) +
                                        "x" + std::to_string(m.codes()) + ", expected " + std::to_string(out.ages) +
                                        "x" + std::to_string(out.codes));
        nnz += m.entries().size();
    }

    std::vector<Triplet> triplets;
    triplets.reserve(nnz);
    out.patient_index.reserve(matrices.size());
    for (std::size_t p = 0; p < matrices.size(); ++p) {
        const auto offset = p * out.ages;
        out.patient_index.push_back(matrices[p].patient_id());
        for (const auto& e : matrices[p].entries()) triplets.push_back({offset + e.age, e.code, e.value});
    }
    out.values = SparseMatrix::from_triplets(out.ages * out.patients, out.codes, std::move(triplets));
    return out;
}

ConcatenatedMatrix build_design_matrix(std::span<const std::string> patient_ids, std::span<const EventRecord> events,
                                       std::size_t codes, const DesignOptions& options)
{
    std::unordered_map<std::string_view, std::size_t> position;
    position.reserve(patient_ids.size());
    for (std::size_t p = 0; p < patient_ids.size(); ++p)
        if (!position.emplace(patient_ids[p], p).second)
            throw std::invalid_argument("duplicate patient id " + patient_ids[p]);

    std::vector<std::vector<EventRecord>> grouped(patient_ids.size());
    for (const auto& e : events) {
        const auto it = position.find(e.patient_id);
        if (it != position.end()) grouped[it->second].push_back(e);
    }

    std::vector<PatientMatrix> matrices(patient_ids.size());
    detail::parallel_for(patient_ids.size(), [&](std::size_t i) {
        matrices[i] = build_patient_matrix(patient_ids[i], grouped[i], options.ages, codes);
    });

    MatrixProvenance provenance;
    provenance.boundary = options.boundary;
    provenance.sigma = options.sigma;
    if (options.apply_ipf && !matrices.empty()) {
        const auto weights = compute_ipf(matrices);
        provenance.ipf_applied = true;
        provenance.ipf_weights = weights.weight;
        detail::parallel_for(matrices.size(), [&](std::size_t p) { matrices[p] = apply_ipf(matrices[p], weights); });
    }

    const auto kernel = SmoothingKernel::gaussian(options.sigma, options.truncate);
    provenance.kernel_radius = kernel.radius();
    if (kernel.radius() > 0) {
        detail::parallel_for(matrices.size(),
                             [&](std::size_t p) { matrices[p] = smooth_columns(matrices[p], kernel, options.boundary); });
    }

    auto out = concatenate(matrices, std::move(provenance));
    if (matrices.empty()) {
        out.ages = options.ages;
        out.codes = codes;
        out.values = SparseMatrix::from_triplets(0, codes, {});
    }
    return out;
}

void write_concatenated(const ConcatenatedMatrix& matrix, const std::filesystem::path& stem)
{
    auto bin_path = stem;
    bin_path += ".bin";
    auto json_path = stem;
    json_path += ".json";

    auto out = detail::open_output(bin_path, true);
    const auto& m = matrix.values;
    const auto row_ptr = m.row_ptr();
    const auto cols = m.col_index();
    const auto vals = m.values();
    for (std::size_t r = 0; r < m.rows(); ++r) {
        for (std::size_t k = row_ptr[r]; k < row_ptr[r + 1]; ++k) {
            detail::write_le<std::uint64_t>(out, r);
            detail::write_le<std::uint32_t>(out, cols[k]);
            detail::write_le<double>(out, vals[k]);
        }
    }

    nlohmann::json sidecar = {{"format", "triplet-u64-u32-f64-le"},
                              {"T", matrix.ages},
                              {"N", matrix.patients},
                              {"C", matrix.codes},
                              {"nnz", m.nnz()},
                              {"patient_index", matrix.patient_index},
                              {"provenance", matrix.provenance.to_json()}};
    auto meta = detail::open_output(json_path);
    meta << sidecar.dump(2) << '\n';
}

ConcatenatedMatrix read_concatenated(const std::filesystem::path& stem)
{
    auto bin_path = stem;
    bin_path += ".bin";
    auto json_path = stem;
    json_path += ".json";

    nlohmann::json sidecar;
    {
        auto in = detail::open_input(json_path);
        try {
            in >> sidecar;
        } catch (const nlohmann::json::exception& e) {
            throw DataError("malformed matrix sidecar " + json_path.string() + ": " + e.what());
        }
    }

    ConcatenatedMatrix out;
    try {
        out.ages = sidecar.at("T").get<std::size_t>();
        out.patients = sidecar.at("N").get<std::size_t>();
        out.codes = sidecar.at("C").get<std::size_t>();
        out.patient_index = sidecar.at("patient_index").get<std::vector<std::string>>();
        out.provenance = MatrixProvenance::from_json(sidecar.at("provenance"));
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed matrix sidecar " + json_path.string() + ": " + e.what());
    }
    if (out.patient_index.size() != out.patients) throw DataError("patient index length does not match N");
    const auto nnz = sidecar.at("nnz").get<std::size_t>();

    auto in = detail::open_input(bin_path);
    std::vector<Triplet> triplets;
    triplets.reserve(nnz);
    for (std::size_t k = 0; k < nnz; ++k) {
        const auto row = detail::read_le<std::uint64_t>(in);
        const auto col = detail::read_le<std::uint32_t>(in);
        const auto value = detail::read_le<double>(in);
        triplets.push_back({row, col, value});
    }
    try {
        out.values = SparseMatrix::from_triplets(out.ages * out.patients, out.codes, std::move(triplets));
    } catch (const std::out_of_range& e) {
        throw DataError("matrix triplets inconsistent with sidecar shape: " + std::string(e.what()));
    }
    return out;
}

} // namespace mmp
