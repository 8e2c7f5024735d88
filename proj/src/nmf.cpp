#include "mmp/nmf.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

#include <json.hpp>

#include "binary_io.hpp"
#include "mmp/errors.hpp"
#include "text_io.hpp"

namespace mmp {

namespace {

// ratio[k] = D_k / (A B)_k over the nonzeros of D, in CSR order.
void compute_ratio(const SparseMatrix& data, const RowMatrix& A, const Eigen::MatrixXd& B, std::vector<double>& ratio)
{
    const auto row_ptr = data.row_ptr();
    const auto cols = data.col_index();
    const auto vals = data.values();
    ratio.resize(data.nnz());
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t r = 0; r < static_cast<std::ptrdiff_t>(data.rows()); ++r) {
        const auto row = A.row(r);
        for (std::size_t k = row_ptr[r]; k < row_ptr[r + 1]; ++k) ratio[k] = vals[k] / row.dot(B.col(cols[k]));
    }
}

inline double step_factor(double factor, double exponent)
{
    return exponent == 1.0 ? factor : std::pow(factor, exponent);
}

void validate(const SparseMatrix& data, const NmfConfig& config)
{
    if (config.rank < 1) throw std::invalid_argument("NMF rank must be >= 1");
    if (config.rank > std::min(data.rows(), data.cols()))
        throw std::invalid_argument("NMF rank " + std::to_string(config.rank) + " exceeds min(rows, cols) of a " +
                                    std::to_string(data.rows()) + "x" + std::to_string(data.cols()) + " matrix");
    if (!(config.epsilon > 0.0)) throw std::invalid_argument("NMF epsilon must be > 0");
    if (config.max_iters < 0) throw std::invalid_argument("NMF max_iters must be >= 0");
    if (!(config.tol >= 0.0)) throw std::invalid_argument("NMF tol must be >= 0");
    if (config.window < 1) throw std::invalid_argument("NMF window must be >= 1");
    for (double v : data.values())
        if (!(v >= 0.0) || !std::isfinite(v)) throw std::invalid_argument("NMF input must be finite and non-negative");
}

} // namespace

double kl_divergence(const SparseMatrix& data, const RowMatrix& A, const Eigen::MatrixXd& B)
{
    const auto row_ptr = data.row_ptr();
    const auto cols = data.col_index();
    const auto vals = data.values();

    // Per-row partials keep the summation order independent of the thread count.
    std::vector<double> fit(data.rows(), 0.0);
    std::vector<double> model_mass(data.rows(), 0.0);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t r = 0; r < static_cast<std::ptrdiff_t>(data.rows()); ++r) {
        const auto row = A.row(r);
        double f = 0.0;
        double m = 0.0;
        for (std::size_t k = row_ptr[r]; k < row_ptr[r + 1]; ++k) {
            const double d = vals[k];
            const double ab = row.dot(B.col(cols[k]));
            f += d * std::log(d / ab) - d + ab;
            m += ab;
        }
        fit[static_cast<std::size_t>(r)] = f;
        model_mass[static_cast<std::size_t>(r)] = m;
    }

    double total = 0.0;
    double at_nonzeros = 0.0;
    for (std::size_t r = 0; r < data.rows(); ++r) {
        total += fit[r];
        at_nonzeros += model_mass[r];
    }
    if (data.nnz() < data.rows() * data.cols()) {
        // Zero entries contribute (A B)_uv; their sum is the total model mass minus the mass at nonzeros.
        const Eigen::VectorXd col_sum_a = A.colwise().sum().transpose();
        const Eigen::VectorXd row_sum_b = B.rowwise().sum();
        const double model_total = col_sum_a.dot(row_sum_b);
        total += std::max(0.0, model_total - at_nonzeros);
    }
    return total;
}

void update_step(const SparseMatrix& data, RowMatrix& A, Eigen::MatrixXd& B, double epsilon, double exponent)
{
    const auto rank = A.cols();
    const auto row_ptr = data.row_ptr();
    const auto cols = data.col_index();
    const auto col_ptr = data.col_ptr();
    const auto col_rows = data.col_rows();
    const auto col_slot = data.col_slot();
    std::vector<double> ratio;

    compute_ratio(data, A, B, ratio);
    const Eigen::VectorXd col_sum_a = A.colwise().sum().transpose();
#pragma omp parallel
    {
        Eigen::VectorXd numer(rank);
#pragma omp for schedule(static)
        for (std::ptrdiff_t c = 0; c < static_cast<std::ptrdiff_t>(data.cols()); ++c) {
            numer.setZero();
            for (std::size_t k = col_ptr[c]; k < col_ptr[c + 1]; ++k)
                numer += A.row(static_cast<Eigen::Index>(col_rows[k])).transpose() * ratio[col_slot[k]];
            for (Eigen::Index q = 0; q < rank; ++q)
                B(q, c) = std::max(epsilon, B(q, c) * step_factor(numer(q) / col_sum_a(q), exponent));
        }
    }

    compute_ratio(data, A, B, ratio);
    const Eigen::VectorXd row_sum_b = B.rowwise().sum();
#pragma omp parallel
    {
        Eigen::VectorXd numer(rank);
#pragma omp for schedule(static)
        for (std::ptrdiff_t r = 0; r < static_cast<std::ptrdiff_t>(data.rows()); ++r) {
            numer.setZero();
            for (std::size_t k = row_ptr[r]; k < row_ptr[r + 1]; ++k) numer += B.col(cols[k]) * ratio[k];
            for (Eigen::Index q = 0; q < rank; ++q)
                A(r, q) = std::max(epsilon, A(r, q) * step_factor(numer(q) / row_sum_b(q), exponent));
        }
    }
}

void initialize_factors(const SparseMatrix& data, std::size_t rank, std::uint64_t seed, RowMatrix& A,
                        Eigen::MatrixXd& B)
{
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const auto rows = static_cast<Eigen::Index>(data.rows());
    const auto cols = static_cast<Eigen::Index>(data.cols());
    const auto q = static_cast<Eigen::Index>(rank);

    A.resize(rows, q);
    B.resize(q, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < q; ++j) A(i, j) = 1.0 - unit(rng);
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < q; ++i) B(i, j) = 1.0 - unit(rng);

    const double target = data.sum();
    const double current = A.colwise().sum().dot(B.rowwise().sum().transpose());
    if (target > 0.0 && current > 0.0) {
        const double scale = std::sqrt(target / current);
        A *= scale;
        B *= scale;
    }
}

FactorModel factorize(const SparseMatrix& data, const NmfConfig& config)
{
    validate(data, config);
    RowMatrix A;
    Eigen::MatrixXd B;
    initialize_factors(data, config.rank, config.seed, A, B);
    return factorize(data, config, std::move(A), std::move(B));
}

FactorModel factorize(const SparseMatrix& data, const NmfConfig& config, RowMatrix A, Eigen::MatrixXd B)
{
    validate(data, config);
    const auto q = static_cast<Eigen::Index>(config.rank);
    if (A.rows() != static_cast<Eigen::Index>(data.rows()) || A.cols() != q || B.rows() != q ||
        B.cols() != static_cast<Eigen::Index>(data.cols()))
        throw std::invalid_argument("initial factors do not match data shape and rank");
    A = A.cwiseMax(config.epsilon);
    B = B.cwiseMax(config.epsilon);

    FactorModel model;
    model.rank = config.rank;
    model.seed = config.seed;
    model.divergence_trace.reserve(static_cast<std::size_t>(config.max_iters) + 1);
    model.divergence_trace.push_back(kl_divergence(data, A, B));
    if (!std::isfinite(model.divergence_trace.back()))
        throw NumericalError("non-finite NMF objective at iteration 0");

    for (int it = 1; it <= config.max_iters; ++it) {
        update_step(data, A, B, config.epsilon);
        const double objective = kl_divergence(data, A, B);
        if (!std::isfinite(objective))
            throw NumericalError("non-finite NMF objective at iteration " + std::to_string(it));
        model.divergence_trace.push_back(objective);
        model.iterations = it;
        if (objective <= 0.0) {
            model.converged = true;
            break;
        }
        if (it >= config.window) {
            const double previous = model.divergence_trace[static_cast<std::size_t>(it - config.window)];
            if (previous - objective <= config.tol * previous) {
                model.converged = true;
                break;
            }
        }
    }
    model.A = std::move(A);
    model.B = std::move(B);
    return model;
}

RestartBatch multi_restart(const SparseMatrix& data, const NmfConfig& config, std::size_t n_runs)
{
    if (n_runs < 1) throw std::invalid_argument("multi_restart needs n_runs >= 1");
    std::vector<FactorModel> models(n_runs);
    std::vector<std::string> errors(n_runs);
    std::vector<char> failed(n_runs, 0);

#pragma omp parallel for schedule(dynamic, 1)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n_runs); ++i) {
        auto run_config = config;
        run_config.seed = config.seed + static_cast<std::uint64_t>(i);
        try {
            models[static_cast<std::size_t>(i)] = factorize(data, run_config);
        } catch (const std::exception& e) {
            failed[static_cast<std::size_t>(i)] = 1;
            errors[static_cast<std::size_t>(i)] = e.what();
        }
    }

    RestartBatch batch;
    for (std::size_t i = 0; i < n_runs; ++i) {
        if (failed[i]) {
            batch.failures.push_back({config.seed + i, errors[i]});
            log_warning("NMF run with seed " + std::to_string(config.seed + i) + " failed: " + errors[i]);
        } else {
            batch.models.push_back(std::move(models[i]));
        }
    }
    return batch;
}

FactorModel normalized_for_reporting(const FactorModel& model)
{
    FactorModel out = model;
    for (Eigen::Index q = 0; q < out.B.rows(); ++q) {
        const double peak = out.B.row(q).maxCoeff();
        if (!(peak > 0.0)) continue;
        out.B.row(q) /= peak;
        out.A.col(q) *= peak;
    }
    return out;
}

namespace {

template <class Matrix>
void write_row_major(const std::filesystem::path& path, const Matrix& m)
{
    auto out = detail::open_output(path, true);
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) detail::write_le<double>(out, m(i, j));
}

template <class Matrix>
Matrix read_row_major(const std::filesystem::path& path, Eigen::Index rows, Eigen::Index cols)
{
    auto in = detail::open_input(path);
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = detail::read_le<double>(in);
    return m;
}

} // namespace

void write_model(const FactorModel& model, const std::filesystem::path& dir, std::span<const std::string> codes)
{
    std::filesystem::create_directories(dir);
    nlohmann::json manifest = {{"Q", model.rank},
                               {"seed", model.seed},
                               {"iterations", model.iterations},
                               {"converged", model.converged},
                               {"final_divergence", model.final_divergence()},
                               {"A_shape", {model.A.rows(), model.A.cols()}},
                               {"B_shape", {model.B.rows(), model.B.cols()}},
                               {"divergence_trace", model.divergence_trace}};
    {
        auto out = detail::open_output(dir / "manifest.json");
        out << manifest.dump(2) << '\n';
    }
    write_row_major(dir / "A.bin", model.A);
    write_row_major(dir / "B.bin", model.B);

    auto tsv = detail::open_output(dir / "B.tsv");
    tsv.precision(6);
    tsv << "cluster";
    for (Eigen::Index c = 0; c < model.B.cols(); ++c)
        tsv << '\t' << (static_cast<std::size_t>(c) < codes.size() ? codes[static_cast<std::size_t>(c)]
                                                                    : std::to_string(c));
    tsv << '\n';
    const auto reported = normalized_for_reporting(model);
    for (Eigen::Index q = 0; q < reported.B.rows(); ++q) {
        tsv << "DC" << q;
        for (Eigen::Index c = 0; c < reported.B.cols(); ++c) tsv << '\t' << reported.B(q, c);
        tsv << '\n';
    }
}

FactorModel read_model(const std::filesystem::path& dir)
{
    nlohmann::json manifest;
    {
        auto in = detail::open_input(dir / "manifest.json");
        try {
            in >> manifest;
        } catch (const nlohmann::json::exception& e) {
            throw DataError("malformed model manifest: " + std::string(e.what()));
        }
    }
    FactorModel model;
    try {
        model.rank = manifest.at("Q").get<std::size_t>();
        model.seed = manifest.at("seed").get<std::uint64_t>();
        model.iterations = manifest.at("iterations").get<int>();
        model.converged = manifest.at("converged").get<bool>();
        model.divergence_trace = manifest.at("divergence_trace").get<std::vector<double>>();
        const auto a_shape = manifest.at("A_shape").get<std::vector<Eigen::Index>>();
        const auto b_shape = manifest.at("B_shape").get<std::vector<Eigen::Index>>();
        model.A = read_row_major<RowMatrix>(dir / "A.bin", a_shape.at(0), a_shape.at(1));
        model.B = read_row_major<Eigen::MatrixXd>(dir / "B.bin", b_shape.at(0), b_shape.at(1));
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed model manifest: " + std::string(e.what()));
    }
    return model;
}

} // namespace mmp
