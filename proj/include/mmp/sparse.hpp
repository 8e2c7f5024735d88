#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace mmp {

struct Triplet {
    std::size_t row = 0;
    std::size_t col = 0;
    double value = 0.0;
};

// Compressed sparse row matrix with an additional column-major index over the
// same nonzeros, so kernels can sweep either rows or columns without scatter.
class SparseMatrix {
public:
    SparseMatrix() = default;

    // Duplicate coordinates are summed; exact zeros are dropped.
    static SparseMatrix from_triplets(std::size_t rows, std::size_t cols, std::vector<Triplet> triplets);
    static SparseMatrix from_dense(const Eigen::MatrixXd& dense);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t nnz() const { return values_.size(); }

    std::span<const std::size_t> row_ptr() const { return row_ptr_; }
    std::span<const std::uint32_t> col_index() const { return col_index_; }
    std::span<const double> values() const { return values_; }

    // Column view: nonzeros of column c are slots col_ptr[c]..col_ptr[c+1] of
    // col_rows / col_slot, where col_slot points into values().
    std::span<const std::size_t> col_ptr() const { return col_ptr_; }
    std::span<const std::size_t> col_rows() const { return col_rows_; }
    std::span<const std::size_t> col_slot() const { return col_slot_; }

    double sum() const;
    double min_value() const;
    Eigen::MatrixXd to_dense() const;
    std::vector<Triplet> triplets() const;

private:
    void build_column_index();

    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<std::size_t> row_ptr_{0};
    std::vector<std::uint32_t> col_index_;
    std::vector<double> values_;
    std::vector<std::size_t> col_ptr_;
    std::vector<std::size_t> col_rows_;
    std::vector<std::size_t> col_slot_;
};

} // namespace mmp
