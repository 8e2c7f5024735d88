#include "mmp/sparse.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>
#include <string>

namespace mmp {

SparseMatrix SparseMatrix::from_triplets(std::size_t rows, std::size_t cols, std::vector<Triplet> triplets)
{
    if (cols > std::numeric_limits<std::uint32_t>::max())
        throw std::invalid_argument("column count exceeds 32-bit index range");
    for (const auto& t : triplets)
        if (t.row >= rows || t.col >= cols)
            throw std::out_of_range("triplet (" + std::to_string(t.row) + ", " + std::to_string(t.col) +
                                    ") outside " + std::to_string(rows) + "x" + std::to_string(cols));

    std::sort(triplets.begin(), triplets.end(), [](const Triplet& a, const Triplet& b) {
        return a.row != b.row ? a.row < b.row : a.col < b.col;
    });

    SparseMatrix m;
    m.rows_ = rows;
    m.cols_ = cols;
    m.row_ptr_.assign(rows + 1, 0);
    m.col_index_.reserve(triplets.size());
    m.values_.reserve(triplets.size());

    std::size_t i = 0;
    while (i < triplets.size()) {
        const auto row = triplets[i].row;
        const auto col = triplets[i].col;
        double value = 0.0;
        for (; i < triplets.size() && triplets[i].row == row && triplets[i].col == col; ++i) value += triplets[i].value;
        if (value == 0.0) continue;
        m.col_index_.push_back(static_cast<std::uint32_t>(col));
        m.values_.push_back(value);
        ++m.row_ptr_[row + 1];
    }
    for (std::size_t r = 0; r < rows; ++r) m.row_ptr_[r + 1] += m.row_ptr_[r];
    m.build_column_index();
    return m;
}

SparseMatrix SparseMatrix::from_dense(const Eigen::MatrixXd& dense)
{
    std::vector<Triplet> triplets;
    for (Eigen::Index r = 0; r < dense.rows(); ++r)
        for (Eigen::Index c = 0; c < dense.cols(); ++c)
            if (dense(r, c) != 0.0)
                triplets.push_back({static_cast<std::size_t>(r), static_cast<std::size_t>(c), dense(r, c)});
    return from_triplets(static_cast<std::size_t>(dense.rows()), static_cast<std::size_t>(dense.cols()),
                         std::move(triplets));
}

void SparseMatrix::build_column_index()
{
    col_ptr_.assign(cols_ + 1, 0);
    for (auto c : col_index_) ++col_ptr_[c + 1];
    for (std::size_t c = 0; c < cols_; ++c) col_ptr_[c + 1] += col_ptr_[c];

    col_rows_.resize(values_.size());
    col_slot_.resize(values_.size());
    std::vector<std::size_t> cursor(col_ptr_.begin(), col_ptr_.end() - 1);
    for (std::size_t r = 0; r < rows_; ++r) {
        for (std::size_t k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) {
            const auto dst = cursor[col_index_[k]]++;
            col_rows_[dst] = r;
            col_slot_[dst] = k;
        }
    }
}

double SparseMatrix::sum() const
{
    double total = 0.0;
    for (double v : values_) total += v;
    return total;
}

double SparseMatrix::min_value() const
{
    if (values_.empty()) return 0.0;
    const double smallest = *std::min_element(values_.begin(), values_.end());
    return nnz() < rows_ * cols_ ? std::min(0.0, smallest) : smallest;
}

Eigen::MatrixXd SparseMatrix::to_dense() const
{
    Eigen::MatrixXd dense = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(rows_), static_cast<Eigen::Index>(cols_));
    for (std::size_t r = 0; r < rows_; ++r)
        for (std::size_t k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k)
            dense(static_cast<Eigen::Index>(r), col_index_[k]) = values_[k];
    return dense;
}

std::vector<Triplet> SparseMatrix::triplets() const
{
    std::vector<Triplet> out;
    out.reserve(values_.size());
    for (std::size_t r = 0; r < rows_; ++r)
        for (std::size_t k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) out.push_back({r, col_index_[k], values_[k]});
    return out;
}

} // namespace mmp
