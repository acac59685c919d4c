#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

namespace tide {

using Index = Eigen::Index;
using Matrix = Eigen::MatrixXd;  // column-major: one contiguous column per channel
using Vector = Eigen::VectorXd;

// Square sparse matrix in compressed sparse row layout. Column indices are
// sorted within each row.
struct CsrMatrix {
    Index rows = 0;
    std::vector<Index> row_ptr{0};
    std::vector<Index> col_idx;
    std::vector<double> values;

    Index nnz() const { return static_cast<Index>(col_idx.size()); }
    double diagonal(Index i) const;
    Matrix to_dense() const;
};

// y = A x, rows accumulated left to right in column-index order.
Matrix multiply(const CsrMatrix& a, const Matrix& x);
void multiply_into(const CsrMatrix& a, const Matrix& x, Matrix& y);
Vector multiply(const CsrMatrix& a, const Vector& x);

// Neumaier-compensated running sum.
class CompensatedSum {
public:
    void add(double v);
    double value() const { return sum_ + compensation_; }

private:
    double sum_ = 0.0;
    double compensation_ = 0.0;
};

}  // namespace tide
