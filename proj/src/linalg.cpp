#include "tide/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace tide {

double CsrMatrix::diagonal(Index i) const {
    const auto begin = col_idx.begin() + row_ptr[i];
    const auto end = col_idx.begin() + row_ptr[i + 1];
    const auto it = std::lower_bound(begin, end, i);
    if (it != end && *it == i) return values[static_cast<std::size_t>(it - col_idx.begin())];
    return 0.0;
}

Matrix CsrMatrix::to_dense() const {
    Matrix d = Matrix::Zero(rows, rows);
    for (Index i = 0; i < rows; ++i) {
        for (Index p = row_ptr[i]; p < row_ptr[i + 1]; ++p) d(i, col_idx[p]) = values[p];
    }
    return d;
}

void multiply_into(const CsrMatrix& a, const Matrix& x, Matrix& y) {
    if (x.rows() != a.rows) {
        throw std::invalid_argument("sparse product: operator has " + std::to_string(a.rows) +
                                    " rows, input has " + std::to_string(x.rows()));
    }
    y.resize(a.rows, x.cols());
    for (Index c = 0; c < x.cols(); ++c) {
        const double* xc = x.col(c).data();
        double* yc = y.col(c).data();
        for (Index i = 0; i < a.rows; ++i) {
            double acc = 0.0;
            for (Index p = a.row_ptr[i]; p < a.row_ptr[i + 1]; ++p) acc += a.values[p] * xc[a.col_idx[p]];
            yc[i] = acc;
        }
    }
}

Matrix multiply(const CsrMatrix& a, const Matrix& x) {
    Matrix y;
    multiply_into(a, x, y);
    return y;
}

Vector multiply(const CsrMatrix& a, const Vector& x) {
    if (x.size() != a.rows) throw std::invalid_argument("sparse product: dimension mismatch");
    Vector y(a.rows);
    for (Index i = 0; i < a.rows; ++i) {
        double acc = 0.0;
        for (Index p = a.row_ptr[i]; p < a.row_ptr[i + 1]; ++p) acc += a.values[p] * x[a.col_idx[p]];
        y[i] = acc;
    }
    return y;
}

void CompensatedSum::add(double v) {
    const double t = sum_ + v;
    if (std::abs(sum_) >= std::abs(v)) {
        compensation_ += (sum_ - t) + v;
    } else {
        compensation_ += (v - t) + sum_;
    }
    sum_ = t;
}

}  // namespace tide
