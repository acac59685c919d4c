#include "tide/euler.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace tide {

namespace {

Index default_iterations(const CgConfig& cfg, Index n) {
    if (cfg.max_iterations > 0) return cfg.max_iterations;
    return static_cast<Index>(10.0 * std::sqrt(static_cast<double>(n))) + 100;
}

void check_times(Times t, Index channels) {
    if (t.size() != 1 && static_cast<Index>(t.size()) != channels) {
        throw std::invalid_argument("time vector must have length 1 or one entry per channel");
    }
    for (double v : t) {
        if (!(v >= 0.0)) throw std::invalid_argument("implicit Euler needs t >= 0");
    }
}

}  // namespace

Vector solve_shifted(const CsrMatrix& delta, double t, const Vector& b, const CgConfig& cfg, CgStats* stats) {
    if (!(cfg.tolerance > 0.0)) throw std::invalid_argument("CG tolerance must be positive");
    if (!(t >= 0.0)) throw std::invalid_argument("implicit Euler needs t >= 0");
    const Index n = delta.rows;
    if (b.size() != n) throw std::invalid_argument("right-hand side size mismatch");

    const double bnorm = b.norm();
    if (t == 0.0 || bnorm == 0.0) {
        if (stats) *stats = {0, 0.0};
        return b;
    }
    auto apply = [&](const Vector& x) { return Vector(x + t * multiply(delta, x)); };
    Vector inv_diag(n);
    for (Index i = 0; i < n; ++i) inv_diag[i] = 1.0 / (1.0 + t * delta.diagonal(i));

    const Index max_iter = default_iterations(cfg, n);
    Vector x = Vector::Zero(n);
    Index it = 0;
    double rel = 1.0;
    // Restart from the current iterate when the recurrence residual has
    // drifted away from the true one.
    for (int restart = 0; restart < 4; ++restart) {
        Vector r = b - apply(x);
        rel = r.norm() / bnorm;
        if (rel <= cfg.tolerance || it >= max_iter) break;
        Vector z = inv_diag.cwiseProduct(r);
        Vector p = z;
        double rz = r.dot(z);
        for (; it < max_iter; ++it) {
            const Vector ap = apply(p);
            const double step = rz / p.dot(ap);
            x += step * p;
            r -= step * ap;
            if (r.norm() / bnorm <= cfg.tolerance) {
                ++it;
                break;
            }
            z = inv_diag.cwiseProduct(r);
            const double rz_next = r.dot(z);
            p = z + (rz_next / rz) * p;
            rz = rz_next;
        }
    }
    rel = (b - apply(x)).norm() / bnorm;
    if (rel > cfg.tolerance) {
        throw CgConvergenceError("CG did not converge in " + std::to_string(it) +
                                     " iterations (relative residual " + std::to_string(rel) + ")",
                                 rel);
    }
    if (stats) *stats = {it, rel};
    return x;
}

Matrix implicit_euler_solve(const NormalizedOperator& delta, Times t, const Matrix& u, const CgConfig& cfg) {
    if (delta.kind != OperatorKind::PsdLaplacian) throw std::invalid_argument("implicit Euler expects Delta");
    if (u.rows() != delta.size()) throw std::invalid_argument("signal rows do not match operator size");
    check_times(t, u.cols());
    Matrix y(u.rows(), u.cols());
    for (Index c = 0; c < u.cols(); ++c) {
        const double tc = t.size() == 1 ? t[0] : t[c];
        y.col(c) = solve_shifted(delta.matrix, tc, u.col(c), cfg);
    }
    return y;
}

Matrix implicit_euler_tide(const NormalizedOperator& delta, const NormalizedOperator& msg_op, Times t, const Matrix& u,
                           const CgConfig& cfg) {
    if (msg_op.kind != OperatorKind::MessagePassing) throw std::invalid_argument("expected L~ as message operator");
    return spmv(msg_op, implicit_euler_solve(delta, t, u, cfg));
}

Matrix implicit_euler_time_derivative(const NormalizedOperator& delta, Times t, const Matrix& y, const CgConfig& cfg) {
    const Matrix dy = spmv(delta, y);
    Matrix out = implicit_euler_solve(delta, t, dy, cfg);
    out *= -1.0;
    return out;
}

}  // namespace tide
