#pragma once

#include "tide/graph.hpp"
#include "tide/linalg.hpp"
#include "tide/spectral.hpp"

#include <stdexcept>
#include <string>

namespace tide {

struct CgConfig {
    double tolerance = 1e-8;  // relative residual ||b - A y|| / ||b||
    Index max_iterations = 0;  // 0 selects 10 sqrt(n) + 100
};

class CgConvergenceError : public std::runtime_error {
public:
    CgConvergenceError(const std::string& what, double residual)
        : std::runtime_error(what), residual_(residual) {}
    double residual() const { return residual_; }

private:
    double residual_;
};

struct CgStats {
    Index iterations = 0;
    double relative_residual = 0.0;
};

// Solves (I + t Delta) y = b by Jacobi-preconditioned conjugate gradients.
Vector solve_shifted(const CsrMatrix& delta, double t, const Vector& b, const CgConfig& cfg,
                     CgStats* stats = nullptr);

// y = (I + t Delta)^{-1} u, one solve per channel.
Matrix implicit_euler_solve(const NormalizedOperator& delta, Times t, const Matrix& u,
                            const CgConfig& cfg = {});

// L~ (I + t Delta)^{-1} u.
Matrix implicit_euler_tide(const NormalizedOperator& delta, const NormalizedOperator& msg_op,
                           Times t, const Matrix& u, const CgConfig& cfg = {});

// dy/dt for y = (I + t Delta)^{-1} u: -(I + t Delta)^{-1} Delta y.
Matrix implicit_euler_time_derivative(const NormalizedOperator& delta, Times t,
                                      const Matrix& y, const CgConfig& cfg = {});

}  // namespace tide
