#pragma once

#include "romopt/core.hpp"

#include <functional>
#include <string>
#include <vector>

namespace romopt::opt {

/// Smooth unconstrained problem with analytic first-order (and optionally
/// second-order) derivative oracles.
struct SmoothProblem {
    int dimension = 0;
    std::function<double(const Vec&)> objective;
    std::function<Vec(const Vec&)> gradient;
    std::function<Vec(const Vec&, const Vec&)> hvp;  // optional
};

/// Hard gate run before optimization: directional derivatives at random
/// probes near z0 must match central finite differences of the objective.
/// Throws on failure.
void gradient_self_test(const SmoothProblem& p, const Vec& z0, int n_probes = 5,
                        double tol = 1e-5, std::uint64_t seed = 17);

struct IterRecord {
    int iter = 0;
    double objective = 0.0;
    double grad_norm = 0.0;
    double trust_radius = 0.0;
    int cg_iters = 0;
};

struct MinimizeResult {
    Vec z;
    double objective = 0.0;
    double grad_norm = 0.0;
    int iterations = 0;
    bool converged = false;  // false = iteration budget exhausted (flagged)
    std::string message;
    std::vector<IterRecord> log;
};

struct TrustRegionOptions {
    double gtol = 1e-8;
    int max_iter = 200;
    int max_cg_iter = 250;
    double initial_radius = 1.0;
    double max_radius = 1e6;
    bool self_test = true;
};

/// Trust-region Newton-CG (Steihaug inner solver). Deterministic; accepted
/// steps never increase the objective.
MinimizeResult trust_region_newton_cg(const SmoothProblem& p, const Vec& z0,
                                      const TrustRegionOptions& opts = {});

/// Trust-region quasi-Newton with BFGS curvature updates; for problems
/// without a Hessian-vector oracle.
MinimizeResult quasi_newton_minimize(const SmoothProblem& p, const Vec& z0,
                                     const TrustRegionOptions& opts = {});

/// One BFGS update of the Hessian approximation B with step s and gradient
/// difference y; skipped (B unchanged) when the curvature s'y is not safely
/// positive, which preserves positive definiteness.
void bfgs_update(Mat& B, const Vec& s, const Vec& y);

struct EigenDecomposition {
    Vec eigenvalues;  // descending
    Mat W;            // n x r, orthonormal columns

    int r() const { return static_cast<int>(W.cols()); }
    Mat projector() const { return W * W.transpose(); }
    Vec apply_projector(const Vec& v) const { return W * (W.transpose() * v); }
    /// Inverse through the retained pairs: sum_i w_i lambda_i^-1 w_i' v.
    Vec apply_inverse(const Vec& v) const {
        return W * (W.transpose() * v).cwiseQuotient(eigenvalues);
    }
    double decay_ratio() const {
        return eigenvalues(eigenvalues.size() - 1) / eigenvalues(0);
    }
};

using HvpOracle = std::function<Vec(const Vec&)>;

/// Leading r eigenpairs of a symmetric operator by Lanczos with full
/// reorthogonalization. Throws after 4*r*n oracle calls without
/// convergence. Residuals satisfy ||H w - lambda w|| <= 1e-8 |lambda_1|.
EigenDecomposition leading_eigenpairs(const HvpOracle& hvp, int n, int r);

}  // namespace romopt::opt
