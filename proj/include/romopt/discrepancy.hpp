#pragma once

#include "romopt/core.hpp"
#include "romopt/optimizer.hpp"
#include "romopt/rng.hpp"
#include "romopt/rom_adjoint.hpp"

#include <functional>
#include <vector>

namespace romopt::hdsa {

// Affine model discrepancy delta(t; z, theta) = u0(t;theta) + L(t;theta) Mz z
// represented on an orthonormal basis of the observed discrepancy
// trajectories. theta packs, per discrepancy time node, r_d intercept
// coefficients followed by the r_d x n_z linear map (column-major).

struct ParamLayout {
    int r_d = 0;
    int n_z = 0;
    int n_tau = 0;

    int block_size() const { return r_d * (1 + n_z); }
    int n_theta() const { return n_tau * block_size(); }
};

struct DiscrepancyBasis {
    Mat Vdelta;      // n_x_total x r_d, V'V = I
    Vec time_nodes;  // n_tau values

    int r() const { return static_cast<int>(Vdelta.cols()); }
};

/// Orthonormal basis of the stacked discrepancy snapshots via thin SVD,
/// truncated at r_max or at the 1e-8 relative singular-value cutoff,
/// whichever is smaller.
DiscrepancyBasis build_discrepancy_basis(const std::vector<Mat>& deltas, const Vec& time_nodes,
                                         int r_max);

/// Evaluate delta in the full state space; piecewise-linear in t between
/// the discrepancy time nodes.
Vec delta_eval(const Vec& theta, const ParamLayout& lay, const DiscrepancyBasis& basis,
               const Vec& mz_diag, const Vec& z, double t);

/// One FOM evaluation's worth of calibration data.
struct DiscrepancyData {
    Vec z;      // decision variable of the FOM run
    Mat delta;  // n_x_total x n_tau discrepancy field at the time nodes
};

struct PriorSpec {
    SpMat wu_spatial;  // state-space precision factor (SPD)
    Vec time_weights;  // per-node quadrature weights (1.0 for a single node)
    Mat wz;            // n_z x n_z decision precision (SPD)
    Vec mz_diag;       // decision mass diagonal
    double alpha_p = 1.0;
    double alpha_d = 1.0;
};

/// Quadrature weights used for discrepancy time nodes.
Vec delta_time_weights(const Vec& time_nodes);

/// Noise scale set relative to the data magnitude:
/// alpha_d = (factor * ||Delta||_Wu)^2 / dim.
double alpha_d_from_data(const std::vector<DiscrepancyData>& data, const SpMat& wu_spatial,
                         const Vec& time_weights, double factor);

// Prior precision W_theta, block-diagonal over time nodes: the intercept
// block carries the basis-projected state precision Wtil = V' Wu V (time
// weighted), the linear-map block its Kronecker product with Wz^-1, all
// scaled by alpha_p.
struct PriorPrecision {
    ParamLayout layout;
    Mat wtil;    // r_d x r_d
    Mat wz_inv;  // n_z x n_z
    Vec time_weights;
    double alpha_p = 1.0;

    Vec apply(const Vec& theta) const;
    Mat to_dense() const;  // small layouts only
};

PriorPrecision prior_precision(const PriorSpec& spec, const DiscrepancyBasis& basis,
                               const ParamLayout& lay);

// Gaussian posterior over theta. The precision inherits the prior's
// block-over-time-nodes Kronecker structure,
//   P_tau = w_tau * K (x) Wtil,   K = alpha_p diag(1, Wz^-1) + (1/alpha_d) sum_l v_l v_l',
// with v_l = [1; Mz z_l], so the Cholesky factor is stored as the pair
// (chol K, chol Wtil).
struct DiscrepancyPosterior {
    ParamLayout layout;
    Vec mean;
    Mat chol_K;     // (1+n_z) x (1+n_z) lower factor
    Mat chol_wtil;  // r_d x r_d lower factor
    Vec time_weights;

    Vec sample(Rng& rng) const;
    Vec precision_apply(const Vec& theta) const;
    Mat precision_dense() const;   // small layouts only
    Mat covariance_dense() const;  // small layouts only
};

DiscrepancyPosterior calibrate_posterior(const std::vector<DiscrepancyData>& data,
                                         const DiscrepancyBasis& basis, const PriorSpec& prior);

/// Stacked discrepancy field S(t; z, xi') - V Shat(t; z) subsampled onto the
/// requested time nodes; state rows are [u1; u2]. Rejects time grids that do
/// not contain the nodes.
Mat contaminant_discrepancy(const fom::StateTrajectory& fom_traj,
                            const rom::ReducedModel& model,
                            const rom::ReducedTrajectory& rom_traj, const Vec& delta_times);

// Precomputed reduced-space projections of the discrepancy basis needed by
// the ROMCO-MD objective: P1d = V1' Mtilde Vd_top, Gd = Vd_top' Mtilde Vd_top.
struct DeltaProjection {
    ParamLayout layout;
    Mat P1d;
    Mat Gd;
    Vec time_nodes;
    Vec mz_diag;
};

DeltaProjection project_delta_basis(const DiscrepancyBasis& basis, const ParamLayout& lay,
                                    const Mat& V1, const Vec& mtilde_diag, const Vec& mz_diag);

/// Materialize the adjoint-side discrepancy term for a given theta.
adj::DeltaTerm make_delta_term(const DeltaProjection& proj, const Vec& theta);

/// Mixed-Hessian action B theta = d/de grad_z J(z~, e*theta) at e = 0.
/// J is quadratic in theta, so the symmetric difference of two adjoint
/// gradient evaluations at +/- theta is exact and exactly linear in theta.
Vec mixed_hessian_apply(const adj::RomcoProblem& base, const DeltaProjection& proj,
                        const Vec& z_tilde, const Vec& theta);

struct SensitivitySystem {
    Vec z_tilde;
    Mat H;  // n_z x n_z symmetric (empty when only the eigenspace is kept)
    opt::EigenDecomposition eig;
    std::function<Vec(const Vec&)> b_apply;
};

/// Retain the leading eigenpairs of H down to the first eigenvalue with
/// lambda_r / lambda_1 <= ratio_tol (all of them when none decays that far).
opt::EigenDecomposition retain_leading(const Mat& H, double ratio_tol);

/// Post-optimality update z~ - H^-1 B theta, optionally projected onto the
/// retained eigenspace (H^-1 then acts through the retained pairs).
/// Rejects retained eigenvalues <= 0.
Vec update_solution(const SensitivitySystem& sys, const Vec& theta, bool use_projection);

/// Posterior decision samples: theta draws pushed through update_solution;
/// deterministic per seed, parallel across samples.
std::vector<Vec> posterior_control_samples(const DiscrepancyPosterior& post,
                                           const SensitivitySystem& sys, int n_samples,
                                           std::uint64_t seed, bool use_projection);

struct Ellipse {
    Vec2 center = Vec2::Zero();
    double semi_major = 0.0;
    double semi_minor = 0.0;
    double angle = 0.0;  // radians, major-axis direction
    bool degenerate = false;
};

/// Confidence ellipse of a 2-D Gaussian: axes from the covariance
/// eigendecomposition scaled by the chi-square(2) quantile
/// -2 log(1 - level). A numerically singular covariance degenerates to a
/// segment (zero minor axis) with a warning.
Ellipse confidence_ellipse(const Mat2& cov, const Vec2& mean, double level);
Ellipse confidence_ellipse_from_samples(const std::vector<Vec2>& samples, double level);
bool ellipse_contains(const Ellipse& e, const Vec2& x);

/// beta1 * M + beta2 * K graph-Laplacian-plus-mass precision on a grid,
/// duplicated per species when n_species = 2.
SpMat laplacian_precision(const fom::Grid2D& grid, double beta1, double beta2, int n_species);

}  // namespace romopt::hdsa
