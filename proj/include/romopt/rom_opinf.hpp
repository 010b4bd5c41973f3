#pragma once

#include "romopt/core.hpp"
#include "romopt/fom_adr.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace romopt::rom {

using fom::ControlVector;
using fom::StateTrajectory;

/// POD basis orthonormal in the M inner product (V' M V = I).
struct PodBasis {
    Mat V;                // n_x x r
    Vec singular_values;  // all snapshot singular values, decreasing
    double residual_energy = 0.0;  // discarded energy fraction at rank r
    int r() const { return static_cast<int>(V.cols()); }
};

/// Weighted POD via the snapshot Gram eigendecomposition: the basis is the
/// smallest rank whose residual energy sum(sigma_j^2, j>r)/sum(sigma_j^2)
/// drops below energy_tol. Rank-deficient inputs truncate at numerical
/// rank with a warning on stderr.
PodBasis weighted_pod(const Mat& snapshots, const SpMat& M, double energy_tol);
PodBasis weighted_pod(const Mat& snapshots, const Vec& mass_diag, double energy_tol);

/// Sixth-order finite-difference time derivatives, column by column.
/// Interior columns use the 7-point central stencil; the first and last
/// three use 6th-order one-sided stencils. Requires n_t >= 7, uniform dt.
Mat time_derivatives(const Mat& reduced_traj, double dt);

struct TrainingSet {
    std::vector<ControlVector> controls;
    std::vector<StateTrajectory> trajectories;
    fom::WindParams xi_train;
};

/// Smooth random training controls: per control and injection point, knot
/// values at t = {0, T/3, 2T/3, T} drawn uniform on [0, 5] and interpolated
/// with a monotone piecewise-cubic (Fritsch-Carlson) spline.
std::vector<ControlVector> random_training_controls(std::uint64_t seed, int n_c, int n_q,
                                                    int n_s, double t_final);

/// Monotone piecewise-cubic interpolation (exposed for testing).
Vec pchip_eval(const Vec& knots_t, const Vec& knots_y, const Vec& query_t);

struct ReducedModel {
    PodBasis basis1, basis2;
    Mat Ahat1, Ahat2;    // r1 x r1, r2 x r2
    Mat Rhat1, Rhat2;    // r_k x (r1*r2)
    Mat Phihat;          // r2 x n_q
    Mat scaled_mass;     // V1' Mtilde V1, r1 x r1
    Vec u0hat1, u0hat2;  // M-weighted projected initial state
    double lambda1 = 0.0, lambda2 = 0.0;
    double energy_tol = 0.0;
    std::uint64_t seed = 0;

    int r1() const { return static_cast<int>(Ahat1.rows()); }
    int r2() const { return static_cast<int>(Ahat2.rows()); }
    int n_q() const { return static_cast<int>(Phihat.cols()); }
};

/// Operator-inference regression from projected states, exact or estimated
/// derivatives, and squared controls. Solves the two Tikhonov least-squares
/// problems in closed form (normal equations, Cholesky with jitter retry);
/// a singular normal matrix at lambda = 0 is reported as ill-posed.
struct OpInfData {
    Mat Uhat1, Uhat2;  // r_k x K projected snapshots
    Mat dU1, dU2;      // r_k x K time-derivative targets
    Mat Qsq;           // n_q x K squared controls
};

struct OpInfOperators {
    Mat Ahat1, Ahat2, Rhat1, Rhat2, Phihat;
};

OpInfOperators opinf_regress(const OpInfData& data, double lambda1, double lambda2);

/// Residual value of the two regression objectives (without ridge terms).
double opinf_residual(const OpInfData& data, const OpInfOperators& ops);

/// Assemble OpInfData from a training set and bases: project snapshots with
/// V_k' M U_k, then differentiate the projected states in time.
OpInfData project_training_data(const TrainingSet& training, const PodBasis& basis1,
                                const PodBasis& basis2, const Vec& mass_diag);

/// Full fit: projection, derivative estimation, regression, plus the
/// precomputed reduced objective weights and initial condition.
ReducedModel opinf_fit(const TrainingSet& training, const PodBasis& basis1,
                       const PodBasis& basis2, const Vec& mass_diag,
                       const fom::ProtectionZone& zone, const Vec& u1_init,
                       double lambda1, double lambda2);

struct ReducedTrajectory {
    Vec times;
    Mat states;  // (r1 + r2) x n_t
};

/// Kronecker product of two vectors, (a kron b)_{i*len(b)+j} = a_i b_j.
Vec kron_pair(const Vec& a, const Vec& b);

/// Reduced right-hand side f(x, q.*q) with x = [u1hat; u2hat].
Vec rom_rhs(const ReducedModel& model, const Vec& x, const Vec& qsq);

/// Integrate the reduced system with classical RK4.
ReducedTrajectory simulate_rom(const ReducedModel& model, const ControlVector& z, int n_steps,
                               double dt);

/// Reduced objective: 1/2 int u1hat' (V1' Mtilde V1) u1hat dt
/// + gamma int ||q.*q||^2 dt, trapezoidal; cost independent of n_x.
double rom_objective(const ReducedModel& model, const ReducedTrajectory& traj,
                     const ControlVector& z, double gamma);

/// Grid search over (lambda1, lambda2): fit, re-simulate with the training
/// controls, return the pair minimizing mean relative M-norm reconstruction
/// error; diverging pairs score +inf, ties break to the lexicographically
/// larger pair.
std::pair<double, double> select_regularization(const TrainingSet& training,
                                                const PodBasis& basis1, const PodBasis& basis2,
                                                const Vec& mass_diag,
                                                const std::vector<std::pair<double, double>>& grid,
                                                int n_steps, double dt);

/// Mean relative M-norm reconstruction error of a fitted model over the
/// training trajectories (the select_regularization score).
double reconstruction_error(const TrainingSet& training, const PodBasis& basis1,
                            const PodBasis& basis2, const Vec& mass_diag,
                            const OpInfOperators& ops, int n_steps, double dt);

void save_reduced_model(const std::string& path, const ReducedModel& model);
ReducedModel load_reduced_model(const std::string& path);

}  // namespace romopt::rom
