#pragma once

#include "romopt/core.hpp"

#include <vector>

namespace romopt::fom {

/// Velocity-shape parameters (xi1, xi2, xi3, xi4).
struct WindParams {
    Vec4 xi;
};

inline const WindParams kTrainWind{Vec4(1.0, 1.0, 10.0, 75.0)};
inline const WindParams kTestWind{Vec4(1.5, 1.5, 8.0, 50.0)};

/// Uniform rectangular node grid on [0,Lx] x [0,Ly] with optional obstacle
/// mask. Masked nodes are decoupled from the dynamics and pinned at zero.
struct Grid2D {
    int nx = 0, ny = 0;
    double hx = 0.0, hy = 0.0;
    std::vector<bool> obstacle_mask;   // per node, true = excluded
    Mat node_coords;                   // n_nodes x 2

    int n_nodes() const { return nx * ny; }
    int idx(int i, int j) const { return j * nx + i; }
    Vec2 coord(int k) const { return node_coords.row(k).transpose(); }

    static Grid2D uniform(int nx, int ny, double lx, double ly);
};

struct Physics {
    double kappa1 = 0.1;
    double kappa2 = 0.1;
    double rho = 2.0;
    double dt = 0.4 / 200.0;            // integration step used downstream
    Mat injection_points;               // n_q x 2, Gaussian source centers
};

/// Default contaminant setup constants.
inline constexpr double kDomainLength = 1.2;
inline constexpr double kFinalTime = 0.4;
inline constexpr double kGamma = 1e-5;
inline constexpr int kNumSteps = 200;
inline constexpr int kNumInjection = 14;
inline constexpr int kNumControlNodes = 100;

/// Injection points on two vertical lines between the contaminant source
/// region and the protection zone; n_q = 14 gives the default layout.
Mat default_injection_points(int n_q = kNumInjection);

Physics default_physics(int n_q = kNumInjection);

// Discretized operators of the two-species transport system
//   M du1/dt = A1 u1 - rho M (u1.*u2)
//   M du2/dt = A2 u2 - rho M (u1.*u2) + M Phi (q.*q)
// on the node grid: lumped (diagonal) mass, flux-form 5-point diffusion,
// first-order upwind advection, zero-flux boundaries. The reaction is
// applied pointwise rather than through assembled bilinear tensors.
struct FomOperators {
    Grid2D grid;
    WindParams wind;
    Vec mass;          // diagonal of M
    SpMat lin1, lin2;  // A1, A2
    double reaction_rate = 0.0;
    Mat source_basis;  // Phi, n_x x n_q
    double kappa1 = 0.0, kappa2 = 0.0;
    double dt = 0.0;
};

/// Evaluate the parametric velocity field at a point.
Vec2 velocity_field(const Vec2& x, const WindParams& xi, double domain_length);

/// Symmetric flux-form 5-point diffusion operator kappa*Laplacian with
/// natural zero-flux boundaries (zero row and column sums).
SpMat assemble_diffusion(const Grid2D& grid, double kappa);

/// Lumped (vertex-centered cell area) mass diagonal.
Vec lumped_mass_diag(const Grid2D& grid);

/// Assemble mass, transport operators and the injection source basis.
/// Rejects configurations whose advection CFL number (at physics.dt)
/// exceeds 1.
FomOperators assemble_fom(const Grid2D& grid, const WindParams& xi, const Physics& physics);

/// Decision variable: injection magnitudes on an n_q x n_s space-time grid.
struct ControlVector {
    Mat q_nodes;      // n_q x n_s
    Vec time_nodes;   // n_s, strictly increasing, spanning [0, T]

    int n_q() const { return static_cast<int>(q_nodes.rows()); }
    int n_s() const { return static_cast<int>(q_nodes.cols()); }
    int n_z() const { return static_cast<int>(q_nodes.size()); }

    Vec flatten() const;
    static ControlVector from_flat(const Vec& z, int n_q, const Vec& time_nodes);
    static ControlVector zeros(int n_q, int n_s, double t_final);
};

/// Piecewise-linear interpolation of the control columns; exact at nodes.
Vec control_eval(const ControlVector& z, double t);

struct StateTrajectory {
    Vec times;   // n_t values, times[0] = 0, times[n_t-1] = T
    Mat u1, u2;  // n_x x n_t
};

/// Gaussian initial contaminant bump exp(-80 ||x - (0.25, 0.85)||^2).
Vec initial_contaminant(const Grid2D& grid);

/// Integrate the FOM with per-step Strang splitting: exact pointwise
/// reaction half-steps around a Crank-Nicolson transport substep with a
/// prefactored sparse solve. n_t = n_steps + 1 snapshots on a uniform grid.
StateTrajectory simulate_fom(const FomOperators& ops, const ControlVector& z, int n_steps,
                             const Vec& u1_init);

/// Exact solution of du1/dt = du2/dt = -rho*u1*u2 over a step, in place.
void reaction_substep(Vec& u1, Vec& u2, double rho, double dt);

/// Protection-zone weights psi(x) = exp(-10 ||x - x_p||^2), x_p=(0.9,0.35).
struct ProtectionZone {
    Vec psi;
    Vec2 center;
    static ProtectionZone standard(const Grid2D& grid);
};

/// J = 1/2 int ||u1 .* psi||_M^2 dt + gamma int ||q.*q||^2 dt by
/// trapezoidal quadrature on the trajectory's time grid.
double fom_objective(const StateTrajectory& traj, const ControlVector& z,
                     const ProtectionZone& zone, const Vec& mass, double gamma);

/// Running protection-zone load ||u1(t).*psi||_M^2 at each trajectory time.
Vec zone_load_series(const StateTrajectory& traj, const ProtectionZone& zone, const Vec& mass);

/// Trapezoid weights for a (not necessarily uniform) time grid.
Vec trapezoid_weights(const Vec& times);

/// Batch of FOM solves with disjoint outputs; runs trajectories through
/// parallel_for. The serial flag forces the reference loop.
std::vector<StateTrajectory> batch_simulate_fom(const FomOperators& ops,
                                                const std::vector<ControlVector>& controls,
                                                int n_steps, const Vec& u1_init,
                                                bool serial = false);

}  // namespace romopt::fom
