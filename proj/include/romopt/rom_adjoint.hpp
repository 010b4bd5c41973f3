#pragma once

#include "romopt/core.hpp"
#include "romopt/rom_opinf.hpp"

#include <vector>

namespace romopt::adj {

// Affine discrepancy contribution to the reduced objective, pre-projected
// onto the reduced and discrepancy bases:
//   l_md(u1hat, t, z) = u1hat' b(t,z) + 1/2 g(t,z)' Gd g(t,z),
//   b(t,z) = P1d g(t,z),  g(t,z) = c0(t) + CL(t) (Mz z),
// with c0, CL piecewise-linear between the discrepancy time nodes.
struct DeltaTerm {
    Vec time_nodes;        // n_tau_delta values in [0, T]
    std::vector<Vec> c0;   // per node, r_d
    std::vector<Mat> CL;   // per node, r_d x n_z
    Vec Mz_diag;           // n_z decision mass diagonal
    Mat P1d;               // r1 x r_d
    Mat Gd;                // r_d x r_d
};

/// ROMCO (optionally ROMCO-MD) objective evaluation problem: RK4 on the
/// reduced dynamics, trapezoidal cost, piecewise-linear control in time.
struct RomcoProblem {
    const rom::ReducedModel* model = nullptr;
    int n_steps = 0;
    double dt = 0.0;
    double gamma = 0.0;
    Vec control_times;  // n_s nodes
    int n_q = 0;
    const DeltaTerm* delta = nullptr;  // null = plain ROMCO

    int n_z() const { return n_q * static_cast<int>(control_times.size()); }
};

double objective(const RomcoProblem& p, const Vec& z);

/// Discrete adjoint of the RK4 scheme (discretize-then-differentiate):
/// one forward and one backward solve per gradient, cost independent of n_z.
Vec gradient(const RomcoProblem& p, const Vec& z, double* objective_out = nullptr);

/// Second-order adjoint Hessian-vector product (forward tangent solve plus
/// tangent of the backward solve). Only supported for the plain ROMCO
/// problem (delta == nullptr), which is where the HDSA Hessian lives.
Vec hessian_vec(const RomcoProblem& p, const Vec& z, const Vec& dz);

/// Dense Hessian assembled column-by-column from hessian_vec; columns run
/// through parallel_for (serial flag forces the reference loop).
Mat assemble_hessian(const RomcoProblem& p, const Vec& z, bool serial = false);

}  // namespace romopt::adj
