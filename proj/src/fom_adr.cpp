#include "romopt/fom_adr.hpp"

#include "romopt/parallel.hpp"

#include <Eigen/SparseLU>

#include <cmath>
#include <sstream>

namespace romopt::fom {

Grid2D Grid2D::uniform(int nx, int ny, double lx, double ly) {
    ROMOPT_REQUIRE(nx >= 3 && ny >= 3, "grid needs nx, ny >= 3");
    ROMOPT_REQUIRE(lx > 0 && ly > 0, "grid extents must be positive");
    Grid2D g;
    g.nx = nx;
    g.ny = ny;
    g.hx = lx / (nx - 1);
    g.hy = ly / (ny - 1);
    g.obstacle_mask.assign(static_cast<std::size_t>(nx) * ny, false);
    g.node_coords.resize(nx * ny, 2);
    for (int j = 0; j < ny; ++j)
        for (int i = 0; i < nx; ++i) {
            g.node_coords(g.idx(i, j), 0) = i * g.hx;
            g.node_coords(g.idx(i, j), 1) = j * g.hy;
        }
    return g;
}

Vec2 velocity_field(const Vec2& x, const WindParams& xi, double domain_length) {
    ROMOPT_REQUIRE(domain_length > 0, "domain length must be positive");
    const double x1 = x(0);
    const double s = xi.xi(3) * x1 / domain_length;
    const double m = 2.0 * xi.xi(1) * std::sin(xi.xi(2) * M_PI * x1);
    return Vec2(4.0 * xi.xi(0) * std::cos(s) - m * std::sin(s),
                4.0 * xi.xi(0) * std::sin(s) - m * std::cos(s));
}

Mat default_injection_points(int n_q) {
    ROMOPT_REQUIRE(n_q >= 1, "need at least one injection point");
    // Two columns between the source bump at (0.25, 0.85) and the
    // protection zone at (0.9, 0.35); 14 points reproduce the default
    // 2 x 7 layout spanning x2 in [0.15, 0.87].
    Mat pts(n_q, 2);
    const int per_line = (n_q + 1) / 2;
    int k = 0;
    for (int line = 0; line < 2 && k < n_q; ++line) {
        double x1 = (line == 0) ? 0.55 : 0.70;
        int count = (line == 0) ? per_line : n_q - per_line;
        for (int j = 0; j < count; ++j) {
            pts(k, 0) = x1;
            pts(k, 1) = (count > 1) ? 0.15 + 0.72 * j / (count - 1) : 0.51;
            ++k;
        }
    }
    return pts;
}

Physics default_physics(int n_q) {
    Physics p;
    p.injection_points = default_injection_points(n_q);
    return p;
}

// Lumped mass = vertex-centered cell area: full cells inside, halved on
// edges, quartered at corners. Masked nodes keep a positive mass entry but
// are decoupled by the transport assembly.
Vec lumped_mass_diag(const Grid2D& g) {
    Vec m(g.n_nodes());
    for (int j = 0; j < g.ny; ++j)
        for (int i = 0; i < g.nx; ++i) {
            double wx = (i == 0 || i == g.nx - 1) ? 0.5 : 1.0;
            double wy = (j == 0 || j == g.ny - 1) ? 0.5 : 1.0;
            m(g.idx(i, j)) = wx * wy * g.hx * g.hy;
        }
    return m;
}

SpMat assemble_diffusion(const Grid2D& g, double kappa) {
    const int n = g.n_nodes();
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(static_cast<std::size_t>(n) * 5);
    auto masked = [&](int i, int j) { return g.obstacle_mask[g.idx(i, j)]; };

    // Diffusion fluxes between unmasked neighbors; each face contributes
    // +/- to both rows so row and column sums vanish.
    for (int j = 0; j < g.ny; ++j)
        for (int i = 0; i < g.nx; ++i) {
            if (masked(i, j)) continue;
            const int a = g.idx(i, j);
            if (i + 1 < g.nx && !masked(i + 1, j)) {
                const int b = g.idx(i + 1, j);
                double wy = (j == 0 || j == g.ny - 1) ? 0.5 : 1.0;
                double c = kappa * wy * g.hy / g.hx;
                trip.emplace_back(a, a, -c);
                trip.emplace_back(a, b, c);
                trip.emplace_back(b, b, -c);
                trip.emplace_back(b, a, c);
            }
            if (j + 1 < g.ny && !masked(i, j + 1)) {
                const int b = g.idx(i, j + 1);
                double wx = (i == 0 || i == g.nx - 1) ? 0.5 : 1.0;
                double c = kappa * wx * g.hx / g.hy;
                trip.emplace_back(a, a, -c);
                trip.emplace_back(a, b, c);
                trip.emplace_back(b, b, -c);
                trip.emplace_back(b, a, c);
            }
        }
    SpMat A(n, n);
    A.setFromTriplets(trip.begin(), trip.end());
    return A;
}

namespace {

// A = L_diff - M * Adv: diffusion in symmetric flux form, advection in
// pointwise upwind form (zero row sums; derivative terms across the
// boundary vanish, matching zero-flux via reflected ghost values).
SpMat assemble_transport(const Grid2D& g, const WindParams& xi, double kappa, const Vec& mass) {
    const int n = g.n_nodes();
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(static_cast<std::size_t>(n) * 4);

    auto masked = [&](int i, int j) { return g.obstacle_mask[g.idx(i, j)]; };

    // Upwind advection, row form, weighted by the row's lumped mass.
    for (int j = 0; j < g.ny; ++j)
        for (int i = 0; i < g.nx; ++i) {
            if (masked(i, j)) continue;
            const int a = g.idx(i, j);
            const Vec2 v = velocity_field(g.coord(a), xi, kDomainLength);
            const double ma = mass(a);
            if (v(0) > 0) {
                if (i > 0 && !masked(i - 1, j)) {
                    double c = ma * v(0) / g.hx;
                    trip.emplace_back(a, a, -c);
                    trip.emplace_back(a, g.idx(i - 1, j), c);
                }
            } else if (v(0) < 0) {
                if (i + 1 < g.nx && !masked(i + 1, j)) {
                    double c = ma * (-v(0)) / g.hx;
                    trip.emplace_back(a, a, -c);
                    trip.emplace_back(a, g.idx(i + 1, j), c);
                }
            }
            if (v(1) > 0) {
                if (j > 0 && !masked(i, j - 1)) {
                    double c = ma * v(1) / g.hy;
                    trip.emplace_back(a, a, -c);
                    trip.emplace_back(a, g.idx(i, j - 1), c);
                }
            } else if (v(1) < 0) {
                if (j + 1 < g.ny && !masked(i, j + 1)) {
                    double c = ma * (-v(1)) / g.hy;
                    trip.emplace_back(a, a, -c);
                    trip.emplace_back(a, g.idx(i, j + 1), c);
                }
            }
        }

    SpMat A(n, n);
    A.setFromTriplets(trip.begin(), trip.end());
    A += assemble_diffusion(g, kappa);
    return A;
}

}  // namespace

FomOperators assemble_fom(const Grid2D& grid, const WindParams& xi, const Physics& physics) {
    ROMOPT_REQUIRE(xi.xi.allFinite(), "wind parameters must be finite");
    ROMOPT_REQUIRE(physics.dt > 0, "dt must be positive");

    // Advection CFL sanity gate at the configured step size.
    double cfl = 0.0;
    for (int k = 0; k < grid.n_nodes(); ++k) {
        if (grid.obstacle_mask[k]) continue;
        Vec2 v = velocity_field(grid.coord(k), xi, kDomainLength);
        cfl = std::max(cfl, physics.dt * (std::abs(v(0)) / grid.hx + std::abs(v(1)) / grid.hy));
    }
    if (cfl > 1.0) {
        std::ostringstream ss;
        ss << "advection CFL " << cfl << " exceeds 1 at dt=" << physics.dt
           << "; refine dt or coarsen the grid";
        throw Error(ss.str());
    }

    FomOperators ops;
    ops.grid = grid;
    ops.wind = xi;
    ops.mass = lumped_mass_diag(grid);
    ops.lin1 = assemble_transport(grid, xi, physics.kappa1, ops.mass);
    ops.lin2 = assemble_transport(grid, xi, physics.kappa2, ops.mass);
    ops.reaction_rate = physics.rho;
    ops.kappa1 = physics.kappa1;
    ops.kappa2 = physics.kappa2;
    ops.dt = physics.dt;

    const auto& pts = physics.injection_points;
    ROMOPT_REQUIRE(pts.rows() > 0 && pts.cols() == 2, "injection points must be n_q x 2");
    ops.source_basis.resize(grid.n_nodes(), pts.rows());
    for (int q = 0; q < pts.rows(); ++q)
        for (int k = 0; k < grid.n_nodes(); ++k) {
            if (grid.obstacle_mask[k]) {
                ops.source_basis(k, q) = 0.0;
                continue;
            }
            double d2 = (grid.coord(k) - pts.row(q).transpose()).squaredNorm();
            ops.source_basis(k, q) = 50.0 * std::exp(-1000.0 * d2);
        }
    return ops;
}

Vec ControlVector::flatten() const {
    return Eigen::Map<const Vec>(q_nodes.data(), q_nodes.size());
}

ControlVector ControlVector::from_flat(const Vec& z, int n_q, const Vec& time_nodes) {
    ROMOPT_REQUIRE(z.size() == n_q * time_nodes.size(), "flat control size mismatch");
    ControlVector c;
    c.q_nodes = Eigen::Map<const Mat>(z.data(), n_q, time_nodes.size());
    c.time_nodes = time_nodes;
    return c;
}

ControlVector ControlVector::zeros(int n_q, int n_s, double t_final) {
    ControlVector c;
    c.q_nodes = Mat::Zero(n_q, n_s);
    c.time_nodes = Vec::LinSpaced(n_s, 0.0, t_final);
    return c;
}

Vec control_eval(const ControlVector& z, double t) {
    const Vec& tn = z.time_nodes;
    const int n_s = z.n_s();
    ROMOPT_REQUIRE(n_s >= 1, "empty control");
    ROMOPT_REQUIRE(t >= tn(0) - 1e-12 && t <= tn(n_s - 1) + 1e-12,
                   "control evaluated outside [0, T]");
    if (t <= tn(0)) return z.q_nodes.col(0);
    if (t >= tn(n_s - 1)) return z.q_nodes.col(n_s - 1);
    int j = 0;
    while (j + 1 < n_s && tn(j + 1) < t) ++j;
    double w = (t - tn(j)) / (tn(j + 1) - tn(j));
    return (1.0 - w) * z.q_nodes.col(j) + w * z.q_nodes.col(j + 1);
}

Vec initial_contaminant(const Grid2D& grid) {
    Vec u(grid.n_nodes());
    const Vec2 c(0.25, 0.85);
    for (int k = 0; k < grid.n_nodes(); ++k) {
        u(k) = grid.obstacle_mask[k] ? 0.0
                                     : std::exp(-80.0 * (grid.coord(k) - c).squaredNorm());
    }
    return u;
}

void reaction_substep(Vec& u1, Vec& u2, double rho, double dt) {
    // Closed-form solution of the coupled pair: w = u1 - u2 is invariant and
    // u1(t) = u1(0) / (1 + u2(0) * rho * t * phi(rho * w * t)),
    // with phi(x) = (1 - exp(-x)) / x extended by phi(0) = 1.
    const int n = static_cast<int>(u1.size());
    for (int k = 0; k < n; ++k) {
        const double a = u1(k), b = u2(k);
        if (a == 0.0 && b == 0.0) continue;
        const double w = a - b;
        const double x = rho * w * dt;
        double phi;
        if (std::abs(x) < 1e-6) {
            phi = 1.0 - 0.5 * x + x * x / 6.0;
        } else {
            phi = -std::expm1(-x) / x;
        }
        const double denom = 1.0 + b * rho * dt * phi;
        u1(k) = a / denom;
        u2(k) = u1(k) - w;
    }
}

StateTrajectory simulate_fom(const FomOperators& ops, const ControlVector& z, int n_steps,
                             const Vec& u1_init) {
    const int n = ops.grid.n_nodes();
    ROMOPT_REQUIRE(u1_init.size() == n, "initial state size mismatch");
    const double dt = ops.dt;
    const double t_final = n_steps * dt;

    // Strang splitting: half reaction, Crank-Nicolson transport, half
    // reaction. The implicit matrices (M - dt/2 A_k) are prefactored once.
    Vec mass = ops.mass;
    SpMat I1 = -0.5 * dt * ops.lin1;
    SpMat I2 = -0.5 * dt * ops.lin2;
    for (int k = 0; k < n; ++k) {
        I1.coeffRef(k, k) += mass(k);
        I2.coeffRef(k, k) += mass(k);
    }
    I1.makeCompressed();
    I2.makeCompressed();
    Eigen::SparseLU<SpMat> lu1, lu2;
    lu1.compute(I1);
    ROMOPT_REQUIRE(lu1.info() == Eigen::Success, "transport factorization failed (u1)");
    lu2.compute(I2);
    ROMOPT_REQUIRE(lu2.info() == Eigen::Success, "transport factorization failed (u2)");

    StateTrajectory traj;
    traj.times = Vec::LinSpaced(n_steps + 1, 0.0, t_final);
    traj.u1.resize(n, n_steps + 1);
    traj.u2.resize(n, n_steps + 1);

    Vec u1 = u1_init;
    Vec u2 = Vec::Zero(n);
    traj.u1.col(0) = u1;
    traj.u2.col(0) = u2;

    const double t_max = z.time_nodes(z.n_s() - 1);
    auto source_at = [&](double t) {
        Vec q = control_eval(z, std::min(t, t_max));
        return Vec(ops.source_basis * q.cwiseProduct(q));
    };

    for (int s = 0; s < n_steps; ++s) {
        reaction_substep(u1, u2, ops.reaction_rate, 0.5 * dt);

        // Trapezoidal source over the step.
        Vec src = 0.5 * (source_at(s * dt) + source_at((s + 1) * dt));
        Vec rhs1 = mass.cwiseProduct(u1) + 0.5 * dt * (ops.lin1 * u1);
        Vec rhs2 = mass.cwiseProduct(u2 + dt * src) + 0.5 * dt * (ops.lin2 * u2);
        u1 = lu1.solve(rhs1);
        u2 = lu2.solve(rhs2);

        reaction_substep(u1, u2, ops.reaction_rate, 0.5 * dt);

        if (!u1.allFinite() || !u2.allFinite()) {
            std::ostringstream ss;
            ss << "FOM state non-finite at step " << s + 1 << " (max |u1|="
               << u1.cwiseAbs().maxCoeff() << ", max |u2|=" << u2.cwiseAbs().maxCoeff() << ")";
            throw Error(ss.str());
        }
        traj.u1.col(s + 1) = u1;
        traj.u2.col(s + 1) = u2;
    }
    return traj;
}

ProtectionZone ProtectionZone::standard(const Grid2D& grid) {
    ProtectionZone zone;
    zone.center = Vec2(0.9, 0.35);
    zone.psi.resize(grid.n_nodes());
    for (int k = 0; k < grid.n_nodes(); ++k)
        zone.psi(k) = std::exp(-10.0 * (grid.coord(k) - zone.center).squaredNorm());
    return zone;
}

Vec trapezoid_weights(const Vec& times) {
    const int n = static_cast<int>(times.size());
    ROMOPT_REQUIRE(n >= 2, "need at least two time points");
    Vec w = Vec::Zero(n);
    for (int i = 0; i + 1 < n; ++i) {
        double h = times(i + 1) - times(i);
        w(i) += 0.5 * h;
        w(i + 1) += 0.5 * h;
    }
    return w;
}

Vec zone_load_series(const StateTrajectory& traj, const ProtectionZone& zone, const Vec& mass) {
    ROMOPT_REQUIRE(traj.u1.rows() == zone.psi.size(), "trajectory/zone grid mismatch");
    const int n_t = static_cast<int>(traj.times.size());
    Vec load(n_t);
    Vec mpsi2 = mass.cwiseProduct(zone.psi.cwiseProduct(zone.psi));
    for (int s = 0; s < n_t; ++s) {
        Vec u = traj.u1.col(s);
        load(s) = u.cwiseProduct(u).dot(mpsi2);
    }
    return load;
}

double fom_objective(const StateTrajectory& traj, const ControlVector& z,
                     const ProtectionZone& zone, const Vec& mass, double gamma) {
    Vec w = trapezoid_weights(traj.times);
    Vec load = zone_load_series(traj, zone, mass);
    double state_term = 0.5 * w.dot(load);
    double reg_term = 0.0;
    for (int s = 0; s < traj.times.size(); ++s) {
        Vec q = control_eval(z, traj.times(s));
        reg_term += w(s) * q.array().pow(4).sum();
    }
    return state_term + gamma * reg_term;
}

std::vector<StateTrajectory> batch_simulate_fom(const FomOperators& ops,
                                                const std::vector<ControlVector>& controls,
                                                int n_steps, const Vec& u1_init, bool serial) {
    std::vector<StateTrajectory> out(controls.size());
    auto body = [&](std::int64_t i) {
        out[static_cast<std::size_t>(i)] =
            simulate_fom(ops, controls[static_cast<std::size_t>(i)], n_steps, u1_init);
    };
    if (serial)
        serial_for(static_cast<std::int64_t>(controls.size()), body);
    else
        parallel_for(static_cast<std::int64_t>(controls.size()), body);
    return out;
}

}  // namespace romopt::fom
