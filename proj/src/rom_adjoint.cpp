#include "romopt/rom_adjoint.hpp"

#include "romopt/parallel.hpp"

#include <cmath>

namespace romopt::adj {

namespace {

struct TimeInterp {
    int j;     // left control node
    double w;  // weight of the right node
};

// Shared per-evaluation plan: stage times, control interpolation table and
// quadrature weights. Stage-time index 2n is t_n, 2n+1 the midpoint.
struct Plan {
    int n_steps;
    double dt;
    std::vector<TimeInterp> interp;  // 2*n_steps + 1 entries
    Vec quad_w;                      // n_steps + 1 trapezoid weights
    std::vector<TimeInterp> delta_interp;  // same times on delta nodes
};

TimeInterp locate(const Vec& nodes, double t) {
    const int n = static_cast<int>(nodes.size());
    if (t <= nodes(0)) return {0, 0.0};
    if (t >= nodes(n - 1)) return {n - 2, 1.0};
    int j = 0;
    while (j + 2 < n && nodes(j + 1) < t) ++j;
    return {j, (t - nodes(j)) / (nodes(j + 1) - nodes(j))};
}

Plan make_plan(const RomcoProblem& p) {
    Plan plan;
    plan.n_steps = p.n_steps;
    plan.dt = p.dt;
    plan.interp.resize(2 * p.n_steps + 1);
    for (int i = 0; i <= 2 * p.n_steps; ++i)
        plan.interp[i] = locate(p.control_times, 0.5 * i * p.dt);
    plan.quad_w = Vec::Constant(p.n_steps + 1, p.dt);
    plan.quad_w(0) = plan.quad_w(p.n_steps) = 0.5 * p.dt;
    if (p.delta) {
        plan.delta_interp.resize(2 * p.n_steps + 1);
        for (int i = 0; i <= 2 * p.n_steps; ++i)
            plan.delta_interp[i] = locate(p.delta->time_nodes, 0.5 * i * p.dt);
    }
    return plan;
}

// Control values at the 2*n_steps+1 stage times: q, q.*q.
struct ControlTable {
    Mat q;    // n_q x (2n+1)
    Mat qsq;  // n_q x (2n+1)
};

ControlTable tabulate_controls(const RomcoProblem& p, const Plan& plan, const Vec& z) {
    Eigen::Map<const Mat> Z(z.data(), p.n_q, p.control_times.size());
    ControlTable tab;
    const int m = 2 * plan.n_steps + 1;
    tab.q.resize(p.n_q, m);
    for (int i = 0; i < m; ++i) {
        const auto& ti = plan.interp[i];
        tab.q.col(i) = (1.0 - ti.w) * Z.col(ti.j) + ti.w * Z.col(ti.j + 1);
    }
    tab.qsq = tab.q.cwiseProduct(tab.q);
    return tab;
}

// Discrepancy coefficients g(t, z) = c0(t) + CL(t) a  with a = Mz .* z,
// tabulated at the stage times (only the n_t cost times are used, but the
// shared table keeps indexing uniform).
struct DeltaTable {
    Mat g;  // r_d x (2n+1)
};

DeltaTable tabulate_delta(const RomcoProblem& p, const Plan& plan, const Vec& z) {
    const DeltaTerm& d = *p.delta;
    const int n_nodes = static_cast<int>(d.time_nodes.size());
    Vec a = d.Mz_diag.cwiseProduct(z);
    Mat la(d.c0[0].size(), n_nodes);
    for (int k = 0; k < n_nodes; ++k) la.col(k) = d.c0[k] + d.CL[k] * a;
    DeltaTable tab;
    const int m = 2 * plan.n_steps + 1;
    tab.g.resize(la.rows(), m);
    for (int i = 0; i < m; ++i) {
        const auto& ti = plan.delta_interp[i];
        tab.g.col(i) = (1.0 - ti.w) * la.col(ti.j) + ti.w * la.col(ti.j + 1);
    }
    return tab;
}

struct Rhs {
    const rom::ReducedModel* m;
    int r1, r2;

    explicit Rhs(const rom::ReducedModel& model)
        : m(&model), r1(model.r1()), r2(model.r2()) {}

    Vec eval(const Vec& x, const Vec& qsq) const { return rom::rom_rhs(*m, x, qsq); }

    // Directional derivative in the state (sigma tangent added by caller).
    Vec jvp(const Vec& x, const Vec& dx) const {
        Vec u1 = x.head(r1), u2 = x.tail(r2);
        Vec krd = rom::kron_pair(dx.head(r1), u2) + rom::kron_pair(u1, dx.tail(r2));
        Vec out(r1 + r2);
        out.head(r1) = m->Ahat1 * dx.head(r1) + m->Rhat1 * krd;
        out.tail(r2) = m->Ahat2 * dx.tail(r2) + m->Rhat2 * krd;
        return out;
    }

    // v' df/dx at linearization point x.
    Vec vjp(const Vec& x, const Vec& v) const {
        Vec mv = m->Rhat1.transpose() * v.head(r1) + m->Rhat2.transpose() * v.tail(r2);
        Eigen::Map<const Mat> Mm(mv.data(), r2, r1);
        Vec out(r1 + r2);
        out.head(r1) = m->Ahat1.transpose() * v.head(r1) + Mm.transpose() * x.tail(r2);
        out.tail(r2) = m->Ahat2.transpose() * v.tail(r2) + Mm * x.head(r1);
        return out;
    }

    // Tangent of vjp: directional derivative in both the point (dx) and the
    // cotangent (dv). The bilinear term makes this exact, no truncation.
    Vec vjp_tangent(const Vec& x, const Vec& dx, const Vec& v, const Vec& dv) const {
        Vec mv = m->Rhat1.transpose() * v.head(r1) + m->Rhat2.transpose() * v.tail(r2);
        Vec mdv = m->Rhat1.transpose() * dv.head(r1) + m->Rhat2.transpose() * dv.tail(r2);
        Eigen::Map<const Mat> Mm(mv.data(), r2, r1);
        Eigen::Map<const Mat> Md(mdv.data(), r2, r1);
        Vec out(r1 + r2);
        out.head(r1) = m->Ahat1.transpose() * dv.head(r1) + Md.transpose() * x.tail(r2) +
                       Mm.transpose() * dx.tail(r2);
        out.tail(r2) = m->Ahat2.transpose() * dv.tail(r2) + Md * x.head(r1) +
                       Mm * dx.head(r1);
        return out;
    }

    Vec embed_sigma(const Vec& dsigma) const {
        Vec out = Vec::Zero(r1 + r2);
        out.tail(r2) = m->Phihat * dsigma;
        return out;
    }

    Vec extract_sigma_bar(const Vec& kbar) const {
        return m->Phihat.transpose() * kbar.tail(r2);
    }
};

struct ForwardStore {
    Mat x;              // r x (n+1)
    Mat s2, s3, s4;     // r x n stage points
    Mat k1, k2, k3, k4; // r x n stage slopes
};

ForwardStore forward_solve(const RomcoProblem& p, const Plan& plan, const ControlTable& tab) {
    const Rhs f(*p.model);
    const int r = f.r1 + f.r2;
    const int n = plan.n_steps;
    ForwardStore st;
    st.x.resize(r, n + 1);
    st.s2.resize(r, n);
    st.s3.resize(r, n);
    st.s4.resize(r, n);
    st.k1.resize(r, n);
    st.k2.resize(r, n);
    st.k3.resize(r, n);
    st.k4.resize(r, n);

    Vec x(r);
    x.head(f.r1) = p.model->u0hat1;
    x.tail(f.r2) = p.model->u0hat2;
    st.x.col(0) = x;
    const double dt = plan.dt;
    for (int s = 0; s < n; ++s) {
        Vec k1 = f.eval(x, tab.qsq.col(2 * s));
        Vec s2 = x + 0.5 * dt * k1;
        Vec k2 = f.eval(s2, tab.qsq.col(2 * s + 1));
        Vec s3 = x + 0.5 * dt * k2;
        Vec k3 = f.eval(s3, tab.qsq.col(2 * s + 1));
        Vec s4 = x + dt * k3;
        Vec k4 = f.eval(s4, tab.qsq.col(2 * s + 2));
        x += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        ROMOPT_REQUIRE(x.allFinite(), "ROM state non-finite at step " + std::to_string(s + 1));
        st.k1.col(s) = k1;
        st.k2.col(s) = k2;
        st.k3.col(s) = k3;
        st.k4.col(s) = k4;
        st.s2.col(s) = s2;
        st.s3.col(s) = s3;
        st.s4.col(s) = s4;
        st.x.col(s + 1) = x;
    }
    return st;
}

// Running cost at cost-time index n (stage-time index 2n).
double stage_cost(const RomcoProblem& p, const ControlTable& tab, const DeltaTable* dtab,
                  const Vec& x, int n) {
    const int r1 = p.model->r1();
    Vec u1 = x.head(r1);
    double c = 0.5 * u1.dot(p.model->scaled_mass * u1);
    c += p.gamma * tab.qsq.col(2 * n).squaredNorm();
    if (dtab) {
        Vec g = dtab->g.col(2 * n);
        c += u1.dot(p.delta->P1d * g) + 0.5 * g.dot(p.delta->Gd * g);
    }
    return c;
}

// d(stage cost)/d(state), embedded in the full reduced state.
Vec stage_cost_dx(const RomcoProblem& p, const ControlTable& tab, const DeltaTable* dtab,
                  const Vec& x, int n) {
    const int r1 = p.model->r1();
    Vec out = Vec::Zero(x.size());
    out.head(r1) = p.model->scaled_mass * x.head(r1);
    if (dtab) out.head(r1) += p.delta->P1d * dtab->g.col(2 * n);
    return out;
}

// Scatter a sigma adjoint at stage-time index i into the z gradient.
void scatter_sigma_bar(const RomcoProblem& p, const Plan& plan, const ControlTable& tab,
                       int i, const Vec& sigma_bar, Mat& Gz) {
    const auto& ti = plan.interp[i];
    Vec contrib = 2.0 * tab.q.col(i).cwiseProduct(sigma_bar);
    Gz.col(ti.j) += (1.0 - ti.w) * contrib;
    Gz.col(ti.j + 1) += ti.w * contrib;
}

}  // namespace

double objective(const RomcoProblem& p, const Vec& z) {
    ROMOPT_REQUIRE(z.size() == p.n_z(), "decision vector size mismatch");
    Plan plan = make_plan(p);
    ControlTable tab = tabulate_controls(p, plan, z);
    DeltaTable dtab;
    const DeltaTable* dp = nullptr;
    if (p.delta) {
        dtab = tabulate_delta(p, plan, z);
        dp = &dtab;
    }
    ForwardStore st = forward_solve(p, plan, tab);
    double val = 0.0;
    for (int n = 0; n <= plan.n_steps; ++n)
        val += plan.quad_w(n) * stage_cost(p, tab, dp, st.x.col(n), n);
    return val;
}

Vec gradient(const RomcoProblem& p, const Vec& z, double* objective_out) {
    ROMOPT_REQUIRE(z.size() == p.n_z(), "decision vector size mismatch");
    const Rhs f(*p.model);
    const double dt = p.dt;
    Plan plan = make_plan(p);
    ControlTable tab = tabulate_controls(p, plan, z);
    DeltaTable dtab;
    const DeltaTable* dp = nullptr;
    if (p.delta) {
        dtab = tabulate_delta(p, plan, z);
        dp = &dtab;
    }
    ForwardStore st = forward_solve(p, plan, tab);

    if (objective_out) {
        double val = 0.0;
        for (int n = 0; n <= plan.n_steps; ++n)
            val += plan.quad_w(n) * stage_cost(p, tab, dp, st.x.col(n), n);
        *objective_out = val;
    }

    const int n_s = static_cast<int>(p.control_times.size());
    Mat Gz = Mat::Zero(p.n_q, n_s);
    Mat sigma_bar = Mat::Zero(p.n_q, 2 * plan.n_steps + 1);

    // Regularization: gamma * d(sum q^4)/dq = 4 gamma q^3 at cost times.
    for (int n = 0; n <= plan.n_steps; ++n) {
        const auto& ti = plan.interp[2 * n];
        Vec reg = 4.0 * p.gamma * plan.quad_w(n) *
                  tab.q.col(2 * n).array().cube().matrix();
        Gz.col(ti.j) += (1.0 - ti.w) * reg;
        Gz.col(ti.j + 1) += ti.w * reg;
    }

    // Backward sweep.
    Vec xbar = plan.quad_w(plan.n_steps) *
               stage_cost_dx(p, tab, dp, st.x.col(plan.n_steps), plan.n_steps);
    for (int s = plan.n_steps - 1; s >= 0; --s) {
        Vec k4b = (dt / 6.0) * xbar;
        Vec k3b = (2.0 * dt / 6.0) * xbar;
        Vec k2b = (2.0 * dt / 6.0) * xbar;
        Vec k1b = (dt / 6.0) * xbar;

        Vec s4b = f.vjp(st.s4.col(s), k4b);
        sigma_bar.col(2 * s + 2) += f.extract_sigma_bar(k4b);
        k3b += dt * s4b;

        Vec s3b = f.vjp(st.s3.col(s), k3b);
        sigma_bar.col(2 * s + 1) += f.extract_sigma_bar(k3b);
        k2b += 0.5 * dt * s3b;

        Vec s2b = f.vjp(st.s2.col(s), k2b);
        sigma_bar.col(2 * s + 1) += f.extract_sigma_bar(k2b);
        k1b += 0.5 * dt * s2b;

        Vec s1b = f.vjp(st.x.col(s), k1b);
        sigma_bar.col(2 * s) += f.extract_sigma_bar(k1b);

        xbar += s2b + s3b + s4b + s1b;
        xbar += plan.quad_w(s) * stage_cost_dx(p, tab, dp, st.x.col(s), s);
    }

    for (int i = 0; i <= 2 * plan.n_steps; ++i) {
        if (sigma_bar.col(i).isZero(0.0)) continue;
        scatter_sigma_bar(p, plan, tab, i, sigma_bar.col(i), Gz);
    }

    Vec g = Eigen::Map<const Vec>(Gz.data(), Gz.size());

    // Direct z-dependence of the discrepancy term:
    //   d/dz [u1' P1d g + 1/2 g' Gd g] = Mz .* (CL(t)' (P1d' u1 + Gd g)).
    if (p.delta) {
        const DeltaTerm& d = *p.delta;
        const int n_nodes = static_cast<int>(d.time_nodes.size());
        Mat acc = Mat::Zero(d.c0[0].size(), n_nodes);
        for (int n = 0; n <= plan.n_steps; ++n) {
            Vec u1 = st.x.col(n).head(p.model->r1());
            Vec v = plan.quad_w(n) *
                    (d.P1d.transpose() * u1 + d.Gd * dtab.g.col(2 * n));
            const auto& ti = plan.delta_interp[2 * n];
            acc.col(ti.j) += (1.0 - ti.w) * v;
            acc.col(ti.j + 1) += ti.w * v;
        }
        Vec gz_delta = Vec::Zero(p.n_z());
        for (int k = 0; k < n_nodes; ++k) gz_delta += d.CL[k].transpose() * acc.col(k);
        g += d.Mz_diag.cwiseProduct(gz_delta);
    }
    return g;
}

Vec hessian_vec(const RomcoProblem& p, const Vec& z, const Vec& dz) {
    ROMOPT_REQUIRE(p.delta == nullptr, "hessian_vec supports the plain ROMCO problem");
    ROMOPT_REQUIRE(z.size() == p.n_z() && dz.size() == p.n_z(), "size mismatch");
    const Rhs f(*p.model);
    const int r = f.r1 + f.r2;
    const double dt = p.dt;
    Plan plan = make_plan(p);
    ControlTable tab = tabulate_controls(p, plan, z);

    Eigen::Map<const Mat> dZ(dz.data(), p.n_q, p.control_times.size());
    const int m = 2 * plan.n_steps + 1;
    Mat dq(p.n_q, m), dsigma(p.n_q, m);
    for (int i = 0; i < m; ++i) {
        const auto& ti = plan.interp[i];
        dq.col(i) = (1.0 - ti.w) * dZ.col(ti.j) + ti.w * dZ.col(ti.j + 1);
        dsigma.col(i) = 2.0 * tab.q.col(i).cwiseProduct(dq.col(i));
    }

    ForwardStore st = forward_solve(p, plan, tab);

    // Forward tangent solve, storing stage tangents.
    Mat dx(r, plan.n_steps + 1), ds2(r, plan.n_steps), ds3(r, plan.n_steps),
        ds4(r, plan.n_steps), dk1(r, plan.n_steps), dk2(r, plan.n_steps),
        dk3(r, plan.n_steps), dk4(r, plan.n_steps);
    dx.col(0).setZero();
    for (int s = 0; s < plan.n_steps; ++s) {
        Vec dxs = dx.col(s);
        Vec d1 = f.jvp(st.x.col(s), dxs) + f.embed_sigma(dsigma.col(2 * s));
        Vec t2 = dxs + 0.5 * dt * d1;
        Vec d2 = f.jvp(st.s2.col(s), t2) + f.embed_sigma(dsigma.col(2 * s + 1));
        Vec t3 = dxs + 0.5 * dt * d2;
        Vec d3 = f.jvp(st.s3.col(s), t3) + f.embed_sigma(dsigma.col(2 * s + 1));
        Vec t4 = dxs + dt * d3;
        Vec d4 = f.jvp(st.s4.col(s), t4) + f.embed_sigma(dsigma.col(2 * s + 2));
        dk1.col(s) = d1;
        dk2.col(s) = d2;
        dk3.col(s) = d3;
        dk4.col(s) = d4;
        ds2.col(s) = t2;
        ds3.col(s) = t3;
        ds4.col(s) = t4;
        dx.col(s + 1) = dxs + (dt / 6.0) * (d1 + 2.0 * d2 + 2.0 * d3 + d4);
    }

    const int n_s = static_cast<int>(p.control_times.size());
    Mat dGz = Mat::Zero(p.n_q, n_s);
    Mat sigma_bar = Mat::Zero(p.n_q, m), dsigma_bar = Mat::Zero(p.n_q, m);

    // Tangent of the regularization gradient: 12 gamma q^2 dq.
    for (int n = 0; n <= plan.n_steps; ++n) {
        const auto& ti = plan.interp[2 * n];
        Vec dreg = 12.0 * p.gamma * plan.quad_w(n) *
                   tab.q.col(2 * n).array().square().matrix().cwiseProduct(dq.col(2 * n));
        dGz.col(ti.j) += (1.0 - ti.w) * dreg;
        dGz.col(ti.j + 1) += ti.w * dreg;
    }

    auto cost_dx_tangent = [&](int n) {
        Vec out = Vec::Zero(r);
        out.head(f.r1) = p.model->scaled_mass * dx.col(n).head(f.r1);
        return out;
    };

    // Backward sweep carrying (xbar, dxbar) pairs.
    Vec xbar = plan.quad_w(plan.n_steps) *
               stage_cost_dx(p, tab, nullptr, st.x.col(plan.n_steps), plan.n_steps);
    Vec dxbar = plan.quad_w(plan.n_steps) * cost_dx_tangent(plan.n_steps);
    for (int s = plan.n_steps - 1; s >= 0; --s) {
        Vec k4b = (dt / 6.0) * xbar, dk4b = (dt / 6.0) * dxbar;
        Vec k3b = (dt / 3.0) * xbar, dk3b = (dt / 3.0) * dxbar;
        Vec k2b = (dt / 3.0) * xbar, dk2b = (dt / 3.0) * dxbar;
        Vec k1b = (dt / 6.0) * xbar, dk1b = (dt / 6.0) * dxbar;

        Vec s4b = f.vjp(st.s4.col(s), k4b);
        Vec ds4b = f.vjp_tangent(st.s4.col(s), ds4.col(s), k4b, dk4b);
        sigma_bar.col(2 * s + 2) += f.extract_sigma_bar(k4b);
        dsigma_bar.col(2 * s + 2) += f.extract_sigma_bar(dk4b);
        k3b += dt * s4b;
        dk3b += dt * ds4b;

        Vec s3b = f.vjp(st.s3.col(s), k3b);
        Vec ds3b = f.vjp_tangent(st.s3.col(s), ds3.col(s), k3b, dk3b);
        sigma_bar.col(2 * s + 1) += f.extract_sigma_bar(k3b);
        dsigma_bar.col(2 * s + 1) += f.extract_sigma_bar(dk3b);
        k2b += 0.5 * dt * s3b;
        dk2b += 0.5 * dt * ds3b;

        Vec s2b = f.vjp(st.s2.col(s), k2b);
        Vec ds2b = f.vjp_tangent(st.s2.col(s), ds2.col(s), k2b, dk2b);
        sigma_bar.col(2 * s + 1) += f.extract_sigma_bar(k2b);
        dsigma_bar.col(2 * s + 1) += f.extract_sigma_bar(dk2b);
        k1b += 0.5 * dt * s2b;
        dk1b += 0.5 * dt * ds2b;

        Vec s1b = f.vjp(st.x.col(s), k1b);
        Vec ds1b = f.vjp_tangent(st.x.col(s), dx.col(s), k1b, dk1b);
        sigma_bar.col(2 * s) += f.extract_sigma_bar(k1b);
        dsigma_bar.col(2 * s) += f.extract_sigma_bar(dk1b);

        xbar += s1b + s2b + s3b + s4b;
        dxbar += ds1b + ds2b + ds3b + ds4b;
        xbar += plan.quad_w(s) * stage_cost_dx(p, tab, nullptr, st.x.col(s), s);
        dxbar += plan.quad_w(s) * cost_dx_tangent(s);
    }

    // Tangent of the sigma scatter: d[2 q .* sbar] = 2 (dq .* sbar + q .* dsbar).
    for (int i = 0; i < m; ++i) {
        const auto& ti = plan.interp[i];
        Vec contrib = 2.0 * (dq.col(i).cwiseProduct(sigma_bar.col(i)) +
                             tab.q.col(i).cwiseProduct(dsigma_bar.col(i)));
        dGz.col(ti.j) += (1.0 - ti.w) * contrib;
        dGz.col(ti.j + 1) += ti.w * contrib;
    }
    return Eigen::Map<const Vec>(dGz.data(), dGz.size());
}

Mat assemble_hessian(const RomcoProblem& p, const Vec& z, bool serial) {
    const int n = p.n_z();
    Mat H(n, n);
    auto body = [&](std::int64_t j) {
        Vec e = Vec::Zero(n);
        e(j) = 1.0;
        H.col(j) = hessian_vec(p, z, e);
    };
    if (serial)
        serial_for(n, body);
    else
        parallel_for(n, body);
    // Exact discrete symmetry holds to round-off; enforce it for the
    // eigensolver downstream.
    H = 0.5 * (H + H.transpose()).eval();
    return H;
}

}  // namespace romopt::adj
