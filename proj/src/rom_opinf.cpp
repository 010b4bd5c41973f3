#include "romopt/rom_opinf.hpp"

#include "romopt/container.hpp"
#include "romopt/parallel.hpp"
#include "romopt/rng.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <cstdio>
#include <limits>

namespace romopt::rom {

PodBasis weighted_pod(const Mat& snapshots, const SpMat& M, double energy_tol) {
    const auto K = snapshots.cols();
    ROMOPT_REQUIRE(K >= 1, "need at least one snapshot");
    ROMOPT_REQUIRE(energy_tol > 0.0 && energy_tol < 1.0, "energy_tol in (0,1)");

    Mat G = snapshots.transpose() * (M * snapshots);
    G = 0.5 * (G + G.transpose());
    Eigen::SelfAdjointEigenSolver<Mat> eig(G);
    ROMOPT_REQUIRE(eig.info() == Eigen::Success, "Gram eigendecomposition failed");

    // Eigenvalues ascending; flip to decreasing sigma^2.
    Vec ev = eig.eigenvalues().reverse();
    Mat Psi = eig.eigenvectors().rowwise().reverse();

    double total = 0.0;
    for (Eigen::Index j = 0; j < K; ++j) total += std::max(ev(j), 0.0);
    ROMOPT_REQUIRE(total > 0.0, "zero snapshot matrix has no POD basis");

    // Numerical rank cutoff.
    Eigen::Index rank = 0;
    const double cutoff = static_cast<double>(K) *
                          std::numeric_limits<double>::epsilon() * std::max(ev(0), 0.0);
    while (rank < K && ev(rank) > cutoff) ++rank;

    Eigen::Index r = 0;
    double tail = total;
    while (r < rank) {
        tail -= std::max(ev(r), 0.0);
        ++r;
        if (tail / total < energy_tol) break;
    }
    if (r == rank && tail / total >= energy_tol) {
        std::fprintf(stderr,
                     "weighted_pod: truncating at numerical rank %ld "
                     "(residual %.3e >= tol %.3e)\n",
                     static_cast<long>(rank), tail / total, energy_tol);
    }

    PodBasis basis;
    basis.singular_values = ev.head(rank).cwiseMax(0.0).cwiseSqrt();
    basis.residual_energy = tail / total;
    basis.V.resize(snapshots.rows(), r);
    for (Eigen::Index j = 0; j < r; ++j)
        basis.V.col(j) = snapshots * (Psi.col(j) / std::sqrt(ev(j)));

    // Cholesky-QR polish in the M inner product, then a canonical sign.
    Mat C = basis.V.transpose() * (M * basis.V);
    C = 0.5 * (C + C.transpose());
    Eigen::LLT<Mat> llt(C);
    ROMOPT_REQUIRE(llt.info() == Eigen::Success, "basis reorthonormalization failed");
    basis.V = llt.matrixL().transpose().template solve<Eigen::OnTheRight>(basis.V);
    for (Eigen::Index j = 0; j < r; ++j) {
        Eigen::Index imax;
        basis.V.col(j).cwiseAbs().maxCoeff(&imax);
        if (basis.V(imax, j) < 0) basis.V.col(j) = -basis.V.col(j);
    }
    return basis;
}

PodBasis weighted_pod(const Mat& snapshots, const Vec& mass_diag, double energy_tol) {
    SpMat M(mass_diag.size(), mass_diag.size());
    M.reserve(Eigen::VectorXi::Constant(static_cast<int>(mass_diag.size()), 1));
    for (Eigen::Index i = 0; i < mass_diag.size(); ++i)
        M.insert(i, i) = mass_diag(i);
    M.makeCompressed();
    return weighted_pod(snapshots, M, energy_tol);
}

namespace {

// Derivative weights at evaluation offset e over stencil offsets, exact for
// polynomials through degree len-1 (Vandermonde solve).
Vec stencil_weights(const std::vector<int>& offsets, int eval_offset) {
    const int n = static_cast<int>(offsets.size());
    Mat V(n, n);
    Vec rhs = Vec::Zero(n);
    for (int m = 0; m < n; ++m)
        for (int k = 0; k < n; ++k) {
            double d = offsets[k] - eval_offset;
            V(m, k) = std::pow(d, m);
        }
    rhs(1) = 1.0;
    return V.fullPivLu().solve(rhs);
}

}  // namespace

Mat time_derivatives(const Mat& reduced_traj, double dt) {
    const int n_t = static_cast<int>(reduced_traj.cols());
    ROMOPT_REQUIRE(n_t >= 7, "6th-order differentiation needs n_t >= 7");
    ROMOPT_REQUIRE(dt > 0, "dt must be positive");

    static const double central[7] = {-1.0 / 60, 3.0 / 20, -3.0 / 4, 0.0,
                                      3.0 / 4,  -3.0 / 20, 1.0 / 60};

    Mat d(reduced_traj.rows(), n_t);
    std::vector<int> head{0, 1, 2, 3, 4, 5, 6};
    for (int j = 0; j < 3; ++j) {
        Vec w = stencil_weights(head, j);
        d.col(j) = reduced_traj.leftCols(7) * (w / dt);
        // Mirror trick: reversing the last 7 columns flips the time axis,
        // so the left stencil at offset j applies with a sign change.
        d.col(n_t - 1 - j) = -(reduced_traj.rightCols(7).rowwise().reverse() * (w / dt));
    }
    for (int j = 3; j < n_t - 3; ++j) {
        d.col(j).setZero();
        for (int k = 0; k < 7; ++k)
            if (central[k] != 0.0) d.col(j) += (central[k] / dt) * reduced_traj.col(j - 3 + k);
    }
    return d;
}

Vec pchip_eval(const Vec& knots_t, const Vec& knots_y, const Vec& query_t) {
    const int n = static_cast<int>(knots_t.size());
    ROMOPT_REQUIRE(n >= 2 && knots_y.size() == n, "need matching knot arrays");

    Vec h(n - 1), delta(n - 1);
    for (int k = 0; k + 1 < n; ++k) {
        h(k) = knots_t(k + 1) - knots_t(k);
        ROMOPT_REQUIRE(h(k) > 0, "knots must be strictly increasing");
        delta(k) = (knots_y(k + 1) - knots_y(k)) / h(k);
    }

    // Fritsch-Carlson slopes: weighted harmonic means inside, projected
    // one-sided estimates at the ends.
    Vec m = Vec::Zero(n);
    for (int k = 1; k + 1 < n; ++k) {
        if (delta(k - 1) * delta(k) <= 0.0) {
            m(k) = 0.0;
        } else {
            double w1 = 2.0 * h(k) + h(k - 1);
            double w2 = h(k) + 2.0 * h(k - 1);
            m(k) = (w1 + w2) / (w1 / delta(k - 1) + w2 / delta(k));
        }
    }
    auto edge_slope = [](double h0, double h1, double d0, double d1) {
        double s = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
        if (s * d0 <= 0.0) return 0.0;
        if (d0 * d1 < 0.0 && std::abs(s) > 3.0 * std::abs(d0)) return 3.0 * d0;
        return s;
    };
    if (n == 2) {
        m(0) = m(1) = delta(0);
    } else {
        m(0) = edge_slope(h(0), h(1), delta(0), delta(1));
        m(n - 1) = edge_slope(h(n - 2), h(n - 3), delta(n - 2), delta(n - 3));
    }

    Vec out(query_t.size());
    for (Eigen::Index i = 0; i < query_t.size(); ++i) {
        double t = std::min(std::max(query_t(i), knots_t(0)), knots_t(n - 1));
        int k = 0;
        while (k + 2 < n && knots_t(k + 1) < t) ++k;
        double s = (t - knots_t(k)) / h(k);
        double s2 = s * s, s3 = s2 * s;
        double h00 = 2 * s3 - 3 * s2 + 1, h10 = s3 - 2 * s2 + s;
        double h01 = -2 * s3 + 3 * s2, h11 = s3 - s2;
        out(i) = h00 * knots_y(k) + h10 * h(k) * m(k) + h01 * knots_y(k + 1) +
                 h11 * h(k) * m(k + 1);
    }
    return out;
}

std::vector<ControlVector> random_training_controls(std::uint64_t seed, int n_c, int n_q,
                                                    int n_s, double t_final) {
    ROMOPT_REQUIRE(n_c >= 1, "need at least one control");
    Rng rng(seed);
    Vec knots_t(4);
    knots_t << 0.0, t_final / 3.0, 2.0 * t_final / 3.0, t_final;
    Vec nodes = Vec::LinSpaced(n_s, 0.0, t_final);

    std::vector<ControlVector> out;
    out.reserve(n_c);
    for (int c = 0; c < n_c; ++c) {
        ControlVector z;
        z.time_nodes = nodes;
        z.q_nodes.resize(n_q, n_s);
        for (int i = 0; i < n_q; ++i) {
            Vec knots_y(4);
            for (int k = 0; k < 4; ++k) knots_y(k) = rng.uniform(0.0, 5.0);
            z.q_nodes.row(i) = pchip_eval(knots_t, knots_y, nodes).transpose();
        }
        out.push_back(std::move(z));
    }
    return out;
}

namespace {

// One ridge-regularized regression O * D ~= targets with per-row-block
// ridge weights on O's columns.
Mat ridge_solve(const Mat& D, const Mat& targets, const Vec& ridge, bool lambda_zero) {
    Mat G = D * D.transpose();
    G.diagonal() += ridge;
    Eigen::LLT<Mat> llt(G);
    if (llt.info() != Eigen::Success) {
        if (lambda_zero)
            throw Error("operator-inference normal matrix is singular with lambda = 0; "
                        "the regression is ill-posed");
        double jitter = 1e-12 * G.trace() / static_cast<double>(G.rows());
        G.diagonal().array() += jitter;
        llt.compute(G);
        ROMOPT_REQUIRE(llt.info() == Eigen::Success,
                       "operator-inference normal matrix not SPD even with jitter");
    }
    return llt.solve(D * targets.transpose()).transpose();
}

}  // namespace

OpInfOperators opinf_regress(const OpInfData& data, double lambda1, double lambda2) {
    ROMOPT_REQUIRE(lambda1 >= 0 && lambda2 >= 0, "ridge weights must be nonnegative");
    const int r1 = static_cast<int>(data.Uhat1.rows());
    const int r2 = static_cast<int>(data.Uhat2.rows());
    const int n_q = static_cast<int>(data.Qsq.rows());
    const int K = static_cast<int>(data.Uhat1.cols());
    ROMOPT_REQUIRE(data.Uhat2.cols() == K && data.Qsq.cols() == K &&
                       data.dU1.cols() == K && data.dU2.cols() == K,
                   "snapshot count mismatch");

    Mat Kr(r1 * r2, K);
    for (int j = 0; j < K; ++j)
        Kr.col(j) = kron_pair(data.Uhat1.col(j), data.Uhat2.col(j));

    const bool lz = (lambda1 == 0.0 && lambda2 == 0.0);

    Mat D1(r1 + r1 * r2, K);
    D1.topRows(r1) = data.Uhat1;
    D1.bottomRows(r1 * r2) = Kr;
    Vec ridge1(r1 + r1 * r2);
    ridge1.head(r1).setConstant(lambda1);
    ridge1.tail(r1 * r2).setConstant(lambda2);
    Mat O1 = ridge_solve(D1, data.dU1, ridge1, lz);

    Mat D2(r2 + r1 * r2 + n_q, K);
    D2.topRows(r2) = data.Uhat2;
    D2.middleRows(r2, r1 * r2) = Kr;
    D2.bottomRows(n_q) = data.Qsq;
    Vec ridge2(r2 + r1 * r2 + n_q);
    ridge2.head(r2).setConstant(lambda1);
    ridge2.segment(r2, r1 * r2).setConstant(lambda2);
    ridge2.tail(n_q).setConstant(lambda1);
    Mat O2 = ridge_solve(D2, data.dU2, ridge2, lz);

    OpInfOperators ops;
    ops.Ahat1 = O1.leftCols(r1);
    ops.Rhat1 = O1.rightCols(r1 * r2);
    ops.Ahat2 = O2.leftCols(r2);
    ops.Rhat2 = O2.middleCols(r2, r1 * r2);
    ops.Phihat = O2.rightCols(n_q);
    return ops;
}

double opinf_residual(const OpInfData& data, const OpInfOperators& ops) {
    const int K = static_cast<int>(data.Uhat1.cols());
    double res = 0.0;
    for (int j = 0; j < K; ++j) {
        Vec kr = kron_pair(data.Uhat1.col(j), data.Uhat2.col(j));
        Vec r1 = ops.Ahat1 * data.Uhat1.col(j) + ops.Rhat1 * kr - data.dU1.col(j);
        Vec r2 = ops.Ahat2 * data.Uhat2.col(j) + ops.Rhat2 * kr +
                 ops.Phihat * data.Qsq.col(j) - data.dU2.col(j);
        res += r1.squaredNorm() + r2.squaredNorm();
    }
    return res;
}

OpInfData project_training_data(const TrainingSet& training, const PodBasis& basis1,
                                const PodBasis& basis2, const Vec& mass_diag) {
    ROMOPT_REQUIRE(!training.trajectories.empty(), "empty training set");
    ROMOPT_REQUIRE(training.controls.size() == training.trajectories.size(),
                   "one trajectory per control required");
    const int n_t = static_cast<int>(training.trajectories[0].times.size());
    const int n_c = static_cast<int>(training.trajectories.size());
    const int n_q = training.controls[0].n_q();
    const double dt = training.trajectories[0].times(1) - training.trajectories[0].times(0);

    OpInfData data;
    data.Uhat1.resize(basis1.r(), n_c * n_t);
    data.Uhat2.resize(basis2.r(), n_c * n_t);
    data.dU1.resize(basis1.r(), n_c * n_t);
    data.dU2.resize(basis2.r(), n_c * n_t);
    data.Qsq.resize(n_q, n_c * n_t);

    Mat W1t = basis1.V.transpose() * mass_diag.asDiagonal();
    Mat W2t = basis2.V.transpose() * mass_diag.asDiagonal();

    for (int c = 0; c < n_c; ++c) {
        const auto& traj = training.trajectories[c];
        ROMOPT_REQUIRE(traj.times.size() == n_t, "training time grids differ");
        Mat P1 = W1t * traj.u1;
        Mat P2 = W2t * traj.u2;
        data.Uhat1.middleCols(c * n_t, n_t) = P1;
        data.Uhat2.middleCols(c * n_t, n_t) = P2;
        data.dU1.middleCols(c * n_t, n_t) = time_derivatives(P1, dt);
        data.dU2.middleCols(c * n_t, n_t) = time_derivatives(P2, dt);
        for (int s = 0; s < n_t; ++s) {
            Vec q = control_eval(training.controls[c], traj.times(s));
            data.Qsq.col(c * n_t + s) = q.cwiseProduct(q);
        }
    }
    return data;
}

ReducedModel opinf_fit(const TrainingSet& training, const PodBasis& basis1,
                       const PodBasis& basis2, const Vec& mass_diag,
                       const fom::ProtectionZone& zone, const Vec& u1_init,
                       double lambda1, double lambda2) {
    OpInfData data = project_training_data(training, basis1, basis2, mass_diag);
    OpInfOperators ops = opinf_regress(data, lambda1, lambda2);

    ReducedModel model;
    model.basis1 = basis1;
    model.basis2 = basis2;
    model.Ahat1 = ops.Ahat1;
    model.Ahat2 = ops.Ahat2;
    model.Rhat1 = ops.Rhat1;
    model.Rhat2 = ops.Rhat2;
    model.Phihat = ops.Phihat;
    model.lambda1 = lambda1;
    model.lambda2 = lambda2;

    Vec mtilde = mass_diag.cwiseProduct(zone.psi.cwiseProduct(zone.psi));
    model.scaled_mass = basis1.V.transpose() * mtilde.asDiagonal() * basis1.V;
    model.scaled_mass = 0.5 * (model.scaled_mass + model.scaled_mass.transpose());
    model.u0hat1 = basis1.V.transpose() * mass_diag.cwiseProduct(u1_init);
    model.u0hat2 = Vec::Zero(basis2.r());
    return model;
}

Vec kron_pair(const Vec& a, const Vec& b) {
    Vec out(a.size() * b.size());
    for (Eigen::Index i = 0; i < a.size(); ++i)
        out.segment(i * b.size(), b.size()) = a(i) * b;
    return out;
}

Vec rom_rhs(const ReducedModel& model, const Vec& x, const Vec& qsq) {
    const int r1 = model.r1(), r2 = model.r2();
    Vec u1 = x.head(r1), u2 = x.tail(r2);
    Vec kr = kron_pair(u1, u2);
    Vec out(r1 + r2);
    out.head(r1) = model.Ahat1 * u1 + model.Rhat1 * kr;
    out.tail(r2) = model.Ahat2 * u2 + model.Rhat2 * kr + model.Phihat * qsq;
    return out;
}

ReducedTrajectory simulate_rom(const ReducedModel& model, const ControlVector& z, int n_steps,
                               double dt) {
    const int r = model.r1() + model.r2();
    ReducedTrajectory traj;
    traj.times = Vec::LinSpaced(n_steps + 1, 0.0, n_steps * dt);
    traj.states.resize(r, n_steps + 1);

    Vec x(r);
    x.head(model.r1()) = model.u0hat1;
    x.tail(model.r2()) = model.u0hat2;
    traj.states.col(0) = x;

    const double t_max = z.time_nodes(z.n_s() - 1);
    auto qsq_at = [&](double t) {
        Vec q = control_eval(z, std::min(t, t_max));
        return Vec(q.cwiseProduct(q));
    };

    for (int s = 0; s < n_steps; ++s) {
        double t = s * dt;
        Vec q1 = qsq_at(t), q2 = qsq_at(t + 0.5 * dt), q4 = qsq_at(t + dt);
        Vec k1 = rom_rhs(model, x, q1);
        Vec k2 = rom_rhs(model, x + 0.5 * dt * k1, q2);
        Vec k3 = rom_rhs(model, x + 0.5 * dt * k2, q2);
        Vec k4 = rom_rhs(model, x + dt * k3, q4);
        x += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        if (!x.allFinite()) {
            throw Error("ROM state non-finite at step " + std::to_string(s + 1) +
                        " (max |x| = " + std::to_string(x.cwiseAbs().maxCoeff()) + ")");
        }
        traj.states.col(s + 1) = x;
    }
    return traj;
}

double rom_objective(const ReducedModel& model, const ReducedTrajectory& traj,
                     const ControlVector& z, double gamma) {
    Vec w = fom::trapezoid_weights(traj.times);
    double state_term = 0.0, reg_term = 0.0;
    const double t_max = z.time_nodes(z.n_s() - 1);
    for (int s = 0; s < traj.times.size(); ++s) {
        Vec u1 = traj.states.col(s).head(model.r1());
        state_term += w(s) * u1.dot(model.scaled_mass * u1);
        Vec q = control_eval(z, std::min(traj.times(s), t_max));
        reg_term += w(s) * q.array().pow(4).sum();
    }
    return 0.5 * state_term + gamma * reg_term;
}

double reconstruction_error(const TrainingSet& training, const PodBasis& basis1,
                            const PodBasis& basis2, const Vec& mass_diag,
                            const OpInfOperators& ops, int n_steps, double dt) {
    ReducedModel model;
    model.basis1 = basis1;
    model.basis2 = basis2;
    model.Ahat1 = ops.Ahat1;
    model.Ahat2 = ops.Ahat2;
    model.Rhat1 = ops.Rhat1;
    model.Rhat2 = ops.Rhat2;
    model.Phihat = ops.Phihat;

    Mat W1t = basis1.V.transpose() * mass_diag.asDiagonal();
    Mat W2t = basis2.V.transpose() * mass_diag.asDiagonal();

    double mean_err = 0.0;
    for (std::size_t c = 0; c < training.controls.size(); ++c) {
        const auto& traj = training.trajectories[c];
        model.u0hat1 = W1t * traj.u1.col(0);
        model.u0hat2 = W2t * traj.u2.col(0);
        ReducedTrajectory red;
        try {
            red = simulate_rom(model, training.controls[c], n_steps, dt);
        } catch (const Error&) {
            return std::numeric_limits<double>::infinity();
        }
        ROMOPT_REQUIRE(red.times.size() == traj.times.size(),
                       "reconstruction time grid mismatch");

        // ||V uhat - u||_M^2 = ||uhat||^2 - 2 uhat' (V' M u) + ||u||_M^2 for
        // an M-orthonormal basis; no lifting to n_x needed.
        Vec w = fom::trapezoid_weights(traj.times);
        double err2 = 0.0, ref2 = 0.0;
        for (int s = 0; s < traj.times.size(); ++s) {
            Vec p1 = W1t * traj.u1.col(s);
            Vec p2 = W2t * traj.u2.col(s);
            double n1 = traj.u1.col(s).dot(mass_diag.cwiseProduct(traj.u1.col(s)));
            double n2 = traj.u2.col(s).dot(mass_diag.cwiseProduct(traj.u2.col(s)));
            Vec h1 = red.states.col(s).head(basis1.r());
            Vec h2 = red.states.col(s).tail(basis2.r());
            err2 += w(s) * (h1.squaredNorm() - 2.0 * h1.dot(p1) + n1 +
                            h2.squaredNorm() - 2.0 * h2.dot(p2) + n2);
            ref2 += w(s) * (n1 + n2);
        }
        mean_err += std::sqrt(std::max(err2, 0.0) / ref2);
    }
    return mean_err / static_cast<double>(training.controls.size());
}

std::pair<double, double> select_regularization(const TrainingSet& training,
                                                const PodBasis& basis1, const PodBasis& basis2,
                                                const Vec& mass_diag,
                                                const std::vector<std::pair<double, double>>& grid,
                                                int n_steps, double dt) {
    ROMOPT_REQUIRE(!grid.empty(), "empty regularization grid");
    OpInfData data = project_training_data(training, basis1, basis2, mass_diag);

    std::vector<double> scores(grid.size());
    parallel_for(static_cast<std::int64_t>(grid.size()), [&](std::int64_t i) {
        const auto& [l1, l2] = grid[static_cast<std::size_t>(i)];
        double score;
        try {
            OpInfOperators ops = opinf_regress(data, l1, l2);
            score = reconstruction_error(training, basis1, basis2, mass_diag, ops, n_steps, dt);
        } catch (const Error&) {
            score = std::numeric_limits<double>::infinity();
        }
        scores[static_cast<std::size_t>(i)] = score;
    });

    std::size_t best = 0;
    for (std::size_t i = 1; i < grid.size(); ++i) {
        if (scores[i] < scores[best] ||
            (scores[i] == scores[best] && grid[i] > grid[best]))
            best = i;
    }
    ROMOPT_REQUIRE(std::isfinite(scores[best]),
                   "every regularization pair diverged in re-simulation");
    return grid[best];
}

void save_reduced_model(const std::string& path, const ReducedModel& model) {
    BlockFile b;
    b.add("V1", model.basis1.V);
    b.add("V2", model.basis2.V);
    b.add("sigma1", model.basis1.singular_values);
    b.add("sigma2", model.basis2.singular_values);
    b.add("Ahat1", model.Ahat1);
    b.add("Ahat2", model.Ahat2);
    b.add("Rhat1", model.Rhat1);
    b.add("Rhat2", model.Rhat2);
    b.add("Phihat", model.Phihat);
    b.add("scaled_mass", model.scaled_mass);
    b.add("u0hat1", model.u0hat1);
    b.add("u0hat2", model.u0hat2);
    Vec meta(5);
    meta << model.lambda1, model.lambda2, model.energy_tol,
        static_cast<double>(model.seed), model.basis1.residual_energy;
    b.add("meta", meta);
    Vec res2(1);
    res2 << model.basis2.residual_energy;
    b.add("meta2", res2);
    write_blocks(path, b);
}

ReducedModel load_reduced_model(const std::string& path) {
    BlockFile b = read_blocks(path);
    ReducedModel m;
    m.basis1.V = b.get("V1");
    m.basis2.V = b.get("V2");
    m.basis1.singular_values = b.get("sigma1");
    m.basis2.singular_values = b.get("sigma2");
    m.Ahat1 = b.get("Ahat1");
    m.Ahat2 = b.get("Ahat2");
    m.Rhat1 = b.get("Rhat1");
    m.Rhat2 = b.get("Rhat2");
    m.Phihat = b.get("Phihat");
    m.scaled_mass = b.get("scaled_mass");
    m.u0hat1 = b.get("u0hat1");
    m.u0hat2 = b.get("u0hat2");
    const Mat& meta = b.get("meta");
    m.lambda1 = meta(0, 0);
    m.lambda2 = meta(1, 0);
    m.energy_tol = meta(2, 0);
    m.seed = static_cast<std::uint64_t>(meta(3, 0));
    m.basis1.residual_energy = meta(4, 0);
    m.basis2.residual_energy = b.get("meta2")(0, 0);
    return m;
}

}  // namespace romopt::rom
