#include "romopt/discrepancy.hpp"

#include "romopt/parallel.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <cmath>
#include <cstdio>

namespace romopt::hdsa {

namespace {

struct NodeInterp {
    int j;
    double w;
};

NodeInterp locate(const Vec& nodes, double t) {
    const int n = static_cast<int>(nodes.size());
    if (n == 1) return {0, 0.0};
    if (t <= nodes(0)) return {0, 0.0};
    if (t >= nodes(n - 1)) return {n - 2, 1.0};
    int j = 0;
    while (j + 2 < n && nodes(j + 1) < t) ++j;
    return {j, (t - nodes(j)) / (nodes(j + 1) - nodes(j))};
}

Eigen::LLT<Mat> chol_with_jitter_retry(Mat A, const char* what) {
    Eigen::LLT<Mat> llt(A);
    if (llt.info() != Eigen::Success) {
        double jitter = 1e-12 * A.trace() / static_cast<double>(A.rows());
        std::fprintf(stderr, "%s not numerically SPD; retrying with jitter %.3e\n", what,
                     jitter);
        A.diagonal().array() += jitter;
        llt.compute(A);
        ROMOPT_REQUIRE(llt.info() == Eigen::Success,
                       std::string(what) + " not SPD even with jitter");
    }
    return llt;
}

}  // namespace

DiscrepancyBasis build_discrepancy_basis(const std::vector<Mat>& deltas, const Vec& time_nodes,
                                         int r_max) {
    ROMOPT_REQUIRE(!deltas.empty(), "no discrepancy data");
    ROMOPT_REQUIRE(r_max >= 1, "r_max must be >= 1");
    const auto n = deltas[0].rows();
    Eigen::Index cols = 0;
    for (const auto& d : deltas) {
        ROMOPT_REQUIRE(d.rows() == n, "discrepancy snapshot sizes differ");
        cols += d.cols();
    }
    r_max = static_cast<int>(std::min<Eigen::Index>(r_max, cols));
    Mat stack(n, cols);
    Eigen::Index at = 0;
    for (const auto& d : deltas) {
        stack.middleCols(at, d.cols()) = d;
        at += d.cols();
    }

    Eigen::JacobiSVD<Mat> svd(stack, Eigen::ComputeThinU);
    const Vec& sv = svd.singularValues();
    ROMOPT_REQUIRE(sv(0) > 0.0, "zero discrepancy data has no basis");
    int r = 0;
    while (r < std::min<Eigen::Index>(r_max, sv.size()) && sv(r) > 1e-8 * sv(0)) ++r;

    DiscrepancyBasis basis;
    basis.time_nodes = time_nodes;
    basis.Vdelta = svd.matrixU().leftCols(r);
    for (int j = 0; j < r; ++j) {
        Eigen::Index imax;
        basis.Vdelta.col(j).cwiseAbs().maxCoeff(&imax);
        if (basis.Vdelta(imax, j) < 0) basis.Vdelta.col(j) = -basis.Vdelta.col(j);
    }
    return basis;
}

namespace {

// Reshape one theta block as the r_d x (1+n_z) coefficient matrix [c0 | CL].
Eigen::Map<const Mat> theta_block(const Vec& theta, const ParamLayout& lay, int tau) {
    return Eigen::Map<const Mat>(theta.data() + tau * lay.block_size(), lay.r_d, 1 + lay.n_z);
}

}  // namespace

Vec delta_eval(const Vec& theta, const ParamLayout& lay, const DiscrepancyBasis& basis,
               const Vec& mz_diag, const Vec& z, double t) {
    ROMOPT_REQUIRE(theta.size() == lay.n_theta(), "theta layout mismatch");
    ROMOPT_REQUIRE(z.size() == lay.n_z && mz_diag.size() == lay.n_z, "decision size mismatch");
    ROMOPT_REQUIRE(basis.r() == lay.r_d && basis.time_nodes.size() == lay.n_tau,
                   "basis layout mismatch");
    Vec v(1 + lay.n_z);
    v(0) = 1.0;
    v.tail(lay.n_z) = mz_diag.cwiseProduct(z);
    NodeInterp ni = locate(basis.time_nodes, t);
    Vec g = (1.0 - ni.w) * (theta_block(theta, lay, ni.j) * v);
    if (lay.n_tau > 1) g += ni.w * (theta_block(theta, lay, ni.j + 1) * v);
    return basis.Vdelta * g;
}

Vec delta_time_weights(const Vec& time_nodes) {
    if (time_nodes.size() == 1) return Vec::Ones(1);
    return fom::trapezoid_weights(time_nodes);
}

double alpha_d_from_data(const std::vector<DiscrepancyData>& data, const SpMat& wu_spatial,
                         const Vec& time_weights, double factor) {
    double norm2 = 0.0;
    long dim = 0;
    for (const auto& d : data) {
        for (int tau = 0; tau < d.delta.cols(); ++tau) {
            Vec col = d.delta.col(tau);
            norm2 += time_weights(tau) * col.dot(wu_spatial * col);
        }
        dim += d.delta.size();
    }
    ROMOPT_REQUIRE(dim > 0, "no discrepancy data");
    double ad = factor * factor * norm2 / static_cast<double>(dim);
    ROMOPT_REQUIRE(ad > 0.0, "degenerate (zero) discrepancy data; alpha_d undefined");
    return ad;
}

Vec PriorPrecision::apply(const Vec& theta) const {
    ROMOPT_REQUIRE(theta.size() == layout.n_theta(), "theta layout mismatch");
    Vec out(theta.size());
    for (int tau = 0; tau < layout.n_tau; ++tau) {
        Eigen::Map<const Mat> T(theta.data() + tau * layout.block_size(), layout.r_d,
                                1 + layout.n_z);
        Mat R(layout.r_d, 1 + layout.n_z);
        R.col(0) = wtil * T.col(0);
        R.rightCols(layout.n_z) = wtil * T.rightCols(layout.n_z) * wz_inv;
        R *= alpha_p * time_weights(tau);
        Eigen::Map<Mat>(out.data() + tau * layout.block_size(), layout.r_d, 1 + layout.n_z) = R;
    }
    return out;
}

Mat PriorPrecision::to_dense() const {
    const int bs = layout.block_size();
    Mat D = Mat::Zero(layout.n_theta(), layout.n_theta());
    Mat outer = Mat::Zero(1 + layout.n_z, 1 + layout.n_z);
    outer(0, 0) = 1.0;
    outer.bottomRightCorner(layout.n_z, layout.n_z) = wz_inv;
    for (int tau = 0; tau < layout.n_tau; ++tau) {
        for (int a = 0; a < 1 + layout.n_z; ++a)
            for (int b = 0; b < 1 + layout.n_z; ++b)
                D.block(tau * bs + a * layout.r_d, tau * bs + b * layout.r_d, layout.r_d,
                        layout.r_d) = alpha_p * time_weights(tau) * outer(a, b) * wtil;
    }
    return D;
}

PriorPrecision prior_precision(const PriorSpec& spec, const DiscrepancyBasis& basis,
                               const ParamLayout& lay) {
    ROMOPT_REQUIRE(spec.alpha_p > 0 && spec.alpha_d > 0, "scales must be positive");
    ROMOPT_REQUIRE(basis.r() == lay.r_d, "basis/layout mismatch");
    PriorPrecision P;
    P.layout = lay;
    P.time_weights = spec.time_weights;
    P.alpha_p = spec.alpha_p;
    P.wtil = basis.Vdelta.transpose() * (spec.wu_spatial * basis.Vdelta);
    P.wtil = 0.5 * (P.wtil + P.wtil.transpose());
    Eigen::LLT<Mat> llt(spec.wz);
    ROMOPT_REQUIRE(llt.info() == Eigen::Success, "Wz must be SPD");
    P.wz_inv = llt.solve(Mat::Identity(lay.n_z, lay.n_z));
    P.wz_inv = 0.5 * (P.wz_inv + P.wz_inv.transpose());
    return P;
}

DiscrepancyPosterior calibrate_posterior(const std::vector<DiscrepancyData>& data,
                                         const DiscrepancyBasis& basis,
                                         const PriorSpec& prior) {
    ROMOPT_REQUIRE(!data.empty(), "need at least one data pair");
    ParamLayout lay{basis.r(), static_cast<int>(data[0].z.size()),
                    static_cast<int>(basis.time_nodes.size())};
    PriorPrecision wp = prior_precision(prior, basis, lay);

    // K = alpha_p * diag(1, Wz^-1) + (1/alpha_d) * sum_l v_l v_l'.
    Mat K = Mat::Zero(1 + lay.n_z, 1 + lay.n_z);
    K(0, 0) = prior.alpha_p;
    K.bottomRightCorner(lay.n_z, lay.n_z) = prior.alpha_p * wp.wz_inv;
    std::vector<Vec> vs;
    for (const auto& d : data) {
        ROMOPT_REQUIRE(d.delta.cols() == lay.n_tau, "data/time-node mismatch");
        ROMOPT_REQUIRE(d.z.size() == lay.n_z, "data decision size mismatch");
        Vec v(1 + lay.n_z);
        v(0) = 1.0;
        v.tail(lay.n_z) = prior.mz_diag.cwiseProduct(d.z);
        K += (1.0 / prior.alpha_d) * v * v.transpose();
        vs.push_back(std::move(v));
    }

    DiscrepancyPosterior post;
    post.layout = lay;
    post.time_weights = prior.time_weights;
    auto lltK = chol_with_jitter_retry(K, "posterior precision factor K");
    post.chol_K = lltK.matrixL();
    auto lltW = chol_with_jitter_retry(wp.wtil, "projected state precision");
    post.chol_wtil = lltW.matrixL();

    // Posterior mean per node: Theta_tau = (1/alpha_d) sum_l
    //   (Wtil^-1 V' Wu delta_l(:,tau)) (K^-1 v_l)'.
    post.mean.resize(lay.n_theta());
    std::vector<Vec> kinv_v;
    for (const auto& v : vs) kinv_v.push_back(lltK.solve(v));
    for (int tau = 0; tau < lay.n_tau; ++tau) {
        Mat T = Mat::Zero(lay.r_d, 1 + lay.n_z);
        for (std::size_t l = 0; l < data.size(); ++l) {
            Vec dproj =
                basis.Vdelta.transpose() * (prior.wu_spatial * data[l].delta.col(tau));
            T += lltW.solve(dproj) * kinv_v[l].transpose();
        }
        T /= prior.alpha_d;
        Eigen::Map<Mat>(post.mean.data() + tau * lay.block_size(), lay.r_d, 1 + lay.n_z) = T;
    }
    return post;
}

Vec DiscrepancyPosterior::sample(Rng& rng) const {
    Vec out(layout.n_theta());
    for (int tau = 0; tau < layout.n_tau; ++tau) {
        Mat Z(layout.r_d, 1 + layout.n_z);
        for (int j = 0; j < Z.cols(); ++j)
            for (int i = 0; i < Z.rows(); ++i) Z(i, j) = rng.normal();
        // X = Lw^-T Z Lk^-1 gives vec(X) ~ N(0, (K (x) Wtil)^-1).
        Mat Lwt = chol_wtil.transpose();
        Mat X1 = Lwt.triangularView<Eigen::Upper>().solve(Z);
        Mat Lkt = chol_K.transpose();
        Mat Xt = Lkt.triangularView<Eigen::Upper>().solve(Mat(X1.transpose()));
        Mat B = Xt.transpose() / std::sqrt(time_weights(tau));
        Eigen::Map<Mat>(out.data() + tau * layout.block_size(), layout.r_d, 1 + layout.n_z) =
            Eigen::Map<const Mat>(mean.data() + tau * layout.block_size(), layout.r_d,
                                  1 + layout.n_z) +
            B;
    }
    return out;
}

Vec DiscrepancyPosterior::precision_apply(const Vec& theta) const {
    ROMOPT_REQUIRE(theta.size() == layout.n_theta(), "theta layout mismatch");
    Mat K = chol_K * chol_K.transpose();
    Mat W = chol_wtil * chol_wtil.transpose();
    Vec out(theta.size());
    for (int tau = 0; tau < layout.n_tau; ++tau) {
        Eigen::Map<const Mat> T(theta.data() + tau * layout.block_size(), layout.r_d,
                                1 + layout.n_z);
        Eigen::Map<Mat>(out.data() + tau * layout.block_size(), layout.r_d, 1 + layout.n_z) =
            time_weights(tau) * W * T * K;
    }
    return out;
}

Mat DiscrepancyPosterior::precision_dense() const {
    Mat K = chol_K * chol_K.transpose();
    Mat W = chol_wtil * chol_wtil.transpose();
    const int bs = layout.block_size();
    Mat D = Mat::Zero(layout.n_theta(), layout.n_theta());
    for (int tau = 0; tau < layout.n_tau; ++tau)
        for (int a = 0; a < 1 + layout.n_z; ++a)
            for (int b = 0; b < 1 + layout.n_z; ++b)
                D.block(tau * bs + a * layout.r_d, tau * bs + b * layout.r_d, layout.r_d,
                        layout.r_d) = time_weights(tau) * K(a, b) * W;
    return D;
}

Mat DiscrepancyPosterior::covariance_dense() const {
    Mat P = precision_dense();
    return P.llt().solve(Mat::Identity(P.rows(), P.cols()));
}

Mat contaminant_discrepancy(const fom::StateTrajectory& fom_traj,
                            const rom::ReducedModel& model,
                            const rom::ReducedTrajectory& rom_traj, const Vec& delta_times) {
    ROMOPT_REQUIRE(fom_traj.times.size() == rom_traj.times.size() &&
                       (fom_traj.times - rom_traj.times).cwiseAbs().maxCoeff() < 1e-12,
                   "FOM and ROM trajectories must share the time grid");
    const int n_x = static_cast<int>(fom_traj.u1.rows());
    const int r1 = model.r1();
    Mat delta(2 * n_x, delta_times.size());
    for (int k = 0; k < delta_times.size(); ++k) {
        double t = delta_times(k);
        // Locate t on the trajectory grid exactly.
        int idx = -1;
        for (int s = 0; s < fom_traj.times.size(); ++s)
            if (std::abs(fom_traj.times(s) - t) < 1e-9) {
                idx = s;
                break;
            }
        ROMOPT_REQUIRE(idx >= 0, "discrepancy time node not on the trajectory grid");
        Vec lift1 = model.basis1.V * rom_traj.states.col(idx).head(r1);
        Vec lift2 = model.basis2.V * rom_traj.states.col(idx).tail(model.r2());
        delta.col(k).head(n_x) = fom_traj.u1.col(idx) - lift1;
        delta.col(k).tail(n_x) = fom_traj.u2.col(idx) - lift2;
    }
    return delta;
}

DeltaProjection project_delta_basis(const DiscrepancyBasis& basis, const ParamLayout& lay,
                                    const Mat& V1, const Vec& mtilde_diag, const Vec& mz_diag) {
    const auto n_x = V1.rows();
    ROMOPT_REQUIRE(basis.Vdelta.rows() == 2 * n_x, "basis spans the stacked state");
    DeltaProjection proj;
    proj.layout = lay;
    proj.time_nodes = basis.time_nodes;
    proj.mz_diag = mz_diag;
    Mat vd_top = basis.Vdelta.topRows(n_x);
    proj.P1d = V1.transpose() * mtilde_diag.asDiagonal() * vd_top;
    proj.Gd = vd_top.transpose() * mtilde_diag.asDiagonal() * vd_top;
    proj.Gd = 0.5 * (proj.Gd + proj.Gd.transpose());
    return proj;
}

adj::DeltaTerm make_delta_term(const DeltaProjection& proj, const Vec& theta) {
    ROMOPT_REQUIRE(theta.size() == proj.layout.n_theta(), "theta layout mismatch");
    adj::DeltaTerm term;
    term.time_nodes = proj.time_nodes;
    term.Mz_diag = proj.mz_diag;
    term.P1d = proj.P1d;
    term.Gd = proj.Gd;
    const auto& lay = proj.layout;
    for (int tau = 0; tau < lay.n_tau; ++tau) {
        Eigen::Map<const Mat> T(theta.data() + tau * lay.block_size(), lay.r_d, 1 + lay.n_z);
        term.c0.push_back(T.col(0));
        term.CL.push_back(T.rightCols(lay.n_z));
    }
    return term;
}

Vec mixed_hessian_apply(const adj::RomcoProblem& base, const DeltaProjection& proj,
                        const Vec& z_tilde, const Vec& theta) {
    adj::DeltaTerm plus = make_delta_term(proj, theta);
    adj::DeltaTerm minus = make_delta_term(proj, Vec(-theta));
    adj::RomcoProblem p = base;
    p.delta = &plus;
    Vec gp = adj::gradient(p, z_tilde);
    p.delta = &minus;
    Vec gm = adj::gradient(p, z_tilde);
    return 0.5 * (gp - gm);
}

opt::EigenDecomposition retain_leading(const Mat& H, double ratio_tol) {
    Eigen::SelfAdjointEigenSolver<Mat> eig(H);
    ROMOPT_REQUIRE(eig.info() == Eigen::Success, "Hessian eigendecomposition failed");
    const int n = static_cast<int>(H.rows());
    Vec lam = eig.eigenvalues().reverse();
    int r = n;
    for (int k = 1; k < n; ++k) {
        if (lam(k) / lam(0) <= ratio_tol) {
            r = k + 1;  // keep through the first eigenvalue past the decay
            break;
        }
    }
    opt::EigenDecomposition out;
    out.eigenvalues = lam.head(r);
    out.W.resize(n, r);
    for (int k = 0; k < r; ++k) out.W.col(k) = eig.eigenvectors().col(n - 1 - k);
    return out;
}

Vec update_solution(const SensitivitySystem& sys, const Vec& theta, bool use_projection) {
    Vec b = sys.b_apply(theta);
    Vec dz;
    if (use_projection) {
        ROMOPT_REQUIRE(sys.eig.r() > 0, "no retained eigenpairs");
        ROMOPT_REQUIRE(sys.eig.eigenvalues.minCoeff() > 0.0,
                       "Hessian not positive on the retained subspace");
        dz = sys.eig.apply_inverse(b);
    } else {
        ROMOPT_REQUIRE(sys.H.size() > 0, "dense Hessian unavailable");
        Eigen::LLT<Mat> llt(sys.H);
        ROMOPT_REQUIRE(llt.info() == Eigen::Success, "Hessian not SPD");
        dz = llt.solve(b);
    }
    return sys.z_tilde - dz;
}

std::vector<Vec> posterior_control_samples(const DiscrepancyPosterior& post,
                                           const SensitivitySystem& sys, int n_samples,
                                           std::uint64_t seed, bool use_projection) {
    std::vector<Vec> out(static_cast<std::size_t>(n_samples));
    Rng base(seed);
    parallel_for(n_samples, [&](std::int64_t i) {
        Rng rng = base.spawn(static_cast<std::uint64_t>(i));
        Vec theta = post.sample(rng);
        out[static_cast<std::size_t>(i)] = update_solution(sys, theta, use_projection);
    });
    return out;
}

Ellipse confidence_ellipse(const Mat2& cov, const Vec2& mean, double level) {
    ROMOPT_REQUIRE(level > 0.0 && level < 1.0, "level in (0,1)");
    Eigen::SelfAdjointEigenSolver<Mat2> eig(cov);
    double l1 = std::max(eig.eigenvalues()(1), 0.0);  // major
    double l2 = std::max(eig.eigenvalues()(0), 0.0);  // minor
    const double q = -2.0 * std::log(1.0 - level);    // exact chi2(2) quantile
    Ellipse e;
    e.center = mean;
    e.semi_major = std::sqrt(l1 * q);
    e.semi_minor = std::sqrt(l2 * q);
    Vec2 major_dir = eig.eigenvectors().col(1);
    e.angle = std::atan2(major_dir(1), major_dir(0));
    if (l1 <= 0.0 || l2 <= 1e-14 * l1) {
        e.degenerate = true;
        e.semi_minor = 0.0;
        std::fprintf(stderr, "confidence_ellipse: degenerate covariance, returning segment\n");
    }
    return e;
}

Ellipse confidence_ellipse_from_samples(const std::vector<Vec2>& samples, double level) {
    ROMOPT_REQUIRE(samples.size() >= 2, "need at least two samples");
    Vec2 mean = Vec2::Zero();
    for (const auto& s : samples) mean += s;
    mean /= static_cast<double>(samples.size());
    Mat2 cov = Mat2::Zero();
    for (const auto& s : samples) cov += (s - mean) * (s - mean).transpose();
    cov /= static_cast<double>(samples.size() - 1);
    return confidence_ellipse(cov, mean, level);
}

bool ellipse_contains(const Ellipse& e, const Vec2& x) {
    Vec2 d = x - e.center;
    double c = std::cos(e.angle), s = std::sin(e.angle);
    double u = c * d(0) + s * d(1);
    double v = -s * d(0) + c * d(1);
    if (e.degenerate)
        return std::abs(v) <= 1e-12 && std::abs(u) <= e.semi_major;
    double t = (u / e.semi_major) * (u / e.semi_major) +
               (v / e.semi_minor) * (v / e.semi_minor);
    return t <= 1.0;
}

SpMat laplacian_precision(const fom::Grid2D& grid, double beta1, double beta2, int n_species) {
    ROMOPT_REQUIRE(n_species == 1 || n_species == 2, "one or two species");
    const int n = grid.n_nodes();
    SpMat K = fom::assemble_diffusion(grid, 1.0);
    Vec m = fom::lumped_mass_diag(grid);
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(static_cast<std::size_t>(K.nonZeros() + n) * n_species);
    for (int sp = 0; sp < n_species; ++sp) {
        const int off = sp * n;
        for (int k = 0; k < K.outerSize(); ++k)
            for (SpMat::InnerIterator it(K, k); it; ++it)
                trip.emplace_back(off + static_cast<int>(it.row()),
                                  off + static_cast<int>(it.col()), -beta2 * it.value());
        for (int i = 0; i < n; ++i) trip.emplace_back(off + i, off + i, beta1 * m(i));
    }
    SpMat W(n_species * n, n_species * n);
    W.setFromTriplets(trip.begin(), trip.end());
    return W;
}

}  // namespace romopt::hdsa
