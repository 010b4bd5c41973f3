#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "romopt/discrepancy.hpp"
#include "romopt/rng.hpp"

#include <Eigen/SVD>

#include <cmath>

using namespace romopt;
using namespace romopt::hdsa;

namespace {

Mat random_matrix(int rows, int cols, Rng& rng, double s = 1.0) {
    Mat m(rows, cols);
    for (int j = 0; j < cols; ++j)
        for (int i = 0; i < rows; ++i) m(i, j) = s * (rng.uniform() - 0.5);
    return m;
}

SpMat sparse_identity(int n, double scale = 1.0) {
    SpMat M(n, n);
    for (int i = 0; i < n; ++i) M.insert(i, i) = scale;
    M.makeCompressed();
    return M;
}

DiscrepancyBasis orthonormal_basis(int n, int r, std::uint64_t seed, const Vec& nodes) {
    Rng rng(seed);
    Mat m = random_matrix(n, r, rng);
    Eigen::HouseholderQR<Mat> qr(m);
    DiscrepancyBasis b;
    b.Vdelta = Mat(qr.householderQ()) * Mat::Identity(n, r);
    b.time_nodes = nodes;
    return b;
}

}  // namespace

TEST_CASE("discrepancy basis from one snapshot is the normalized snapshot") {
    Rng rng(3);
    Mat d = random_matrix(10, 1, rng);
    Vec nodes(1);
    nodes << 0.2;
    DiscrepancyBasis b = build_discrepancy_basis({d}, nodes, 5);
    REQUIRE(b.r() == 1);
    Vec expect = d.col(0) / d.col(0).norm();
    if (b.Vdelta.col(0).dot(expect) < 0) expect = -expect;
    CHECK((b.Vdelta.col(0) - expect).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("duplicated snapshots do not inflate the basis rank") {
    Rng rng(5);
    Mat d = random_matrix(12, 3, rng);
    Vec nodes = Vec::LinSpaced(3, 0.0, 1.0);
    DiscrepancyBasis one = build_discrepancy_basis({d}, nodes, 10);
    DiscrepancyBasis two = build_discrepancy_basis({d, d}, nodes, 10);
    CHECK(one.r() == two.r());
}

TEST_CASE("basis truncation matches dense SVD reconstruction error") {
    Rng rng(7);
    Mat d = random_matrix(20, 6, rng);
    Vec nodes = Vec::LinSpaced(6, 0.0, 1.0);
    const int r = 3;
    DiscrepancyBasis b = build_discrepancy_basis({d}, nodes, r);
    Mat resid = d - b.Vdelta * (b.Vdelta.transpose() * d);

    Eigen::JacobiSVD<Mat> svd(d);
    double tail = svd.singularValues().tail(svd.singularValues().size() - r).squaredNorm();
    CHECK(resid.squaredNorm() == doctest::Approx(tail).epsilon(1e-10));
}

TEST_CASE("delta evaluation: zero theta, zero z, and the affinity identity") {
    const int n = 14, r_d = 3, n_z = 4, n_tau = 5;
    Vec nodes = Vec::LinSpaced(n_tau, 0.0, 0.4);
    DiscrepancyBasis basis = orthonormal_basis(n, r_d, 11, nodes);
    ParamLayout lay{r_d, n_z, n_tau};
    Rng rng(13);
    Vec theta = random_matrix(lay.n_theta(), 1, rng).col(0);
    Vec mz = Vec::Constant(n_z, 1.0);
    for (int i = 0; i < n_z; ++i) mz(i) = rng.uniform(0.5, 2.0);
    Vec z1 = random_matrix(n_z, 1, rng).col(0);
    Vec z2 = random_matrix(n_z, 1, rng).col(0);
    const double t = 0.137;

    CHECK(delta_eval(Vec::Zero(lay.n_theta()), lay, basis, mz, z1, t).cwiseAbs().maxCoeff() ==
          0.0);

    // z = 0 leaves only the intercept, linear in theta by construction.
    Vec d0 = delta_eval(theta, lay, basis, mz, Vec::Zero(n_z), t);
    Vec d1 = delta_eval(theta, lay, basis, mz, z1, t);
    Vec d2 = delta_eval(theta, lay, basis, mz, z2, t);
    Vec d12 = delta_eval(theta, lay, basis, mz, Vec(z1 + z2), t);
    CHECK((d1 + d2 - d0 - d12).cwiseAbs().maxCoeff() <= 1e-12);

    // Exact at the nodes and piecewise linear between them.
    Vec da = delta_eval(theta, lay, basis, mz, z1, nodes(1));
    Vec db = delta_eval(theta, lay, basis, mz, z1, nodes(2));
    Vec dmid = delta_eval(theta, lay, basis, mz, z1, 0.5 * (nodes(1) + nodes(2)));
    CHECK((dmid - 0.5 * (da + db)).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("trivial prior dimensions give the identity precision") {
    Vec nodes(1);
    nodes << 0.0;
    DiscrepancyBasis basis;
    basis.Vdelta = Mat::Ones(1, 1);
    basis.time_nodes = nodes;
    ParamLayout lay{1, 1, 1};
    PriorSpec spec;
    spec.wu_spatial = sparse_identity(1);
    spec.time_weights = Vec::Ones(1);
    spec.wz = Mat::Identity(1, 1);
    spec.mz_diag = Vec::Ones(1);
    spec.alpha_p = 1.0;
    spec.alpha_d = 1.0;
    PriorPrecision P = prior_precision(spec, basis, lay);
    CHECK((P.to_dense() - Mat::Identity(2, 2)).cwiseAbs().maxCoeff() <= 1e-14);

    spec.alpha_p = 3.5;
    PriorPrecision P2 = prior_precision(spec, basis, lay);
    CHECK((P2.to_dense() - 3.5 * Mat::Identity(2, 2)).cwiseAbs().maxCoeff() <= 1e-13);
}

TEST_CASE("structured prior matches dense brute-force assembly on a tiny case") {
    const int n = 9, r_d = 2, n_z = 2, n_tau = 3;
    Vec nodes = Vec::LinSpaced(n_tau, 0.0, 0.4);
    DiscrepancyBasis basis = orthonormal_basis(n, r_d, 17, nodes);
    ParamLayout lay{r_d, n_z, n_tau};

    Rng rng(19);
    Mat wroot = random_matrix(n, n, rng);
    Mat wu_dense = wroot * wroot.transpose() + Mat::Identity(n, n);
    SpMat wu = Mat(wu_dense).sparseView();
    Mat wzroot = random_matrix(n_z, n_z, rng);
    PriorSpec spec;
    spec.wu_spatial = wu;
    spec.time_weights = delta_time_weights(nodes);
    spec.wz = wzroot * wzroot.transpose() + Mat::Identity(n_z, n_z);
    spec.mz_diag = Vec::Ones(n_z);
    spec.alpha_p = 1.7;
    spec.alpha_d = 1.0;
    PriorPrecision P = prior_precision(spec, basis, lay);

    // Brute force from the definition: quadratic form of the operator inner
    // product <(u0,L),(u0,L)> = |u0|_Wu^2 + trace(Wz^-1 L' Wu L), per node,
    // time-weighted and scaled by alpha_p, with u0 = V c0, L = V CL.
    Mat wtil = basis.Vdelta.transpose() * wu_dense * basis.Vdelta;
    Mat wz_inv = spec.wz.inverse();
    const int nt = lay.n_theta();
    Mat dense = Mat::Zero(nt, nt);
    for (int a = 0; a < nt; ++a) {
        Vec ea = Vec::Zero(nt);
        ea(a) = 1.0;
        Vec pa = P.apply(ea);
        dense.col(a) = pa;
    }
    // Independent dense assembly via finite differences of the quadratic form.
    auto quad = [&](const Vec& th) {
        double q = 0.0;
        for (int tau = 0; tau < n_tau; ++tau) {
            Eigen::Map<const Mat> T(th.data() + tau * lay.block_size(), r_d, 1 + n_z);
            Vec c0 = T.col(0);
            Mat CL = T.rightCols(n_z);
            q += spec.alpha_p * spec.time_weights(tau) *
                 (c0.dot(wtil * c0) + (wz_inv * (CL.transpose() * wtil * CL)).trace());
        }
        return q;
    };
    for (int a = 0; a < nt; ++a)
        for (int b = 0; b < nt; ++b) {
            Vec ea = Vec::Zero(nt), eb = Vec::Zero(nt);
            ea(a) = 1.0;
            eb(b) = 1.0;
            double ref = 0.25 * (quad(ea + eb) - quad(ea - eb));
            CHECK(dense(a, b) == doctest::Approx(ref).epsilon(1e-9));
        }
}

namespace {

struct TinyCalib {
    DiscrepancyBasis basis;
    PriorSpec prior;
    std::vector<DiscrepancyData> data;
    ParamLayout lay;
    Mat wu_dense;

    explicit TinyCalib(std::uint64_t seed, int n = 8, int r_d = 2, int n_z = 2, int n_tau = 1,
                       int n_data = 1, double alpha_d = 0.01) {
        Vec nodes = Vec::LinSpaced(n_tau, 0.0, std::max(0.4, 0.4 * (n_tau - 1)));
        if (n_tau == 1) nodes(0) = 0.2;
        basis = orthonormal_basis(n, r_d, seed, nodes);
        lay = ParamLayout{r_d, n_z, n_tau};
        Rng rng(seed + 1);
        Mat wroot = random_matrix(n, n, rng, 0.4);
        wu_dense = wroot * wroot.transpose() + Mat::Identity(n, n);
        prior.wu_spatial = wu_dense.sparseView();
        prior.time_weights = delta_time_weights(nodes);
        prior.wz = Mat::Identity(n_z, n_z);
        prior.mz_diag = Vec::Ones(n_z);
        prior.alpha_p = 1.0;
        prior.alpha_d = alpha_d;
        for (int l = 0; l < n_data; ++l) {
            DiscrepancyData d;
            d.z = random_matrix(n_z, 1, rng).col(0);
            d.delta = random_matrix(n, n_tau, rng);
            data.push_back(std::move(d));
        }
    }
};

}  // namespace

TEST_CASE("posterior matches the dense conjugate-Gaussian formula (n_theta = 6)") {
    TinyCalib tc(23);
    DiscrepancyPosterior post = calibrate_posterior(tc.data, tc.basis, tc.prior);
    REQUIRE(post.layout.n_theta() == 6);

    // Dense reference: precision = W_prior + (1/a_d) G' Wu G,
    // mean = precision^-1 (1/a_d) G' Wu vec(delta).
    PriorPrecision wp = prior_precision(tc.prior, tc.basis, tc.lay);
    Mat Wprior = wp.to_dense();
    const int nt = tc.lay.n_theta();
    const int n = static_cast<int>(tc.basis.Vdelta.rows());
    // G maps theta to the stacked predictions at the nodes for each datum.
    Mat G = Mat::Zero(static_cast<int>(tc.data.size()) * n, nt);
    Vec y(static_cast<int>(tc.data.size()) * n);
    Mat Wu_big = Mat::Zero(G.rows(), G.rows());
    for (std::size_t l = 0; l < tc.data.size(); ++l) {
        Vec v(1 + tc.lay.n_z);
        v(0) = 1.0;
        v.tail(tc.lay.n_z) = tc.prior.mz_diag.cwiseProduct(tc.data[l].z);
        for (int a = 0; a < nt; ++a) {
            Vec theta = Vec::Zero(nt);
            theta(a) = 1.0;
            Eigen::Map<const Mat> T(theta.data(), tc.lay.r_d, 1 + tc.lay.n_z);
            G.block(static_cast<int>(l) * n, a, n, 1) = tc.basis.Vdelta * (T * v);
        }
        y.segment(static_cast<int>(l) * n, n) = tc.data[l].delta.col(0);
        Wu_big.block(static_cast<int>(l) * n, static_cast<int>(l) * n, n, n) =
            tc.prior.time_weights(0) * tc.wu_dense;
    }
    Mat prec_ref = Wprior + (1.0 / tc.prior.alpha_d) * G.transpose() * Wu_big * G;
    Vec mean_ref = prec_ref.llt().solve((1.0 / tc.prior.alpha_d) * G.transpose() * Wu_big * y);

    CHECK((post.precision_dense() - prec_ref).cwiseAbs().maxCoeff() <=
          1e-10 * prec_ref.cwiseAbs().maxCoeff());
    CHECK((post.mean - mean_ref).cwiseAbs().maxCoeff() <=
          1e-10 * (1.0 + mean_ref.cwiseAbs().maxCoeff()));
    Mat cov_ref = prec_ref.inverse();
    CHECK((post.covariance_dense() - cov_ref).cwiseAbs().maxCoeff() <=
          1e-10 * cov_ref.cwiseAbs().maxCoeff());

    // Data adds information: posterior precision minus prior precision PSD.
    Eigen::SelfAdjointEigenSolver<Mat> eig(post.precision_dense() - Wprior);
    CHECK(eig.eigenvalues().minCoeff() >= -1e-10);
}

TEST_CASE("posterior with several data pairs and time nodes still matches dense") {
    TinyCalib tc(29, 6, 2, 1, 2, 2, 0.05);
    DiscrepancyPosterior post = calibrate_posterior(tc.data, tc.basis, tc.prior);

    PriorPrecision wp = prior_precision(tc.prior, tc.basis, tc.lay);
    Mat Wprior = wp.to_dense();
    const int nt = tc.lay.n_theta();
    const int n = static_cast<int>(tc.basis.Vdelta.rows());
    const int n_tau = tc.lay.n_tau;
    const int rows_per = n * n_tau;
    Mat G = Mat::Zero(static_cast<int>(tc.data.size()) * rows_per, nt);
    Vec y(G.rows());
    Mat Wu_big = Mat::Zero(G.rows(), G.rows());
    for (std::size_t l = 0; l < tc.data.size(); ++l) {
        Vec v(1 + tc.lay.n_z);
        v(0) = 1.0;
        v.tail(tc.lay.n_z) = tc.prior.mz_diag.cwiseProduct(tc.data[l].z);
        for (int tau = 0; tau < n_tau; ++tau) {
            int row0 = static_cast<int>(l) * rows_per + tau * n;
            for (int a = 0; a < nt; ++a) {
                Vec theta = Vec::Zero(nt);
                theta(a) = 1.0;
                Eigen::Map<const Mat> T(theta.data() + tau * tc.lay.block_size(), tc.lay.r_d,
                                        1 + tc.lay.n_z);
                G.block(row0, a, n, 1) = tc.basis.Vdelta * (T * v);
            }
            y.segment(row0, n) = tc.data[l].delta.col(tau);
            Wu_big.block(row0, row0, n, n) = tc.prior.time_weights(tau) * tc.wu_dense;
        }
    }
    Mat prec_ref = Wprior + (1.0 / tc.prior.alpha_d) * G.transpose() * Wu_big * G;
    Vec mean_ref = prec_ref.llt().solve((1.0 / tc.prior.alpha_d) * G.transpose() * Wu_big * y);
    CHECK((post.precision_dense() - prec_ref).cwiseAbs().maxCoeff() <=
          1e-10 * prec_ref.cwiseAbs().maxCoeff());
    CHECK((post.mean - mean_ref).cwiseAbs().maxCoeff() <=
          1e-10 * (1.0 + mean_ref.cwiseAbs().maxCoeff()));
}

TEST_CASE("huge alpha_d lets the prior dominate: mean goes to zero") {
    TinyCalib tc(31, 8, 2, 2, 3, 1, 1e12);
    DiscrepancyPosterior post = calibrate_posterior(tc.data, tc.basis, tc.prior);
    CHECK(post.mean.cwiseAbs().maxCoeff() <= 1e-9);
}

TEST_CASE("noise-free consistent datum is reproduced in the basis span") {
    // Make the datum live exactly in span(Vdelta) and use a small alpha_d.
    TinyCalib tc(37, 10, 3, 2, 4, 1, 1e-8);
    Rng rng(38);
    Mat coefs = random_matrix(3, 4, rng);
    tc.data[0].delta = tc.basis.Vdelta * coefs;

    DiscrepancyPosterior post = calibrate_posterior(tc.data, tc.basis, tc.prior);
    double worst = 0.0;
    for (int tau = 0; tau < 4; ++tau) {
        Vec pred = delta_eval(post.mean, tc.lay, tc.basis, tc.prior.mz_diag, tc.data[0].z,
                              tc.basis.time_nodes(tau));
        Vec ref = tc.data[0].delta.col(tau);
        worst = std::max(worst, (pred - ref).norm() / ref.norm());
    }
    CHECK(worst <= 0.01);
}

TEST_CASE("posterior samples are deterministic per seed and concentrate as precision grows") {
    TinyCalib tc(41, 8, 2, 2, 3, 1, 0.05);
    DiscrepancyPosterior post = calibrate_posterior(tc.data, tc.basis, tc.prior);
    Rng a(99), b(99);
    Vec sa = post.sample(a), sb = post.sample(b);
    CHECK((sa - sb).cwiseAbs().maxCoeff() == 0.0);

    // Inflate the precision: samples collapse onto the mean.
    DiscrepancyPosterior tight = post;
    tight.chol_K *= 1e6;
    Rng c(99);
    Vec sc = tight.sample(c);
    CHECK((sc - tight.mean).cwiseAbs().maxCoeff() <=
          1e-4 * (1.0 + tight.mean.cwiseAbs().maxCoeff()));
}

namespace {

// Synthetic sensitivity system: J(z, theta) = 1/2 z'Hz - z'(B theta) + const
// is exactly quadratic in z and affine in theta, so the post-optimality
// update must hit the perturbed minimizer exactly.
struct QuadraticSystem {
    Mat H, B;
    Vec z_tilde;
    SensitivitySystem sys;

    QuadraticSystem(int n_z, int n_theta, std::uint64_t seed, double scale = 1.0) {
        Rng rng(seed);
        Mat root = random_matrix(n_z, n_z, rng);
        H = scale * (root * root.transpose() + 0.8 * Mat::Identity(n_z, n_z));
        B = scale * random_matrix(n_z, n_theta, rng);
        z_tilde = random_matrix(n_z, 1, rng).col(0);
        sys.z_tilde = z_tilde;
        sys.H = H;
        sys.eig = retain_leading(H, 0.0);  // retain everything
        Mat Bcopy = B;
        sys.b_apply = [Bcopy](const Vec& th) { return Vec(Bcopy * th); };
    }
};

}  // namespace

TEST_CASE("update_solution is exact on quadratics and invariant to objective scaling") {
    QuadraticSystem qs(20, 7, 43);
    Rng rng(44);
    Vec theta = random_matrix(7, 1, rng).col(0);

    // True perturbed minimizer of J(., theta): H z = H z~ - B theta.
    Vec z_true = qs.H.llt().solve(qs.H * qs.z_tilde - qs.B * theta);
    Vec z_up = update_solution(qs.sys, theta, false);
    CHECK((z_up - z_true).norm() <= 1e-8 * (1.0 + z_true.norm()));

    // Projected onto the full eigenspace it is the same thing.
    Vec z_proj = update_solution(qs.sys, theta, true);
    CHECK((z_proj - z_true).norm() <= 1e-8 * (1.0 + z_true.norm()));

    // Scaling J by 3 scales H and B but not the update.
    QuadraticSystem qs3(20, 7, 43, 3.0);
    Vec z_scaled = update_solution(qs3.sys, theta, false);
    CHECK((z_scaled - z_up).cwiseAbs().maxCoeff() <= 1e-10 * (1.0 + z_up.cwiseAbs().maxCoeff()));

    // theta = 0 leaves z~ unchanged.
    CHECK((update_solution(qs.sys, Vec::Zero(7), false) - qs.z_tilde).cwiseAbs().maxCoeff() ==
          0.0);
}

TEST_CASE("projected update stays in the retained eigenspace") {
    QuadraticSystem qs(15, 5, 47);
    opt::EigenDecomposition full = retain_leading(qs.H, 0.0);
    SensitivitySystem sys = qs.sys;
    sys.eig.eigenvalues = full.eigenvalues.head(4);
    sys.eig.W = full.W.leftCols(4);

    Rng rng(48);
    Vec theta = random_matrix(5, 1, rng).col(0);
    Vec z_up = update_solution(sys, theta, true);
    Vec step = z_up - qs.z_tilde;
    Vec outside = step - sys.eig.W * (sys.eig.W.transpose() * step);
    CHECK(outside.cwiseAbs().maxCoeff() <= 1e-10 * (1.0 + step.cwiseAbs().maxCoeff()));
}

TEST_CASE("non-positive retained eigenvalues are rejected") {
    QuadraticSystem qs(6, 3, 53);
    SensitivitySystem sys = qs.sys;
    sys.eig.eigenvalues(sys.eig.eigenvalues.size() - 1) = -0.1;
    CHECK_THROWS_AS(update_solution(sys, Vec::Ones(3), true), Error);
}

TEST_CASE("retention rule keeps pairs through the first two-decade decay") {
    Mat H = Vec::LinSpaced(6, 0, 5)
                .unaryExpr([](double k) { return std::pow(10.0, -k); })
                .asDiagonal();
    opt::EigenDecomposition eig = retain_leading(H, 1e-2);
    CHECK(eig.r() == 3);  // 1, 1e-1, 1e-2 (the crossing one retained)
    opt::EigenDecomposition all = retain_leading(H, 1e-9);
    CHECK(all.r() == 6);
}

TEST_CASE("posterior control samples: determinism and Monte-Carlo consistency") {
    TinyCalib tc(59, 8, 2, 3, 2, 1, 0.05);
    DiscrepancyPosterior post = calibrate_posterior(tc.data, tc.basis, tc.prior);
    QuadraticSystem qs(3, post.layout.n_theta(), 61);

    auto s1 = posterior_control_samples(post, qs.sys, 16, 7, false);
    auto s2 = posterior_control_samples(post, qs.sys, 16, 7, false);
    for (int i = 0; i < 16; ++i) CHECK((s1[i] - s2[i]).cwiseAbs().maxCoeff() == 0.0);

    // Mean of many samples approaches the mean update (linear map of theta).
    const int n_mc = 10000;
    auto samples = posterior_control_samples(post, qs.sys, n_mc, 11, false);
    Vec mean_sample = Vec::Zero(3);
    for (const auto& s : samples) mean_sample += s;
    mean_sample /= n_mc;
    Vec mean_update = update_solution(qs.sys, post.mean, false);

    // Componentwise 3-standard-error band.
    Mat cov = Mat::Zero(3, 3);
    for (const auto& s : samples) cov += (s - mean_sample) * (s - mean_sample).transpose();
    cov /= (n_mc - 1);
    for (int i = 0; i < 3; ++i) {
        double se = std::sqrt(cov(i, i) / n_mc);
        CHECK(std::abs(mean_sample(i) - mean_update(i)) <= 3.0 * se + 1e-12);
    }
}

TEST_CASE("confidence ellipse geometry on trivial covariances") {
    Ellipse e = confidence_ellipse(Mat2::Identity(), Vec2::Zero(), 0.95);
    CHECK(e.semi_major == doctest::Approx(std::sqrt(5.991464547107982)).epsilon(1e-12));
    CHECK(e.semi_minor == doctest::Approx(e.semi_major).epsilon(1e-12));

    Mat2 cov = Mat2::Zero();
    cov(0, 0) = 4.0;
    cov(1, 1) = 1.0;
    Ellipse e2 = confidence_ellipse(cov, Vec2::Zero(), 0.95);
    CHECK(e2.semi_major / e2.semi_minor == doctest::Approx(2.0).epsilon(1e-12));

    Mat2 degen = Mat2::Zero();
    degen(0, 0) = 1.0;
    Ellipse e3 = confidence_ellipse(degen, Vec2::Zero(), 0.95);
    CHECK(e3.degenerate);
    CHECK(e3.semi_minor == 0.0);
}

TEST_CASE("ellipse coverage of standard-normal samples lands near the level") {
    Rng rng(67);
    std::vector<Vec2> samples;
    samples.reserve(100000);
    for (int i = 0; i < 100000; ++i) samples.emplace_back(rng.normal(), rng.normal());
    Ellipse e = confidence_ellipse_from_samples(samples, 0.95);
    int inside = 0;
    for (const auto& s : samples) inside += ellipse_contains(e, s) ? 1 : 0;
    double coverage = inside / 100000.0;
    CHECK(coverage >= 0.945);
    CHECK(coverage <= 0.955);
}

TEST_CASE("argmax-level invariance via the sensitivity system on random data") {
    // H and B scale together under objective scaling; H^-1 B theta invariant.
    QuadraticSystem a(10, 4, 71, 1.0), b(10, 4, 71, 7.3);
    Rng rng(72);
    Vec theta = random_matrix(4, 1, rng).col(0);
    Vec ua = update_solution(a.sys, theta, true);
    Vec ub = update_solution(b.sys, theta, true);
    CHECK((ua - ub).cwiseAbs().maxCoeff() <= 1e-10 * (1.0 + ua.cwiseAbs().maxCoeff()));
}
