#include "romopt/optimizer.hpp"

#include "romopt/rng.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <limits>
#include <sstream>

namespace romopt::opt {

void gradient_self_test(const SmoothProblem& p, const Vec& z0, int n_probes, double tol,
                        std::uint64_t seed) {
    ROMOPT_REQUIRE(p.objective && p.gradient, "problem needs objective and gradient");
    Rng rng(seed);
    const double eps = 1e-5;
    for (int k = 0; k < n_probes; ++k) {
        Vec z = z0;
        for (Eigen::Index i = 0; i < z.size(); ++i) z(i) += 0.05 * (rng.uniform() - 0.5);
        Vec d(z.size());
        for (Eigen::Index i = 0; i < d.size(); ++i) d(i) = rng.uniform() - 0.5;
        d.normalize();
        double fd = (p.objective(z + eps * d) - p.objective(z - eps * d)) / (2.0 * eps);
        double gd = p.gradient(z).dot(d);
        double denom = std::max({std::abs(fd), std::abs(gd), 1e-12});
        if (std::abs(fd - gd) > tol * denom + 1e-12) {
            std::ostringstream ss;
            ss << "gradient self-test failed on probe " << k << ": fd=" << fd
               << " analytic=" << gd;
            throw Error(ss.str());
        }
    }
}

namespace {

struct CgResult {
    Vec p;
    double model_decrease = 0.0;  // -(g'p + 1/2 p'Hp) >= 0
    int iters = 0;
};

// Steihaug truncated CG for min g'p + 1/2 p'Hp subject to ||p|| <= radius.
CgResult steihaug_cg(const std::function<Vec(const Vec&)>& hvp, const Vec& g, double radius,
                     int max_iter, double gtol) {
    const auto n = g.size();
    Vec p = Vec::Zero(n);
    Vec rvec = g;
    Vec d = -g;
    double r2 = rvec.squaredNorm();
    // Superlinear forcing, but never looser than the outer tolerance so a
    // single Newton step suffices on (near-)quadratic objectives.
    const double gnorm = std::sqrt(r2);
    const double tol = std::min(std::min(0.5, std::sqrt(gnorm)) * gnorm, 0.5 * gtol);

    auto to_boundary = [&](const Vec& base, const Vec& dir) {
        // Positive tau with ||base + tau dir|| = radius.
        double a = dir.squaredNorm();
        double b = 2.0 * base.dot(dir);
        double c = base.squaredNorm() - radius * radius;
        double disc = std::sqrt(std::max(b * b - 4.0 * a * c, 0.0));
        return (-b + disc) / (2.0 * a);
    };

    CgResult out;
    for (int it = 0; it < max_iter; ++it) {
        Vec Hd = hvp(d);
        double dHd = d.dot(Hd);
        if (dHd <= 0.0) {
            double tau = to_boundary(p, d);
            p += tau * d;
            out.iters = it + 1;
            break;
        }
        double alpha = r2 / dHd;
        if ((p + alpha * d).norm() >= radius) {
            double tau = to_boundary(p, d);
            p += tau * d;
            out.iters = it + 1;
            break;
        }
        p += alpha * d;
        rvec += alpha * Hd;
        double r2_new = rvec.squaredNorm();
        out.iters = it + 1;
        if (std::sqrt(r2_new) <= tol) break;
        d = -rvec + (r2_new / r2) * d;
        r2 = r2_new;
    }
    // Model decrease from the definition; recomputing keeps it exact even on
    // boundary exits.
    Vec Hp = hvp(p);
    out.model_decrease = -(g.dot(p) + 0.5 * p.dot(Hp));
    out.p = p;
    return out;
}

MinimizeResult trust_region_loop(const SmoothProblem& p, const Vec& z0,
                                 const TrustRegionOptions& opts,
                                 const std::function<Vec(const Vec&, const Vec&)>& hvp_at,
                                 const std::function<void(const Vec&, const Vec&)>& on_accept) {
    MinimizeResult res;
    res.z = z0;
    Vec g = p.gradient(res.z);
    res.objective = p.objective(res.z);
    res.grad_norm = g.norm();
    double radius = opts.initial_radius;

    res.log.push_back({0, res.objective, res.grad_norm, radius, 0});
    if (res.grad_norm <= opts.gtol) {
        res.converged = true;
        res.message = "gtol satisfied at initial point";
        return res;
    }

    for (int it = 1; it <= opts.max_iter; ++it) {
        auto hvp = [&](const Vec& v) { return hvp_at(res.z, v); };
        CgResult cg = steihaug_cg(hvp, g, radius, opts.max_cg_iter, opts.gtol);
        if (cg.p.norm() == 0.0 || cg.model_decrease <= 0.0) {
            radius *= 0.25;
            res.log.push_back({it, res.objective, res.grad_norm, radius, cg.iters});
            if (radius < 1e-14 * (1.0 + res.z.norm())) {
                res.message = "trust region collapsed";
                res.converged = res.grad_norm <= opts.gtol;
                return res;
            }
            continue;
        }

        Vec z_try = res.z + cg.p;
        double f_try = p.objective(z_try);
        double rho = (res.objective - f_try) / cg.model_decrease;

        // Once the predicted decrease sinks under the round-off floor of f,
        // the ratio is noise; accept any non-increasing step at fixed radius
        // so the gradient test can finish the job.
        const double f_noise =
            8.0 * std::numeric_limits<double>::epsilon() * (1.0 + std::abs(res.objective));
        const bool noise_regime = cg.model_decrease <= f_noise;

        if (!noise_regime) {
            if (rho < 0.25) {
                radius *= 0.25;
            } else if (rho > 0.75 && cg.p.norm() >= 0.99 * radius) {
                radius = std::min(2.0 * radius, opts.max_radius);
            }
        }

        const bool accepted = (rho > 1e-4 && f_try < res.objective) ||
                              (noise_regime && f_try <= res.objective + f_noise);
        if (accepted) {
            Vec g_new = p.gradient(z_try);
            if (on_accept) on_accept(z_try - res.z, g_new - g);
            res.z = z_try;
            res.objective = std::min(f_try, res.objective);
            g = g_new;
            res.grad_norm = g.norm();
        } else if (noise_regime) {
            radius *= 0.25;
        }
        res.iterations = it;
        res.log.push_back({it, res.objective, res.grad_norm, radius, cg.iters});

        if (res.grad_norm <= opts.gtol) {
            res.converged = true;
            res.message = "gradient tolerance reached";
            return res;
        }
        if (radius < 1e-14 * (1.0 + res.z.norm())) {
            res.message = "trust region collapsed";
            return res;
        }
    }
    res.message = "iteration budget exhausted";
    return res;
}

}  // namespace

MinimizeResult trust_region_newton_cg(const SmoothProblem& p, const Vec& z0,
                                      const TrustRegionOptions& opts) {
    ROMOPT_REQUIRE(p.hvp, "Newton-CG needs a Hessian-vector oracle");
    if (opts.self_test) gradient_self_test(p, z0);
    return trust_region_loop(
        p, z0, opts, [&](const Vec& z, const Vec& v) { return p.hvp(z, v); }, nullptr);
}

void bfgs_update(Mat& B, const Vec& s, const Vec& y) {
    double sty = s.dot(y);
    if (sty <= 1e-12 * std::max(1.0, s.norm() * y.norm())) return;
    Vec Bs = B * s;
    double sBs = s.dot(Bs);
    if (sBs <= 0.0) return;
    B -= (Bs * Bs.transpose()) / sBs;
    B += (y * y.transpose()) / sty;
}

MinimizeResult quasi_newton_minimize(const SmoothProblem& p, const Vec& z0,
                                     const TrustRegionOptions& opts) {
    if (opts.self_test) gradient_self_test(p, z0);
    Mat B = Mat::Identity(z0.size(), z0.size());
    return trust_region_loop(
        p, z0, opts, [&](const Vec&, const Vec& v) { return Vec(B * v); },
        [&](const Vec& s, const Vec& y) { bfgs_update(B, s, y); });
}

EigenDecomposition leading_eigenpairs(const HvpOracle& hvp, int n, int r) {
    ROMOPT_REQUIRE(r >= 1 && r <= n, "need 1 <= r <= n");
    const long budget = 4L * r * n;
    long calls = 0;
    Rng rng(0x9e3779b9ULL);

    Mat V(n, 0);
    std::vector<double> alpha, beta;  // tridiagonal entries

    auto reorthogonalize = [&](Vec& w) {
        for (int pass = 0; pass < 2; ++pass)
            if (V.cols() > 0) w -= V * (V.transpose() * w);
    };

    auto fresh_vector = [&]() {
        Vec v(n);
        for (int i = 0; i < n; ++i) v(i) = rng.normal();
        reorthogonalize(v);
        double nv = v.norm();
        ROMOPT_REQUIRE(nv > 0, "degenerate start vector");
        return Vec(v / nv);
    };

    Vec v = fresh_vector();
    double beta_prev = 0.0;

    while (true) {
        const int m = static_cast<int>(V.cols());
        if (m == n) break;
        V.conservativeResize(n, m + 1);
        V.col(m) = v;

        if (calls >= budget)
            throw Error("Lanczos: oracle budget (" + std::to_string(budget) +
                        " calls) exhausted without convergence");
        Vec w = hvp(v);
        ++calls;
        double a = v.dot(w);
        alpha.push_back(a);
        w -= a * v;
        if (m > 0) w -= beta_prev * V.col(m - 1);
        reorthogonalize(w);
        double b = w.norm();

        // Convergence check once enough Ritz pairs exist.
        const int mm = m + 1;
        if (mm >= r) {
            Eigen::Map<const Vec> ad(alpha.data(), mm);
            Vec bd(std::max(mm - 1, 0));
            for (int i = 0; i + 1 < mm; ++i) bd(i) = beta[i];
            Eigen::SelfAdjointEigenSolver<Mat> teig;
            teig.computeFromTridiagonal(ad, bd);
            ROMOPT_REQUIRE(teig.info() == Eigen::Success, "tridiagonal eig failed");
            // Ritz values ascending; want the top r residuals b*|last row|.
            bool done = true;
            double lam1 = std::abs(teig.eigenvalues()(mm - 1));
            for (int k = 0; k < r; ++k) {
                double resid = b * std::abs(teig.eigenvectors()(mm - 1, mm - 1 - k));
                if (resid > 1e-10 * std::max(lam1, 1e-300)) {
                    done = false;
                    break;
                }
            }
            if (done || mm == n) {
                EigenDecomposition out;
                out.eigenvalues.resize(r);
                out.W.resize(n, r);
                for (int k = 0; k < r; ++k) {
                    out.eigenvalues(k) = teig.eigenvalues()(mm - 1 - k);
                    out.W.col(k) = V * teig.eigenvectors().col(mm - 1 - k);
                }
                // Canonical sign and a final orthonormality polish.
                for (int k = 0; k < r; ++k) {
                    for (int j = 0; j < k; ++j)
                        out.W.col(k) -= out.W.col(j).dot(out.W.col(k)) * out.W.col(j);
                    out.W.col(k).normalize();
                    Eigen::Index imax;
                    out.W.col(k).cwiseAbs().maxCoeff(&imax);
                    if (out.W(imax, k) < 0) out.W.col(k) = -out.W.col(k);
                }
                return out;
            }
        }

        if (b < 1e-13 * std::max(1.0, std::abs(a))) {
            // Invariant subspace hit; restart with a fresh orthogonal vector.
            beta.push_back(0.0);
            v = fresh_vector();
            beta_prev = 0.0;
        } else {
            beta.push_back(b);
            v = w / b;
            beta_prev = b;
        }
    }
    throw Error("Lanczos failed to converge");
}

}  // namespace romopt::opt
