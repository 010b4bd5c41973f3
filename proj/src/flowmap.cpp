#include "romopt/flowmap.hpp"

#include "romopt/container.hpp"
#include "romopt/rng.hpp"

#include <cmath>
#include <limits>

namespace romopt::fml {

namespace {

// Exact GELU x * Phi(x) and its derivative Phi(x) + x * phi(x).
inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }
inline double gelu_deriv(double x) {
    double Phi = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
    double phi = std::exp(-0.5 * x * x) * 0.3989422804014326779399460599343819;
    return Phi + x * phi;
}

}  // namespace

std::vector<int> MlpParams::widths() const {
    std::vector<int> w;
    w.push_back(input_dim());
    for (const auto& m : W) w.push_back(static_cast<int>(m.rows()));
    return w;
}

MlpParams MlpParams::init(const std::vector<int>& widths, std::uint64_t seed) {
    ROMOPT_REQUIRE(widths.size() >= 2, "network needs at least one layer");
    Rng rng(seed);
    MlpParams p;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        int fan_in = widths[l], fan_out = widths[l + 1];
        double s = std::sqrt(6.0 / (fan_in + fan_out));
        Mat w(fan_out, fan_in);
        for (int j = 0; j < fan_in; ++j)
            for (int i = 0; i < fan_out; ++i) w(i, j) = rng.uniform(-s, s);
        p.W.push_back(std::move(w));
        p.b.push_back(Vec::Zero(fan_out));
    }
    return p;
}

MlpParams MlpParams::zeros_like(const MlpParams& other) {
    MlpParams p;
    for (const auto& w : other.W) p.W.push_back(Mat::Zero(w.rows(), w.cols()));
    for (const auto& b : other.b) p.b.push_back(Vec::Zero(b.size()));
    return p;
}

Vec MlpParams::flatten() const {
    Eigen::Index total = 0;
    for (const auto& w : W) total += w.size();
    for (const auto& v : b) total += v.size();
    Vec out(total);
    Eigen::Index at = 0;
    for (const auto& w : W) {
        out.segment(at, w.size()) = Eigen::Map<const Vec>(w.data(), w.size());
        at += w.size();
    }
    for (const auto& v : b) {
        out.segment(at, v.size()) = v;
        at += v.size();
    }
    return out;
}

void MlpParams::unflatten(const Vec& v) {
    Eigen::Index at = 0;
    for (auto& w : W) {
        w = Eigen::Map<const Mat>(v.data() + at, w.rows(), w.cols());
        at += w.size();
    }
    for (auto& bb : b) {
        bb = v.segment(at, bb.size());
        at += bb.size();
    }
    ROMOPT_REQUIRE(at == v.size(), "flat parameter size mismatch");
}

void MlpParams::axpy(double a, const MlpParams& other) {
    for (std::size_t l = 0; l < W.size(); ++l) {
        W[l] += a * other.W[l];
        b[l] += a * other.b[l];
    }
}

Vec mlp_forward(const MlpParams& p, const Vec& u) {
    ROMOPT_REQUIRE(u.size() == p.input_dim(), "input width mismatch");
    Vec h = u;
    const int L = p.n_layers();
    for (int l = 0; l < L; ++l) {
        Vec a = p.W[l] * h + p.b[l];
        if (l + 1 < L)
            h = a.unaryExpr([](double x) { return gelu(x); });
        else
            h = a;
    }
    return h;
}

namespace {

struct ForwardTrace {
    std::vector<Vec> inputs;   // per layer input h_{l}
    std::vector<Vec> preacts;  // per layer a_l = W h + b
};

Vec mlp_forward_trace(const MlpParams& p, const Vec& u, ForwardTrace& tr) {
    const int L = p.n_layers();
    tr.inputs.resize(L);
    tr.preacts.resize(L);
    Vec h = u;
    for (int l = 0; l < L; ++l) {
        tr.inputs[l] = h;
        Vec a = p.W[l] * h + p.b[l];
        tr.preacts[l] = a;
        if (l + 1 < L)
            h = a.unaryExpr([](double x) { return gelu(x); });
        else
            h = a;
    }
    return h;
}

Vec mlp_backward_trace(const MlpParams& p, const ForwardTrace& tr, const Vec& out_bar,
                       MlpParams* grad) {
    const int L = p.n_layers();
    Vec a_bar = out_bar;
    for (int l = L - 1; l >= 0; --l) {
        if (l != L - 1) {
            // a_bar currently holds h_bar of layer l's activation output.
            a_bar = a_bar.cwiseProduct(
                tr.preacts[l].unaryExpr([](double x) { return gelu_deriv(x); }));
        }
        if (grad) {
            grad->W[l] += a_bar * tr.inputs[l].transpose();
            grad->b[l] += a_bar;
        }
        a_bar = p.W[l].transpose() * a_bar;
    }
    return a_bar;  // d loss / d input
}

}  // namespace

Vec mlp_backward(const MlpParams& p, const Vec& u, const Vec& out_bar, MlpParams& grad) {
    ForwardTrace tr;
    mlp_forward_trace(p, u, tr);
    return mlp_backward_trace(p, tr, out_bar, &grad);
}

Vec mlp_input_vjp(const MlpParams& p, const Vec& u, const Vec& out_bar) {
    ForwardTrace tr;
    mlp_forward_trace(p, u, tr);
    return mlp_backward_trace(p, tr, out_bar, nullptr);
}

double recurrent_loss(const MlpParams& p, const std::vector<Mat>& trajectories, int P) {
    ROMOPT_REQUIRE(P >= 1, "P must be >= 1");
    double loss = 0.0;
    for (const auto& traj : trajectories) {
        const int n_tau = static_cast<int>(traj.cols()) - 1;
        for (int k = 0; k <= n_tau; ++k) {
            Vec u = traj.col(k);
            for (int step = 1; step <= P && k + step <= n_tau; ++step) {
                u += mlp_forward(p, u);
                loss += (u - traj.col(k + step)).squaredNorm();
            }
        }
    }
    return loss;
}

double recurrent_loss_grad(const MlpParams& p, const std::vector<Mat>& trajectories, int P,
                           MlpParams& grad) {
    ROMOPT_REQUIRE(P >= 1, "P must be >= 1");
    double loss = 0.0;
    for (const auto& traj : trajectories) {
        const int n_tau = static_cast<int>(traj.cols()) - 1;
        for (int k = 0; k <= n_tau; ++k) {
            const int len = std::min(P, n_tau - k);
            if (len < 1) continue;
            // Forward through the segment, keeping traces for the reverse pass.
            std::vector<ForwardTrace> traces(len);
            std::vector<Vec> states(len + 1);
            states[0] = traj.col(k);
            std::vector<Vec> resid(len);
            for (int s = 0; s < len; ++s) {
                Vec f = mlp_forward_trace(p, states[s], traces[s]);
                states[s + 1] = states[s] + f;
                resid[s] = states[s + 1] - traj.col(k + s + 1);
                loss += resid[s].squaredNorm();
            }
            // Reverse: state adjoint accumulates 2*resid at each depth.
            Vec sbar = Vec::Zero(states[0].size());
            for (int s = len - 1; s >= 0; --s) {
                sbar += 2.0 * resid[s];
                // state_{s+1} = state_s + f(state_s)
                Vec fbar = sbar;
                Vec in_bar = mlp_backward_trace(p, traces[s], fbar, &grad);
                sbar += in_bar;
            }
        }
    }
    return loss;
}

Mat rollout(const MlpParams& p, const Vec& u0, int n_steps) {
    Mat out(u0.size(), n_steps + 1);
    out.col(0) = u0;
    Vec u = u0;
    for (int s = 0; s < n_steps; ++s) {
        u += mlp_forward(p, u);
        ROMOPT_REQUIRE(u.allFinite(), "rollout state non-finite at step " + std::to_string(s + 1));
        out.col(s + 1) = u;
    }
    return out;
}

double one_step_error(const MlpParams& p, const std::vector<Mat>& trajectories) {
    double num = 0.0, den = 0.0;
    for (const auto& traj : trajectories) {
        for (int k = 0; k + 1 < traj.cols(); ++k) {
            Vec pred = traj.col(k) + mlp_forward(p, traj.col(k));
            num += (pred - traj.col(k + 1)).squaredNorm();
            den += traj.col(k + 1).squaredNorm();
        }
    }
    ROMOPT_REQUIRE(den > 0, "empty trajectory set");
    return std::sqrt(num / den);
}

MlpParams train_flowmap(const FlowmapDataset& data, const TrainSchedule& schedule,
                        const std::vector<int>& hidden_widths, int state_dim) {
    ROMOPT_REQUIRE(!data.train.empty(), "empty training split");
    const int n_tau = static_cast<int>(data.train[0].cols()) - 1;
    ROMOPT_REQUIRE(schedule.p_steps > 1 && schedule.p_steps < n_tau,
                   "recurrent horizon must satisfy 1 < P < n_tau");

    std::vector<int> widths;
    widths.push_back(state_dim);
    for (int w : hidden_widths) widths.push_back(w);
    widths.push_back(state_dim);
    MlpParams params = MlpParams::init(widths, schedule.seed);

    MlpParams m = MlpParams::zeros_like(params);
    MlpParams v = MlpParams::zeros_like(params);
    const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

    MlpParams best = params;
    double best_val = std::numeric_limits<double>::infinity();
    const double decay = (schedule.epochs > 1)
                             ? std::pow(schedule.lr_end / schedule.lr_start,
                                        1.0 / static_cast<double>(schedule.epochs - 1))
                             : 1.0;

    double lr = schedule.lr_start;
    for (int epoch = 0; epoch < schedule.epochs; ++epoch) {
        MlpParams grad = MlpParams::zeros_like(params);
        double loss = recurrent_loss_grad(params, data.train, schedule.p_steps, grad);
        if (!std::isfinite(loss)) break;  // diverged: keep last good parameters

        double bc1 = 1.0 - std::pow(beta1, epoch + 1);
        double bc2 = 1.0 - std::pow(beta2, epoch + 1);
        for (std::size_t l = 0; l < params.W.size(); ++l) {
            m.W[l] = beta1 * m.W[l] + (1.0 - beta1) * grad.W[l];
            v.W[l] = beta2 * v.W[l] + (1.0 - beta2) * grad.W[l].cwiseProduct(grad.W[l]);
            params.W[l] -=
                lr * (m.W[l] / bc1).cwiseQuotient(((v.W[l] / bc2).cwiseSqrt().array() + eps).matrix());
            m.b[l] = beta1 * m.b[l] + (1.0 - beta1) * grad.b[l];
            v.b[l] = beta2 * v.b[l] + (1.0 - beta2) * grad.b[l].cwiseProduct(grad.b[l]);
            params.b[l] -=
                lr * (m.b[l] / bc1).cwiseQuotient(((v.b[l] / bc2).cwiseSqrt().array() + eps).matrix());
        }
        lr *= decay;

        const auto& val_set = data.val.empty() ? data.train : data.val;
        double val = recurrent_loss(params, val_set, schedule.p_steps);
        if (std::isfinite(val) && val < best_val) {
            best_val = val;
            best = params;
        }
    }
    return best;
}

FireRomco FireRomco::make(const MlpParams& net, const Mat& V, const fire::Grid2D& grid,
                          const fire::ObservationSet& obs) {
    FireRomco p;
    p.net = &net;
    p.V = &V;
    p.grid = &grid;
    p.VtY = V.transpose() * obs.Y;
    p.y_norm2.resize(obs.Y.cols());
    for (int j = 0; j < obs.Y.cols(); ++j) p.y_norm2(j) = obs.Y.col(j).squaredNorm();
    for (int j = 0; j < obs.times_h.size(); ++j)
        p.obs_steps.push_back(static_cast<int>(std::lround(obs.times_h(j))));
    return p;
}

namespace {

Vec fire_u0(const FireRomco& prob, const Vec2& z) {
    fire::IgnitionPoint pt{z, prob.shift_c};
    // Reuse the formula without the domain check: the optimizer may probe
    // slightly outside; domain membership is enforced on the final result.
    Vec u(prob.grid->n_nodes());
    for (int k = 0; k < prob.grid->n_nodes(); ++k)
        u(k) = (prob.grid->coord(k) - pt.z).norm() + pt.shift;
    return u;
}

}  // namespace

double fire_romco_objective(const FireRomco& prob, const Vec2& z) {
    Vec u0 = prob.V->transpose() * fire_u0(prob, z);
    const int last = prob.obs_steps.back();
    Mat states = rollout(*prob.net, u0, last);
    double F = 0.0;
    for (std::size_t j = 0; j < prob.obs_steps.size(); ++j) {
        Vec uh = states.col(prob.obs_steps[j]);
        if (prob.delta) uh += prob.delta->Cvd.transpose() *
                              (prob.delta->c0[j] + prob.delta->CL[j] * Vec(z));
        // || V uh + (delta residual) - y ||^2 with V orthonormal splits into
        // the reduced misfit plus the data energy outside the basis.
        Vec d = uh - prob.VtY.col(j);
        double off_basis = prob.y_norm2(j) - prob.VtY.col(j).squaredNorm();
        F += d.squaredNorm() + off_basis;
        if (prob.delta) {
            // Components of delta orthogonal to span(V): g'g - ||Cvd' g||^2
            // plus cross terms with the out-of-basis data part.
            Vec g = prob.delta->c0[j] + prob.delta->CL[j] * Vec(z);
            double g_in = (prob.delta->Cvd.transpose() * g).squaredNorm();
            F += g.squaredNorm() - g_in;
            F -= 2.0 * g.dot(prob.delta->dY.col(j) - prob.delta->Cvd * prob.VtY.col(j));
        }
    }
    return F;
}

Vec2 fire_romco_gradient(const FireRomco& prob, const Vec2& z) {
    Vec raw_u0 = fire_u0(prob, z);
    Vec u0 = prob.V->transpose() * raw_u0;
    const int last = prob.obs_steps.back();
    Mat states = rollout(*prob.net, u0, last);

    // Injected misfit adjoints at observation steps.
    std::vector<Vec> inject(last + 1, Vec());
    Vec2 g_direct = Vec2::Zero();
    for (std::size_t j = 0; j < prob.obs_steps.size(); ++j) {
        int s = prob.obs_steps[j];
        Vec uh = states.col(s);
        Vec inj;
        if (prob.delta) {
            Vec g = prob.delta->c0[j] + prob.delta->CL[j] * Vec(z);
            inj = 2.0 * (uh - prob.VtY.col(j) + prob.delta->Cvd.transpose() * g);
            // Direct z-channel: d/dz of the delta-dependent terms.
            Vec dgl = prob.delta->Cvd * (uh - prob.VtY.col(j)) + g -
                      (prob.delta->dY.col(j) - prob.delta->Cvd * prob.VtY.col(j));
            g_direct += 2.0 * prob.delta->CL[j].transpose() * dgl;
        } else {
            inj = 2.0 * (uh - prob.VtY.col(j));
        }
        inject[s] = inj;
    }

    // Reverse through the rollout: state_{s+1} = state_s + f(state_s).
    Vec sbar = Vec::Zero(u0.size());
    for (int s = last; s >= 1; --s) {
        if (inject[s].size()) sbar += inject[s];
        sbar += mlp_input_vjp(*prob.net, states.col(s - 1), sbar);
    }
    if (inject[0].size()) sbar += inject[0];

    // Through u0 = V' init(z): rows of d init/dz are (z - x_i)'/||x_i - z||.
    Vec w = (*prob.V) * sbar;
    Vec2 g = g_direct;
    for (int k = 0; k < prob.grid->n_nodes(); ++k) {
        Vec2 d = Vec2(z) - prob.grid->coord(k);
        double r = d.norm();
        if (r > 1e-12) g += w(k) * d / r;
    }
    return g;
}

IgnitionResult ignition_romco(const FireRomco& prob, const Vec2& z0,
                              const opt::TrustRegionOptions& opts) {
    opt::SmoothProblem sp;
    sp.dimension = 2;
    sp.objective = [&](const Vec& z) { return fire_romco_objective(prob, Vec2(z(0), z(1))); };
    sp.gradient = [&](const Vec& z) {
        Vec2 g = fire_romco_gradient(prob, Vec2(z(0), z(1)));
        return Vec(g);
    };
    opt::TrustRegionOptions o = opts;
    o.initial_radius = std::max(o.initial_radius, 60.0);  // meters scale
    o.max_radius = 1e5;
    opt::MinimizeResult res = opt::quasi_newton_minimize(sp, Vec(z0), o);

    IgnitionResult out;
    out.z = Vec2(res.z(0), res.z(1));
    out.misfit = res.objective;
    out.converged = res.converged;
    const double lx = (prob.grid->nx - 1) * prob.grid->hx;
    const double ly = (prob.grid->ny - 1) * prob.grid->hy;
    out.in_domain = out.z(0) >= 0 && out.z(0) <= lx && out.z(1) >= 0 && out.z(1) <= ly;
    return out;
}

Vec2 ignition_initial_guess(const fire::ObservationSet& obs, const fire::Grid2D& grid) {
    Eigen::Index imin;
    obs.Y.col(0).minCoeff(&imin);
    return grid.coord(static_cast<int>(imin));
}

void save_mlp(const std::string& path, const MlpParams& p) {
    BlockFile b;
    for (int l = 0; l < p.n_layers(); ++l) {
        b.add("W" + std::to_string(l), p.W[l]);
        b.add("b" + std::to_string(l), p.b[l]);
    }
    Vec nl(1);
    nl << static_cast<double>(p.n_layers());
    b.add("n_layers", nl);
    write_blocks(path, b);
}

MlpParams load_mlp(const std::string& path) {
    BlockFile b = read_blocks(path);
    int L = static_cast<int>(b.get("n_layers")(0, 0));
    MlpParams p;
    for (int l = 0; l < L; ++l) {
        p.W.push_back(b.get("W" + std::to_string(l)));
        p.b.push_back(Vec(b.get("b" + std::to_string(l)).col(0)));
    }
    return p;
}

}  // namespace romopt::fml
