#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "romopt/flowmap.hpp"
#include "romopt/rng.hpp"
#include "romopt/rom_opinf.hpp"

#include <cmath>

using namespace romopt;
using namespace romopt::fml;

namespace {

Mat random_matrix(int rows, int cols, Rng& rng, double s = 1.0) {
    Mat m(rows, cols);
    for (int j = 0; j < cols; ++j)
        for (int i = 0; i < rows; ++i) m(i, j) = s * (rng.uniform() - 0.5);
    return m;
}

// Single affine layer implementing f(u) = A u exactly (identity output
// activation, no hidden layers).
MlpParams linear_net(const Mat& A) {
    MlpParams p;
    p.W.push_back(A);
    p.b.push_back(Vec::Zero(A.rows()));
    return p;
}

}  // namespace

TEST_CASE("zero network maps everything to zero; a single layer is the matrix") {
    MlpParams p = MlpParams::init({3, 8, 8, 3}, 5);
    for (auto& w : p.W) w.setZero();
    for (auto& b : p.b) b.setZero();
    Rng rng(6);
    Vec u = random_matrix(3, 1, rng).col(0);
    CHECK(mlp_forward(p, u).cwiseAbs().maxCoeff() == 0.0);

    Mat A = random_matrix(4, 3, rng);
    MlpParams lin = linear_net(A);
    CHECK((mlp_forward(lin, u) - A * u).cwiseAbs().maxCoeff() <= 1e-14);
}

TEST_CASE("parameter gradients of a scalar head match finite differences") {
    MlpParams p = MlpParams::init({4, 10, 10, 4}, 7);
    Rng rng(8);
    Vec u = random_matrix(4, 1, rng).col(0);
    Vec w_head = random_matrix(4, 1, rng).col(0);

    // loss = w' mlp(u); gradients via one reverse pass.
    MlpParams grad = MlpParams::zeros_like(p);
    mlp_backward(p, u, w_head, grad);
    Vec gflat = grad.flatten();
    Vec pflat = p.flatten();

    const double eps = 1e-6;
    Rng pick(9);
    for (int trial = 0; trial < 20; ++trial) {
        int idx = static_cast<int>(pick.uniform() * pflat.size());
        Vec pp = pflat, pm = pflat;
        pp(idx) += eps;
        pm(idx) -= eps;
        MlpParams a = p, b = p;
        a.unflatten(pp);
        b.unflatten(pm);
        double fd = (w_head.dot(mlp_forward(a, u)) - w_head.dot(mlp_forward(b, u))) / (2 * eps);
        CHECK(std::abs(fd - gflat(idx)) <= 1e-5 * std::max({std::abs(fd), std::abs(gflat(idx)), 1e-8}));
    }

    // Input gradient channel against finite differences too.
    Vec gin = mlp_input_vjp(p, u, w_head);
    for (int i = 0; i < 4; ++i) {
        Vec up = u, um = u;
        up(i) += eps;
        um(i) -= eps;
        double fd = (w_head.dot(mlp_forward(p, up)) - w_head.dot(mlp_forward(p, um))) / (2 * eps);
        CHECK(std::abs(fd - gin(i)) <= 1e-5 * std::max({std::abs(fd), 1e-8}));
    }
}

TEST_CASE("rollout with a zero network stays constant; zero steps returns u0") {
    MlpParams p = MlpParams::init({3, 6, 3}, 11);
    for (auto& w : p.W) w.setZero();
    Rng rng(12);
    Vec u0 = random_matrix(3, 1, rng).col(0);
    Mat traj = rollout(p, u0, 5);
    for (int s = 0; s <= 5; ++s) CHECK((traj.col(s) - u0).cwiseAbs().maxCoeff() == 0.0);
    Mat none = rollout(p, u0, 0);
    CHECK(none.cols() == 1);
}

TEST_CASE("recurrent loss vanishes on data generated by the network itself") {
    Rng rng(13);
    Mat A = random_matrix(3, 3, rng, 0.2);
    MlpParams p = linear_net(A);
    const int n_tau = 6;
    Mat traj(3, n_tau + 1);
    traj.col(0) = random_matrix(3, 1, rng).col(0);
    for (int k = 0; k < n_tau; ++k)
        traj.col(k + 1) = traj.col(k) + mlp_forward(p, traj.col(k));
    CHECK(recurrent_loss(p, {traj}, 3) <= 1e-22);
}

TEST_CASE("P = 1 reduces to the sum of independent one-step losses") {
    Rng rng(17);
    MlpParams p = MlpParams::init({3, 8, 3}, 18);
    Mat traj = random_matrix(3, 7, rng);
    double loss = recurrent_loss(p, {traj}, 1);
    double manual = 0.0;
    for (int k = 0; k + 1 < 7; ++k) {
        Vec pred = traj.col(k) + mlp_forward(p, traj.col(k));
        manual += (pred - traj.col(k + 1)).squaredNorm();
    }
    CHECK(loss == doctest::Approx(manual).epsilon(1e-14));
}

TEST_CASE("recurrent loss equals a naive loop oracle to 1e-12") {
    Rng rng(19);
    MlpParams p = MlpParams::init({4, 6, 4}, 20);
    std::vector<Mat> trajs{random_matrix(4, 9, rng), random_matrix(4, 9, rng)};
    const int P = 3;
    double loss = recurrent_loss(p, trajs, P);

    double oracle = 0.0;
    for (const auto& traj : trajs) {
        int n_tau = static_cast<int>(traj.cols()) - 1;
        for (int k = 0; k <= n_tau; ++k)
            for (int step = 1; step <= P; ++step) {
                if (k + step > n_tau) continue;
                Vec u = traj.col(k);
                for (int s = 0; s < step; ++s) u = u + mlp_forward(p, u);
                oracle += (u - traj.col(k + step)).squaredNorm();
            }
    }
    CHECK(std::abs(loss - oracle) <= 1e-12 * std::max(1.0, oracle));
}

TEST_CASE("recurrent loss gradient matches finite differences") {
    Rng rng(23);
    MlpParams p = MlpParams::init({3, 5, 3}, 24);
    std::vector<Mat> trajs{random_matrix(3, 8, rng)};
    MlpParams grad = MlpParams::zeros_like(p);
    double base = recurrent_loss_grad(p, trajs, 3, grad);
    CHECK(base == doctest::Approx(recurrent_loss(p, trajs, 3)).epsilon(1e-14));

    Vec gflat = grad.flatten();
    Vec pflat = p.flatten();
    const double eps = 1e-6;
    Rng pick(25);
    for (int trial = 0; trial < 15; ++trial) {
        int idx = static_cast<int>(pick.uniform() * pflat.size());
        Vec pp = pflat, pm = pflat;
        pp(idx) += eps;
        pm(idx) -= eps;
        MlpParams a = p, b = p;
        a.unflatten(pp);
        b.unflatten(pm);
        double fd = (recurrent_loss(a, trajs, 3) - recurrent_loss(b, trajs, 3)) / (2 * eps);
        CHECK(std::abs(fd - gflat(idx)) <=
              1e-4 * std::max({std::abs(fd), std::abs(gflat(idx)), 1e-8}));
    }
}

TEST_CASE("training recovers a planted linear flow map") {
    Rng rng(29);
    const int r = 4;
    Mat A = random_matrix(r, r, rng, 0.15);
    MlpParams truth = linear_net(A);

    FlowmapDataset data;
    for (int m = 0; m < 8; ++m) {
        Mat traj(r, 10);
        traj.col(0) = random_matrix(r, 1, rng).col(0);
        for (int k = 0; k + 1 < 10; ++k)
            traj.col(k + 1) = traj.col(k) + mlp_forward(truth, traj.col(k));
        if (m < 6)
            data.train.push_back(traj);
        else
            data.val.push_back(traj);
    }

    TrainSchedule sched;
    sched.epochs = 2500;
    sched.p_steps = 3;
    sched.seed = 4;
    MlpParams net = train_flowmap(data, sched, {32, 32}, r);
    CHECK(one_step_error(net, data.val) <= 1e-2);
}

TEST_CASE("training is bit-deterministic per seed") {
    Rng rng(31);
    FlowmapDataset data;
    for (int m = 0; m < 3; ++m) {
        Mat traj = random_matrix(3, 8, rng);
        data.train.push_back(traj);
    }
    TrainSchedule sched;
    sched.epochs = 40;
    sched.p_steps = 2;
    sched.seed = 9;
    MlpParams a = train_flowmap(data, sched, {16}, 3);
    MlpParams b = train_flowmap(data, sched, {16}, 3);
    CHECK((a.flatten() - b.flatten()).cwiseAbs().maxCoeff() == 0.0);
    sched.seed = 10;
    MlpParams c = train_flowmap(data, sched, {16}, 3);
    CHECK((a.flatten() - c.flatten()).cwiseAbs().maxCoeff() > 0.0);
}

namespace {

struct FireInversion {
    fire::FireScenario sc;
    fire::ObservationSet obs;
    Mat V;
    MlpParams net;
    Vec2 z_true;

    // Build a small but complete fire ROM: simulate training ignitions,
    // fit the POD basis, train the flow map.
    FireInversion() : sc(fire::FireScenario::standard(fire::kFireTrainWind)) {
        Rng rng(77);
        std::vector<fire::IgnitionPoint> points;
        for (int i = 0; i < 10; ++i)
            points.push_back({Vec2(rng.uniform(1200.0, 2600.0), rng.uniform(1200.0, 2600.0))});
        auto trajs = fire::batch_simulate_fire(points, sc);

        Mat snaps(sc.grid.n_nodes(), 0);
        for (const auto& t : trajs) {
            Eigen::Index c = snaps.cols();
            snaps.conservativeResize(Eigen::NoChange, c + t.u.cols());
            snaps.rightCols(t.u.cols()) = t.u;
        }
        rom::PodBasis basis = rom::weighted_pod(snaps, Vec::Ones(snaps.rows()), 1e-10);
        // Projection rank for <= 1% relative error on the last trajectories.
        int r = basis.r();
        for (int cand = 1; cand <= basis.r(); ++cand) {
            double num = 0.0, den = 0.0;
            for (std::size_t m = 8; m < trajs.size(); ++m) {
                Mat U = trajs[m].u;
                Mat proj = basis.V.leftCols(cand) * (basis.V.leftCols(cand).transpose() * U);
                num += (U - proj).squaredNorm();
                den += U.squaredNorm();
            }
            if (std::sqrt(num / den) <= 0.01) {
                r = cand;
                break;
            }
        }
        V = basis.V.leftCols(r);

        FlowmapDataset data;
        for (std::size_t m = 0; m < trajs.size(); ++m) {
            Mat red = V.transpose() * trajs[m].u;
            if (m < 8)
                data.train.push_back(red);
            else
                data.val.push_back(red);
        }
        TrainSchedule sched;
        sched.epochs = 500;
        sched.p_steps = 3;
        sched.seed = 3;
        net = train_flowmap(data, sched, {64, 64, 64, 64}, r);

        z_true = Vec2(1980.0, 1740.0);
        fire::FireTrajectory traj = fire::simulate_fire({z_true}, sc);
        obs = fire::signed_distance_obs(traj, sc.grid, sc.obs_times_h);
    }
};

FireInversion& inversion_fixture() {
    static FireInversion f;
    return f;
}

}  // namespace

TEST_CASE("fire ROMCO gradient matches finite differences in the ignition point") {
    auto& fx = inversion_fixture();
    FireRomco prob = FireRomco::make(fx.net, fx.V, fx.sc.grid, fx.obs);
    Rng rng(41);
    const double eps = 0.1;  // meters; balances truncation against round-off
    for (int trial = 0; trial < 3; ++trial) {
        Vec2 z(rng.uniform(1500.0, 2300.0), rng.uniform(1500.0, 2300.0));
        Vec2 g = fire_romco_gradient(prob, z);
        for (int d = 0; d < 2; ++d) {
            Vec2 zp = z, zm = z;
            zp(d) += eps;
            zm(d) -= eps;
            double fd =
                (fire_romco_objective(prob, zp) - fire_romco_objective(prob, zm)) / (2 * eps);
            CHECK(std::abs(fd - g(d)) <= 1e-4 * std::max({std::abs(fd), std::abs(g(d)), 1.0}));
        }
    }
}

TEST_CASE("observations generated by the flow map itself are recovered exactly") {
    auto& fx = inversion_fixture();
    FireRomco prob = FireRomco::make(fx.net, fx.V, fx.sc.grid, fx.obs);

    // Synthesize observations from the ROM at z*: the misfit at z* is the
    // off-basis energy only, so z* is stationary and the solver stays put.
    Vec2 z_star(2040.0, 1860.0);
    Vec u0 = fx.V.transpose() * fire::ignition_init({z_star}, fx.sc.grid);
    Mat states = rollout(fx.net, u0, prob.obs_steps.back());
    fire::ObservationSet synth;
    synth.times_h = fx.obs.times_h;
    synth.Y.resize(fx.sc.grid.n_nodes(), fx.obs.times_h.size());
    for (std::size_t j = 0; j < prob.obs_steps.size(); ++j)
        synth.Y.col(j) = fx.V * states.col(prob.obs_steps[j]);

    FireRomco prob2 = FireRomco::make(fx.net, fx.V, fx.sc.grid, synth);
    IgnitionResult res = ignition_romco(prob2, z_star);
    CHECK((res.z - z_star).norm() <= 1.0);
}

TEST_CASE("in-distribution inversion lands within one cell of the truth") {
    auto& fx = inversion_fixture();
    FireRomco prob = FireRomco::make(fx.net, fx.V, fx.sc.grid, fx.obs);
    Vec2 z0 = ignition_initial_guess(fx.obs, fx.sc.grid);
    CHECK((z0 - fx.z_true).norm() <= 500.0);
    IgnitionResult res = ignition_romco(prob, z0);
    CHECK(res.in_domain);
    CHECK((res.z - fx.z_true).norm() <= 60.0);
}

TEST_CASE("multi-start inversions agree to within ten percent of the best misfit") {
    auto& fx = inversion_fixture();
    FireRomco prob = FireRomco::make(fx.net, fx.V, fx.sc.grid, fx.obs);
    std::vector<Vec2> starts{{1300, 1300}, {1300, 2500}, {2500, 1300}, {2500, 2500}};
    std::vector<double> misfits;
    for (const auto& s : starts) misfits.push_back(ignition_romco(prob, s).misfit);
    double best = *std::min_element(misfits.begin(), misfits.end());
    for (double m : misfits) CHECK(m <= 1.10 * best);
}

TEST_CASE("network parameters round-trip through the block container") {
    MlpParams p = MlpParams::init({3, 12, 12, 3}, 55);
    save_mlp("/tmp/romopt_mlp_test.bin", p);
    MlpParams q = load_mlp("/tmp/romopt_mlp_test.bin");
    CHECK((p.flatten() - q.flatten()).cwiseAbs().maxCoeff() == 0.0);
}
