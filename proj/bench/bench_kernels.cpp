// Serial-vs-OpenMP comparison for the data-parallel kernels. Run manually:
//   build/bench/bench_kernels [--benchmark_filter=...]
#include <benchmark/benchmark.h>

#include "romopt/fire.hpp"
#include "romopt/fom_adr.hpp"
#include "romopt/parallel.hpp"
#include "romopt/rng.hpp"
#include "romopt/rom_adjoint.hpp"
#include "romopt/rom_opinf.hpp"

using namespace romopt;

namespace {

struct FireFixture {
    fire::FireScenario sc = fire::FireScenario::standard(fire::kFireTestWind);
    Vec u;
    FireFixture() {
        fire::IgnitionPoint z{Vec2(1800.0, 1700.0)};
        fire::FireTrajectory traj = fire::simulate_fire(z, sc);
        u = traj.u.col(4);
    }
};

FireFixture& fire_fixture() {
    static FireFixture f;
    return f;
}

void bench_signed_distance_serial(benchmark::State& state) {
    auto& f = fire_fixture();
    for (auto _ : state) {
        Vec d = fire::signed_distance_field(f.u, f.sc.grid, /*serial=*/true);
        benchmark::DoNotOptimize(d.data());
    }
}

void bench_signed_distance_parallel(benchmark::State& state) {
    auto& f = fire_fixture();
    for (auto _ : state) {
        Vec d = fire::signed_distance_field(f.u, f.sc.grid, /*serial=*/false);
        benchmark::DoNotOptimize(d.data());
    }
}

void bench_godunov_serial(benchmark::State& state) {
    auto& f = fire_fixture();
    Vec next(f.u.size());
    for (auto _ : state) {
        fire::godunov_step(f.u, next, f.sc.grid, f.sc.wind, f.sc.fuel_map, f.sc.base_rate,
                           30.0, /*serial=*/true);
        benchmark::DoNotOptimize(next.data());
    }
}

void bench_godunov_parallel(benchmark::State& state) {
    auto& f = fire_fixture();
    Vec next(f.u.size());
    for (auto _ : state) {
        fire::godunov_step(f.u, next, f.sc.grid, f.sc.wind, f.sc.fuel_map, f.sc.base_rate,
                           30.0, /*serial=*/false);
        benchmark::DoNotOptimize(next.data());
    }
}

struct RomFixture {
    rom::ReducedModel model;
    adj::RomcoProblem prob;
    Vec z;
    RomFixture() {
        Rng rng(5);
        const int r1 = 8, r2 = 10, n_q = 6, n_s = 40;
        auto rand_mat = [&](int r, int c, double s) {
            Mat m(r, c);
            for (int j = 0; j < c; ++j)
                for (int i = 0; i < r; ++i) m(i, j) = s * (rng.uniform() - 0.5);
            return m;
        };
        model.Ahat1 = rand_mat(r1, r1, 0.5);
        model.Ahat1.diagonal().array() -= 1.5;
        model.Ahat2 = rand_mat(r2, r2, 0.5);
        model.Ahat2.diagonal().array() -= 1.5;
        model.Rhat1 = rand_mat(r1, r1 * r2, 0.1);
        model.Rhat2 = rand_mat(r2, r1 * r2, 0.1);
        model.Phihat = rand_mat(r2, n_q, 1.0);
        Mat g = rand_mat(r1, r1, 0.3);
        model.scaled_mass = g * g.transpose() + Mat::Identity(r1, r1);
        model.u0hat1 = rand_mat(r1, 1, 1.0).col(0);
        model.u0hat2 = Vec::Zero(r2);

        prob.model = &model;
        prob.n_steps = 200;
        prob.dt = 0.4 / 200;
        prob.gamma = 1e-5;
        prob.control_times = Vec::LinSpaced(n_s, 0.0, 0.4);
        prob.n_q = n_q;
        z = rand_mat(n_q * n_s, 1, 1.0).col(0).cwiseAbs();
    }
};

RomFixture& rom_fixture() {
    static RomFixture f;
    return f;
}

void bench_hessian_serial(benchmark::State& state) {
    auto& f = rom_fixture();
    for (auto _ : state) {
        Mat H = adj::assemble_hessian(f.prob, f.z, /*serial=*/true);
        benchmark::DoNotOptimize(H.data());
    }
}

void bench_hessian_parallel(benchmark::State& state) {
    auto& f = rom_fixture();
    for (auto _ : state) {
        Mat H = adj::assemble_hessian(f.prob, f.z, /*serial=*/false);
        benchmark::DoNotOptimize(H.data());
    }
}

void bench_fom_batch_serial(benchmark::State& state) {
    fom::Grid2D grid = fom::Grid2D::uniform(24, 24, 1.2, 1.2);
    fom::Physics phys = fom::default_physics();
    fom::FomOperators ops = fom::assemble_fom(grid, fom::kTrainWind, phys);
    auto controls = rom::random_training_controls(3, 5, fom::kNumInjection, 50, 0.4);
    Vec u0 = fom::initial_contaminant(grid);
    for (auto _ : state) {
        auto out = fom::batch_simulate_fom(ops, controls, 200, u0, /*serial=*/true);
        benchmark::DoNotOptimize(out.data());
    }
}

void bench_fom_batch_parallel(benchmark::State& state) {
    fom::Grid2D grid = fom::Grid2D::uniform(24, 24, 1.2, 1.2);
    fom::Physics phys = fom::default_physics();
    fom::FomOperators ops = fom::assemble_fom(grid, fom::kTrainWind, phys);
    auto controls = rom::random_training_controls(3, 5, fom::kNumInjection, 50, 0.4);
    Vec u0 = fom::initial_contaminant(grid);
    for (auto _ : state) {
        auto out = fom::batch_simulate_fom(ops, controls, 200, u0, /*serial=*/false);
        benchmark::DoNotOptimize(out.data());
    }
}

}  // namespace

BENCHMARK(bench_signed_distance_serial);
BENCHMARK(bench_signed_distance_parallel);
BENCHMARK(bench_godunov_serial);
BENCHMARK(bench_godunov_parallel);
BENCHMARK(bench_hessian_serial);
BENCHMARK(bench_hessian_parallel);
BENCHMARK(bench_fom_batch_serial);
BENCHMARK(bench_fom_batch_parallel);

BENCHMARK_MAIN();
