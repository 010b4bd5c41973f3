#pragma once

#include "romopt/core.hpp"
#include "romopt/fom_adr.hpp"

#include <utility>
#include <vector>

namespace romopt::fire {

using fom::Grid2D;

inline constexpr double kWindGain = 0.5;   // s/m, wind-alignment factor
inline constexpr double kRateFloor = 0.05; // fraction of the base rate
inline constexpr double kDefaultShift = -10.0;

struct IgnitionPoint {
    Vec2 z;                       // meters
    double shift = kDefaultShift; // initial burn radius shift c
};

struct FireScenario {
    Grid2D grid;          // fire mesh, coordinates in meters
    Vec2 wind;            // constant ambient wind, m/s
    double base_rate;     // m/s
    Vec fuel_map;         // per-node multiplier >= 0
    double t_final_h;     // horizon in hours
    Vec obs_times_h;      // observation times, hours
    double dt_s;          // integrator step in seconds

    /// 64x64 grid of 60 m cells, T = 8 h, hourly observations starting at
    /// t = 2 h, uniform fuel.
    static FireScenario standard(const Vec2& wind);
};

inline const Vec2 kFireTrainWind{0.1, 0.1};
inline const Vec2 kFireTestWind{4.33, 2.5};

/// Level-set initial condition ||x - z|| + c at the nodes; rejects
/// out-of-domain ignition points.
Vec ignition_init(const IgnitionPoint& z, const Grid2D& grid);

/// Spread rate Psi = base_rate * fuel * max(floor, 1 + k_w <wind, -g>)
/// where g is the passed gradient direction (the fire spreads along -g).
double spread_rate(const Vec2& gradient_direction, const Vec2& wind, double fuel,
                   double base_rate);

struct FireTrajectory {
    Vec times_h;  // hourly nodes 0..T
    Mat u;        // n_u x n_times level-set fields (signed distance at nodes)
};

/// First-order Godunov upwind Hamilton-Jacobi marching of
/// du/dt + Psi ||grad u|| = 0 with hourly reinitialization to signed
/// distance. Rejects steps violating dt <= 0.5 h / max Psi.
FireTrajectory simulate_fire(const IgnitionPoint& z, const FireScenario& sc);

/// One Godunov update step, exposed with serial and OpenMP variants for
/// the kernel tests and benchmarks.
void godunov_step(const Vec& u, Vec& u_next, const Grid2D& grid, const Vec2& wind,
                  const Vec& fuel, double base_rate, double dt_s, bool serial = false);

/// Zero-level-set segments by linear interpolation along cell edges.
std::vector<std::pair<Vec2, Vec2>> front_segments(const Vec& u, const Grid2D& grid);

/// Signed distance to the interpolated front: negative on burned (u < 0)
/// nodes. Throws if the snapshot has no front.
Vec signed_distance_field(const Vec& u, const Grid2D& grid, bool serial = false);

struct ObservationSet {
    Mat Y;        // n_u x n_obs signed distances
    Vec times_h;  // observation times
};

ObservationSet signed_distance_obs(const FireTrajectory& traj, const Grid2D& grid,
                                   const Vec& obs_times_h);

/// sum_j || u(t_j; z) - y_j ||^2 over the observation times.
double ignition_misfit(const IgnitionPoint& z, const FireScenario& sc,
                       const ObservationSet& obs);

/// Batch of fire simulations (training-set generation); trajectories are
/// independent and run through parallel_for.
std::vector<FireTrajectory> batch_simulate_fire(const std::vector<IgnitionPoint>& points,
                                                const FireScenario& sc, bool serial = false);

}  // namespace romopt::fire
