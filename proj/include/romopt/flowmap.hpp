#pragma once

#include "romopt/core.hpp"
#include "romopt/fire.hpp"
#include "romopt/optimizer.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace romopt::fml {

/// Dense feed-forward network with GELU hidden activations and an identity
/// output layer. A single layer means one affine map (no hidden units).
struct MlpParams {
    std::vector<Mat> W;
    std::vector<Vec> b;

    int n_layers() const { return static_cast<int>(W.size()); }
    int input_dim() const { return static_cast<int>(W.front().cols()); }
    int output_dim() const { return static_cast<int>(W.back().rows()); }
    std::vector<int> widths() const;

    /// Glorot-uniform weights, zero biases, deterministic per seed.
    static MlpParams init(const std::vector<int>& widths, std::uint64_t seed);
    static MlpParams zeros_like(const MlpParams& other);

    Vec flatten() const;
    void unflatten(const Vec& v);
    void axpy(double a, const MlpParams& other);  // this += a * other
};

Vec mlp_forward(const MlpParams& p, const Vec& u);

/// Reverse-mode pass: given d(loss)/d(output), accumulates parameter
/// gradients into grad and returns d(loss)/d(input).
Vec mlp_backward(const MlpParams& p, const Vec& u, const Vec& out_bar, MlpParams& grad);

/// v' d(mlp)/d(input) without parameter gradients (rollout adjoints).
Vec mlp_input_vjp(const MlpParams& p, const Vec& u, const Vec& out_bar);

struct FlowmapDataset {
    std::vector<Mat> train;  // each r x (n_tau + 1) reduced trajectories
    std::vector<Mat> val;
};

struct TrainSchedule {
    int epochs = 1000;
    double lr_start = 4e-3;
    double lr_end = 1e-3;  // smooth exponential decay
    int p_steps = 3;       // recurrent horizon, 1 < P < n_tau
    std::uint64_t seed = 0;
};

/// P-step recurrent loss: segments roll from the data state at index k and
/// compare against the data at k+p, out-of-range terms dropped.
double recurrent_loss(const MlpParams& p, const std::vector<Mat>& trajectories, int P);
double recurrent_loss_grad(const MlpParams& p, const std::vector<Mat>& trajectories, int P,
                           MlpParams& grad);

/// Full-batch Adam on the recurrent loss with exponential learning-rate
/// decay; returns the parameters with the best validation loss seen.
/// Divergence aborts with the last good parameters.
MlpParams train_flowmap(const FlowmapDataset& data, const TrainSchedule& schedule,
                        const std::vector<int>& hidden_widths, int state_dim);

/// uhat_k = uhat_{k-1} + f(uhat_{k-1}) from uhat_0; returns r x (n_steps+1).
Mat rollout(const MlpParams& p, const Vec& u0, int n_steps);

/// Mean one-step relative l2 error over a set of reduced trajectories.
double one_step_error(const MlpParams& p, const std::vector<Mat>& trajectories);

// Fire-ignition ROMCO: minimize sum_j || V uhat_{1+j}(z) - y_j ||^2 over the
// 2-D ignition point, with gradients by reverse differentiation through the
// rollout and the level-set initialization.
struct FireDelta {
    std::vector<Vec> c0;  // per observation, r_d
    std::vector<Mat> CL;  // per observation, r_d x 2
    Mat Cvd;              // r_d x r = Vdelta' V
    Mat dY;               // r_d x n_obs = Vdelta' y_j
    Vec dnorm2;           // ||(I - Vd Vd') y_j||-independent term handled in objective
};

struct FireRomco {
    const MlpParams* net = nullptr;
    const Mat* V = nullptr;  // n_u x r POD basis
    const fire::Grid2D* grid = nullptr;
    double shift_c = fire::kDefaultShift;
    Mat VtY;      // r x n_obs projected observations
    Vec y_norm2;  // ||y_j||^2
    std::vector<int> obs_steps;  // rollout index of each observation (1+j)
    const FireDelta* delta = nullptr;

    static FireRomco make(const MlpParams& net, const Mat& V, const fire::Grid2D& grid,
                          const fire::ObservationSet& obs);
};

double fire_romco_objective(const FireRomco& prob, const Vec2& z);
Vec2 fire_romco_gradient(const FireRomco& prob, const Vec2& z);

struct IgnitionResult {
    Vec2 z;
    double misfit = 0.0;
    bool converged = false;
    bool in_domain = true;
};

/// BFGS trust-region inversion of the ignition point.
IgnitionResult ignition_romco(const FireRomco& prob, const Vec2& z0,
                              const opt::TrustRegionOptions& opts = {});

/// Data-driven initial guess: node with the most negative first-observation
/// signed distance.
Vec2 ignition_initial_guess(const fire::ObservationSet& obs, const fire::Grid2D& grid);

void save_mlp(const std::string& path, const MlpParams& p);
MlpParams load_mlp(const std::string& path);

}  // namespace romopt::fml
