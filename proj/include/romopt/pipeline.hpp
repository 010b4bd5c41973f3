#pragma once

#include "romopt/core.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace romopt::cli {

class MissingArtifact : public Error {
public:
    using Error::Error;
};
class DigestMismatch : public Error {
public:
    using Error::Error;
};

inline constexpr int kExitMissingArtifact = 2;
inline constexpr int kExitDigestMismatch = 3;
inline constexpr int kExitStageFailure = 4;

struct ContaminantConfig {
    int nx = 40, ny = 40;
    double kappa1 = 0.1, kappa2 = 0.1, rho = 2.0, gamma = 1e-5;
    double t_final = 0.4;
    int n_steps = 200;
    int n_q = 14, n_s = 100;
};

struct RomConfig {
    double energy_tol = 1e-5;
    int n_controls = 5;
    std::vector<std::pair<double, double>> lambda_grid;  // centered at (0.1, 10)
};

struct OptimizationConfig {
    double gtol_rel = 1e-8;  // gtol = gtol_rel * (1 + |J(z0)|)
    int max_iter = 200;
};

struct HdsaConfig {
    double alpha_p = 1.0;
    double alpha_d_factor = 0.05;
    int r_delta = 5;
    int n_tau_delta = 11;
    double retention_ratio = 0.01;
    int n_fom_evals = 1;
    int n_samples = 64;
    bool use_projection = true;
    double wu_beta1 = 1.0, wu_beta2 = 0.1;
    double decision_scale = 1.0;   // Wz = I / scale^2 for point decisions
    double perturb_scale = 0.1;    // extra FOM evaluations beyond the first
    std::uint64_t sample_seed_offset = 1000;
};

struct FireConfig {
    int nx = 64, ny = 64;
    double cell = 60.0;
    double base_rate = 0.015;
    double wind_train_x = 0.1, wind_train_y = 0.1;
    double wind_test_x = 4.33, wind_test_y = 2.5;
    double t_final_hours = 8.0;
    int n_obs = 7;
    double dt_seconds = 60.0;
    int n_train = 15, n_val = 5, n_test = 5;
    double ignition_min = 1200.0, ignition_max = 2600.0;
    std::string fuel_map_file;  // optional block file with a "fuel" block
};

struct FlowmapConfig {
    int hidden_width = 64;
    int hidden_layers = 4;
    int epochs = 1000;
    double lr_start = 4e-3, lr_end = 1e-3;
    int p_steps = 3;
    double proj_tol = 0.01;  // POD rank rule on validation trajectories
};

struct PipelineConfig {
    std::string scenario;  // "contaminant" or "fire"
    std::uint64_t seed = 0;
    std::string output_dir = "romopt_out";
    ContaminantConfig contaminant;
    RomConfig rom;
    OptimizationConfig optimization;
    HdsaConfig hdsa;
    FireConfig fire;
    FlowmapConfig flowmap;

    static PipelineConfig defaults(const std::string& scenario);
    std::string to_json_string() const;
};

/// Strict parse: unknown keys are errors naming the key and line; the
/// scenario and seed are mandatory, everything else defaults.
PipelineConfig parse_config(const std::string& path);
PipelineConfig parse_config_text(const std::string& text, const std::string& origin);

enum class Stage { GenData, BuildRom, Optimize, FomEval, Calibrate, Update, Sample, Report };

Stage parse_stage(const std::string& name);
std::string stage_name(Stage s);
std::vector<Stage> all_stages();

struct StageOutcome {
    bool up_to_date = false;  // digest-verified no-op
    std::map<std::string, double> metrics;
    double wall_s = 0.0;
};

/// Run one pipeline stage against the given directory (defaults to the
/// config's output_dir). Idempotent given identical inputs: a rerun whose
/// input and output digests match the manifest is a no-op. Throws
/// MissingArtifact / DigestMismatch / Error for the three failure classes.
StageOutcome run_stage(Stage stage, const PipelineConfig& cfg, std::string stage_dir = "");

}  // namespace romopt::cli
