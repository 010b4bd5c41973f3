#include "romopt/pipeline.hpp"

#include "romopt/container.hpp"
#include "romopt/discrepancy.hpp"
#include "romopt/fire.hpp"
#include "romopt/flowmap.hpp"
#include "romopt/fom_adr.hpp"
#include "romopt/optimizer.hpp"
#include "romopt/rng.hpp"
#include "romopt/rom_adjoint.hpp"
#include "romopt/rom_opinf.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace romopt::cli {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

namespace {

int find_line(const std::string& text, const std::string& key) {
    auto pos = text.find('"' + key + '"');
    if (pos == std::string::npos) return -1;
    return 1 + static_cast<int>(std::count(text.begin(), text.begin() + pos, '\n'));
}

void check_keys(const json& obj, const std::vector<std::string>& allowed,
                const std::string& section, const std::string& raw) {
    for (const auto& [key, value] : obj.items()) {
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
            std::ostringstream ss;
            ss << "unknown key \"" << key << "\"";
            if (!section.empty()) ss << " in \"" << section << "\"";
            int line = find_line(raw, key);
            if (line > 0) ss << " at line " << line;
            throw Error(ss.str());
        }
    }
}

template <typename T>
void get_if(const json& obj, const char* key, T& out) {
    if (obj.contains(key)) out = obj.at(key).get<T>();
}

}  // namespace

PipelineConfig PipelineConfig::defaults(const std::string& scenario) {
    PipelineConfig cfg;
    cfg.scenario = scenario;
    cfg.rom.lambda_grid = {{0.01, 1.0}, {0.01, 10.0}, {0.01, 100.0},
                           {0.1, 1.0},  {0.1, 10.0},  {0.1, 100.0},
                           {1.0, 1.0},  {1.0, 10.0},  {1.0, 100.0}};
    if (scenario == "fire") {
        cfg.hdsa.n_tau_delta = 7;  // aligned with the hourly observations
        cfg.hdsa.r_delta = 7;
        cfg.hdsa.decision_scale = 1920.0;  // half the fire-domain extent
    }
    return cfg;
}

std::string PipelineConfig::to_json_string() const {
    json j;
    j["scenario"] = scenario;
    j["seed"] = seed;
    j["output_dir"] = output_dir;
    j["contaminant"] = {{"nx", contaminant.nx},
                        {"ny", contaminant.ny},
                        {"kappa1", contaminant.kappa1},
                        {"kappa2", contaminant.kappa2},
                        {"rho", contaminant.rho},
                        {"gamma", contaminant.gamma},
                        {"t_final", contaminant.t_final},
                        {"n_steps", contaminant.n_steps},
                        {"n_q", contaminant.n_q},
                        {"n_s", contaminant.n_s}};
    json grid = json::array();
    for (const auto& [l1, l2] : rom.lambda_grid) grid.push_back(json::array({l1, l2}));
    j["rom"] = {{"energy_tol", rom.energy_tol},
                {"n_controls", rom.n_controls},
                {"lambda_grid", grid}};
    j["optimization"] = {{"gtol_rel", optimization.gtol_rel},
                         {"max_iter", optimization.max_iter}};
    j["hdsa"] = {{"alpha_p", hdsa.alpha_p},
                 {"alpha_d_factor", hdsa.alpha_d_factor},
                 {"r_delta", hdsa.r_delta},
                 {"n_tau_delta", hdsa.n_tau_delta},
                 {"retention_ratio", hdsa.retention_ratio},
                 {"n_fom_evals", hdsa.n_fom_evals},
                 {"n_samples", hdsa.n_samples},
                 {"use_projection", hdsa.use_projection},
                 {"wu_beta1", hdsa.wu_beta1},
                 {"wu_beta2", hdsa.wu_beta2},
                 {"decision_scale", hdsa.decision_scale},
                 {"perturb_scale", hdsa.perturb_scale},
                 {"sample_seed_offset", hdsa.sample_seed_offset}};
    j["fire"] = {{"nx", fire.nx},
                 {"ny", fire.ny},
                 {"cell", fire.cell},
                 {"base_rate", fire.base_rate},
                 {"wind_train", json::array({fire.wind_train_x, fire.wind_train_y})},
                 {"wind_test", json::array({fire.wind_test_x, fire.wind_test_y})},
                 {"t_final_hours", fire.t_final_hours},
                 {"n_obs", fire.n_obs},
                 {"dt_seconds", fire.dt_seconds},
                 {"n_train", fire.n_train},
                 {"n_val", fire.n_val},
                 {"n_test", fire.n_test},
                 {"ignition_min", fire.ignition_min},
                 {"ignition_max", fire.ignition_max},
                 {"fuel_map_file", fire.fuel_map_file}};
    j["flowmap"] = {{"hidden_width", flowmap.hidden_width},
                    {"hidden_layers", flowmap.hidden_layers},
                    {"epochs", flowmap.epochs},
                    {"lr_start", flowmap.lr_start},
                    {"lr_end", flowmap.lr_end},
                    {"p_steps", flowmap.p_steps},
                    {"proj_tol", flowmap.proj_tol}};
    return j.dump(2) + "\n";
}

PipelineConfig parse_config_text(const std::string& text, const std::string& origin) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw Error("config parse error in " + origin + ": " + e.what());
    }
    check_keys(j,
               {"scenario", "seed", "output_dir", "contaminant", "rom", "optimization",
                "hdsa", "fire", "flowmap"},
               "", text);
    ROMOPT_REQUIRE(j.contains("scenario"), "config needs a \"scenario\" (" + origin + ")");
    ROMOPT_REQUIRE(j.contains("seed"),
                   "config needs an explicit \"seed\" (no wall-clock entropy)");

    PipelineConfig cfg = PipelineConfig::defaults(j.at("scenario").get<std::string>());
    ROMOPT_REQUIRE(cfg.scenario == "contaminant" || cfg.scenario == "fire",
                   "scenario must be \"contaminant\" or \"fire\"");
    cfg.seed = j.at("seed").get<std::uint64_t>();
    get_if(j, "output_dir", cfg.output_dir);

    if (j.contains("contaminant")) {
        const json& c = j["contaminant"];
        check_keys(c,
                   {"nx", "ny", "kappa1", "kappa2", "rho", "gamma", "t_final", "n_steps",
                    "n_q", "n_s"},
                   "contaminant", text);
        get_if(c, "nx", cfg.contaminant.nx);
        get_if(c, "ny", cfg.contaminant.ny);
        get_if(c, "kappa1", cfg.contaminant.kappa1);
        get_if(c, "kappa2", cfg.contaminant.kappa2);
        get_if(c, "rho", cfg.contaminant.rho);
        get_if(c, "gamma", cfg.contaminant.gamma);
        get_if(c, "t_final", cfg.contaminant.t_final);
        get_if(c, "n_steps", cfg.contaminant.n_steps);
        get_if(c, "n_q", cfg.contaminant.n_q);
        get_if(c, "n_s", cfg.contaminant.n_s);
    }
    if (j.contains("rom")) {
        const json& c = j["rom"];
        check_keys(c, {"energy_tol", "n_controls", "lambda_grid"}, "rom", text);
        get_if(c, "energy_tol", cfg.rom.energy_tol);
        get_if(c, "n_controls", cfg.rom.n_controls);
        if (c.contains("lambda_grid")) {
            cfg.rom.lambda_grid.clear();
            for (const auto& pair : c["lambda_grid"])
                cfg.rom.lambda_grid.emplace_back(pair.at(0).get<double>(),
                                                 pair.at(1).get<double>());
        }
    }
    if (j.contains("optimization")) {
        const json& c = j["optimization"];
        check_keys(c, {"gtol_rel", "max_iter"}, "optimization", text);
        get_if(c, "gtol_rel", cfg.optimization.gtol_rel);
        get_if(c, "max_iter", cfg.optimization.max_iter);
    }
    if (j.contains("hdsa")) {
        const json& c = j["hdsa"];
        check_keys(c,
                   {"alpha_p", "alpha_d_factor", "r_delta", "n_tau_delta", "retention_ratio",
                    "n_fom_evals", "n_samples", "use_projection", "wu_beta1", "wu_beta2",
                    "decision_scale", "perturb_scale", "sample_seed_offset"},
                   "hdsa", text);
        get_if(c, "alpha_p", cfg.hdsa.alpha_p);
        get_if(c, "alpha_d_factor", cfg.hdsa.alpha_d_factor);
        get_if(c, "r_delta", cfg.hdsa.r_delta);
        get_if(c, "n_tau_delta", cfg.hdsa.n_tau_delta);
        get_if(c, "retention_ratio", cfg.hdsa.retention_ratio);
        get_if(c, "n_fom_evals", cfg.hdsa.n_fom_evals);
        get_if(c, "n_samples", cfg.hdsa.n_samples);
        get_if(c, "use_projection", cfg.hdsa.use_projection);
        get_if(c, "wu_beta1", cfg.hdsa.wu_beta1);
        get_if(c, "wu_beta2", cfg.hdsa.wu_beta2);
        get_if(c, "decision_scale", cfg.hdsa.decision_scale);
        get_if(c, "perturb_scale", cfg.hdsa.perturb_scale);
        get_if(c, "sample_seed_offset", cfg.hdsa.sample_seed_offset);
    }
    if (j.contains("fire")) {
        const json& c = j["fire"];
        check_keys(c,
                   {"nx", "ny", "cell", "base_rate", "wind_train", "wind_test",
                    "t_final_hours", "n_obs", "dt_seconds", "n_train", "n_val", "n_test",
                    "ignition_min", "ignition_max", "fuel_map_file"},
                   "fire", text);
        get_if(c, "nx", cfg.fire.nx);
        get_if(c, "ny", cfg.fire.ny);
        get_if(c, "cell", cfg.fire.cell);
        get_if(c, "base_rate", cfg.fire.base_rate);
        if (c.contains("wind_train")) {
            cfg.fire.wind_train_x = c["wind_train"].at(0).get<double>();
            cfg.fire.wind_train_y = c["wind_train"].at(1).get<double>();
        }
        if (c.contains("wind_test")) {
            cfg.fire.wind_test_x = c["wind_test"].at(0).get<double>();
            cfg.fire.wind_test_y = c["wind_test"].at(1).get<double>();
        }
        get_if(c, "t_final_hours", cfg.fire.t_final_hours);
        get_if(c, "n_obs", cfg.fire.n_obs);
        get_if(c, "dt_seconds", cfg.fire.dt_seconds);
        get_if(c, "n_train", cfg.fire.n_train);
        get_if(c, "n_val", cfg.fire.n_val);
        get_if(c, "n_test", cfg.fire.n_test);
        get_if(c, "ignition_min", cfg.fire.ignition_min);
        get_if(c, "ignition_max", cfg.fire.ignition_max);
        get_if(c, "fuel_map_file", cfg.fire.fuel_map_file);
    }
    if (j.contains("flowmap")) {
        const json& c = j["flowmap"];
        check_keys(c,
                   {"hidden_width", "hidden_layers", "epochs", "lr_start", "lr_end",
                    "p_steps", "proj_tol"},
                   "flowmap", text);
        get_if(c, "hidden_width", cfg.flowmap.hidden_width);
        get_if(c, "hidden_layers", cfg.flowmap.hidden_layers);
        get_if(c, "epochs", cfg.flowmap.epochs);
        get_if(c, "lr_start", cfg.flowmap.lr_start);
        get_if(c, "lr_end", cfg.flowmap.lr_end);
        get_if(c, "p_steps", cfg.flowmap.p_steps);
        get_if(c, "proj_tol", cfg.flowmap.proj_tol);
    }
    return cfg;
}

PipelineConfig parse_config(const std::string& path) {
    return parse_config_text(read_text_file(path), path);
}

Stage parse_stage(const std::string& name) {
    for (Stage s : all_stages())
        if (stage_name(s) == name) return s;
    throw Error("unknown stage: " + name);
}

std::string stage_name(Stage s) {
    switch (s) {
        case Stage::GenData: return "gen-data";
        case Stage::BuildRom: return "build-rom";
        case Stage::Optimize: return "optimize";
        case Stage::FomEval: return "fom-eval";
        case Stage::Calibrate: return "calibrate";
        case Stage::Update: return "update";
        case Stage::Sample: return "sample";
        case Stage::Report: return "report";
    }
    throw Error("bad stage enumerator");
}

std::vector<Stage> all_stages() {
    return {Stage::GenData, Stage::BuildRom, Stage::Optimize, Stage::FomEval,
            Stage::Calibrate, Stage::Update, Stage::Sample, Stage::Report};
}

// ---------------------------------------------------------------------------
// Manifest, locking, stage bookkeeping
// ---------------------------------------------------------------------------

namespace {

struct DirLock {
    fs::path path;
    explicit DirLock(const fs::path& dir) : path(dir / ".romopt.lock") {
        std::error_code ec;
        fs::create_directories(dir, ec);
        FILE* f = std::fopen(path.c_str(), "wx");
        if (!f)
            throw Error("output directory is locked by another run: " + path.string());
        std::fclose(f);
    }
    ~DirLock() {
        std::error_code ec;
        fs::remove(path, ec);
    }
};

json load_manifest(const fs::path& dir) {
    fs::path p = dir / "manifest.json";
    if (!fs::exists(p)) return json::object();
    return json::parse(read_text_file(p.string()));
}

void save_manifest(const fs::path& dir, const json& m) {
    write_text_file((dir / "manifest.json").string(), m.dump(2) + "\n");
}

struct StageIo {
    fs::path dir;
    json manifest;
    std::string config_digest;
    std::vector<std::string> inputs;
    std::vector<std::string> outputs;

    std::string abs(const std::string& rel) const { return (dir / rel).string(); }

    void require_inputs() const {
        for (const auto& rel : inputs)
            if (!fs::exists(dir / rel))
                throw MissingArtifact("missing input artifact: " + abs(rel));
        if (!manifest.contains("stages")) return;
        for (const auto& rel : inputs) {
            for (const auto& [sname, srec] : manifest["stages"].items()) {
                if (srec.contains("outputs") && srec["outputs"].contains(rel)) {
                    std::string recorded = srec["outputs"][rel].get<std::string>();
                    std::string actual = digest_hex(digest_file(abs(rel)));
                    if (recorded != actual)
                        throw DigestMismatch("artifact digest mismatch for " + abs(rel) +
                                             " (expected " + recorded + ", found " + actual +
                                             ")");
                }
            }
        }
    }

    bool up_to_date(const std::string& stage) const {
        if (!manifest.contains("stages") || !manifest["stages"].contains(stage)) return false;
        const json& rec = manifest["stages"][stage];
        if (rec.value("config_digest", "") != config_digest) return false;
        for (const auto& rel : inputs) {
            if (!rec["inputs"].contains(rel)) return false;
            if (rec["inputs"][rel].get<std::string>() != digest_hex(digest_file(abs(rel))))
                return false;
        }
        for (const auto& rel : outputs) {
            if (!fs::exists(dir / rel)) return false;
            if (!rec["outputs"].contains(rel)) return false;
            if (rec["outputs"][rel].get<std::string>() != digest_hex(digest_file(abs(rel))))
                return false;
        }
        return true;
    }

    void record(const std::string& stage, const std::map<std::string, double>& metrics,
                double wall_s) {
        json rec;
        rec["config_digest"] = config_digest;
        rec["inputs"] = json::object();
        for (const auto& rel : inputs)
            rec["inputs"][rel] = digest_hex(digest_file(abs(rel)));
        rec["outputs"] = json::object();
        for (const auto& rel : outputs) {
            if (!fs::exists(dir / rel))
                throw Error("stage " + stage + " did not produce " + abs(rel));
            rec["outputs"][rel] = digest_hex(digest_file(abs(rel)));
        }
        rec["metrics"] = metrics;
        rec["wall_s"] = wall_s;
        manifest["stages"][stage] = rec;
    }
};

void write_csv(const std::string& path, const std::string& header,
               const std::vector<std::string>& rows) {
    std::ostringstream ss;
    ss << header << "\n";
    for (const auto& r : rows) ss << r << "\n";
    write_text_file(path, ss.str());
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

}  // namespace romopt::cli

// ---------------------------------------------------------------------------
// Contaminant pipeline
// ---------------------------------------------------------------------------

namespace romopt::cli {

namespace {

struct ContaminantSetup {
    fom::Grid2D grid;
    fom::Physics physics;
    fom::ProtectionZone zone;
    Vec u1_init;

    explicit ContaminantSetup(const PipelineConfig& cfg) {
        const auto& c = cfg.contaminant;
        grid = fom::Grid2D::uniform(c.nx, c.ny, fom::kDomainLength, fom::kDomainLength);
        physics = fom::default_physics(c.n_q);
        physics.kappa1 = c.kappa1;
        physics.kappa2 = c.kappa2;
        physics.rho = c.rho;
        physics.dt = c.t_final / c.n_steps;
        zone = fom::ProtectionZone::standard(grid);
        u1_init = fom::initial_contaminant(grid);
    }
};

void save_control(const std::string& path, const fom::ControlVector& z) {
    BlockFile b;
    b.add("q_nodes", z.q_nodes);
    b.add("time_nodes", z.time_nodes);
    write_blocks(path, b);
}

fom::ControlVector load_control(const std::string& path) {
    BlockFile b = read_blocks(path);
    fom::ControlVector z;
    z.q_nodes = b.get("q_nodes");
    z.time_nodes = b.get("time_nodes").col(0);
    return z;
}

void save_state_trajectory(const std::string& path, const fom::StateTrajectory& traj,
                           const json& provenance) {
    TrajectoryFile t;
    t.times = traj.times;
    t.fields = {traj.u1, traj.u2};
    write_trajectory(path, t);
    write_text_file(path + ".json", provenance.dump(2) + "\n");
}

fom::StateTrajectory load_state_trajectory(const std::string& path) {
    TrajectoryFile t = read_trajectory(path);
    ROMOPT_REQUIRE(t.fields.size() == 2, "trajectory must carry two species fields");
    fom::StateTrajectory traj;
    traj.times = t.times;
    traj.u1 = t.fields[0];
    traj.u2 = t.fields[1];
    return traj;
}

json wind_json(const fom::WindParams& w) {
    return json::array({w.xi(0), w.xi(1), w.xi(2), w.xi(3)});
}

adj::RomcoProblem make_romco_problem(const rom::ReducedModel& model,
                                     const PipelineConfig& cfg) {
    adj::RomcoProblem prob;
    prob.model = &model;
    prob.n_steps = cfg.contaminant.n_steps;
    prob.dt = cfg.contaminant.t_final / cfg.contaminant.n_steps;
    prob.gamma = cfg.contaminant.gamma;
    prob.control_times = Vec::LinSpaced(cfg.contaminant.n_s, 0.0, cfg.contaminant.t_final);
    prob.n_q = cfg.contaminant.n_q;
    return prob;
}

// Decision mass: lumped time weights per injection point (column-major
// flattening of the n_q x n_s control grid).
Vec control_mass_diag(const PipelineConfig& cfg) {
    Vec tw = fom::trapezoid_weights(
        Vec::LinSpaced(cfg.contaminant.n_s, 0.0, cfg.contaminant.t_final));
    Vec mz(cfg.contaminant.n_q * cfg.contaminant.n_s);
    for (int j = 0; j < cfg.contaminant.n_s; ++j)
        for (int i = 0; i < cfg.contaminant.n_q; ++i)
            mz(j * cfg.contaminant.n_q + i) = tw(j);
    return mz;
}

Vec delta_nodes(const PipelineConfig& cfg) {
    return Vec::LinSpaced(cfg.hdsa.n_tau_delta, 0.0, cfg.contaminant.t_final);
}

void save_posterior(const std::string& path, const hdsa::DiscrepancyPosterior& post,
                    const hdsa::DiscrepancyBasis& basis, const Vec& mz_diag,
                    const std::vector<hdsa::DiscrepancyData>& data, const json& meta) {
    BlockFile b;
    b.add("mean", post.mean);
    b.add("chol_K", post.chol_K);
    b.add("chol_wtil", post.chol_wtil);
    b.add("time_weights", post.time_weights);
    b.add("Vdelta", basis.Vdelta);
    b.add("time_nodes", basis.time_nodes);
    b.add("mz_diag", mz_diag);
    Vec lay(3);
    lay << post.layout.r_d, post.layout.n_z, post.layout.n_tau;
    b.add("layout", lay);
    Mat zs(data.empty() ? 0 : data[0].z.size(), static_cast<Eigen::Index>(data.size()));
    for (std::size_t l = 0; l < data.size(); ++l) zs.col(static_cast<Eigen::Index>(l)) = data[l].z;
    b.add("z_data", zs);
    write_blocks(path, b);
    write_text_file(path + ".json", meta.dump(2) + "\n");
}

struct LoadedPosterior {
    hdsa::DiscrepancyPosterior post;
    hdsa::DiscrepancyBasis basis;
    Vec mz_diag;
};

LoadedPosterior load_posterior(const std::string& path) {
    BlockFile b = read_blocks(path);
    LoadedPosterior lp;
    const Mat& lay = b.get("layout");
    lp.post.layout = hdsa::ParamLayout{static_cast<int>(lay(0, 0)),
                                       static_cast<int>(lay(1, 0)),
                                       static_cast<int>(lay(2, 0))};
    lp.post.mean = b.get("mean").col(0);
    lp.post.chol_K = b.get("chol_K");
    lp.post.chol_wtil = b.get("chol_wtil");
    lp.post.time_weights = b.get("time_weights").col(0);
    lp.basis.Vdelta = b.get("Vdelta");
    lp.basis.time_nodes = b.get("time_nodes").col(0);
    lp.mz_diag = b.get("mz_diag").col(0);
    return lp;
}

void contaminant_gen_data(const PipelineConfig& cfg, const StageIo& io,
                          std::map<std::string, double>& metrics) {
    ContaminantSetup setup(cfg);
    fom::FomOperators ops = fom::assemble_fom(setup.grid, fom::kTrainWind, setup.physics);
    auto controls = rom::random_training_controls(cfg.seed, cfg.rom.n_controls,
                                                  cfg.contaminant.n_q, cfg.contaminant.n_s,
                                                  cfg.contaminant.t_final);
    auto trajs = fom::batch_simulate_fom(ops, controls, cfg.contaminant.n_steps, setup.u1_init);

    BlockFile cb;
    cb.add("time_nodes", controls[0].time_nodes);
    for (std::size_t i = 0; i < controls.size(); ++i)
        cb.add("q" + std::to_string(i), controls[i].q_nodes);
    write_blocks(io.abs("controls.bin"), cb);

    for (std::size_t i = 0; i < trajs.size(); ++i) {
        json prov = {{"grid", {{"nx", setup.grid.nx}, {"ny", setup.grid.ny}}},
                     {"xi", wind_json(fom::kTrainWind)},
                     {"control", "controls.bin:q" + std::to_string(i)},
                     {"seed", cfg.seed}};
        save_state_trajectory(io.abs("train_traj_" + std::to_string(i) + ".bin"), trajs[i],
                              prov);
    }
    metrics["n_controls"] = static_cast<double>(controls.size());
}

rom::TrainingSet load_training_set(const PipelineConfig& cfg, const StageIo& io) {
    BlockFile cb = read_blocks(io.abs("controls.bin"));
    Vec time_nodes = cb.get("time_nodes").col(0);
    rom::TrainingSet training;
    training.xi_train = fom::kTrainWind;
    for (int i = 0; i < cfg.rom.n_controls; ++i) {
        fom::ControlVector z;
        z.q_nodes = cb.get("q" + std::to_string(i));
        z.time_nodes = time_nodes;
        training.controls.push_back(std::move(z));
        training.trajectories.push_back(
            load_state_trajectory(io.abs("train_traj_" + std::to_string(i) + ".bin")));
    }
    return training;
}

void contaminant_build_rom(const PipelineConfig& cfg, const StageIo& io,
                           std::map<std::string, double>& metrics) {
    ContaminantSetup setup(cfg);
    Vec mass = fom::lumped_mass_diag(setup.grid);
    rom::TrainingSet training = load_training_set(cfg, io);

    const int n = setup.grid.n_nodes();
    const int n_t = static_cast<int>(training.trajectories[0].times.size());
    Mat snaps1(n, cfg.rom.n_controls * n_t), snaps2(n, cfg.rom.n_controls * n_t);
    for (int c = 0; c < cfg.rom.n_controls; ++c) {
        snaps1.middleCols(c * n_t, n_t) = training.trajectories[c].u1;
        snaps2.middleCols(c * n_t, n_t) = training.trajectories[c].u2;
    }
    rom::PodBasis basis1 = rom::weighted_pod(snaps1, mass, cfg.rom.energy_tol);
    rom::PodBasis basis2 = rom::weighted_pod(snaps2, mass, cfg.rom.energy_tol);

    auto [l1, l2] = rom::select_regularization(training, basis1, basis2, mass,
                                               cfg.rom.lambda_grid, cfg.contaminant.n_steps,
                                               setup.physics.dt);
    rom::ReducedModel model = rom::opinf_fit(training, basis1, basis2, mass, setup.zone,
                                             setup.u1_init, l1, l2);
    model.energy_tol = cfg.rom.energy_tol;
    model.seed = cfg.seed;

    rom::OpInfOperators fitted{model.Ahat1, model.Ahat2, model.Rhat1, model.Rhat2,
                               model.Phihat};
    double recon = rom::reconstruction_error(training, basis1, basis2, mass, fitted,
                                             cfg.contaminant.n_steps, setup.physics.dt);

    rom::save_reduced_model(io.abs("rom.bin"), model);
    json meta = {{"r1", model.r1()},
                 {"r2", model.r2()},
                 {"lambda1", l1},
                 {"lambda2", l2},
                 {"energy_tol", cfg.rom.energy_tol},
                 {"training_seed", cfg.seed},
                 {"reconstruction_error", recon},
                 {"residual_energy1", basis1.residual_energy},
                 {"residual_energy2", basis2.residual_energy}};
    write_text_file(io.abs("rom.bin.json"), meta.dump(2) + "\n");

    metrics["r1"] = model.r1();
    metrics["r2"] = model.r2();
    metrics["lambda1"] = l1;
    metrics["lambda2"] = l2;
    metrics["reconstruction_error"] = recon;
}

void contaminant_optimize(const PipelineConfig& cfg, const StageIo& io,
                          std::map<std::string, double>& metrics) {
    rom::ReducedModel model = rom::load_reduced_model(io.abs("rom.bin"));
    adj::RomcoProblem prob = make_romco_problem(model, cfg);

    opt::SmoothProblem sp;
    sp.dimension = prob.n_z();
    sp.objective = [&](const Vec& z) { return adj::objective(prob, z); };
    sp.gradient = [&](const Vec& z) { return adj::gradient(prob, z); };
    sp.hvp = [&](const Vec& z, const Vec& dz) { return adj::hessian_vec(prob, z, dz); };

    Vec z0 = Vec::Ones(prob.n_z());
    opt::TrustRegionOptions opts;
    opts.gtol = cfg.optimization.gtol_rel * (1.0 + std::abs(adj::objective(prob, z0)));
    opts.max_iter = cfg.optimization.max_iter;
    opt::MinimizeResult res = opt::trust_region_newton_cg(sp, z0, opts);

    fom::ControlVector z_tilde =
        fom::ControlVector::from_flat(res.z, prob.n_q, prob.control_times);
    save_control(io.abs("z_tilde.bin"), z_tilde);

    std::ostringstream log;
    for (const auto& rec : res.log) {
        json line = {{"iter", rec.iter},
                     {"objective", rec.objective},
                     {"grad_norm", rec.grad_norm},
                     {"trust_radius", rec.trust_radius},
                     {"cg_iters", rec.cg_iters}};
        log << line.dump() << "\n";
    }
    write_text_file(io.abs("optimize_log.jsonl"), log.str());

    metrics["J_romco_at_ztilde"] = res.objective;
    metrics["grad_norm"] = res.grad_norm;
    metrics["iterations"] = res.iterations;
    metrics["converged"] = res.converged ? 1.0 : 0.0;
}

void contaminant_fom_eval(const PipelineConfig& cfg, const StageIo& io,
                          std::map<std::string, double>& metrics) {
    ContaminantSetup setup(cfg);
    fom::FomOperators ops = fom::assemble_fom(setup.grid, fom::kTestWind, setup.physics);
    fom::ControlVector z_tilde = load_control(io.abs("z_tilde.bin"));

    Rng rng(cfg.seed ^ 0x5eedf00dULL);
    for (int l = 0; l < cfg.hdsa.n_fom_evals; ++l) {
        fom::ControlVector z_l = z_tilde;
        if (l > 0) {
            for (int i = 0; i < z_l.q_nodes.size(); ++i)
                z_l.q_nodes.data()[i] += cfg.hdsa.perturb_scale * (rng.uniform() - 0.5);
        }
        fom::StateTrajectory traj =
            fom::simulate_fom(ops, z_l, cfg.contaminant.n_steps, setup.u1_init);
        json prov = {{"xi", wind_json(fom::kTestWind)},
                     {"eval_index", l},
                     {"control", "fom_eval_" + std::to_string(l) + "_z.bin"}};
        save_state_trajectory(io.abs("fom_eval_" + std::to_string(l) + ".bin"), traj, prov);
        save_control(io.abs("fom_eval_" + std::to_string(l) + "_z.bin"), z_l);
        if (l == 0) {
            double j0 = fom::fom_objective(traj, z_l, setup.zone, ops.mass,
                                           cfg.contaminant.gamma);
            metrics["J_fomco_at_ztilde"] = j0;
        }
    }
    metrics["n_fom_evals"] = cfg.hdsa.n_fom_evals;
}

void contaminant_calibrate(const PipelineConfig& cfg, const StageIo& io,
                           std::map<std::string, double>& metrics) {
    ContaminantSetup setup(cfg);
    rom::ReducedModel model = rom::load_reduced_model(io.abs("rom.bin"));
    Vec mass = fom::lumped_mass_diag(setup.grid);
    Vec nodes = delta_nodes(cfg);

    std::vector<hdsa::DiscrepancyData> data;
    std::vector<Mat> deltas;
    for (int l = 0; l < cfg.hdsa.n_fom_evals; ++l) {
        fom::ControlVector z_l =
            load_control(io.abs("fom_eval_" + std::to_string(l) + "_z.bin"));
        fom::StateTrajectory fom_traj =
            load_state_trajectory(io.abs("fom_eval_" + std::to_string(l) + ".bin"));
        rom::ReducedTrajectory rom_traj =
            rom::simulate_rom(model, z_l, cfg.contaminant.n_steps, setup.physics.dt);
        hdsa::DiscrepancyData d;
        d.z = z_l.flatten();
        d.delta = hdsa::contaminant_discrepancy(fom_traj, model, rom_traj, nodes);
        deltas.push_back(d.delta);
        data.push_back(std::move(d));
    }

    hdsa::DiscrepancyBasis basis =
        hdsa::build_discrepancy_basis(deltas, nodes, cfg.hdsa.r_delta);

    hdsa::PriorSpec prior;
    prior.wu_spatial =
        hdsa::laplacian_precision(setup.grid, cfg.hdsa.wu_beta1, cfg.hdsa.wu_beta2, 2);
    prior.time_weights = hdsa::delta_time_weights(nodes);
    Vec mz = control_mass_diag(cfg);
    prior.mz_diag = mz;
    prior.wz = mz.asDiagonal();
    prior.alpha_p = cfg.hdsa.alpha_p;
    prior.alpha_d =
        hdsa::alpha_d_from_data(data, prior.wu_spatial, prior.time_weights,
                                cfg.hdsa.alpha_d_factor);

    hdsa::DiscrepancyPosterior post = hdsa::calibrate_posterior(data, basis, prior);

    json meta = {{"alpha_d", prior.alpha_d},
                 {"alpha_p", prior.alpha_p},
                 {"r_delta", basis.r()},
                 {"n_tau_delta", cfg.hdsa.n_tau_delta},
                 {"n_theta", post.layout.n_theta()},
                 {"seed", cfg.seed}};
    save_posterior(io.abs("posterior.bin"), post, basis, mz, data, meta);

    metrics["alpha_d"] = prior.alpha_d;
    metrics["r_delta"] = basis.r();
    metrics["n_theta"] = post.layout.n_theta();
}

hdsa::SensitivitySystem load_contaminant_sensitivity(const StageIo& io) {
    BlockFile b = read_blocks(io.abs("sensitivity.bin"));
    hdsa::SensitivitySystem sys;
    sys.z_tilde = b.get("z_tilde").col(0);
    sys.H = b.get("H");
    sys.eig.eigenvalues = b.get("eigenvalues").col(0);
    sys.eig.W = b.get("W");
    return sys;
}

void contaminant_update(const PipelineConfig& cfg, const StageIo& io,
                        std::map<std::string, double>& metrics) {
    ContaminantSetup setup(cfg);
    rom::ReducedModel model = rom::load_reduced_model(io.abs("rom.bin"));
    fom::ControlVector z_tilde = load_control(io.abs("z_tilde.bin"));
    LoadedPosterior lp = load_posterior(io.abs("posterior.bin"));

    adj::RomcoProblem prob = make_romco_problem(model, cfg);
    Vec z_flat = z_tilde.flatten();
    Mat H = adj::assemble_hessian(prob, z_flat);
    opt::EigenDecomposition eig = hdsa::retain_leading(H, cfg.hdsa.retention_ratio);

    Vec mass = fom::lumped_mass_diag(setup.grid);
    Vec mtilde = mass.cwiseProduct(setup.zone.psi.cwiseProduct(setup.zone.psi));
    hdsa::DeltaProjection proj = hdsa::project_delta_basis(
        lp.basis, lp.post.layout, model.basis1.V, mtilde, lp.mz_diag);

    hdsa::SensitivitySystem sys;
    sys.z_tilde = z_flat;
    sys.H = H;
    sys.eig = eig;
    sys.b_apply = [&](const Vec& theta) {
        return hdsa::mixed_hessian_apply(prob, proj, z_flat, theta);
    };

    Vec z_bar_flat = hdsa::update_solution(sys, lp.post.mean, cfg.hdsa.use_projection);
    fom::ControlVector z_bar =
        fom::ControlVector::from_flat(z_bar_flat, prob.n_q, prob.control_times);
    save_control(io.abs("z_bar.bin"), z_bar);

    BlockFile sb;
    sb.add("z_tilde", z_flat);
    sb.add("H", H);
    sb.add("eigenvalues", eig.eigenvalues);
    sb.add("W", eig.W);
    write_blocks(io.abs("sensitivity.bin"), sb);
    json meta = {{"retained_r", eig.r()},
                 {"decay_ratio", eig.decay_ratio()},
                 {"use_projection", cfg.hdsa.use_projection}};
    write_text_file(io.abs("sensitivity.bin.json"), meta.dump(2) + "\n");

    metrics["retained_r"] = eig.r();
    metrics["decay_ratio"] = eig.decay_ratio();
    metrics["update_norm"] = (z_bar_flat - z_flat).norm();
}

void contaminant_sample(const PipelineConfig& cfg, const StageIo& io,
                        std::map<std::string, double>& metrics) {
    ContaminantSetup setup(cfg);
    rom::ReducedModel model = rom::load_reduced_model(io.abs("rom.bin"));
    LoadedPosterior lp = load_posterior(io.abs("posterior.bin"));
    hdsa::SensitivitySystem sys = load_contaminant_sensitivity(io);

    adj::RomcoProblem prob = make_romco_problem(model, cfg);
    Vec mass = fom::lumped_mass_diag(setup.grid);
    Vec mtilde = mass.cwiseProduct(setup.zone.psi.cwiseProduct(setup.zone.psi));
    hdsa::DeltaProjection proj = hdsa::project_delta_basis(
        lp.basis, lp.post.layout, model.basis1.V, mtilde, lp.mz_diag);
    Vec z_flat = sys.z_tilde;
    sys.b_apply = [&](const Vec& theta) {
        return hdsa::mixed_hessian_apply(prob, proj, z_flat, theta);
    };

    auto samples = hdsa::posterior_control_samples(
        lp.post, sys, cfg.hdsa.n_samples, cfg.seed + cfg.hdsa.sample_seed_offset,
        cfg.hdsa.use_projection);
    Mat sm(z_flat.size(), cfg.hdsa.n_samples);
    for (int i = 0; i < cfg.hdsa.n_samples; ++i) sm.col(i) = samples[static_cast<std::size_t>(i)];
    BlockFile sb;
    sb.add("samples", sm);
    write_blocks(io.abs("samples.bin"), sb);
    metrics["n_samples"] = cfg.hdsa.n_samples;
}

void contaminant_report(const PipelineConfig& cfg, const StageIo& io,
                        std::map<std::string, double>& metrics) {
    ContaminantSetup setup(cfg);
    fom::FomOperators ops = fom::assemble_fom(setup.grid, fom::kTestWind, setup.physics);
    fom::ControlVector z_tilde = load_control(io.abs("z_tilde.bin"));
    fom::ControlVector z_bar = load_control(io.abs("z_bar.bin"));

    // The z~ evaluation is the logged fom-eval artifact; the z-bar run is
    // the one extra validation evaluation.
    fom::StateTrajectory traj_tilde = load_state_trajectory(io.abs("fom_eval_0.bin"));
    fom::ControlVector z_eval0 = load_control(io.abs("fom_eval_0_z.bin"));
    fom::StateTrajectory traj_bar =
        fom::simulate_fom(ops, z_bar, cfg.contaminant.n_steps, setup.u1_init);

    double j_tilde = fom::fom_objective(traj_tilde, z_eval0, setup.zone, ops.mass,
                                        cfg.contaminant.gamma);
    double j_bar =
        fom::fom_objective(traj_bar, z_bar, setup.zone, ops.mass, cfg.contaminant.gamma);
    double reduction = 100.0 * (j_tilde - j_bar) / j_tilde;

    Vec load_tilde = fom::zone_load_series(traj_tilde, setup.zone, ops.mass);
    Vec load_bar = fom::zone_load_series(traj_bar, setup.zone, ops.mass);
    std::vector<std::string> rows;
    for (int s = 0; s < traj_bar.times.size(); ++s) {
        rows.push_back(fmt(traj_bar.times(s)) + "," + fmt(load_tilde(s)) + "," +
                       fmt(load_bar(s)));
    }
    write_csv(io.abs("objective_vs_time.csv"), "t,zone_load_ztilde,zone_load_zbar", rows);

    rows.clear();
    for (int j = 0; j < z_tilde.n_s(); ++j)
        for (int i = 0; i < z_tilde.n_q(); ++i)
            rows.push_back(std::to_string(i) + "," + fmt(z_tilde.time_nodes(j)) + "," +
                           fmt(z_tilde.q_nodes(i, j)) + "," + fmt(z_bar.q_nodes(i, j)));
    write_csv(io.abs("controls.csv"), "component,t,q_tilde,q_bar", rows);

    json report = {{"scenario", "contaminant"},
                   {"J_fomco_at_ztilde", j_tilde},
                   {"J_fomco_at_zbar", j_bar},
                   {"reduction_pct", reduction},
                   {"n_fom_evals_online", cfg.hdsa.n_fom_evals},
                   {"seed", cfg.seed}};
    write_text_file(io.abs("report.json"), report.dump(2) + "\n");

    metrics["J_fomco_at_ztilde"] = j_tilde;
    metrics["J_fomco_at_zbar"] = j_bar;
    metrics["reduction_pct"] = reduction;
}

void run_contaminant_stage(Stage stage, const PipelineConfig& cfg, const StageIo& io,
                           std::map<std::string, double>& metrics) {
    switch (stage) {
        case Stage::GenData: contaminant_gen_data(cfg, io, metrics); break;
        case Stage::BuildRom: contaminant_build_rom(cfg, io, metrics); break;
        case Stage::Optimize: contaminant_optimize(cfg, io, metrics); break;
        case Stage::FomEval: contaminant_fom_eval(cfg, io, metrics); break;
        case Stage::Calibrate: contaminant_calibrate(cfg, io, metrics); break;
        case Stage::Update: contaminant_update(cfg, io, metrics); break;
        case Stage::Sample: contaminant_sample(cfg, io, metrics); break;
        case Stage::Report: contaminant_report(cfg, io, metrics); break;
    }
}

}  // namespace

}  // namespace romopt::cli

// ---------------------------------------------------------------------------
// Fire pipeline
// ---------------------------------------------------------------------------

namespace romopt::cli {

namespace {

fire::FireScenario make_scenario(const PipelineConfig& cfg, bool test_wind) {
    fire::FireScenario sc;
    sc.grid = fom::Grid2D::uniform(cfg.fire.nx, cfg.fire.ny,
                                   (cfg.fire.nx - 1) * cfg.fire.cell,
                                   (cfg.fire.ny - 1) * cfg.fire.cell);
    sc.wind = test_wind ? Vec2(cfg.fire.wind_test_x, cfg.fire.wind_test_y)
                        : Vec2(cfg.fire.wind_train_x, cfg.fire.wind_train_y);
    sc.base_rate = cfg.fire.base_rate;
    if (cfg.fire.fuel_map_file.empty()) {
        sc.fuel_map = Vec::Ones(sc.grid.n_nodes());
    } else {
        if (!fs::exists(cfg.fire.fuel_map_file))
            throw MissingArtifact("fuel map file not found: " + cfg.fire.fuel_map_file);
        sc.fuel_map = read_blocks(cfg.fire.fuel_map_file).get("fuel").col(0);
    }
    sc.t_final_h = cfg.fire.t_final_hours;
    sc.obs_times_h = Vec::LinSpaced(cfg.fire.n_obs, 2.0, 1.0 + cfg.fire.n_obs);
    sc.dt_s = cfg.fire.dt_seconds;
    return sc;
}

void save_obs(const std::string& path, const fire::ObservationSet& obs, const json& prov) {
    TrajectoryFile t;
    t.times = obs.times_h;
    t.fields = {obs.Y};
    write_trajectory(path, t);
    write_text_file(path + ".json", prov.dump(2) + "\n");
}

fire::ObservationSet load_obs(const std::string& path) {
    TrajectoryFile t = read_trajectory(path);
    fire::ObservationSet obs;
    obs.times_h = t.times;
    obs.Y = t.fields.at(0);
    return obs;
}

std::vector<Vec2> draw_ignitions(const PipelineConfig& cfg, std::uint64_t stream, int count) {
    Rng rng(Rng(cfg.seed).spawn(stream).raw());
    std::vector<Vec2> out;
    for (int i = 0; i < count; ++i) {
        double x = rng.uniform(cfg.fire.ignition_min, cfg.fire.ignition_max);
        double y = rng.uniform(cfg.fire.ignition_min, cfg.fire.ignition_max);
        out.emplace_back(x, y);
    }
    return out;
}

void fire_gen_data(const PipelineConfig& cfg, const StageIo& io,
                   std::map<std::string, double>& metrics) {
    fire::FireScenario train_sc = make_scenario(cfg, false);
    fire::FireScenario test_sc = make_scenario(cfg, true);

    auto train_pts = draw_ignitions(cfg, 1, cfg.fire.n_train + cfg.fire.n_val);
    std::vector<fire::IgnitionPoint> pts;
    for (const auto& z : train_pts) pts.push_back({z});
    auto trajs = fire::batch_simulate_fire(pts, train_sc);
    for (std::size_t i = 0; i < trajs.size(); ++i) {
        TrajectoryFile t;
        t.times = trajs[i].times_h;
        t.fields = {trajs[i].u};
        std::string path = io.abs("fire_train_" + std::to_string(i) + ".bin");
        write_trajectory(path, t);
        json prov = {{"ignition", {train_pts[i](0), train_pts[i](1)}},
                     {"wind", {train_sc.wind(0), train_sc.wind(1)}},
                     {"split", i < static_cast<std::size_t>(cfg.fire.n_train) ? "train" : "val"}};
        write_text_file(path + ".json", prov.dump(2) + "\n");
    }

    auto test_pts = draw_ignitions(cfg, 2, cfg.fire.n_test);
    std::vector<fire::IgnitionPoint> tpts;
    for (const auto& z : test_pts) tpts.push_back({z});
    auto test_trajs = fire::batch_simulate_fire(tpts, test_sc);
    Mat truth(2, cfg.fire.n_test);
    for (int k = 0; k < cfg.fire.n_test; ++k) {
        truth.col(k) = test_pts[static_cast<std::size_t>(k)];
        fire::ObservationSet obs = fire::signed_distance_obs(
            test_trajs[static_cast<std::size_t>(k)], test_sc.grid, test_sc.obs_times_h);
        json prov = {{"ignition", {test_pts[k](0), test_pts[k](1)}},
                     {"wind", {test_sc.wind(0), test_sc.wind(1)}},
                     {"split", "test"}};
        save_obs(io.abs("fire_obs_" + std::to_string(k) + ".bin"), obs, prov);
    }
    BlockFile tb;
    tb.add("z_true", truth);
    write_blocks(io.abs("fire_truth.bin"), tb);

    metrics["n_train"] = cfg.fire.n_train;
    metrics["n_val"] = cfg.fire.n_val;
    metrics["n_test"] = cfg.fire.n_test;
}

void fire_build_rom(const PipelineConfig& cfg, const StageIo& io,
                    std::map<std::string, double>& metrics) {
    fire::FireScenario sc = make_scenario(cfg, false);
    const int total = cfg.fire.n_train + cfg.fire.n_val;
    std::vector<Mat> fields;
    for (int i = 0; i < total; ++i) {
        TrajectoryFile t = read_trajectory(io.abs("fire_train_" + std::to_string(i) + ".bin"));
        fields.push_back(t.fields.at(0));
    }
    Mat snaps(sc.grid.n_nodes(), 0);
    for (int i = 0; i < cfg.fire.n_train; ++i) {
        Eigen::Index c = snaps.cols();
        snaps.conservativeResize(Eigen::NoChange, c + fields[i].cols());
        snaps.rightCols(fields[i].cols()) = fields[i];
    }
    rom::PodBasis basis = rom::weighted_pod(snaps, Vec::Ones(snaps.rows()), 1e-12);

    // Projection rank: smallest r with <= proj_tol relative l2 error on the
    // validation trajectories (cumulative coefficient energies).
    double val_total = 0.0;
    Vec captured = Vec::Zero(basis.r());
    for (int i = cfg.fire.n_train; i < total; ++i) {
        val_total += fields[i].squaredNorm();
        Mat coefs = basis.V.transpose() * fields[i];
        for (int r = 0; r < basis.r(); ++r) captured(r) += coefs.row(r).squaredNorm();
    }
    int rank = basis.r();
    double acc = 0.0;
    for (int r = 0; r < basis.r(); ++r) {
        acc += captured(r);
        double rel = std::sqrt(std::max(val_total - acc, 0.0) / val_total);
        if (rel <= cfg.flowmap.proj_tol) {
            rank = r + 1;
            break;
        }
    }
    Mat V = basis.V.leftCols(rank);

    fml::FlowmapDataset data;
    for (int i = 0; i < total; ++i) {
        Mat red = V.transpose() * fields[i];
        if (i < cfg.fire.n_train)
            data.train.push_back(red);
        else
            data.val.push_back(red);
    }
    fml::TrainSchedule sched;
    sched.epochs = cfg.flowmap.epochs;
    sched.lr_start = cfg.flowmap.lr_start;
    sched.lr_end = cfg.flowmap.lr_end;
    sched.p_steps = cfg.flowmap.p_steps;
    sched.seed = cfg.seed;
    std::vector<int> hidden(static_cast<std::size_t>(cfg.flowmap.hidden_layers),
                            cfg.flowmap.hidden_width);
    fml::MlpParams net = fml::train_flowmap(data, sched, hidden, rank);

    double val_err = fml::one_step_error(net, data.val.empty() ? data.train : data.val);

    BlockFile pb;
    pb.add("V", V);
    write_blocks(io.abs("pod.bin"), pb);
    fml::save_mlp(io.abs("mlp.bin"), net);
    json meta = {{"r", rank},
                 {"hidden_width", cfg.flowmap.hidden_width},
                 {"hidden_layers", cfg.flowmap.hidden_layers},
                 {"epochs", cfg.flowmap.epochs},
                 {"lr_start", cfg.flowmap.lr_start},
                 {"lr_end", cfg.flowmap.lr_end},
                 {"p_steps", cfg.flowmap.p_steps},
                 {"seed", cfg.seed},
                 {"val_one_step_error", val_err}};
    write_text_file(io.abs("mlp.bin.json"), meta.dump(2) + "\n");

    metrics["r"] = rank;
    metrics["val_one_step_error"] = val_err;
}

void fire_optimize(const PipelineConfig& cfg, const StageIo& io,
                   std::map<std::string, double>& metrics) {
    fire::FireScenario sc = make_scenario(cfg, false);
    Mat V = read_blocks(io.abs("pod.bin")).get("V");
    fml::MlpParams net = fml::load_mlp(io.abs("mlp.bin"));

    Mat z_tilde(2, cfg.fire.n_test);
    double mean_misfit = 0.0;
    for (int k = 0; k < cfg.fire.n_test; ++k) {
        fire::ObservationSet obs = load_obs(io.abs("fire_obs_" + std::to_string(k) + ".bin"));
        fml::FireRomco prob = fml::FireRomco::make(net, V, sc.grid, obs);
        Vec2 z0 = fml::ignition_initial_guess(obs, sc.grid);
        fml::IgnitionResult res = fml::ignition_romco(prob, z0);
        if (!res.in_domain)
            throw Error("ignition estimate left the domain for test case " +
                        std::to_string(k));
        z_tilde.col(k) = res.z;
        mean_misfit += res.misfit;
    }
    BlockFile zb;
    zb.add("z_tilde", z_tilde);
    write_blocks(io.abs("z_tilde.bin"), zb);
    metrics["mean_rom_misfit"] = mean_misfit / cfg.fire.n_test;
}

void fire_fom_eval(const PipelineConfig& cfg, const StageIo& io,
                   std::map<std::string, double>& metrics) {
    fire::FireScenario sc = make_scenario(cfg, true);
    Mat z_tilde = read_blocks(io.abs("z_tilde.bin")).get("z_tilde");

    double mean_rel = 0.0;
    for (int k = 0; k < cfg.fire.n_test; ++k) {
        fire::ObservationSet obs = load_obs(io.abs("fire_obs_" + std::to_string(k) + ".bin"));
        Vec2 z(z_tilde(0, k), z_tilde(1, k));
        fire::FireTrajectory traj = fire::simulate_fire({z}, sc);
        fire::ObservationSet sim = fire::signed_distance_obs(traj, sc.grid, sc.obs_times_h);
        json prov = {{"ignition", {z(0), z(1)}},
                     {"wind", {sc.wind(0), sc.wind(1)}},
                     {"role", "discrepancy-data"}};
        save_obs(io.abs("fire_eval_" + std::to_string(k) + ".bin"), sim, prov);
        mean_rel += (sim.Y - obs.Y).squaredNorm() / obs.Y.squaredNorm();
    }
    metrics["mean_rel_misfit_at_ztilde"] = mean_rel / cfg.fire.n_test;
    metrics["n_fom_evals"] = cfg.fire.n_test * cfg.hdsa.n_fom_evals;
}

void fire_calibrate(const PipelineConfig& cfg, const StageIo& io,
                    std::map<std::string, double>& metrics) {
    fire::FireScenario sc = make_scenario(cfg, false);
    Mat V = read_blocks(io.abs("pod.bin")).get("V");
    fml::MlpParams net = fml::load_mlp(io.abs("mlp.bin"));
    Mat z_tilde = read_blocks(io.abs("z_tilde.bin")).get("z_tilde");

    SpMat wu = hdsa::laplacian_precision(sc.grid, cfg.hdsa.wu_beta1, cfg.hdsa.wu_beta2, 1);
    Vec mz = Vec::Ones(2);
    Mat wz = Mat::Identity(2, 2) / (cfg.hdsa.decision_scale * cfg.hdsa.decision_scale);

    for (int k = 0; k < cfg.fire.n_test; ++k) {
        fire::ObservationSet sim = load_obs(io.abs("fire_eval_" + std::to_string(k) + ".bin"));
        Vec2 z(z_tilde(0, k), z_tilde(1, k));

        // ROM prediction at z~ on the observation steps.
        Vec u0 = V.transpose() * fire::ignition_init({z}, sc.grid);
        Mat states = fml::rollout(net, u0, static_cast<int>(std::lround(sim.times_h.maxCoeff())));
        Mat delta(sc.grid.n_nodes(), sim.times_h.size());
        for (int j = 0; j < sim.times_h.size(); ++j) {
            int step = static_cast<int>(std::lround(sim.times_h(j)));
            delta.col(j) = sim.Y.col(j) - V * states.col(step);
        }

        hdsa::DiscrepancyData d;
        d.z = z;
        d.delta = delta;
        std::vector<hdsa::DiscrepancyData> data{d};
        hdsa::DiscrepancyBasis basis =
            hdsa::build_discrepancy_basis({delta}, sim.times_h, cfg.hdsa.r_delta);

        hdsa::PriorSpec prior;
        prior.wu_spatial = wu;
        prior.time_weights = hdsa::delta_time_weights(sim.times_h);
        prior.wz = wz;
        prior.mz_diag = mz;
        prior.alpha_p = cfg.hdsa.alpha_p;
        prior.alpha_d = hdsa::alpha_d_from_data(data, wu, prior.time_weights,
                                                cfg.hdsa.alpha_d_factor);
        hdsa::DiscrepancyPosterior post = hdsa::calibrate_posterior(data, basis, prior);
        json meta = {{"alpha_d", prior.alpha_d},
                     {"alpha_p", prior.alpha_p},
                     {"r_delta", basis.r()},
                     {"case", k}};
        save_posterior(io.abs("fire_posterior_" + std::to_string(k) + ".bin"), post, basis,
                       mz, data, meta);
        metrics["alpha_d_case" + std::to_string(k)] = prior.alpha_d;
    }
}

// Fire sensitivity pieces shared by update and sample.
struct FireCaseSystem {
    fml::FireRomco prob;        // base problem (no delta)
    hdsa::SensitivitySystem sys;
    fml::FireDelta delta_tpl;   // projections filled; c0/CL set per theta
    LoadedPosterior lp;
    fire::ObservationSet obs;
    Mat V;

    Vec b_apply_theta(const Vec& theta) {
        auto build = [&](const Vec& th) {
            fml::FireDelta d = delta_tpl;
            d.c0.clear();
            d.CL.clear();
            const auto& lay = lp.post.layout;
            for (int tau = 0; tau < lay.n_tau; ++tau) {
                Eigen::Map<const Mat> T(th.data() + tau * lay.block_size(), lay.r_d,
                                        1 + lay.n_z);
                d.c0.push_back(T.col(0));
                d.CL.push_back(T.rightCols(lay.n_z));
            }
            return d;
        };
        fml::FireDelta dp = build(theta);
        fml::FireDelta dm = build(Vec(-theta));
        fml::FireRomco p = prob;
        Vec2 zt(sys.z_tilde(0), sys.z_tilde(1));
        p.delta = &dp;
        Vec2 gp = fml::fire_romco_gradient(p, zt);
        p.delta = &dm;
        Vec2 gm = fml::fire_romco_gradient(p, zt);
        return Vec(0.5 * (gp - gm));
    }
};

void fire_update(const PipelineConfig& cfg, const StageIo& io,
                 std::map<std::string, double>& metrics) {
    fire::FireScenario sc = make_scenario(cfg, false);
    Mat V = read_blocks(io.abs("pod.bin")).get("V");
    fml::MlpParams net = fml::load_mlp(io.abs("mlp.bin"));
    Mat z_tilde = read_blocks(io.abs("z_tilde.bin")).get("z_tilde");

    Mat z_bar(2, cfg.fire.n_test);
    BlockFile sens;
    for (int k = 0; k < cfg.fire.n_test; ++k) {
        fire::ObservationSet obs = load_obs(io.abs("fire_obs_" + std::to_string(k) + ".bin"));
        LoadedPosterior lp =
            load_posterior(io.abs("fire_posterior_" + std::to_string(k) + ".bin"));
        fml::FireRomco prob = fml::FireRomco::make(net, V, sc.grid, obs);
        Vec2 zt(z_tilde(0, k), z_tilde(1, k));

        // Dense 2x2 Hessian by central differences of the ROMCO gradient.
        const double h = 1.0;
        Mat H(2, 2);
        for (int d = 0; d < 2; ++d) {
            Vec2 zp = zt, zm = zt;
            zp(d) += h;
            zm(d) -= h;
            Vec2 gp = fml::fire_romco_gradient(prob, zp);
            Vec2 gm = fml::fire_romco_gradient(prob, zm);
            H.col(d) = (gp - gm) / (2.0 * h);
        }
        H = 0.5 * (H + H.transpose()).eval();
        opt::EigenDecomposition eig = hdsa::retain_leading(H, cfg.hdsa.retention_ratio);

        FireCaseSystem cs;
        cs.prob = prob;
        cs.lp = lp;
        cs.obs = obs;
        cs.V = V;
        cs.delta_tpl.Cvd = lp.basis.Vdelta.transpose() * V;
        cs.delta_tpl.dY = lp.basis.Vdelta.transpose() * obs.Y;
        cs.sys.z_tilde = Vec(zt);
        cs.sys.H = H;
        cs.sys.eig = eig;
        hdsa::SensitivitySystem sys;
        sys.z_tilde = Vec(zt);
        sys.H = H;
        sys.eig = eig;
        sys.b_apply = [&cs](const Vec& theta) { return cs.b_apply_theta(theta); };

        Vec zb = hdsa::update_solution(sys, lp.post.mean, cfg.hdsa.use_projection);
        z_bar.col(k) = zb;

        sens.add("H_" + std::to_string(k), H);
        sens.add("eigenvalues_" + std::to_string(k), eig.eigenvalues);
        sens.add("W_" + std::to_string(k), eig.W);
        metrics["retained_r_case" + std::to_string(k)] = eig.r();
    }
    BlockFile zb;
    zb.add("z_bar", z_bar);
    write_blocks(io.abs("z_bar.bin"), zb);
    write_blocks(io.abs("fire_sens.bin"), sens);
}

void fire_sample(const PipelineConfig& cfg, const StageIo& io,
                 std::map<std::string, double>& metrics) {
    fire::FireScenario sc = make_scenario(cfg, false);
    Mat V = read_blocks(io.abs("pod.bin")).get("V");
    fml::MlpParams net = fml::load_mlp(io.abs("mlp.bin"));
    Mat z_tilde = read_blocks(io.abs("z_tilde.bin")).get("z_tilde");
    BlockFile sens = read_blocks(io.abs("fire_sens.bin"));

    for (int k = 0; k < cfg.fire.n_test; ++k) {
        fire::ObservationSet obs = load_obs(io.abs("fire_obs_" + std::to_string(k) + ".bin"));
        LoadedPosterior lp =
            load_posterior(io.abs("fire_posterior_" + std::to_string(k) + ".bin"));
        FireCaseSystem cs;
        cs.prob = fml::FireRomco::make(net, V, sc.grid, obs);
        cs.lp = lp;
        cs.obs = obs;
        cs.V = V;
        cs.delta_tpl.Cvd = lp.basis.Vdelta.transpose() * V;
        cs.delta_tpl.dY = lp.basis.Vdelta.transpose() * obs.Y;
        cs.sys.z_tilde = Vec(Vec2(z_tilde(0, k), z_tilde(1, k)));
        cs.sys.H = sens.get("H_" + std::to_string(k));
        cs.sys.eig.eigenvalues = sens.get("eigenvalues_" + std::to_string(k)).col(0);
        cs.sys.eig.W = sens.get("W_" + std::to_string(k));
        hdsa::SensitivitySystem sys = cs.sys;
        sys.b_apply = [&cs](const Vec& theta) { return cs.b_apply_theta(theta); };

        auto samples = hdsa::posterior_control_samples(
            lp.post, sys, cfg.hdsa.n_samples,
            cfg.seed + cfg.hdsa.sample_seed_offset + static_cast<std::uint64_t>(k),
            cfg.hdsa.use_projection);
        Mat sm(2, cfg.hdsa.n_samples);
        for (int i = 0; i < cfg.hdsa.n_samples; ++i)
            sm.col(i) = samples[static_cast<std::size_t>(i)];
        BlockFile sb;
        sb.add("samples", sm);
        write_blocks(io.abs("fire_samples_" + std::to_string(k) + ".bin"), sb);
    }
    metrics["n_samples"] = cfg.hdsa.n_samples;
}

void fire_report(const PipelineConfig& cfg, const StageIo& io,
                 std::map<std::string, double>& metrics) {
    fire::FireScenario sc = make_scenario(cfg, true);
    Mat z_tilde = read_blocks(io.abs("z_tilde.bin")).get("z_tilde");
    Mat z_bar = read_blocks(io.abs("z_bar.bin")).get("z_bar");
    Mat truth = read_blocks(io.abs("fire_truth.bin")).get("z_true");

    std::vector<std::string> misfit_rows, error_rows, ellipse_rows;
    double mean_red_misfit = 0.0, mean_red_err = 0.0;
    int inside_count = 0;
    for (int k = 0; k < cfg.fire.n_test; ++k) {
        fire::ObservationSet obs = load_obs(io.abs("fire_obs_" + std::to_string(k) + ".bin"));
        fire::ObservationSet sim_tilde =
            load_obs(io.abs("fire_eval_" + std::to_string(k) + ".bin"));
        Vec2 zt(z_tilde(0, k), z_tilde(1, k));
        Vec2 zb(z_bar(0, k), z_bar(1, k));
        Vec2 zstar(truth(0, k), truth(1, k));

        double y2 = obs.Y.squaredNorm();
        double mis_tilde = (sim_tilde.Y - obs.Y).squaredNorm() / y2;
        // One validation FOM run at the updated ignition point.
        double mis_bar = fire::ignition_misfit({zb}, sc, obs) / y2;
        double red_mis = 100.0 * (mis_tilde - mis_bar) / mis_tilde;

        double err_tilde = (zt - zstar).norm();
        double err_bar = (zb - zstar).norm();
        double red_err = 100.0 * (err_tilde - err_bar) / err_tilde;

        misfit_rows.push_back(std::to_string(k + 1) + "," + fmt(mis_tilde) + "," +
                              fmt(mis_bar) + "," + fmt(red_mis));
        error_rows.push_back(std::to_string(k + 1) + "," + fmt(err_tilde) + "," +
                             fmt(err_bar) + "," + fmt(red_err));
        mean_red_misfit += red_mis;
        mean_red_err += red_err;

        // 95% ellipse from the posterior decision samples.
        Mat sm = read_blocks(io.abs("fire_samples_" + std::to_string(k) + ".bin"))
                     .get("samples");
        std::vector<Vec2> pts;
        for (int i = 0; i < sm.cols(); ++i) pts.emplace_back(sm(0, i), sm(1, i));
        hdsa::Ellipse e = hdsa::confidence_ellipse_from_samples(pts, 0.95);
        bool inside = hdsa::ellipse_contains(e, zstar);
        inside_count += inside ? 1 : 0;
        ellipse_rows.push_back(std::to_string(k + 1) + "," + fmt(e.center(0)) + "," +
                               fmt(e.center(1)) + "," + fmt(e.semi_major) + "," +
                               fmt(e.semi_minor) + "," + fmt(e.angle) + "," +
                               (inside ? "1" : "0"));
    }
    write_csv(io.abs("misfit_table.csv"),
              "case,rel_misfit_at_ztilde,rel_misfit_at_zbar,reduction_pct", misfit_rows);
    write_csv(io.abs("error_table.csv"),
              "case,error_at_ztilde_m,error_at_zbar_m,reduction_pct", error_rows);
    write_csv(io.abs("ellipse.csv"),
              "case,center_x,center_y,semi_major,semi_minor,angle_rad,truth_inside",
              ellipse_rows);

    json report = {{"scenario", "fire"},
                   {"mean_misfit_reduction_pct", mean_red_misfit / cfg.fire.n_test},
                   {"mean_error_reduction_pct", mean_red_err / cfg.fire.n_test},
                   {"truth_inside_ellipse", inside_count},
                   {"n_test", cfg.fire.n_test},
                   {"seed", cfg.seed}};
    write_text_file(io.abs("report.json"), report.dump(2) + "\n");

    metrics["mean_misfit_reduction_pct"] = mean_red_misfit / cfg.fire.n_test;
    metrics["mean_error_reduction_pct"] = mean_red_err / cfg.fire.n_test;
    metrics["truth_inside_ellipse"] = inside_count;
}

void run_fire_stage(Stage stage, const PipelineConfig& cfg, const StageIo& io,
                    std::map<std::string, double>& metrics) {
    switch (stage) {
        case Stage::GenData: fire_gen_data(cfg, io, metrics); break;
        case Stage::BuildRom: fire_build_rom(cfg, io, metrics); break;
        case Stage::Optimize: fire_optimize(cfg, io, metrics); break;
        case Stage::FomEval: fire_fom_eval(cfg, io, metrics); break;
        case Stage::Calibrate: fire_calibrate(cfg, io, metrics); break;
        case Stage::Update: fire_update(cfg, io, metrics); break;
        case Stage::Sample: fire_sample(cfg, io, metrics); break;
        case Stage::Report: fire_report(cfg, io, metrics); break;
    }
}

// Artifact lists per stage, used for digest bookkeeping.
void declare_stage_io(Stage stage, const PipelineConfig& cfg, bool is_fire, StageIo& io) {
    auto seq = [](const std::string& stem, int n, const std::string& ext) {
        std::vector<std::string> v;
        for (int i = 0; i < n; ++i) v.push_back(stem + std::to_string(i) + ext);
        return v;
    };
    if (!is_fire) {
        const int n_c = cfg.rom.n_controls;
        const int n_e = cfg.hdsa.n_fom_evals;
        switch (stage) {
            case Stage::GenData:
                io.outputs = seq("train_traj_", n_c, ".bin");
                io.outputs.push_back("controls.bin");
                break;
            case Stage::BuildRom:
                io.inputs = seq("train_traj_", n_c, ".bin");
                io.inputs.push_back("controls.bin");
                io.outputs = {"rom.bin", "rom.bin.json"};
                break;
            case Stage::Optimize:
                io.inputs = {"rom.bin"};
                io.outputs = {"z_tilde.bin", "optimize_log.jsonl"};
                break;
            case Stage::FomEval:
                io.inputs = {"z_tilde.bin"};
                io.outputs = seq("fom_eval_", n_e, ".bin");
                for (auto& s : seq("fom_eval_", n_e, "_z.bin")) io.outputs.push_back(s);
                break;
            case Stage::Calibrate:
                io.inputs = {"rom.bin", "z_tilde.bin"};
                for (auto& s : seq("fom_eval_", n_e, ".bin")) io.inputs.push_back(s);
                for (auto& s : seq("fom_eval_", n_e, "_z.bin")) io.inputs.push_back(s);
                io.outputs = {"posterior.bin", "posterior.bin.json"};
                break;
            case Stage::Update:
                io.inputs = {"rom.bin", "z_tilde.bin", "posterior.bin"};
                io.outputs = {"z_bar.bin", "sensitivity.bin", "sensitivity.bin.json"};
                break;
            case Stage::Sample:
                io.inputs = {"rom.bin", "posterior.bin", "sensitivity.bin"};
                io.outputs = {"samples.bin"};
                break;
            case Stage::Report:
                io.inputs = {"z_tilde.bin", "z_bar.bin", "fom_eval_0.bin", "fom_eval_0_z.bin"};
                io.outputs = {"report.json", "objective_vs_time.csv", "controls.csv"};
                break;
        }
    } else {
        const int n_tv = cfg.fire.n_train + cfg.fire.n_val;
        const int n_t = cfg.fire.n_test;
        switch (stage) {
            case Stage::GenData:
                io.outputs = seq("fire_train_", n_tv, ".bin");
                for (auto& s : seq("fire_obs_", n_t, ".bin")) io.outputs.push_back(s);
                io.outputs.push_back("fire_truth.bin");
                break;
            case Stage::BuildRom:
                io.inputs = seq("fire_train_", n_tv, ".bin");
                io.outputs = {"pod.bin", "mlp.bin", "mlp.bin.json"};
                break;
            case Stage::Optimize:
                io.inputs = seq("fire_obs_", n_t, ".bin");
                io.inputs.push_back("pod.bin");
                io.inputs.push_back("mlp.bin");
                io.outputs = {"z_tilde.bin"};
                break;
            case Stage::FomEval:
                io.inputs = seq("fire_obs_", n_t, ".bin");
                io.inputs.push_back("z_tilde.bin");
                io.outputs = seq("fire_eval_", n_t, ".bin");
                break;
            case Stage::Calibrate:
                io.inputs = seq("fire_eval_", n_t, ".bin");
                io.inputs.push_back("pod.bin");
                io.inputs.push_back("mlp.bin");
                io.inputs.push_back("z_tilde.bin");
                io.outputs = seq("fire_posterior_", n_t, ".bin");
                break;
            case Stage::Update:
                io.inputs = seq("fire_posterior_", n_t, ".bin");
                for (auto& s : seq("fire_obs_", n_t, ".bin")) io.inputs.push_back(s);
                io.inputs.push_back("pod.bin");
                io.inputs.push_back("mlp.bin");
                io.inputs.push_back("z_tilde.bin");
                io.outputs = {"z_bar.bin", "fire_sens.bin"};
                break;
            case Stage::Sample:
                io.inputs = seq("fire_posterior_", n_t, ".bin");
                for (auto& s : seq("fire_obs_", n_t, ".bin")) io.inputs.push_back(s);
                io.inputs.push_back("pod.bin");
                io.inputs.push_back("mlp.bin");
                io.inputs.push_back("z_tilde.bin");
                io.inputs.push_back("fire_sens.bin");
                io.outputs = seq("fire_samples_", n_t, ".bin");
                break;
            case Stage::Report:
                io.inputs = {"z_tilde.bin", "z_bar.bin", "fire_truth.bin"};
                for (auto& s : seq("fire_obs_", n_t, ".bin")) io.inputs.push_back(s);
                for (auto& s : seq("fire_eval_", n_t, ".bin")) io.inputs.push_back(s);
                for (auto& s : seq("fire_samples_", n_t, ".bin")) io.inputs.push_back(s);
                io.outputs = {"report.json", "misfit_table.csv", "error_table.csv",
                              "ellipse.csv"};
                break;
        }
    }
}

}  // namespace

StageOutcome run_stage(Stage stage, const PipelineConfig& cfg, std::string stage_dir) {
    if (stage_dir.empty()) stage_dir = cfg.output_dir;
    fs::path dir(stage_dir);
    DirLock lock(dir);

    StageIo io;
    io.dir = dir;
    io.manifest = load_manifest(dir);
    std::string cfg_text = cfg.to_json_string();
    io.config_digest = digest_hex(fnv1a64(cfg_text.data(), cfg_text.size()));

    const bool is_fire = (cfg.scenario == "fire");
    declare_stage_io(stage, cfg, is_fire, io);

    io.require_inputs();
    if (io.up_to_date(stage_name(stage))) {
        std::fprintf(stderr, "[%s] up-to-date, skipping\n", stage_name(stage).c_str());
        StageOutcome out;
        out.up_to_date = true;
        return out;
    }

    auto t0 = std::chrono::steady_clock::now();
    std::map<std::string, double> metrics;
    if (is_fire)
        run_fire_stage(stage, cfg, io, metrics);
    else
        run_contaminant_stage(stage, cfg, io, metrics);
    double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    io.record(stage_name(stage), metrics, wall);
    save_manifest(dir, io.manifest);

    StageOutcome out;
    out.metrics = metrics;
    out.wall_s = wall;
    return out;
}

}  // namespace romopt::cli
