#pragma once

#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "graphrom/config.hpp"
#include "graphrom/dataset.hpp"
#include "graphrom/fem.hpp"
#include "graphrom/grid.hpp"
#include "graphrom/mesh.hpp"
#include "graphrom/parallel.hpp"
#include "graphrom/rollout.hpp"
#include "graphrom/train.hpp"

namespace graphrom {

/// Declares every recognized configuration key with its default. The defaults
/// reproduce the advection-diffusion setup: unit square, circular obstacle of
/// radius 0.15, D = 0.1, b(t) = [1-t, 1-t], g = (x-1)^2 + (y-1)^2, T = 2,
/// dt = 0.02.
inline Config default_config() {
    Config c;
    c.declare("mesh.resolution", "29");
    c.declare("obstacle.kind", "circle");
    c.declare("obstacle.sizes", "0.15"); // sampled uniformly when a list
    c.declare("sample.cx_min", "0");
    c.declare("sample.cx_max", "1");
    c.declare("sample.cy_min", "0.5");
    c.declare("sample.cy_max", "1");
    c.declare("pde.diffusivity", "0.1");
    c.declare("pde.T", "2");
    c.declare("pde.dt", "0.02");
    c.declare("arch.hidden", "32");
    c.declare("arch.mp_steps", "12");
    c.declare("arch.mlp_depth", "2");
    c.declare("train.epochs", "1500");
    c.declare("train.batch_size", "25");
    c.declare("train.lr", "1e-3");
    c.declare("train.decay", "0.1");
    c.declare("train.decay_every", "500");
    c.declare("train.noise_var", "1e-6");
    c.declare("train.w1", "0");
    c.declare("train.w2", "1");
    c.declare("train.checkpoint_every", "0");
    c.declare("ffnn.grid_n", "32");
    c.declare("ffnn.hidden", "512,512,512");
    c.declare("ffnn.epochs", "500");
    return c;
}

inline PdeConfig pde_from_config(const Config& c) {
    PdeConfig p;
    p.diffusivity = c.get_double("pde.diffusivity");
    p.T = c.get_double("pde.T");
    p.dt = c.get_double("pde.dt");
    return p;
}

inline ArchConfig arch_from_config(const Config& c) {
    ArchConfig a;
    a.hidden = c.get_int("arch.hidden");
    a.mp_steps = c.get_int("arch.mp_steps");
    a.mlp_depth = c.get_int("arch.mlp_depth");
    return a;
}

inline TrainConfig train_from_config(const Config& c, std::uint64_t seed, int threads) {
    TrainConfig t;
    t.epochs = c.get_int("train.epochs");
    t.batch_size = c.get_int("train.batch_size");
    t.lr = c.get_double("train.lr");
    t.decay = c.get_double("train.decay");
    t.decay_every = c.get_int("train.decay_every");
    t.noise_var = c.get_double("train.noise_var");
    t.w1 = c.get_double("train.w1");
    t.w2 = c.get_double("train.w2");
    t.checkpoint_every = c.get_int("train.checkpoint_every");
    t.seed = seed;
    t.threads = threads;
    return t;
}

// ---------------------------------------------------------------------------
// gen-data: sample geometries, run the full-order solver, pack the container.
// ---------------------------------------------------------------------------

struct GenDataOptions {
    int n_sims = 100;
    std::uint64_t seed = 0;
    std::string split = "80:20"; // counts or ratio
    int threads = 1;
};

inline std::pair<int, int> parse_split(const std::string& split, int n_sims) {
    const auto colon = split.find(':');
    if (colon == std::string::npos) throw ConfigError("split must look like 80:20");
    int a = 0, b = 0;
    try {
        a = std::stoi(split.substr(0, colon));
        b = std::stoi(split.substr(colon + 1));
    } catch (const std::exception&) {
        throw ConfigError("split must look like 80:20");
    }
    if (a < 0 || b < 0 || a + b == 0) throw ConfigError("split counts must be non-negative");
    if (a + b == n_sims) return {a, b};
    const int train = static_cast<int>(std::llround(static_cast<double>(n_sims) * a / (a + b)));
    return {train, n_sims - train};
}

inline DatasetContainer gen_data(const Config& cfg, const GenDataOptions& opt) {
    const PdeConfig pde = pde_from_config(cfg);
    const ObstacleKind kind = obstacle_kind_from_string(cfg.get_string("obstacle.kind"));
    const std::vector<double> sizes = cfg.get_double_list("obstacle.sizes");
    const int resolution = cfg.get_int("mesh.resolution");

    // Geometry sampling happens up front on a single stream so the container
    // is a pure function of (config, seed) regardless of solver threading.
    Rng mu_rng(derive_seed(opt.seed, "mu"));
    std::vector<GeometryParams> mus;
    for (int i = 0; i < opt.n_sims; ++i) {
        GeometryParams g;
        g.kind = kind;
        g.resolution = resolution;
        if (kind == ObstacleKind::None) {
            mus.push_back(g);
            continue;
        }
        bool accepted = false;
        for (int attempt = 0; attempt < 10000 && !accepted; ++attempt) {
            g.cx = mu_rng.uniform(cfg.get_double("sample.cx_min"), cfg.get_double("sample.cx_max"));
            g.cy = mu_rng.uniform(cfg.get_double("sample.cy_min"), cfg.get_double("sample.cy_max"));
            g.size = sizes[static_cast<std::size_t>(mu_rng.bounded(sizes.size()))];
            try {
                g.validate();
                accepted = true;
            } catch (const Error&) {
            }
        }
        if (!accepted) throw ObstacleTooLarge("could not sample an admissible obstacle");
        mus.push_back(g);
    }

    DatasetContainer out;
    out.sims.resize(static_cast<std::size_t>(opt.n_sims));
    std::vector<std::string> failures(static_cast<std::size_t>(opt.n_sims));
    parallel_for(static_cast<std::size_t>(opt.n_sims), opt.threads, [&](std::size_t i, int) {
        try {
            const Mesh mesh = generate_mesh(mus[i]);
            audit_mesh(mesh);
            const GraphSample graph = mesh_to_graph(mesh);
            const Trajectory traj = solve_trajectory(mesh, pde);

            SimData s;
            s.id = static_cast<int>(i);
            s.mu = mus[i];
            s.q = 1;
            s.dt = pde.dt;
            s.fom_wall_time = traj.wall_time_seconds;
            s.positions = Tensor::zeros({mesh.n_vertices(), 2});
            for (int v = 0; v < mesh.n_vertices(); ++v) {
                s.positions.at(v, 0) = mesh.vertices[static_cast<std::size_t>(v)][0];
                s.positions.at(v, 1) = mesh.vertices[static_cast<std::size_t>(v)][1];
            }
            s.fields = traj.snapshots;
            s.edges = graph.edges;
            s.boundary = graph.boundary;
            out.sims[i] = std::move(s);
        } catch (const Error& e) {
            failures[i] = e.kind() + ": " + e.what();
        } catch (const std::exception& e) {
            failures[i] = std::string("error: ") + e.what();
        }
    });
    for (std::size_t i = 0; i < failures.size(); ++i)
        if (!failures[i].empty())
            throw SolverDiverged("simulation " + std::to_string(i) + " failed: " + failures[i]);

    const auto [n_train, n_test] = parse_split(opt.split, opt.n_sims);
    (void)n_test;
    std::vector<int> ids(static_cast<std::size_t>(opt.n_sims));
    for (int i = 0; i < opt.n_sims; ++i) ids[static_cast<std::size_t>(i)] = i;
    Rng split_rng(derive_seed(opt.seed, "split"));
    split_rng.shuffle(ids);
    out.train_ids.assign(ids.begin(), ids.begin() + n_train);
    out.test_ids.assign(ids.begin() + n_train, ids.end());
    std::sort(out.train_ids.begin(), out.train_ids.end());
    std::sort(out.test_ids.begin(), out.test_ids.end());
    return out;
}

// ---------------------------------------------------------------------------
// train / rollout / eval workflows.
// ---------------------------------------------------------------------------

inline std::vector<SimView> make_sim_views(const DatasetContainer& data, const std::vector<int>& ids) {
    std::vector<SimView> views;
    for (int id : ids) {
        const SimData& s = data.sim_by_id(id);
        SimView v;
        v.graph = data.graph(s);
        v.fields = &s.fields;
        v.dt = s.dt;
        v.id = s.id;
        views.push_back(std::move(v));
    }
    return views;
}

inline Normalizer fit_normalizer_on(const DatasetContainer& data, const std::vector<int>& ids) {
    std::vector<const Tensor*> fields;
    std::vector<double> dts;
    std::vector<Tensor> edge_feats;
    for (int id : ids) {
        const SimData& s = data.sim_by_id(id);
        fields.push_back(&s.fields);
        dts.push_back(s.dt);
        edge_feats.push_back(data.graph(s).edge_features);
    }
    std::vector<const Tensor*> edge_ptrs;
    for (const auto& e : edge_feats) edge_ptrs.push_back(&e);
    return fit_normalizer(fields, dts, edge_ptrs, 1);
}

struct TrainPipelineResult {
    Checkpoint checkpoint;
    std::vector<std::array<double, 3>> history;
};

inline TrainPipelineResult run_training(const DatasetContainer& data, const std::vector<int>& ids,
                                        const ArchConfig& arch, const TrainConfig& cfg,
                                        const std::filesystem::path& out_dir,
                                        bool verbose = false) {
    const Normalizer norm = fit_normalizer_on(data, ids);
    const std::vector<SimView> views = make_sim_views(data, ids);

    TrainHooks hooks;
    const std::string data_hash = io_detail::hex64(data.payload_hash);
    if (cfg.checkpoint_every > 0 || verbose) {
        hooks.on_epoch = [&](int epoch, const ModelParams& p, const Normalizer& n, double loss,
                             double lr) {
            if (verbose && (epoch % 10 == 0 || epoch + 1 == cfg.epochs))
                std::fprintf(stderr, "epoch %d  loss %.6g  lr %.3g\n", epoch, loss, lr);
            if (cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0) {
                Checkpoint ck{p.arch, n, p.flat, cfg.seed, data_hash};
                ck.write(out_dir / ("epoch_" + std::to_string(epoch + 1)));
            }
        };
    }

    const TrainResult tr = train_gnn(views, arch, cfg, norm, hooks);

    TrainPipelineResult out;
    out.checkpoint = Checkpoint{tr.params.arch, tr.normalizer, tr.params.flat, cfg.seed, data_hash};
    out.history = tr.history;
    out.checkpoint.write(out_dir);

    CsvWriter csv("epoch,mean_loss,lr");
    csv.comment("data_hash=" + data_hash);
    for (const auto& row : tr.history) csv.row({row[0], row[1], row[2]});
    csv.save(out_dir / "loss_history.csv");
    return out;
}

struct RolloutOutputs {
    DatasetContainer predictions; // fields hold the surrogate rollout
    std::vector<double> wall_seconds;     // setup-inclusive
    std::vector<double> stepping_seconds; // time-stepping loop only
    std::vector<double> fom_wall_seconds;
    std::vector<int> ids;
};

/// Rolls out the checkpointed model on the selected simulations. Dirichlet
/// values are taken from the stored trajectories' boundary entries. Rollouts
/// run in parallel across trajectories.
inline RolloutOutputs run_rollouts(const Checkpoint& ck, const DatasetContainer& data,
                                   const std::vector<int>& ids, int threads) {
    const ModelParams params = ck.to_model();
    RolloutOutputs out;
    out.ids = ids;
    out.predictions.sims.resize(ids.size());
    out.wall_seconds.assign(ids.size(), 0.0);
    out.stepping_seconds.assign(ids.size(), 0.0);
    out.fom_wall_seconds.assign(ids.size(), 0.0);

    std::vector<std::string> failures(ids.size());
    parallel_for(ids.size(), threads, [&](std::size_t i, int) {
        try {
            const SimData& s = data.sim_by_id(ids[i]);
            const GraphSample graph = data.graph(s);
            std::vector<double> u0(s.fields.row(0), s.fields.row(0) + s.fields.cols());
            RolloutResult r =
                rollout(params, ck.normalizer, graph, u0, s.n_steps(), s.dt, s.fields);
            SimData pred = s;
            pred.fields = std::move(r.predicted);
            pred.fom_wall_time = 0.0; // measurement lives in the timing table
            out.predictions.sims[i] = std::move(pred);
            out.wall_seconds[i] = r.wall_seconds;
            out.stepping_seconds[i] = r.stepping_seconds;
            out.fom_wall_seconds[i] = s.fom_wall_time;
        } catch (const Error& e) {
            failures[i] = e.kind() + std::string(": ") + e.what();
        }
    });
    for (std::size_t i = 0; i < failures.size(); ++i)
        if (!failures[i].empty())
            throw NonFinitePrediction("rollout of sim " + std::to_string(ids[i]) +
                                      " failed: " + failures[i]);
    return out;
}

/// Writes the per-trajectory metric table and the per-step quartile curves.
inline ErrorSummary run_eval(const DatasetContainer& pred, const DatasetContainer& truth,
                             const std::filesystem::path& out_dir) {
    if (pred.sims.empty()) throw SchemaMismatch("no predictions to evaluate");
    std::vector<const Tensor*> p, t;
    std::vector<int> ids;
    for (const auto& s : pred.sims) {
        p.push_back(&s.fields);
        t.push_back(&truth.sim_by_id(s.id).fields);
        ids.push_back(s.id);
    }
    const ErrorSummary summary = error_vs_time(p, t);

    std::filesystem::create_directories(out_dir);
    CsvWriter table("sim_id,rmse");
    table.comment("truth_hash=" + io_detail::hex64(truth.payload_hash));
    for (std::size_t i = 0; i < ids.size(); ++i)
        table.row({static_cast<double>(ids[i]), summary.trajectory_rmse[i]});
    table.raw_row("mean," + io_detail::fmt(summary.mean));
    table.raw_row("max," + io_detail::fmt(summary.max));
    table.raw_row("min," + io_detail::fmt(summary.min));
    table.save(out_dir / "rmse.csv");

    CsvWriter curves("step,q1,median,q3");
    curves.comment("truth_hash=" + io_detail::hex64(truth.payload_hash));
    for (std::size_t s = 0; s < summary.per_step_quartiles.size(); ++s)
        curves.row({static_cast<double>(s + 1), summary.per_step_quartiles[s][0],
                    summary.per_step_quartiles[s][1], summary.per_step_quartiles[s][2]});
    curves.save(out_dir / "error_vs_time.csv");
    return summary;
}

// ---------------------------------------------------------------------------
// FFNN comparison and message-passing sweep.
// ---------------------------------------------------------------------------

struct CompareResult {
    std::vector<int> ids;
    std::vector<double> gnn_rmse, ffnn_rmse;
    BoxplotStats gnn_stats, ffnn_stats;
    std::int64_t gnn_params = 0, ffnn_params = 0;
};

/// Grid-based method comparison: both models' rollouts are evaluated on the
/// same fixed grid so the metric is method-neutral.
inline CompareResult compare_ffnn(const DatasetContainer& data, const Checkpoint& ck, int grid_n,
                                  const std::vector<int>& hidden, const TrainConfig& ffnn_cfg,
                                  const std::filesystem::path& out_dir, int threads,
                                  const std::function<void(int, double, double)>& progress = {}) {
    if (data.train_ids.empty() || data.test_ids.empty())
        throw SchemaMismatch("comparison needs a train/test split");

    std::vector<int> all_ids(data.train_ids);
    all_ids.insert(all_ids.end(), data.test_ids.begin(), data.test_ids.end());
    const GridDataset grid = build_grid_dataset(data, all_ids, grid_n);

    const FfnnTrainResult ffnn = train_ffnn(grid, data.train_ids, hidden, ffnn_cfg, progress);

    // Graph model rollouts on the mesh, interpolated onto the same grid.
    const RolloutOutputs gnn_roll = run_rollouts(ck, data, data.test_ids, threads);

    CompareResult res;
    res.ids = data.test_ids;
    res.gnn_params = static_cast<std::int64_t>(ck.flat_params.size());
    res.ffnn_params = ffnn.params.n_params();

    for (std::size_t i = 0; i < data.test_ids.size(); ++i) {
        const int id = data.test_ids[i];
        const GridSim& gs = grid.sim_by_id(id);
        const SimData& truth_sim = data.sim_by_id(id);
        const Mesh mesh = generate_mesh(truth_sim.mu);

        // Surrogate prediction onto the grid, outside cells pinned to zero.
        const SimData& pred_sim = gnn_roll.predictions.sims[i];
        Tensor gnn_grid = Tensor::zeros(gs.fields.shape());
        std::vector<double> field(static_cast<std::size_t>(truth_sim.n_nodes()));
        for (std::int64_t step = 0; step < pred_sim.fields.rows(); ++step) {
            std::copy(pred_sim.fields.row(step), pred_sim.fields.row(step) + truth_sim.n_nodes(),
                      field.begin());
            const std::vector<double> g = interpolate_to_grid(mesh, field, grid_n);
            std::copy(g.begin(), g.end(), gnn_grid.row(step));
        }

        Tensor ffnn_grid = rollout_ffnn(ffnn.params, ffnn.normalizer, gs);
        res.gnn_rmse.push_back(rmse(gnn_grid, gs.fields));
        res.ffnn_rmse.push_back(rmse(ffnn_grid, gs.fields));
    }
    res.gnn_stats = boxplot_stats(res.gnn_rmse);
    res.ffnn_stats = boxplot_stats(res.ffnn_rmse);

    std::filesystem::create_directories(out_dir);
    CsvWriter csv("sim_id,gnn_rmse,ffnn_rmse");
    csv.comment("data_hash=" + io_detail::hex64(data.payload_hash));
    for (std::size_t i = 0; i < res.ids.size(); ++i)
        csv.row({static_cast<double>(res.ids[i]), res.gnn_rmse[i], res.ffnn_rmse[i]});
    csv.save(out_dir / "comparison.csv");

    nlohmann::json j;
    auto box = [](const BoxplotStats& b) {
        return nlohmann::json{
            {"min", b.min}, {"q1", b.q1}, {"median", b.median}, {"q3", b.q3}, {"max", b.max}};
    };
    j["gnn"] = box(res.gnn_stats);
    j["ffnn"] = box(res.ffnn_stats);
    j["gnn_params"] = res.gnn_params;
    j["ffnn_params"] = res.ffnn_params;
    j["param_ratio"] =
        static_cast<double>(res.ffnn_params) / static_cast<double>(res.gnn_params);
    io_detail::write_file(out_dir / "boxplot.json", j.dump(2) + "\n");
    return res;
}

/// Trains one model per message-passing depth and reports test RMSE and
/// parameter count per m.
inline std::vector<std::array<double, 3>> sweep_mp(const DatasetContainer& data,
                                                   const std::vector<int>& m_list, ArchConfig arch,
                                                   const TrainConfig& cfg,
                                                   const std::filesystem::path& out_csv,
                                                   int threads) {
    if (data.train_ids.empty() || data.test_ids.empty())
        throw SchemaMismatch("sweep needs a train/test split");
    std::vector<std::array<double, 3>> rows;
    for (int m : m_list) {
        arch.mp_steps = m;
        const Normalizer norm = fit_normalizer_on(data, data.train_ids);
        const TrainResult tr = train_gnn(make_sim_views(data, data.train_ids), arch, cfg, norm);
        Checkpoint ck{tr.params.arch, tr.normalizer, tr.params.flat, cfg.seed,
                      io_detail::hex64(data.payload_hash)};
        const RolloutOutputs roll = run_rollouts(ck, data, data.test_ids, threads);
        std::vector<const Tensor*> p, t;
        for (std::size_t i = 0; i < roll.predictions.sims.size(); ++i) {
            p.push_back(&roll.predictions.sims[i].fields);
            t.push_back(&data.sim_by_id(roll.ids[i]).fields);
        }
        const ErrorSummary summary = error_vs_time(p, t);
        rows.push_back({static_cast<double>(m), summary.mean,
                        static_cast<double>(param_count(arch))});
    }
    CsvWriter csv("mp_steps,test_rmse,param_count");
    csv.comment("data_hash=" + io_detail::hex64(data.payload_hash));
    for (const auto& r : rows) csv.row({r[0], r[1], r[2]});
    csv.save(out_csv);
    return rows;
}

} // namespace graphrom
