// Command-line driver for the mesh-based surrogate pipeline:
//   gen-data      sample geometries, run the full-order solver, write a dataset
//   train         fit the graph time-stepper on the training split
//   rollout       autoregressive surrogate prediction for selected simulations
//   eval          RMSE table + error-vs-time quartiles for predictions
//   compare-ffnn  dense-baseline comparison on a fixed grid
//   sweep-mp      test RMSE as a function of message-passing depth
//
// Every command is a pure function of its inputs and --seed; failures exit
// nonzero with a machine-readable JSON error on stderr.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "graphrom/pipeline.hpp"

namespace {

using namespace graphrom;

std::vector<int> parse_ids(const std::string& csv) {
    std::vector<int> ids;
    std::istringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) ids.push_back(std::stoi(item));
    return ids;
}

Config load_config(const std::string& path, const std::vector<std::string>& overrides) {
    Config c = default_config();
    if (!path.empty()) c.load_file(path);
    for (const auto& kv : overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got " + kv);
        c.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    return c;
}

std::vector<int> select_ids(const DatasetContainer& data, const std::string& ids_csv,
                            const std::string& split) {
    if (!ids_csv.empty()) return parse_ids(ids_csv);
    if (split == "train") return data.train_ids;
    if (split == "test") return data.test_ids;
    if (split == "all") {
        std::vector<int> ids;
        for (const auto& s : data.sims) ids.push_back(s.id);
        return ids;
    }
    throw ConfigError("--split must be train, test or all");
}

void write_timings(const std::filesystem::path& path, const std::vector<int>& ids,
                   const std::vector<double>& rollout_s, const std::vector<double>& stepping_s,
                   const std::vector<double>& fom_s) {
    CsvWriter csv("sim_id,rollout_seconds,stepping_seconds,fom_seconds");
    for (std::size_t i = 0; i < ids.size(); ++i)
        csv.row({static_cast<double>(ids[i]), rollout_s[i], stepping_s[i], fom_s[i]});
    double ratio = 0.0;
    try {
        ratio = timing_compare(fom_s, rollout_s);
    } catch (const Error&) {
    }
    csv.raw_row("speedup_ratio," + io_detail::fmt(ratio) + ",,");
    csv.save(path);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"GNN surrogate time-stepper for parametrized PDEs on variable geometries"};
    app.require_subcommand(1);

    std::string config_path, data_dir, out_dir, checkpoint_dir, pred_dir, truth_dir;
    std::string ids_csv, split_sel = "test", split_spec = "80:20", m_list_csv = "2,4,8,12";
    std::vector<std::string> overrides;
    int n_sims = 100, threads = hardware_threads(), grid_n = -1;
    std::uint64_t seed = 0;
    bool verbose = false;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "flat key=value configuration file");
        cmd->add_option("--set", overrides, "override a config key (key=value), repeatable");
        cmd->add_option("--seed", seed, "random seed");
        cmd->add_option("--threads", threads, "worker threads");
        cmd->add_flag("--verbose", verbose, "progress output on stderr");
    };

    auto* gen = app.add_subcommand("gen-data", "generate the full-order dataset");
    add_common(gen);
    gen->add_option("--out", out_dir, "output container directory")->required();
    gen->add_option("--n-sims", n_sims, "number of simulations");
    gen->add_option("--split", split_spec, "train:test counts or ratio");

    auto* train_cmd = app.add_subcommand("train", "train the graph surrogate");
    add_common(train_cmd);
    train_cmd->add_option("--data", data_dir, "dataset container")->required();
    train_cmd->add_option("--out-checkpoint", checkpoint_dir, "checkpoint directory")->required();
    train_cmd->add_option("--ids", ids_csv, "comma-separated training sim ids (default: train split)");

    auto* roll = app.add_subcommand("rollout", "surrogate rollouts for selected simulations");
    add_common(roll);
    roll->add_option("--checkpoint", checkpoint_dir, "checkpoint directory")->required();
    roll->add_option("--data", data_dir, "dataset container")->required();
    roll->add_option("--ids", ids_csv, "comma-separated sim ids");
    roll->add_option("--split", split_sel, "train|test|all (when --ids absent)");
    roll->add_option("--out", out_dir, "output directory")->required();

    auto* eval_cmd = app.add_subcommand("eval", "evaluate predictions against ground truth");
    add_common(eval_cmd);
    eval_cmd->add_option("--pred", pred_dir, "prediction container")->required();
    eval_cmd->add_option("--truth", truth_dir, "ground-truth container")->required();
    eval_cmd->add_option("--out-csv", out_dir, "output directory for CSV tables")->required();

    auto* cmp = app.add_subcommand("compare-ffnn", "dense-network baseline comparison");
    add_common(cmp);
    cmp->add_option("--data", data_dir, "dataset container")->required();
    cmp->add_option("--checkpoint", checkpoint_dir, "graph-model checkpoint")->required();
    cmp->add_option("--grid-n", grid_n, "grid side length (default from config)");
    cmp->add_option("--out", out_dir, "output directory")->required();

    auto* sweep = app.add_subcommand("sweep-mp", "sweep the message-passing depth");
    add_common(sweep);
    sweep->add_option("--data", data_dir, "dataset container")->required();
    sweep->add_option("--m-list", m_list_csv, "comma-separated depths");
    sweep->add_option("--out", out_dir, "output CSV path")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        const Config cfg = load_config(config_path, overrides);

        if (gen->parsed()) {
            GenDataOptions opt;
            opt.n_sims = n_sims;
            opt.seed = seed;
            opt.split = split_spec;
            opt.threads = threads;
            const DatasetContainer data = gen_data(cfg, opt);
            data.write(out_dir);
            std::printf("wrote %zu simulations to %s (train %zu, test %zu)\n", data.sims.size(),
                        out_dir.c_str(), data.train_ids.size(), data.test_ids.size());
        } else if (train_cmd->parsed()) {
            const DatasetContainer data = DatasetContainer::load(data_dir);
            const std::vector<int> ids = ids_csv.empty() ? data.train_ids : parse_ids(ids_csv);
            if (ids.empty()) throw SchemaMismatch("no training simulations selected");
            const ArchConfig arch = arch_from_config(cfg);
            const TrainConfig tc = train_from_config(cfg, seed, threads);
            const TrainPipelineResult res = run_training(data, ids, arch, tc, checkpoint_dir, verbose);
            std::printf("trained %d epochs, final loss %.6g, checkpoint at %s\n", tc.epochs,
                        res.history.empty() ? 0.0 : res.history.back()[1], checkpoint_dir.c_str());
        } else if (roll->parsed()) {
            const Checkpoint ck = Checkpoint::load(checkpoint_dir);
            const DatasetContainer data = DatasetContainer::load(data_dir);
            const std::vector<int> ids = select_ids(data, ids_csv, split_sel);
            if (ids.empty()) throw SchemaMismatch("no simulations selected for rollout");
            const RolloutOutputs out = run_rollouts(ck, data, ids, threads);
            out.predictions.write(out_dir);
            write_timings(std::filesystem::path(out_dir) / "timings.csv", ids, out.wall_seconds,
                          out.stepping_seconds, out.fom_wall_seconds);
            std::printf("rolled out %zu simulations to %s\n", ids.size(), out_dir.c_str());
        } else if (eval_cmd->parsed()) {
            const DatasetContainer pred = DatasetContainer::load(pred_dir);
            const DatasetContainer truth = DatasetContainer::load(truth_dir);
            const ErrorSummary summary = run_eval(pred, truth, out_dir);
            std::printf("rmse mean %.6g  max %.6g  min %.6g\n", summary.mean, summary.max,
                        summary.min);
        } else if (cmp->parsed()) {
            const DatasetContainer data = DatasetContainer::load(data_dir);
            const Checkpoint ck = Checkpoint::load(checkpoint_dir);
            const int g = grid_n > 0 ? grid_n : cfg.get_int("ffnn.grid_n");
            std::vector<int> hidden;
            for (double h : cfg.get_double_list("ffnn.hidden")) hidden.push_back(static_cast<int>(h));
            TrainConfig fc = train_from_config(cfg, seed, threads);
            fc.epochs = cfg.get_int("ffnn.epochs");
            std::function<void(int, double, double)> progress;
            if (verbose)
                progress = [](int e, double l, double) {
                    if (e % 10 == 0) std::fprintf(stderr, "ffnn epoch %d loss %.6g\n", e, l);
                };
            const CompareResult res = compare_ffnn(data, ck, g, hidden, fc, out_dir, threads, progress);
            std::printf("gnn median rmse %.6g  ffnn median rmse %.6g  param ratio %.3g\n",
                        res.gnn_stats.median, res.ffnn_stats.median,
                        static_cast<double>(res.ffnn_params) / static_cast<double>(res.gnn_params));
        } else if (sweep->parsed()) {
            const DatasetContainer data = DatasetContainer::load(data_dir);
            ArchConfig arch = arch_from_config(cfg);
            const TrainConfig tc = train_from_config(cfg, seed, threads);
            const std::vector<int> m_list = parse_ids(m_list_csv);
            const auto rows = sweep_mp(data, m_list, arch, tc, out_dir, threads);
            for (const auto& r : rows)
                std::printf("m=%d  test_rmse=%.6g  params=%lld\n", static_cast<int>(r[0]), r[1],
                            static_cast<long long>(r[2]));
        }
        return 0;
    } catch (const Error& e) {
        nlohmann::json j;
        j["error"] = {{"type", e.kind()}, {"message", e.what()}};
        std::fprintf(stderr, "%s\n", j.dump().c_str());
        return 1;
    } catch (const std::exception& e) {
        nlohmann::json j;
        j["error"] = {{"type", "internal"}, {"message", e.what()}};
        std::fprintf(stderr, "%s\n", j.dump().c_str());
        return 2;
    }
}
