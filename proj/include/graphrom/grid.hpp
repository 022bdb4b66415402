#pragma once

#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "graphrom/dataset.hpp"
#include "graphrom/errors.hpp"
#include "graphrom/mesh.hpp"
#include "graphrom/normalizer.hpp"
#include "graphrom/tape.hpp"
#include "graphrom/train.hpp"

namespace graphrom {

// ---------------------------------------------------------------------------
// Dense-network baseline on a fixed rectangular grid. All trajectories are
// interpolated onto a common grid with the convention that values outside the
// meshed domain are exactly zero; a fully connected network with fixed
// input/output width then learns the same time-stepping scheme.
// ---------------------------------------------------------------------------

struct GridSim {
    int id = 0;
    double dt = 0.0;
    Tensor fields;                     // (N_t+1) x grid_n^2
    std::vector<std::uint8_t> mask;    // 1 = inside the meshed domain
    std::vector<std::uint8_t> clamped; // 1 = outside domain or outer ring; no noise, no update
};

struct GridDataset {
    int grid_n = 0;
    std::vector<GridSim> sims;

    const GridSim& sim_by_id(int id) const {
        for (const auto& s : sims)
            if (s.id == id) return s;
        throw SchemaMismatch("grid simulation id " + std::to_string(id) + " missing");
    }
};

/// Interpolates every snapshot of the selected simulations onto the grid.
/// Meshes are regenerated from the stored geometry parameters, which matches
/// the generator output exactly.
inline GridDataset build_grid_dataset(const DatasetContainer& data, const std::vector<int>& ids,
                                      int grid_n) {
    GridDataset out;
    out.grid_n = grid_n;
    for (int id : ids) {
        const SimData& s = data.sim_by_id(id);
        if (s.q != 1) throw ShapeMismatch("grid baseline supports scalar fields only");
        const Mesh mesh = generate_mesh(s.mu);
        if (mesh.n_vertices() != s.n_nodes())
            throw SchemaMismatch("regenerated mesh does not match stored simulation");

        GridSim g;
        g.id = id;
        g.dt = s.dt;
        const std::int64_t cells = static_cast<std::int64_t>(grid_n) * grid_n;
        g.fields = Tensor::zeros({s.fields.rows(), cells});

        const std::vector<double> ones(static_cast<std::size_t>(s.n_nodes()), 1.0);
        const std::vector<double> mask_values = interpolate_to_grid(mesh, ones, grid_n);
        g.mask.resize(static_cast<std::size_t>(cells));
        g.clamped.resize(static_cast<std::size_t>(cells));
        for (std::int64_t c = 0; c < cells; ++c) {
            g.mask[static_cast<std::size_t>(c)] = mask_values[static_cast<std::size_t>(c)] != 0.0;
            const int gx = static_cast<int>(c % grid_n), gy = static_cast<int>(c / grid_n);
            const bool ring = gx == 0 || gy == 0 || gx == grid_n - 1 || gy == grid_n - 1;
            g.clamped[static_cast<std::size_t>(c)] =
                (!g.mask[static_cast<std::size_t>(c)] || ring) ? 1 : 0;
        }

        std::vector<double> field(static_cast<std::size_t>(s.n_nodes()));
        for (std::int64_t step = 0; step < s.fields.rows(); ++step) {
            std::copy(s.fields.row(step), s.fields.row(step) + s.n_nodes(), field.begin());
            const std::vector<double> grid = interpolate_to_grid(mesh, field, grid_n);
            std::copy(grid.begin(), grid.end(), g.fields.row(step));
        }
        out.sims.push_back(std::move(g));
    }
    return out;
}

/// Fully connected baseline parameters: one MLP from [grid ; t] to the grid.
struct FfnnParams {
    std::vector<int> widths; // [grid^2+1, hidden..., grid^2]
    MlpLayout layout;
    std::vector<double> flat;

    static FfnnParams build(int grid_n, const std::vector<int>& hidden) {
        FfnnParams p;
        const int cells = grid_n * grid_n;
        p.widths.push_back(cells + 1);
        for (int h : hidden) p.widths.push_back(h);
        p.widths.push_back(cells);
        std::int64_t cursor = 0;
        p.layout.widths = p.widths;
        for (std::size_t i = 0; i + 1 < p.widths.size(); ++i) {
            p.layout.weights.push_back({cursor, p.widths[i], p.widths[i + 1]});
            cursor += static_cast<std::int64_t>(p.widths[i]) * p.widths[i + 1];
            p.layout.biases.push_back({cursor, 1, p.widths[i + 1]});
            cursor += p.widths[i + 1];
        }
        p.flat.assign(static_cast<std::size_t>(cursor), 0.0);
        return p;
    }

    std::int64_t n_params() const { return static_cast<std::int64_t>(flat.size()); }

    Tensor tensor(const ParamRef& r) const {
        Tensor t({r.rows, r.cols});
        std::copy(flat.begin() + r.offset, flat.begin() + r.offset + r.numel(), t.data());
        return t;
    }

    void init_glorot(Rng& rng) {
        std::fill(flat.begin(), flat.end(), 0.0);
        for (const auto& w : layout.weights) {
            const double a = std::sqrt(6.0 / static_cast<double>(w.rows + w.cols));
            double* d = flat.data() + w.offset;
            for (std::int64_t i = 0; i < w.numel(); ++i) d[i] = rng.uniform(-a, a);
        }
    }
};

/// Closed-form parameter count sum(n_i * n_{i+1} + n_{i+1}).
inline std::int64_t ffnn_param_count(const std::vector<int>& widths) {
    return model_detail::mlp_param_count(widths);
}

struct FfnnNormalizer {
    ChannelStats xi, dudt;
};

struct FfnnTrainResult {
    FfnnParams params;
    FfnnNormalizer normalizer;
    std::vector<std::array<double, 3>> history;
};

namespace grid_detail {

inline int taped_ffnn_forward(Tape& tape, const FfnnParams& p, int x,
                              std::vector<int>* param_ids = nullptr) {
    int h = x;
    for (std::size_t l = 0; l < p.layout.weights.size(); ++l) {
        const int w = tape.input(p.tensor(p.layout.weights[l]));
        const int b = tape.input(p.tensor(p.layout.biases[l]));
        if (param_ids) {
            param_ids->push_back(w);
            param_ids->push_back(b);
        }
        h = tape.add_bias(tape.matmul(h, w), b);
        if (l + 1 < p.layout.weights.size()) h = tape.silu(h);
    }
    return h;
}

} // namespace grid_detail

/// Trains the dense baseline with the same loss structure, noise scheme, Adam
/// and learning-rate schedule as the graph model. Windows are batched into a
/// single tape: rows are transitions.
inline FfnnTrainResult train_ffnn(const GridDataset& data, const std::vector<int>& train_ids,
                                  const std::vector<int>& hidden, const TrainConfig& cfg,
                                  const std::function<void(int, double, double)>& progress = {}) {
    cfg.validate();
    const int cells = data.grid_n * data.grid_n;

    FfnnTrainResult result;
    result.params = FfnnParams::build(data.grid_n, hidden);
    Rng init_rng(derive_seed(cfg.seed, "ffnn-init"));
    result.params.init_glorot(init_rng);

    // Target scaling from clean forward differences over inside cells; grid
    // values themselves stay raw so the zero-outside convention survives.
    {
        norm_detail::RunningStats sd, st;
        for (int id : train_ids) {
            const GridSim& s = data.sim_by_id(id);
            for (std::int64_t r = 0; r + 1 < s.fields.rows(); ++r) {
                st.add(static_cast<double>(r) * s.dt);
                for (std::int64_t c = 0; c < cells; ++c)
                    if (s.mask[static_cast<std::size_t>(c)])
                        sd.add((s.fields.at(r + 1, c) - s.fields.at(r, c)) / s.dt);
            }
        }
        result.normalizer.dudt = sd.finish();
        result.normalizer.xi = st.finish();
    }

    Rng shuffle_rng(derive_seed(cfg.seed, "ffnn-shuffle"));
    Rng noise_rng(derive_seed(cfg.seed, "ffnn-noise"));
    AdamState adam(result.params.flat.size());
    double lr = cfg.lr;

    Tensor scale_vec({1, static_cast<std::int64_t>(cells)}),
        shift_vec({1, static_cast<std::int64_t>(cells)});
    for (std::int64_t c = 0; c < cells; ++c) {
        scale_vec[c] = result.normalizer.dudt.std;
        shift_vec[c] = result.normalizer.dudt.mean;
    }

    std::vector<int> order(train_ids);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double loss_sum = 0.0;
        std::int64_t loss_count = 0;

        for (int id : order) {
            const GridSim& sim = data.sim_by_id(id);
            const std::int64_t total = sim.fields.rows();
            for (std::int64_t b = 0; b < total; b += cfg.batch_size) {
                const std::int64_t len = std::min<std::int64_t>(cfg.batch_size, total - b);
                if (len < 2) continue;
                const std::int64_t transitions = len - 1;

                Tensor clean({len, static_cast<std::int64_t>(cells)});
                std::memcpy(clean.data(), sim.fields.row(b),
                            static_cast<std::size_t>(clean.numel()) * sizeof(double));
                const Tensor noisy = add_noise(clean, sim.clamped, 1, cfg.noise_var, noise_rng);

                Tensor x({transitions, static_cast<std::int64_t>(cells) + 1});
                Tensor udot({transitions, static_cast<std::int64_t>(cells)});
                for (std::int64_t t = 0; t < transitions; ++t) {
                    std::memcpy(x.row(t), noisy.row(t), static_cast<std::size_t>(cells) * sizeof(double));
                    x.at(t, cells) =
                        result.normalizer.xi.normalize(static_cast<double>(b + t) * sim.dt);
                    for (std::int64_t c = 0; c < cells; ++c)
                        udot.at(t, c) = (clean.at(t + 1, c) - noisy.at(t, c)) / sim.dt;
                }

                Tape tape;
                std::vector<int> param_ids;
                const int raw = grid_detail::taped_ffnn_forward(tape, result.params,
                                                                tape.input(x), &param_ids);
                const int phys = tape.scale_cols(raw, scale_vec, shift_vec);
                const int r = tape.sub(tape.input(udot), phys);
                const double scale =
                    (cfg.w1 * sim.dt * sim.dt + cfg.w2) / static_cast<double>(transitions);
                const int loss_id = tape.axpby(scale, tape.sum_squared(r), 0.0,
                                               tape.input(Tensor::scalar(0.0)));
                const double loss = tape.value(loss_id)[0];
                if (!std::isfinite(loss))
                    throw NonFiniteLoss("ffnn epoch " + std::to_string(epoch) + ", sim " +
                                        std::to_string(id));

                const std::vector<Tensor> grads = tape.backward(loss_id, param_ids);
                std::vector<double> grad(result.params.flat.size(), 0.0);
                std::size_t gi = 0;
                for (std::size_t l = 0; l < result.params.layout.weights.size(); ++l) {
                    kernels::axpy(1.0, grads[gi].data(),
                                  grad.data() + result.params.layout.weights[l].offset,
                                  result.params.layout.weights[l].numel());
                    ++gi;
                    kernels::axpy(1.0, grads[gi].data(),
                                  grad.data() + result.params.layout.biases[l].offset,
                                  result.params.layout.biases[l].numel());
                    ++gi;
                }
                adam_step(result.params.flat, grad, adam, lr);
                loss_sum += loss;
                ++loss_count;
            }
        }

        const double mean_loss = loss_count ? loss_sum / static_cast<double>(loss_count) : 0.0;
        result.history.push_back({static_cast<double>(epoch), mean_loss, lr});
        if (progress) progress(epoch, mean_loss, lr);
        if ((epoch + 1) % cfg.decay_every == 0) lr *= cfg.decay;
    }
    return result;
}

/// Autoregressive rollout on the grid. Cells outside the domain are pinned to
/// zero after every step, matching the data convention.
inline Tensor rollout_ffnn(const FfnnParams& params, const FfnnNormalizer& norm, const GridSim& sim,
                           double* wall_seconds = nullptr) {
    const std::int64_t cells = sim.fields.cols();
    const std::int64_t steps = sim.fields.rows() - 1;
    const auto t_start = std::chrono::steady_clock::now();

    Tensor out = Tensor::zeros(sim.fields.shape());
    std::memcpy(out.row(0), sim.fields.row(0), static_cast<std::size_t>(cells) * sizeof(double));

    std::vector<double> state(out.row(0), out.row(0) + cells);
    for (std::int64_t s = 0; s < steps; ++s) {
        Tensor x({1, cells + 1});
        std::memcpy(x.data(), state.data(), static_cast<std::size_t>(cells) * sizeof(double));
        x[cells] = norm.xi.normalize(static_cast<double>(s) * sim.dt);
        Tape tape;
        const int raw = grid_detail::taped_ffnn_forward(tape, params, tape.input(x));
        const Tensor& net = tape.value(raw);
        for (std::int64_t c = 0; c < cells; ++c) {
            state[static_cast<std::size_t>(c)] += sim.dt * norm.dudt.denormalize(net[c]);
            if (!sim.mask[static_cast<std::size_t>(c)]) state[static_cast<std::size_t>(c)] = 0.0;
        }
        for (double v : state)
            if (!std::isfinite(v))
                throw NonFinitePrediction("ffnn rollout non-finite at step " + std::to_string(s + 1));
        std::memcpy(out.row(s + 1), state.data(), static_cast<std::size_t>(cells) * sizeof(double));
    }
    if (wall_seconds)
        *wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return out;
}

/// Five-number summary used for the method comparison.
struct BoxplotStats {
    double min = 0.0, q1 = 0.0, median = 0.0, q3 = 0.0, max = 0.0;
};

inline BoxplotStats boxplot_stats(const std::vector<double>& values) {
    if (values.empty()) throw ShapeMismatch("boxplot of empty sample");
    std::vector<double> sorted(values);
    std::sort(sorted.begin(), sorted.end());
    auto q = [&](double p) {
        const double pos = p * static_cast<double>(sorted.size() - 1);
        const auto lo = static_cast<std::size_t>(std::floor(pos));
        const auto hi = static_cast<std::size_t>(std::ceil(pos));
        const double w = pos - static_cast<double>(lo);
        return sorted[lo] * (1.0 - w) + sorted[hi] * w;
    };
    return {sorted.front(), q(0.25), q(0.5), q(0.75), sorted.back()};
}

} // namespace graphrom
