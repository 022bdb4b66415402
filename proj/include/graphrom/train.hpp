#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "graphrom/epd_fast.hpp"
#include "graphrom/errors.hpp"
#include "graphrom/model.hpp"
#include "graphrom/normalizer.hpp"
#include "graphrom/parallel.hpp"
#include "graphrom/rng.hpp"
#include "graphrom/tape.hpp"

namespace graphrom {

struct TrainConfig {
    int epochs = 1500;
    int batch_size = 25; // snapshots per window
    double lr = 1e-3;
    double decay = 0.1;
    int decay_every = 500;
    double noise_var = 1e-6;
    double w1 = 0.0;
    double w2 = 1.0;
    std::uint64_t seed = 0;
    int threads = 1;
    int checkpoint_every = 0; // 0 = final checkpoint only

    void validate() const {
        if (epochs < 0 || batch_size < 2 || lr <= 0.0 || decay <= 0.0 || decay_every <= 0 ||
            noise_var < 0.0 || w1 < 0.0 || w2 < 0.0 || w1 + w2 <= 0.0)
            throw ConfigError("invalid training configuration");
    }
};

/// One simulation prepared for training or evaluation.
struct SimView {
    GraphSample graph;
    const Tensor* fields = nullptr; // snapshots (steps x n*q)
    double dt = 0.0;
    int id = 0;
};

/// Gaussian noise on the input snapshots of a window: rows 0..L-2, interior
/// nodes only. Targets (the clean window) are never touched. Draw order is
/// row-major and fixed, so the stream is reproducible.
inline Tensor add_noise(const Tensor& window, const std::vector<std::uint8_t>& boundary, int q,
                        double sigma2, Rng& rng) {
    if (sigma2 < 0.0) throw ConfigError("noise variance must be non-negative");
    Tensor noisy = window;
    if (sigma2 == 0.0) return noisy;
    const double sigma = std::sqrt(sigma2);
    const std::int64_t n = static_cast<std::int64_t>(boundary.size());
    if (window.cols() != n * q) throw ShapeMismatch("window width != n_nodes * q");
    for (std::int64_t r = 0; r + 1 < window.rows(); ++r) {
        double* row = noisy.row(r);
        for (std::int64_t i = 0; i < n; ++i) {
            if (boundary[static_cast<std::size_t>(i)]) continue;
            for (int c = 0; c < q; ++c) row[i * q + c] += rng.normal(0.0, sigma);
        }
    }
    return noisy;
}

// ---------------------------------------------------------------------------
// Adam with bias correction.
// ---------------------------------------------------------------------------
struct AdamState {
    std::vector<double> m, v;
    std::int64_t step = 0;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

    explicit AdamState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

inline void adam_step(std::vector<double>& params, const std::vector<double>& grad, AdamState& st,
                      double lr) {
    if (params.size() != grad.size() || params.size() != st.m.size())
        throw ShapeMismatch("adam_step: size mismatch");
    ++st.step;
    const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
    const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        st.m[i] = st.beta1 * st.m[i] + (1.0 - st.beta1) * grad[i];
        st.v[i] = st.beta2 * st.v[i] + (1.0 - st.beta2) * grad[i] * grad[i];
        const double mhat = st.m[i] / bc1;
        const double vhat = st.v[i] / bc2;
        params[i] -= lr * mhat / (std::sqrt(vhat) + st.eps);
    }
}

// ---------------------------------------------------------------------------
// Window loss. The two residuals of the training objective satisfy
//   u^{n+1} - u^n - dt * f = dt * (udot - f)   with   udot = (u^{n+1} - u^n)/dt,
// so the step term equals dt^2 times the derivative term on identical inputs
// and the total folds into (w1 dt^2 + w2) * |udot - f|^2. The reference path
// below can evaluate both forms; training uses the folded one.
// ---------------------------------------------------------------------------

namespace train_detail {

inline std::vector<ParamRef> all_param_refs(const ModelParams& p) {
    std::vector<ParamRef> refs;
    p.for_each_mlp([&](const MlpLayout& m) {
        for (std::size_t l = 0; l < m.weights.size(); ++l) {
            refs.push_back(m.weights[l]);
            refs.push_back(m.biases[l]);
        }
    });
    return refs;
}

/// Builds the normalized node input [u | xi | b] for one transition.
inline void fill_aug_input(double* out, const double* u_noisy, const GraphSample& graph, int q,
                           double t_value, const Normalizer& norm) {
    const std::int64_t n = graph.n_nodes;
    const double xi = norm.xi.normalize(t_value);
    for (std::int64_t i = 0; i < n; ++i) {
        double* row = out + i * (q + 2);
        for (int c = 0; c < q; ++c)
            row[c] = norm.u[static_cast<std::size_t>(c)].normalize(u_noisy[i * q + c]);
        row[q] = xi;
        row[q + 1] = graph.boundary[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
    }
}

} // namespace train_detail

struct LossGrad {
    double loss = 0.0;
    std::vector<double> grad;
};

/// Tape-path evaluation of one window's loss and parameter gradients.
/// two_term = true evaluates the step and derivative residuals separately;
/// two_term = false uses the folded form. Both are exact.
inline LossGrad window_loss_grad_reference(const ModelParams& params, const GraphSample& graph,
                                           const Tensor& clean, const Tensor& noisy, double t0,
                                           double dt, const Normalizer& norm, double w1, double w2,
                                           bool two_term) {
    const int q = params.arch.node_in;
    const std::int64_t n = graph.n_nodes;
    const std::int64_t transitions = clean.rows() - 1;
    if (transitions < 1) throw ShapeMismatch("window needs at least 2 snapshots");
    const double c = 1.0 / static_cast<double>(transitions);

    const Tensor edge_norm = norm.normalize_edges(graph.edge_features);
    Tensor sigma_d({1, q}), mu_d({1, q});
    for (int ch = 0; ch < q; ++ch) {
        sigma_d[ch] = norm.dudt[static_cast<std::size_t>(ch)].std;
        mu_d[ch] = norm.dudt[static_cast<std::size_t>(ch)].mean;
    }

    LossGrad out;
    out.grad.assign(params.flat.size(), 0.0);
    const auto refs = train_detail::all_param_refs(params);

    for (std::int64_t t = 0; t < transitions; ++t) {
        Tensor aug({n, q + 2});
        train_detail::fill_aug_input(aug.data(), noisy.row(t), graph, q,
                                     (t0 + static_cast<double>(t)) * dt, norm);

        Tape tape;
        const TapedModel model = load_params(tape, params);
        const int raw = epd_forward_taped(tape, model, graph, aug, edge_norm);
        const int phys = tape.scale_cols(raw, sigma_d, mu_d);

        Tensor udot({n, q}), step_diff({n, q});
        for (std::int64_t i = 0; i < n * q; ++i) {
            step_diff[i] = clean.row(t + 1)[i] - noisy.row(t)[i];
            udot[i] = step_diff[i] / dt;
        }

        int loss_id;
        if (two_term) {
            const int r1 = tape.axpby(1.0, tape.input(step_diff), -dt, phys);
            const int r2 = tape.sub(tape.input(udot), phys);
            loss_id = tape.axpby(c * w1, tape.sum_squared(r1), c * w2, tape.sum_squared(r2));
        } else {
            const int r = tape.sub(tape.input(udot), phys);
            loss_id = tape.axpby(c * (w1 * dt * dt + w2), tape.sum_squared(r), 0.0,
                                 tape.input(Tensor::scalar(0.0)));
        }
        out.loss += tape.value(loss_id)[0];

        const std::vector<Tensor> grads = tape.backward(loss_id, model.all_ids);
        for (std::size_t g = 0; g < grads.size(); ++g)
            kernels::axpy(1.0, grads[g].data(), out.grad.data() + refs[g].offset, refs[g].numel());
    }
    return out;
}

// ---------------------------------------------------------------------------
// Training loop: per epoch, simulations in shuffled order; per simulation,
// contiguous windows of batch_size snapshots; per window, noise injection,
// one fused forward/backward per transition (across worker threads, reduced
// in transition order) and a single Adam update.
// ---------------------------------------------------------------------------

struct TrainHooks {
    std::function<void(int epoch, const ModelParams&, const Normalizer&, double mean_loss, double lr)>
        on_epoch;
};

struct TrainResult {
    ModelParams params;
    Normalizer normalizer;
    std::vector<std::array<double, 3>> history; // epoch, mean window loss, lr
};

inline TrainResult train_gnn(const std::vector<SimView>& sims, const ArchConfig& arch,
                             const TrainConfig& cfg, const Normalizer& normalizer,
                             const TrainHooks& hooks = {}) {
    cfg.validate();
    arch.validate();
    if (arch.global_in != 1) throw ConfigError("training expects a single global time feature");
    const int q = arch.node_in;

    TrainResult result;
    result.normalizer = normalizer;
    result.params = ModelParams::build(arch);
    Rng init_rng(derive_seed(cfg.seed, "init"));
    result.params.init_glorot(init_rng);

    Rng shuffle_rng(derive_seed(cfg.seed, "shuffle"));
    Rng noise_rng(derive_seed(cfg.seed, "noise"));

    // Per-simulation engines and cached normalized edge features.
    std::vector<EpdFast> engines;
    std::vector<Tensor> edge_inputs;
    engines.reserve(sims.size());
    for (const auto& sim : sims) {
        if (sim.fields->cols() != static_cast<std::int64_t>(sim.graph.n_nodes) * q)
            throw ShapeMismatch("simulation field width != n_nodes * q");
        engines.emplace_back(arch, sim.graph);
        engines.back().bind(result.params);
        edge_inputs.push_back(normalizer.normalize_edges(sim.graph.edge_features));
    }

    AdamState adam(result.params.flat.size());
    double lr = cfg.lr;

    const int threads = std::max(1, cfg.threads);
    std::vector<FastWorkspace> workspaces(static_cast<std::size_t>(threads));
    WindowState window_state;
    const int max_transitions = cfg.batch_size - 1;
    std::vector<std::vector<double>> local_grads(static_cast<std::size_t>(max_transitions));
    std::vector<double> local_loss(static_cast<std::size_t>(max_transitions));
    std::vector<double> grad(result.params.flat.size());
    std::vector<double> reduce_scratch;

    std::vector<int> order(sims.size());
    for (std::size_t i = 0; i < sims.size(); ++i) order[i] = static_cast<int>(i);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double loss_sum = 0.0;
        std::int64_t loss_count = 0;

        for (int sim_idx : order) {
            const SimView& sim = sims[static_cast<std::size_t>(sim_idx)];
            EpdFast& engine = engines[static_cast<std::size_t>(sim_idx)];
            for (auto& ws : workspaces) engine.resize_workspace(ws);
            const std::int64_t total_snaps = sim.fields->rows();

            for (std::int64_t b = 0; b < total_snaps; b += cfg.batch_size) {
                const std::int64_t len = std::min<std::int64_t>(cfg.batch_size, total_snaps - b);
                if (len < 2) continue;
                const std::int64_t transitions = len - 1;

                // Clean and noisy copies of the window.
                Tensor clean({len, sim.fields->cols()});
                std::memcpy(clean.data(), sim.fields->row(b),
                            static_cast<std::size_t>(clean.numel()) * sizeof(double));
                const Tensor noisy = add_noise(clean, sim.graph.boundary, q, cfg.noise_var, noise_rng);

                engine.prepare_window(window_state, edge_inputs[static_cast<std::size_t>(sim_idx)],
                                      static_cast<int>(transitions));

                const double scale =
                    (cfg.w1 * sim.dt * sim.dt + cfg.w2) / static_cast<double>(transitions);

                parallel_for(static_cast<std::size_t>(transitions), threads, [&](std::size_t t, int worker) {
                    FastWorkspace& ws = workspaces[static_cast<std::size_t>(worker)];
                    auto& lg = local_grads[t];
                    lg.assign(result.params.flat.size(), 0.0);

                    train_detail::fill_aug_input(ws.x_aug.data(), noisy.row(static_cast<std::int64_t>(t)),
                                                 sim.graph, q,
                                                 static_cast<double>(b + static_cast<std::int64_t>(t)) * sim.dt,
                                                 result.normalizer);

                    const std::int64_t nq = engine.n_nodes() * q;
                    std::vector<double> out(static_cast<std::size_t>(nq)), dout(static_cast<std::size_t>(nq));
                    engine.forward(window_state, ws, out.data());

                    // Residual in physical units: (mu + sigma*out) - udot.
                    double s = 0.0;
                    const double* next = clean.row(static_cast<std::int64_t>(t) + 1);
                    const double* cur = noisy.row(static_cast<std::int64_t>(t));
                    for (std::int64_t i = 0; i < nq; ++i) {
                        const auto& ch = result.normalizer.dudt[static_cast<std::size_t>(i % q)];
                        const double udot = (next[i] - cur[i]) / sim.dt;
                        const double r = ch.denormalize(out[static_cast<std::size_t>(i)]) - udot;
                        s += r * r;
                        dout[static_cast<std::size_t>(i)] = 2.0 * scale * r * ch.std;
                    }
                    local_loss[t] = scale * s;

                    engine.backward(window_state, ws, dout.data(), lg.data(), static_cast<int>(t));
                });

                // Transition-ordered reduction keeps results independent of
                // the thread count.
                std::memset(grad.data(), 0, grad.size() * sizeof(double));
                double window_loss = 0.0;
                for (std::int64_t t = 0; t < transitions; ++t) {
                    window_loss += local_loss[static_cast<std::size_t>(t)];
                    kernels::axpy(1.0, local_grads[static_cast<std::size_t>(t)].data(), grad.data(),
                                  static_cast<std::int64_t>(grad.size()));
                }
                engine.reduce_window(window_state, grad.data(), reduce_scratch, threads);

                if (!std::isfinite(window_loss))
                    throw NonFiniteLoss("epoch " + std::to_string(epoch) + ", sim " +
                                        std::to_string(sim.id) + ", window at " + std::to_string(b));

                adam_step(result.params.flat, grad, adam, lr);
                loss_sum += window_loss;
                ++loss_count;
            }
        }

        const double mean_loss = loss_count ? loss_sum / static_cast<double>(loss_count) : 0.0;
        result.history.push_back({static_cast<double>(epoch), mean_loss, lr});
        if (hooks.on_epoch) hooks.on_epoch(epoch, result.params, result.normalizer, mean_loss, lr);

        const int completed = epoch + 1;
        if (completed % cfg.decay_every == 0) lr *= cfg.decay;
    }
    return result;
}

} // namespace graphrom
