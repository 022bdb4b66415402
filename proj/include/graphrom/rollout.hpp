#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "graphrom/epd_fast.hpp"
#include "graphrom/errors.hpp"
#include "graphrom/model.hpp"
#include "graphrom/normalizer.hpp"
#include "graphrom/train.hpp"

namespace graphrom {

struct RolloutResult {
    Tensor predicted; // (N_t+1) x (n*q); row 0 is the initial condition
    double wall_seconds = 0.0;     // includes graph preparation and normalization
    double stepping_seconds = 0.0; // time-stepping loop only
    std::vector<double> per_step_rmse; // filled by evaluate_rollout
};

/// Autoregressive rollout of the learned stepper:
///   u^{n+1} = u^n + dt * denormalize(net(normalize(u^n), normalize(t^n)))
/// followed by overwriting boundary entries with the prescribed Dirichlet
/// values for that step. boundary_values provides one row per step; only its
/// boundary columns are read.
inline RolloutResult rollout(const ModelParams& params, const Normalizer& norm,
                             const GraphSample& graph, const std::vector<double>& u0,
                             std::int64_t n_steps, double dt, const Tensor& boundary_values) {
    const int q = params.arch.node_in;
    const std::int64_t n = graph.n_nodes;
    if (static_cast<std::int64_t>(u0.size()) != n * q)
        throw ShapeMismatch("rollout: initial condition width mismatch");
    if (boundary_values.rows() < n_steps + 1 || boundary_values.cols() != n * q)
        throw ShapeMismatch("rollout: boundary value table must cover every step");

    const auto t_start = std::chrono::steady_clock::now();

    EpdFast engine(params.arch, graph);
    engine.bind(params);
    FastWorkspace ws;
    engine.resize_workspace(ws);
    WindowState st;
    engine.prepare_window(st, norm.normalize_edges(graph.edge_features), 0);

    RolloutResult out;
    out.predicted = Tensor::zeros({n_steps + 1, n * q});
    std::copy(u0.begin(), u0.end(), out.predicted.row(0));

    const auto t_steps = std::chrono::steady_clock::now();
    std::vector<double> state(u0), net(static_cast<std::size_t>(n * q));
    for (std::int64_t s = 0; s < n_steps; ++s) {
        train_detail::fill_aug_input(ws.x_aug.data(), state.data(), graph, q,
                                     static_cast<double>(s) * dt, norm);
        engine.forward(st, ws, net.data());
        for (std::int64_t i = 0; i < n * q; ++i)
            state[static_cast<std::size_t>(i)] +=
                dt * norm.dudt[static_cast<std::size_t>(i % q)].denormalize(net[static_cast<std::size_t>(i)]);
        for (std::int64_t i = 0; i < n; ++i)
            if (graph.boundary[static_cast<std::size_t>(i)])
                for (int c = 0; c < q; ++c)
                    state[static_cast<std::size_t>(i * q + c)] = boundary_values.at(s + 1, i * q + c);
        for (double v : state)
            if (!std::isfinite(v))
                throw NonFinitePrediction("non-finite prediction at step " + std::to_string(s + 1));
        std::copy(state.begin(), state.end(), out.predicted.row(s + 1));
    }

    const auto t_end = std::chrono::steady_clock::now();
    out.stepping_seconds = std::chrono::duration<double>(t_end - t_steps).count();
    out.wall_seconds = std::chrono::duration<double>(t_end - t_start).count();
    return out;
}

/// Relative squared-error trajectory metric: mean over steps 1..N_t of
/// |pred^n - truth^n|^2 / |truth^n|^2. Step 0 is excluded.
inline double rmse(const Tensor& predicted, const Tensor& truth) {
    if (!predicted.same_shape(truth)) throw ShapeMismatch("rmse: shape mismatch");
    const std::int64_t steps = predicted.rows() - 1;
    if (steps < 1) throw ShapeMismatch("rmse: need at least one step beyond the initial state");
    double acc = 0.0;
    for (std::int64_t s = 1; s <= steps; ++s) {
        double num = 0.0, den = 0.0;
        const double* p = predicted.row(s);
        const double* t = truth.row(s);
        for (std::int64_t i = 0; i < predicted.cols(); ++i) {
            num += (p[i] - t[i]) * (p[i] - t[i]);
            den += t[i] * t[i];
        }
        if (den == 0.0) throw ZeroNormSnapshot("zero-norm truth snapshot at step " + std::to_string(s));
        acc += num / den;
    }
    return acc / static_cast<double>(steps);
}

/// Per-step relative L2 errors |pred - truth| / |truth|, steps 1..N_t.
inline std::vector<double> per_step_relative_error(const Tensor& predicted, const Tensor& truth) {
    if (!predicted.same_shape(truth)) throw ShapeMismatch("per-step error: shape mismatch");
    std::vector<double> out;
    for (std::int64_t s = 1; s < predicted.rows(); ++s) {
        double num = 0.0, den = 0.0;
        const double* p = predicted.row(s);
        const double* t = truth.row(s);
        for (std::int64_t i = 0; i < predicted.cols(); ++i) {
            num += (p[i] - t[i]) * (p[i] - t[i]);
            den += t[i] * t[i];
        }
        if (den == 0.0) throw ZeroNormSnapshot("zero-norm truth snapshot at step " + std::to_string(s));
        out.push_back(std::sqrt(num / den));
    }
    return out;
}

inline RolloutResult evaluate_rollout(RolloutResult result, const Tensor& truth) {
    result.per_step_rmse = per_step_relative_error(result.predicted, truth);
    return result;
}

/// Linear-interpolation quantile of a sample (values copied and sorted).
inline double quantile(std::vector<double> values, double p) {
    if (values.empty()) throw ShapeMismatch("quantile of empty sample");
    std::sort(values.begin(), values.end());
    const double pos = p * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = static_cast<std::size_t>(std::ceil(pos));
    const double w = pos - static_cast<double>(lo);
    return values[lo] * (1.0 - w) + values[hi] * w;
}

/// Cross-trajectory error statistics: per-trajectory RMSE with aggregate
/// mean/max/min, and per-step relative-L2 quartiles across the test set.
struct ErrorSummary {
    std::vector<double> trajectory_rmse;
    double mean = 0.0, max = 0.0, min = 0.0;
    std::vector<std::array<double, 3>> per_step_quartiles; // q1, median, q3
};

inline ErrorSummary error_vs_time(const std::vector<const Tensor*>& predictions,
                                  const std::vector<const Tensor*>& truths) {
    if (predictions.empty() || predictions.size() != truths.size())
        throw ShapeMismatch("error_vs_time: need matching non-empty prediction/truth sets");
    ErrorSummary summary;
    std::vector<std::vector<double>> per_traj;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        per_traj.push_back(per_step_relative_error(*predictions[i], *truths[i]));
        summary.trajectory_rmse.push_back(rmse(*predictions[i], *truths[i]));
    }
    summary.mean = 0.0;
    summary.max = summary.trajectory_rmse.front();
    summary.min = summary.trajectory_rmse.front();
    for (double r : summary.trajectory_rmse) {
        summary.mean += r;
        summary.max = std::max(summary.max, r);
        summary.min = std::min(summary.min, r);
    }
    summary.mean /= static_cast<double>(summary.trajectory_rmse.size());

    const std::size_t steps = per_traj.front().size();
    for (const auto& e : per_traj)
        if (e.size() != steps) throw ShapeMismatch("error_vs_time: trajectories differ in length");
    for (std::size_t s = 0; s < steps; ++s) {
        std::vector<double> sample;
        sample.reserve(per_traj.size());
        for (const auto& e : per_traj) sample.push_back(e[s]);
        summary.per_step_quartiles.push_back(
            {quantile(sample, 0.25), quantile(sample, 0.5), quantile(sample, 0.75)});
    }
    return summary;
}

/// Ratio of summed full-order solve time to summed surrogate rollout time.
inline double timing_compare(const std::vector<double>& fom_seconds,
                             const std::vector<double>& rollout_seconds) {
    double fom = 0.0, roll = 0.0;
    for (double t : fom_seconds) fom += t;
    for (double t : rollout_seconds) roll += t;
    if (roll <= 0.0) throw ShapeMismatch("timing_compare: rollout time must be positive");
    return fom / roll;
}

} // namespace graphrom
