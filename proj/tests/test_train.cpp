#include <catch2/catch_amalgamated.hpp>

#include <set>

#include "graphrom/mesh.hpp"
#include "graphrom/rng.hpp"
#include "graphrom/train.hpp"

using namespace graphrom;
using Catch::Approx;

namespace {

GraphSample line_graph(int n) {
    GraphSample g;
    g.n_nodes = n;
    g.positions.resize(static_cast<std::size_t>(n));
    g.boundary.assign(static_cast<std::size_t>(n), 0);
    g.boundary.front() = 1;
    g.boundary.back() = 1;
    for (int i = 0; i < n; ++i) g.positions[static_cast<std::size_t>(i)] = {i / double(n - 1), 0.0};
    for (int i = 0; i + 1 < n; ++i) {
        g.edges.push_back({static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(i + 1)});
        g.edges.push_back({static_cast<std::uint32_t>(i + 1), static_cast<std::uint32_t>(i)});
    }
    g.edge_features = Tensor::zeros({g.n_edges(), 3});
    for (std::int64_t r = 0; r < g.n_edges(); ++r) {
        const auto& p = g.positions[g.edges[static_cast<std::size_t>(r)][0]];
        const auto& q = g.positions[g.edges[static_cast<std::size_t>(r)][1]];
        g.edge_features.at(r, 0) = 0.5 * (p[0] + q[0]);
        g.edge_features.at(r, 1) = 0.5 * (p[1] + q[1]);
        g.edge_features.at(r, 2) = std::abs(p[0] - q[0]);
    }
    return g;
}

Tensor random_window(Rng& rng, std::int64_t steps, std::int64_t width, double scale = 1.0) {
    Tensor t({steps, width});
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = scale * rng.uniform(-1.0, 1.0);
    return t;
}

Normalizer random_normalizer(Rng& rng, int q, int ec) {
    Normalizer n = Normalizer::identity(q, ec);
    for (auto& s : n.u) s = {rng.uniform(-0.3, 0.3), rng.uniform(0.5, 2.0)};
    for (auto& s : n.edge) s = {rng.uniform(-0.3, 0.3), rng.uniform(0.5, 2.0)};
    for (auto& s : n.dudt) s = {rng.uniform(-0.3, 0.3), rng.uniform(0.5, 2.0)};
    n.xi = {rng.uniform(0.0, 1.0), rng.uniform(0.5, 2.0)};
    return n;
}

} // namespace

TEST_CASE("hand-evaluated loss on a single transition", "[train]") {
    // 1 node, 1 transition: u0 = 0, u1 = 1, dt = 0.5, net output 0, w1 = w2 = 0.5.
    // Step residual |1 - 0 - 0|^2 = 1, derivative residual |2 - 0|^2 = 4,
    // L = 0.5 * 1 + 0.5 * 4 = 2.5.
    GraphSample g;
    g.n_nodes = 1;
    g.positions = {{0.5, 0.5}};
    g.boundary = {0};
    g.edge_features = Tensor::zeros({0, 3});

    ArchConfig a;
    a.hidden = 4;
    a.mp_steps = 0;
    const ModelParams p = ModelParams::build(a); // zero params -> zero output
    const Normalizer norm = Normalizer::identity(1, 3);

    const Tensor window({2, 1}, {0.0, 1.0});
    const LossGrad two =
        window_loss_grad_reference(p, g, window, window, 0, 0.5, norm, 0.5, 0.5, true);
    REQUIRE(two.loss == Approx(2.5).margin(1e-12));
    const LossGrad folded =
        window_loss_grad_reference(p, g, window, window, 0, 0.5, norm, 0.5, 0.5, false);
    REQUIRE(folded.loss == Approx(2.5).margin(1e-12));
}

TEST_CASE("two-term and folded losses agree on random data", "[train]") {
    Rng rng(3);
    const GraphSample g = line_graph(6);
    ArchConfig a;
    a.hidden = 8;
    a.mp_steps = 2;
    ModelParams p = ModelParams::build(a);
    Rng init(5);
    p.init_glorot(init);
    const Normalizer norm = random_normalizer(rng, 1, 3);

    for (int rep = 0; rep < 3; ++rep) {
        const Tensor clean = random_window(rng, 4, 6);
        Tensor noisy = clean;
        for (std::int64_t i = 0; i < noisy.numel(); ++i) noisy[i] += 0.01 * rng.uniform(-1, 1);
        const double w1 = rng.uniform(0, 1), w2 = rng.uniform(0, 1), dt = 0.13;
        const LossGrad lg1 =
            window_loss_grad_reference(p, g, clean, noisy, 2, dt, norm, w1, w2, true);
        const LossGrad lg2 =
            window_loss_grad_reference(p, g, clean, noisy, 2, dt, norm, w1, w2, false);
        REQUIRE(lg1.loss == Approx(lg2.loss).epsilon(1e-12));
        for (std::size_t i = 0; i < lg1.grad.size(); ++i)
            REQUIRE(lg1.grad[i] == Approx(lg2.grad[i]).margin(1e-12).epsilon(1e-10));
    }
}

TEST_CASE("fused trainer gradients match the tape path", "[train]") {
    Rng rng(7);
    for (int m : {0, 1, 2}) {
        const GraphSample g = line_graph(7);
        ArchConfig a;
        a.hidden = 8;
        a.mp_steps = m;
        ModelParams p = ModelParams::build(a);
        Rng init(9 + m);
        p.init_glorot(init);
        const Normalizer norm = random_normalizer(rng, 1, 3);

        const Tensor clean = random_window(rng, 4, 7);
        Tensor noisy = clean;
        for (std::int64_t i = 0; i < noisy.numel(); ++i) noisy[i] += 0.02 * rng.uniform(-1, 1);
        const double dt = 0.11, w1 = 0.25, w2 = 0.75;
        const std::int64_t b0 = 3; // global step offset of the window
        const LossGrad ref =
            window_loss_grad_reference(p, g, clean, noisy, b0, dt, norm, w1, w2, true);

        // Fused path, mirroring the training loop.
        EpdFast engine(a, g);
        engine.bind(p);
        FastWorkspace ws;
        engine.resize_workspace(ws);
        WindowState st;
        engine.prepare_window(st, norm.normalize_edges(g.edge_features), 3);
        const double scale = (w1 * dt * dt + w2) / 3.0;
        std::vector<double> grad(p.flat.size(), 0.0);
        double loss = 0.0;
        std::vector<double> local(p.flat.size());
        for (int t = 0; t < 3; ++t) {
            std::fill(local.begin(), local.end(), 0.0);
            train_detail::fill_aug_input(ws.x_aug.data(), noisy.row(t), g, 1,
                                         static_cast<double>(b0 + t) * dt, norm);
            std::vector<double> out(7), dout(7);
            engine.forward(st, ws, out.data());
            for (int i = 0; i < 7; ++i) {
                const double udot = (clean.at(t + 1, i) - noisy.at(t, i)) / dt;
                const double r = norm.dudt[0].denormalize(out[static_cast<std::size_t>(i)]) - udot;
                loss += scale * r * r;
                dout[static_cast<std::size_t>(i)] = 2.0 * scale * r * norm.dudt[0].std;
            }
            engine.backward(st, ws, dout.data(), local.data(), t);
            kernels::axpy(1.0, local.data(), grad.data(), static_cast<std::int64_t>(grad.size()));
        }
        std::vector<double> scratch;
        engine.reduce_window(st, grad.data(), scratch);

        REQUIRE(loss == Approx(ref.loss).epsilon(1e-12));
        double max_abs = 0.0;
        for (double v : ref.grad) max_abs = std::max(max_abs, std::abs(v));
        for (std::size_t i = 0; i < grad.size(); ++i)
            REQUIRE(grad[i] == Approx(ref.grad[i]).margin(1e-12 * std::max(1.0, max_abs)).epsilon(1e-10));
    }
}

TEST_CASE("fused trainer matches the tape path on a mesh graph", "[train]") {
    // mesh_to_graph emits destination-sorted edges, which enables the tiled
    // message path; verify against the tape on that layout too.
    const Mesh mesh = generate_mesh({ObstacleKind::Circle, 0.5, 0.66, 0.15, 9});
    const GraphSample g = mesh_to_graph(mesh);
    const std::int64_t n = g.n_nodes;

    ArchConfig a;
    a.hidden = 8;
    a.mp_steps = 3;
    ModelParams p = ModelParams::build(a);
    Rng init(71);
    p.init_glorot(init);
    Rng rng(73);
    const Normalizer norm = random_normalizer(rng, 1, 3);
    const Tensor clean = random_window(rng, 3, n);

    EpdFast engine(a, g);
    REQUIRE(engine.fused_message_path());
    engine.bind(p);
    FastWorkspace ws;
    engine.resize_workspace(ws);
    WindowState st;
    engine.prepare_window(st, norm.normalize_edges(g.edge_features), 2);

    const double dt = 0.09;
    const LossGrad ref = window_loss_grad_reference(p, g, clean, clean, 0, dt, norm, 0, 1, false);

    const double scale = 1.0 / 2.0;
    std::vector<double> grad(p.flat.size(), 0.0), local(p.flat.size());
    double loss = 0.0;
    for (int t = 0; t < 2; ++t) {
        std::fill(local.begin(), local.end(), 0.0);
        train_detail::fill_aug_input(ws.x_aug.data(), clean.row(t), g, 1, t * dt, norm);
        std::vector<double> out(static_cast<std::size_t>(n)), dout(static_cast<std::size_t>(n));
        engine.forward(st, ws, out.data());
        for (std::int64_t i = 0; i < n; ++i) {
            const double udot = (clean.at(t + 1, i) - clean.at(t, i)) / dt;
            const double r = norm.dudt[0].denormalize(out[static_cast<std::size_t>(i)]) - udot;
            loss += scale * r * r;
            dout[static_cast<std::size_t>(i)] = 2.0 * scale * r * norm.dudt[0].std;
        }
        engine.backward(st, ws, dout.data(), local.data(), t);
        kernels::axpy(1.0, local.data(), grad.data(), static_cast<std::int64_t>(grad.size()));
    }
    std::vector<double> scratch;
    engine.reduce_window(st, grad.data(), scratch);

    REQUIRE(loss == Approx(ref.loss).epsilon(1e-12));
    double max_abs = 0.0;
    for (double v : ref.grad) max_abs = std::max(max_abs, std::abs(v));
    for (std::size_t i = 0; i < grad.size(); ++i)
        REQUIRE(grad[i] == Approx(ref.grad[i]).margin(1e-12 * std::max(1.0, max_abs)).epsilon(1e-10));
}

TEST_CASE("noise: zero variance leaves the window unchanged", "[train]") {
    Rng rng(11);
    const Tensor w = random_window(rng, 5, 8);
    Rng noise(13);
    const Tensor noisy = add_noise(w, std::vector<std::uint8_t>(8, 0), 1, 0.0, noise);
    for (std::int64_t i = 0; i < w.numel(); ++i) REQUIRE(noisy[i] == w[i]);
}

TEST_CASE("noise: boundary entries and targets stay clean", "[train]") {
    Rng rng(17);
    const Tensor w = random_window(rng, 6, 5);
    std::vector<std::uint8_t> boundary = {1, 0, 0, 1, 0};
    Rng noise(19);
    const Tensor noisy = add_noise(w, boundary, 1, 0.5, noise);
    for (std::int64_t r = 0; r < 6; ++r)
        for (std::int64_t i = 0; i < 5; ++i) {
            if (boundary[static_cast<std::size_t>(i)] || r == 5)
                REQUIRE(noisy.at(r, i) == w.at(r, i)); // last row is target-only
            else if (r < 5)
                REQUIRE(noisy.at(r, i) != w.at(r, i));
        }
}

TEST_CASE("noise: empirical variance within 5 percent", "[train]") {
    const std::int64_t rows = 101, nodes = 1000; // 1e5 draws
    Tensor w({rows, nodes});
    Rng noise(23);
    const double sigma2 = 0.04;
    const Tensor noisy = add_noise(w, std::vector<std::uint8_t>(nodes, 0), 1, sigma2, noise);
    double acc = 0.0;
    std::int64_t count = 0;
    for (std::int64_t r = 0; r + 1 < rows; ++r)
        for (std::int64_t i = 0; i < nodes; ++i) {
            acc += noisy.at(r, i) * noisy.at(r, i);
            ++count;
        }
    const double var = acc / static_cast<double>(count);
    REQUIRE(var > 0.95 * sigma2);
    REQUIRE(var < 1.05 * sigma2);
}

TEST_CASE("adam: first step is a signed unit step scaled by lr", "[train]") {
    std::vector<double> params = {1.0, -2.0, 3.0};
    std::vector<double> grad = {0.5, -0.25, 1.5};
    AdamState st(3);
    adam_step(params, grad, st, 0.01);
    // With bias correction the first update is -lr * g / (|g| + eps).
    REQUIRE(params[0] == Approx(1.0 - 0.01).epsilon(1e-6));
    REQUIRE(params[1] == Approx(-2.0 + 0.01).epsilon(1e-6));
    REQUIRE(params[2] == Approx(3.0 - 0.01).epsilon(1e-6));
}

TEST_CASE("adam: zero gradient leaves parameters unchanged", "[train]") {
    std::vector<double> params = {1.0, 2.0};
    AdamState st(2);
    adam_step(params, {0.0, 0.0}, st, 0.1);
    REQUIRE(params[0] == 1.0);
    REQUIRE(params[1] == 2.0);
}

TEST_CASE("adam: minimizes a scalar quadratic", "[train]") {
    // f(w) = (w - 3)^2 from w = 0, lr = 0.1, 500 steps.
    double w = 0.0;
    std::vector<double> params = {w};
    AdamState st(1);
    for (int i = 0; i < 500; ++i) {
        const std::vector<double> grad = {2.0 * (params[0] - 3.0)};
        adam_step(params, grad, st, 0.1);
    }
    REQUIRE(std::abs(params[0] - 3.0) < 1e-2);
}

TEST_CASE("normalizer round-trip and floor", "[train]") {
    Rng rng(29);
    Tensor fields = random_window(rng, 11, 6, 2.0);
    Tensor edges = random_window(rng, 10, 3);
    const Normalizer n = fit_normalizer({&fields}, {0.02}, {&edges}, 1);
    for (int rep = 0; rep < 100; ++rep) {
        const double x = rng.uniform(-5, 5);
        REQUIRE(n.u[0].denormalize(n.u[0].normalize(x)) == Approx(x).margin(1e-10));
        REQUIRE(n.dudt[0].denormalize(n.dudt[0].normalize(x)) == Approx(x).margin(1e-10));
    }
    // Constant field -> floored std.
    Tensor constant = Tensor::full({5, 4}, 2.5);
    const Normalizer nc = fit_normalizer({&constant}, {0.02}, {&edges}, 1);
    REQUIRE(nc.u[0].std >= Normalizer::kStdFloor);
}

TEST_CASE("targets stay clean under huge noise", "[train]") {
    // With enormous noise variance the derivative targets must still be built
    // from the clean next snapshot: check through the loss structure.
    GraphSample g = line_graph(4);
    ArchConfig a;
    a.hidden = 4;
    a.mp_steps = 0;
    const ModelParams p = ModelParams::build(a); // zero network
    const Normalizer norm = Normalizer::identity(1, 3);

    Rng rng(31);
    const Tensor clean = random_window(rng, 3, 4);
    Rng noise_rng(33);
    const Tensor noisy = add_noise(clean, g.boundary, 1, 1e6, noise_rng);

    // Zero network output: folded loss = c * sum |(clean_next - noisy_cur)/dt|^2.
    const double dt = 0.1;
    const LossGrad lg = window_loss_grad_reference(p, g, clean, noisy, 0, dt, norm, 0, 1, false);
    double expect = 0.0;
    for (std::int64_t t = 0; t < 2; ++t)
        for (std::int64_t i = 0; i < 4; ++i) {
            const double udot = (clean.at(t + 1, i) - noisy.at(t, i)) / dt;
            expect += udot * udot;
        }
    expect /= 2.0;
    REQUIRE(lg.loss == Approx(expect).epsilon(1e-12));
}

TEST_CASE("training runs, decays the rate on schedule, and is reproducible", "[train]") {
    // Tiny synthetic dynamics on a line graph: diffusion-like smoothing.
    const GraphSample g = line_graph(9);
    Tensor fields({12, 9});
    for (std::int64_t i = 0; i < 9; ++i) fields.at(0, i) = std::sin(0.7 * static_cast<double>(i));
    for (std::int64_t s = 1; s < 12; ++s)
        for (std::int64_t i = 0; i < 9; ++i) {
            const double left = fields.at(s - 1, i > 0 ? i - 1 : i);
            const double right = fields.at(s - 1, i < 8 ? i + 1 : i);
            fields.at(s, i) = fields.at(s - 1, i) + 0.2 * (0.5 * (left + right) - fields.at(s - 1, i));
        }

    SimView sim;
    sim.graph = g;
    sim.fields = &fields;
    sim.dt = 0.05;
    sim.id = 0;

    std::vector<const Tensor*> f = {&fields};
    std::vector<const Tensor*> e = {&g.edge_features};
    const Normalizer norm = fit_normalizer(f, {0.05}, e, 1);

    ArchConfig a;
    a.hidden = 8;
    a.mp_steps = 2;
    TrainConfig cfg;
    cfg.epochs = 6;
    cfg.batch_size = 6;
    cfg.lr = 1e-2;
    cfg.decay = 0.5;
    cfg.decay_every = 2;
    cfg.noise_var = 1e-6;
    cfg.seed = 42;

    const TrainResult r1 = train_gnn({sim}, a, cfg, norm);
    REQUIRE(r1.history.size() == 6);
    // lr decays after epochs 2 and 4 (1-based completion counts).
    REQUIRE(r1.history[0][2] == Approx(1e-2));
    REQUIRE(r1.history[2][2] == Approx(5e-3));
    REQUIRE(r1.history[4][2] == Approx(2.5e-3));
    // Loss goes down on this easy problem.
    REQUIRE(r1.history.back()[1] < r1.history.front()[1]);

    // Bit-reproducibility with the same seed, and across thread counts.
    const TrainResult r2 = train_gnn({sim}, a, cfg, norm);
    REQUIRE(r1.params.flat == r2.params.flat);
    TrainConfig cfg2 = cfg;
    cfg2.threads = 2;
    const TrainResult r3 = train_gnn({sim}, a, cfg2, norm);
    REQUIRE(r1.params.flat == r3.params.flat);

    // epochs = 0 returns the initialized parameters and no history.
    TrainConfig zero = cfg;
    zero.epochs = 0;
    const TrainResult r0 = train_gnn({sim}, a, zero, norm);
    REQUIRE(r0.history.empty());
    ModelParams fresh = ModelParams::build(a);
    Rng init(derive_seed(cfg.seed, "init"));
    fresh.init_glorot(init);
    REQUIRE(r0.params.flat == fresh.flat);
}

TEST_CASE("full network gradient check on a random graph", "[train][slow]") {
    // Smaller member of the acceptance family: m = 2 here, the full m = 8
    // configuration runs in the acceptance suite.
    Rng rng(51);
    GraphSample g = line_graph(8);
    ArchConfig a;
    a.hidden = 8;
    a.mp_steps = 2;
    ModelParams p = ModelParams::build(a);
    Rng init(53);
    p.init_glorot(init);
    const Normalizer norm = random_normalizer(rng, 1, 3);

    const Tensor clean = random_window(rng, 3, 8);
    const Tensor noisy = clean;

    const auto refs = train_detail::all_param_refs(p);
    auto pack = [&](const std::vector<Tensor>& tensors) {
        ModelParams q = p;
        for (std::size_t i = 0; i < refs.size(); ++i)
            std::copy(tensors[i].data(), tensors[i].data() + refs[i].numel(),
                      q.flat.begin() + refs[i].offset);
        return q;
    };
    std::vector<Tensor> packed;
    for (const auto& r : refs) packed.push_back(p.tensor(r));

    auto value = [&](const std::vector<Tensor>& t) {
        return window_loss_grad_reference(pack(t), g, clean, noisy, 0, 0.07, norm, 0.3, 0.7, false)
            .loss;
    };
    auto gradient = [&](const std::vector<Tensor>& t) {
        const LossGrad lg =
            window_loss_grad_reference(pack(t), g, clean, noisy, 0, 0.07, norm, 0.3, 0.7, false);
        std::vector<Tensor> out;
        for (const auto& r : refs) {
            Tensor gt({r.rows, r.cols});
            std::copy(lg.grad.begin() + r.offset, lg.grad.begin() + r.offset + r.numel(), gt.data());
            out.push_back(std::move(gt));
        }
        return out;
    };

    Rng pick(55);
    const auto res = grad_check(value, gradient, packed, 1e-6, pick, 0.05);
    INFO("max rel err " << res.max_rel_err << " over " << res.checked << " components");
    REQUIRE(res.max_rel_err < 1e-4);
}
