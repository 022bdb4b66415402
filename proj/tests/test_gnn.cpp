#include <catch2/catch_amalgamated.hpp>

#include <queue>
#include <set>

#include "graphrom/epd_fast.hpp"
#include "graphrom/mesh.hpp"
#include "graphrom/model.hpp"
#include "graphrom/rng.hpp"

using namespace graphrom;
using Catch::Approx;

namespace {

/// Random connected graph with paired directed edges.
GraphSample random_graph(Rng& rng, int n, int extra_edges) {
    std::set<std::pair<int, int>> und;
    for (int i = 1; i < n; ++i) und.insert({static_cast<int>(rng.bounded(static_cast<std::uint64_t>(i))), i});
    for (int e = 0; e < extra_edges; ++e) {
        int a = static_cast<int>(rng.bounded(static_cast<std::uint64_t>(n)));
        int b = static_cast<int>(rng.bounded(static_cast<std::uint64_t>(n)));
        if (a == b) continue;
        if (a > b) std::swap(a, b);
        und.insert({a, b});
    }
    GraphSample g;
    g.n_nodes = n;
    g.positions.resize(static_cast<std::size_t>(n));
    g.boundary.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        g.positions[static_cast<std::size_t>(i)] = {rng.uniform(), rng.uniform()};
        g.boundary[static_cast<std::size_t>(i)] = rng.uniform() < 0.3 ? 1 : 0;
    }
    for (const auto& [a, b] : und) {
        g.edges.push_back({static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b)});
        g.edges.push_back({static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(a)});
    }
    g.edge_features = Tensor::zeros({g.n_edges(), 3});
    for (std::int64_t r = 0; r < g.n_edges(); ++r) {
        const auto& p = g.positions[g.edges[static_cast<std::size_t>(r)][0]];
        const auto& q = g.positions[g.edges[static_cast<std::size_t>(r)][1]];
        g.edge_features.at(r, 0) = 0.5 * (p[0] + q[0]);
        g.edge_features.at(r, 1) = 0.5 * (p[1] + q[1]);
        g.edge_features.at(r, 2) = std::max(1e-3, std::hypot(p[0] - q[0], p[1] - q[1]));
    }
    return g;
}

Tensor random_field(Rng& rng, std::int64_t n, std::int64_t q) {
    Tensor t({n, q});
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-1.0, 1.0);
    return t;
}

std::vector<int> hop_distances(const GraphSample& g, int from) {
    std::vector<int> dist(static_cast<std::size_t>(g.n_nodes), -1);
    std::queue<int> q;
    dist[static_cast<std::size_t>(from)] = 0;
    q.push(from);
    while (!q.empty()) {
        const int v = q.front();
        q.pop();
        for (const auto& e : g.edges)
            if (static_cast<int>(e[0]) == v && dist[e[1]] < 0) {
                dist[e[1]] = dist[static_cast<std::size_t>(v)] + 1;
                q.push(static_cast<int>(e[1]));
            }
    }
    return dist;
}

} // namespace

TEST_CASE("parameter count anchors", "[gnn]") {
    ArchConfig a; // q=1, s=1, d=2, l=32, depth=2
    a.mp_steps = 8;
    REQUIRE(param_count(a) == 61825);
    a.mp_steps = 12;
    REQUIRE(param_count(a) == 91009);
    REQUIRE(61825 + 4 * 7296 == 91009);
    a.mp_steps = 0;
    REQUIRE(param_count(a) == 3457);
}

TEST_CASE("parameter count equals enumerated storage for many configs", "[gnn]") {
    Rng rng(2);
    for (int rep = 0; rep < 12; ++rep) {
        ArchConfig a;
        a.hidden = 1 + static_cast<int>(rng.bounded(40));
        a.mp_steps = static_cast<int>(rng.bounded(5));
        a.mlp_depth = 1 + static_cast<int>(rng.bounded(3));
        a.node_in = 1 + static_cast<int>(rng.bounded(3));
        a.global_in = static_cast<int>(rng.bounded(3));
        const ModelParams p = ModelParams::build(a);
        REQUIRE(param_count(a) == p.enumerate_params());
        REQUIRE(param_count(a) == p.n_params());
    }
}

TEST_CASE("encoder input widths", "[gnn]") {
    ArchConfig a;
    REQUIRE(a.node_encoder_in() == 3); // q=1, s=1 -> q+s+1
    REQUIRE(a.edge_encoder_in() == 3); // d=2 -> d+1
}

TEST_CASE("zero weights and biases give zero encodings", "[gnn]") {
    Rng rng(3);
    const GraphSample g = random_graph(rng, 6, 4);
    ArchConfig a;
    a.mp_steps = 1;
    ModelParams p = ModelParams::build(a); // all zeros
    const Tensor out = epd_forward(g, random_field(rng, g.n_nodes, 1), {0.7}, p);
    for (std::int64_t i = 0; i < out.numel(); ++i) REQUIRE(out[i] == 0.0);
}

TEST_CASE("boundary flag changes a node's encoding", "[gnn]") {
    Rng rng(5);
    GraphSample g = random_graph(rng, 2, 1);
    g.boundary = {0, 1};
    ArchConfig a;
    a.mp_steps = 0;
    ModelParams p = ModelParams::build(a);
    Rng init(7);
    p.init_glorot(init);
    Tensor u({2, 1});
    u[0] = u[1] = 0.4; // identical values, identical time
    const Tensor out = epd_forward(g, u, {0.2}, p);
    REQUIRE(out.at(0, 0) != out.at(1, 0));
}

TEST_CASE("opposite directed edges share features hence encodings", "[gnn]") {
    Rng rng(9);
    const GraphSample g = random_graph(rng, 8, 6);
    ArchConfig a;
    ModelParams p = ModelParams::build(a);
    Rng init(11);
    p.init_glorot(init);
    Tape tape;
    const TapedModel model = load_params(tape, p);
    const Tensor& enc = tape.value(encode_edges(tape, model, g.edge_features));
    for (std::int64_t r = 0; r < g.n_edges(); ++r)
        for (std::int64_t r2 = r + 1; r2 < g.n_edges(); ++r2)
            if (g.edges[static_cast<std::size_t>(r)][0] == g.edges[static_cast<std::size_t>(r2)][1] &&
                g.edges[static_cast<std::size_t>(r)][1] == g.edges[static_cast<std::size_t>(r2)][0])
                for (std::int64_t c = 0; c < enc.cols(); ++c)
                    REQUIRE(enc.at(r, c) == enc.at(r2, c));
}

TEST_CASE("message passing on a graph with no edges is psi_v([v, 0])", "[gnn]") {
    GraphSample g;
    g.n_nodes = 3;
    g.positions = {{0, 0}, {1, 0}, {0, 1}};
    g.boundary = {0, 0, 0};
    g.edge_features = Tensor::zeros({0, 3});
    ArchConfig a;
    a.hidden = 4;
    a.mp_steps = 1;
    ModelParams p = ModelParams::build(a);
    Rng init(13);
    p.init_glorot(init);

    Tape tape;
    const TapedModel model = load_params(tape, p);
    Rng rng(15);
    const Tensor v_in = random_field(rng, 3, 4);
    const int v = tape.input(v_in);
    const int e = tape.input(Tensor::zeros({0, 4}));
    const int out = message_pass(tape, g, v, e, model.blocks[0]);

    // Oracle: psi_v on [v | 0] directly.
    Tape tape2;
    const TapedModel model2 = load_params(tape2, p);
    const int cat = tape2.concat_cols(tape2.input(v_in), tape2.input(Tensor::zeros({3, 4})));
    const int expected = mlp_forward(tape2, model2.blocks[0][1], cat);
    for (std::int64_t i = 0; i < 12; ++i)
        REQUIRE(tape.value(out)[i] == Approx(tape2.value(expected)[i]).margin(1e-15));
}

TEST_CASE("two-node directed locality: messages flow source to destination", "[gnn]") {
    // Single directed edge a -> b: a receives no messages, so changing the
    // edge feature may only change b.
    GraphSample g;
    g.n_nodes = 2;
    g.positions = {{0, 0}, {1, 0}};
    g.boundary = {0, 0};
    g.edges = {{0, 1}};
    g.edge_features = Tensor({1, 3}, {0.5, 0.0, 1.0});

    ArchConfig a;
    a.hidden = 6;
    a.mp_steps = 1;
    ModelParams p = ModelParams::build(a);
    Rng init(17);
    p.init_glorot(init);
    Rng rng(19);
    const Tensor u = random_field(rng, 2, 1);

    const Tensor out1 = epd_forward(g, u, {0.1}, p);
    g.edge_features.at(0, 2) = 2.0;
    const Tensor out2 = epd_forward(g, u, {0.1}, p);
    REQUIRE(out1.at(0, 0) == out2.at(0, 0));
    REQUIRE(out1.at(1, 0) != out2.at(1, 0));
}

TEST_CASE("hand-evaluated message passing on a path graph", "[gnn]") {
    // 4-node path 0-1-2-3 with 1-dim features and identity-like units:
    // psi_e picks the source feature (row 2 of its weight), psi_v adds the
    // aggregated messages to the node feature. Then the block computes
    // v_i + sum of neighbors' features.
    GraphSample g;
    g.n_nodes = 4;
    g.positions = {{0, 0}, {1, 0}, {2, 0}, {3, 0}};
    g.boundary = {0, 0, 0, 0};
    for (int i = 0; i + 1 < 4; ++i) {
        g.edges.push_back({static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(i + 1)});
        g.edges.push_back({static_cast<std::uint32_t>(i + 1), static_cast<std::uint32_t>(i)});
    }
    g.edge_features = Tensor::zeros({g.n_edges(), 3});

    ArchConfig a;
    a.hidden = 1;
    a.mp_steps = 1;
    a.mlp_depth = 1; // single linear layer per unit keeps arithmetic exact
    ModelParams p = ModelParams::build(a);
    // psi_e: [e, v_src, v_dst] . [0, 1, 0]^T ; psi_v: [v, ebar] . [1, 1]^T.
    p.flat[p.blocks[0][0].weights[0].offset + 1] = 1.0;
    p.flat[p.blocks[0][1].weights[0].offset + 0] = 1.0;
    p.flat[p.blocks[0][1].weights[0].offset + 1] = 1.0;

    const Tensor v = Tensor({4, 1}, {1.0, 2.0, 3.0, 4.0});
    Tape tape;
    const TapedModel model = load_params(tape, p);
    const int out = message_pass(tape, g, tape.input(v), tape.input(Tensor::zeros({g.n_edges(), 1})),
                                 model.blocks[0]);
    const Tensor& y = tape.value(out);
    REQUIRE(y.at(0, 0) == Approx(1.0 + 2.0));       // neighbor 1
    REQUIRE(y.at(1, 0) == Approx(2.0 + 1.0 + 3.0)); // neighbors 0, 2
    REQUIRE(y.at(2, 0) == Approx(3.0 + 2.0 + 4.0));
    REQUIRE(y.at(3, 0) == Approx(4.0 + 3.0));
}

TEST_CASE("m = 0 reduces to decoder after encoder", "[gnn]") {
    Rng rng(21);
    const GraphSample g = random_graph(rng, 5, 3);
    ArchConfig a;
    a.mp_steps = 0;
    ModelParams p = ModelParams::build(a);
    Rng init(23);
    p.init_glorot(init);
    const Tensor out = epd_forward(g, random_field(rng, 5, 1), {0.5}, p);
    REQUIRE(out.rows() == 5);
    REQUIRE(out.cols() == 1);
    REQUIRE(out.all_finite());
}

TEST_CASE("forward is deterministic bitwise", "[gnn]") {
    Rng rng(25);
    const GraphSample g = random_graph(rng, 10, 8);
    ArchConfig a;
    a.mp_steps = 3;
    ModelParams p = ModelParams::build(a);
    Rng init(27);
    p.init_glorot(init);
    const Tensor u = random_field(rng, 10, 1);
    const Tensor o1 = epd_forward(g, u, {0.3}, p);
    const Tensor o2 = epd_forward(g, u, {0.3}, p);
    for (std::int64_t i = 0; i < o1.numel(); ++i) REQUIRE(o1[i] == o2[i]);
}

TEST_CASE("permutation equivariance of the full forward pass", "[gnn]") {
    Rng rng(29);
    for (int rep = 0; rep < 3; ++rep) {
        const int n = 8 + static_cast<int>(rng.bounded(5));
        GraphSample g = random_graph(rng, n, n);
        ArchConfig a;
        a.hidden = 8;
        a.mp_steps = 2;
        ModelParams p = ModelParams::build(a);
        Rng init(31 + rep);
        p.init_glorot(init);
        const Tensor u = random_field(rng, n, 1);
        const Tensor base = epd_forward(g, u, {0.4}, p);

        std::vector<int> perm(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = i;
        rng.shuffle(perm);

        GraphSample pg;
        pg.n_nodes = n;
        pg.positions.resize(static_cast<std::size_t>(n));
        pg.boundary.resize(static_cast<std::size_t>(n));
        Tensor pu({n, 1});
        for (int i = 0; i < n; ++i) {
            const int pi = perm[static_cast<std::size_t>(i)];
            pg.positions[static_cast<std::size_t>(pi)] = g.positions[static_cast<std::size_t>(i)];
            pg.boundary[static_cast<std::size_t>(pi)] = g.boundary[static_cast<std::size_t>(i)];
            pu.at(pi, 0) = u.at(i, 0);
        }
        pg.edges = g.edges;
        for (auto& e : pg.edges) {
            e[0] = static_cast<std::uint32_t>(perm[e[0]]);
            e[1] = static_cast<std::uint32_t>(perm[e[1]]);
        }
        pg.edge_features = g.edge_features;

        const Tensor permuted = epd_forward(pg, pu, {0.4}, p);
        for (int i = 0; i < n; ++i)
            REQUIRE(permuted.at(perm[static_cast<std::size_t>(i)], 0) ==
                    Approx(base.at(i, 0)).margin(1e-12));
    }
}

TEST_CASE("outputs depend only on the m-hop neighborhood", "[gnn]") {
    Rng rng(37);
    // A path graph guarantees nodes beyond m hops exist.
    const int n = 12, m = 3;
    GraphSample g;
    g.n_nodes = n;
    g.positions.resize(static_cast<std::size_t>(n));
    g.boundary.assign(static_cast<std::size_t>(n), 0);
    for (int i = 0; i < n; ++i) g.positions[static_cast<std::size_t>(i)] = {i * 0.1, 0.0};
    for (int i = 0; i + 1 < n; ++i) {
        g.edges.push_back({static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(i + 1)});
        g.edges.push_back({static_cast<std::uint32_t>(i + 1), static_cast<std::uint32_t>(i)});
    }
    g.edge_features = Tensor::zeros({g.n_edges(), 3});
    for (std::int64_t r = 0; r < g.n_edges(); ++r) g.edge_features.at(r, 2) = 0.1;

    ArchConfig a;
    a.hidden = 8;
    a.mp_steps = m;
    ModelParams p = ModelParams::build(a);
    Rng init(39);
    p.init_glorot(init);

    Tensor u = random_field(rng, n, 1);
    const Tensor base = epd_forward(g, u, {0.2}, p);
    const auto dist = hop_distances(g, 0);

    Tensor u2 = u;
    u2.at(n - 1, 0) += 10.0; // node n-1 is n-1 > m hops from node 0
    REQUIRE(dist[static_cast<std::size_t>(n - 1)] > m);
    const Tensor moved = epd_forward(g, u2, {0.2}, p);
    REQUIRE(moved.at(0, 0) == base.at(0, 0)); // exactly zero change
    REQUIRE(moved.at(n - 1, 0) != base.at(n - 1, 0));
}

TEST_CASE("aggregation identity reproduces plain neighbor sums", "[gnn]") {
    // With psi_e selecting v_src + v_dst, the destination-collapsed sum minus
    // (in-degree) * v equals the plain adjacency neighbor sum.
    Rng rng(41);
    for (int rep = 0; rep < 5; ++rep) {
        const GraphSample g = random_graph(rng, 10, 8);
        const Tensor v = random_field(rng, 10, 4);

        Tape tape;
        const int vid = tape.input(v);
        const int v_in = tape.gather_rows(vid, edge_sources(g));
        const int v_out = tape.gather_rows(vid, edge_destinations(g));
        const int summed = tape.axpby(1.0, v_in, 1.0, v_out);
        const Tensor collapsed = tape.value(tape.segment_sum(summed, edge_destinations(g), 10));

        std::vector<int> indegree(10, 0);
        for (const auto& e : g.edges) ++indegree[e[1]];

        // Oracle: direct adjacency sum.
        Tensor oracle = Tensor::zeros({10, 4});
        for (const auto& e : g.edges)
            for (std::int64_t c = 0; c < 4; ++c) oracle.at(e[1], c) += v.at(e[0], c);

        for (std::int64_t i = 0; i < 10; ++i)
            for (std::int64_t c = 0; c < 4; ++c) {
                const double lhs = collapsed.at(i, c) - indegree[static_cast<std::size_t>(i)] * v.at(i, c);
                REQUIRE(lhs == Approx(oracle.at(i, c)).margin(1e-12));
            }
    }
}

TEST_CASE("fast engine matches the tape forward bitwise-tolerant", "[gnn]") {
    Rng rng(47);
    for (int rep = 0; rep < 3; ++rep) {
        const int n = 7 + rep;
        const GraphSample g = random_graph(rng, n, 6);
        ArchConfig a;
        a.hidden = 8;
        a.mp_steps = rep; // covers m = 0, 1, 2
        ModelParams p = ModelParams::build(a);
        Rng init(49 + rep);
        p.init_glorot(init);

        const Tensor u = random_field(rng, n, 1);
        const std::vector<double> xi = {0.3};

        const Tensor tape_out = epd_forward(g, u, xi, p);

        EpdFast engine(a, g);
        engine.bind(p);
        FastWorkspace ws;
        engine.resize_workspace(ws);
        WindowState st;
        engine.prepare_window(st, g.edge_features, 0);
        const Tensor aug = augment_node_input(g, u, xi);
        std::copy(aug.data(), aug.data() + aug.numel(), ws.x_aug.begin());
        std::vector<double> out(static_cast<std::size_t>(n));
        engine.forward(st, ws, out.data());

        for (std::int64_t i = 0; i < n; ++i)
            REQUIRE(out[static_cast<std::size_t>(i)] == Approx(tape_out[i]).margin(1e-12));
    }
}
