#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "graphrom/mesh.hpp"
#include "graphrom/rng.hpp"
#include "graphrom/tape.hpp"
#include "graphrom/tensor.hpp"

namespace graphrom {

/// Encoder-Processor-Decoder architecture description. All MLP units share the
/// hidden width and the number of linear layers; activations sit between
/// layers, never after the last one.
struct ArchConfig {
    int hidden = 32;   // per-node / per-edge feature width
    int mp_steps = 12; // message-passing blocks
    int mlp_depth = 2; // linear layers per MLP
    int node_in = 1;   // input channels per node
    int global_in = 1; // global feature width (time)
    int space_dim = 2;

    void validate() const {
        if (hidden < 1 || mlp_depth < 1 || mp_steps < 0 || node_in < 1 || global_in < 0 ||
            space_dim < 1)
            throw ConfigError("invalid architecture configuration");
    }

    int node_encoder_in() const { return node_in + global_in + 1; }
    int edge_encoder_in() const { return space_dim + 1; }
};

namespace model_detail {

inline std::vector<int> mlp_widths(int in, int out, int depth, int hidden) {
    std::vector<int> w;
    w.push_back(in);
    for (int i = 0; i < depth - 1; ++i) w.push_back(hidden);
    w.push_back(out);
    return w;
}

inline std::int64_t mlp_param_count(const std::vector<int>& widths) {
    std::int64_t c = 0;
    for (std::size_t i = 0; i + 1 < widths.size(); ++i)
        c += static_cast<std::int64_t>(widths[i]) * widths[i + 1] + widths[i + 1];
    return c;
}

} // namespace model_detail

/// Closed-form parameter count: node encoder + edge encoder + per-block edge
/// and node MLPs + decoder.
inline std::int64_t param_count(const ArchConfig& a) {
    a.validate();
    using model_detail::mlp_param_count;
    using model_detail::mlp_widths;
    std::int64_t c = 0;
    c += mlp_param_count(mlp_widths(a.node_encoder_in(), a.hidden, a.mlp_depth, a.hidden));
    c += mlp_param_count(mlp_widths(a.edge_encoder_in(), a.hidden, a.mlp_depth, a.hidden));
    c += static_cast<std::int64_t>(a.mp_steps) *
         (mlp_param_count(mlp_widths(3 * a.hidden, a.hidden, a.mlp_depth, a.hidden)) +
          mlp_param_count(mlp_widths(2 * a.hidden, a.hidden, a.mlp_depth, a.hidden)));
    c += mlp_param_count(mlp_widths(a.hidden, a.node_in, a.mlp_depth, a.hidden));
    return c;
}

/// Slice of the flat parameter vector; biases use rows == 1.
struct ParamRef {
    std::int64_t offset = 0;
    std::int64_t rows = 0;
    std::int64_t cols = 0;
    std::int64_t numel() const { return rows * cols; }
};

struct MlpLayout {
    std::vector<int> widths;
    std::vector<ParamRef> weights;
    std::vector<ParamRef> biases;
    int n_layers() const { return static_cast<int>(weights.size()); }
};

/// Flat parameter vector plus the layout that maps MLP weights into it.
/// Declaration order: node encoder, edge encoder, then per block the edge MLP
/// followed by the node MLP, then the decoder; within an MLP, weight then bias
/// per layer. flatten/unflatten is the identity on this storage.
struct ModelParams {
    ArchConfig arch;
    MlpLayout node_encoder, edge_encoder, decoder;
    std::vector<std::array<MlpLayout, 2>> blocks; // [edge MLP, node MLP]
    std::vector<double> flat;

    static ModelParams build(const ArchConfig& a) {
        a.validate();
        ModelParams p;
        p.arch = a;
        std::int64_t cursor = 0;
        auto add_mlp = [&cursor](const std::vector<int>& widths) {
            MlpLayout m;
            m.widths = widths;
            for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
                m.weights.push_back({cursor, widths[i], widths[i + 1]});
                cursor += static_cast<std::int64_t>(widths[i]) * widths[i + 1];
                m.biases.push_back({cursor, 1, widths[i + 1]});
                cursor += widths[i + 1];
            }
            return m;
        };
        using model_detail::mlp_widths;
        p.node_encoder = add_mlp(mlp_widths(a.node_encoder_in(), a.hidden, a.mlp_depth, a.hidden));
        p.edge_encoder = add_mlp(mlp_widths(a.edge_encoder_in(), a.hidden, a.mlp_depth, a.hidden));
        for (int b = 0; b < a.mp_steps; ++b)
            p.blocks.push_back({add_mlp(mlp_widths(3 * a.hidden, a.hidden, a.mlp_depth, a.hidden)),
                                add_mlp(mlp_widths(2 * a.hidden, a.hidden, a.mlp_depth, a.hidden))});
        p.decoder = add_mlp(mlp_widths(a.hidden, a.node_in, a.mlp_depth, a.hidden));
        p.flat.assign(static_cast<std::size_t>(cursor), 0.0);
        return p;
    }

    std::int64_t n_params() const { return static_cast<std::int64_t>(flat.size()); }

    Tensor tensor(const ParamRef& r) const {
        Tensor t({r.rows, r.cols});
        std::copy(flat.begin() + r.offset, flat.begin() + r.offset + r.numel(), t.data());
        return t;
    }

    const double* ptr(const ParamRef& r) const { return flat.data() + r.offset; }
    double* ptr(const ParamRef& r) { return flat.data() + r.offset; }

    /// Uniform Glorot-style initialization: weights ~ U(-a, a) with
    /// a = sqrt(6 / (fan_in + fan_out)); biases zero. Seed-pinned via rng.
    void init_glorot(Rng& rng) {
        std::fill(flat.begin(), flat.end(), 0.0);
        for_each_mlp([&](const MlpLayout& m) {
            for (std::size_t l = 0; l < m.weights.size(); ++l) {
                const ParamRef& w = m.weights[l];
                const double a = std::sqrt(6.0 / static_cast<double>(w.rows + w.cols));
                double* d = ptr(w);
                for (std::int64_t i = 0; i < w.numel(); ++i) d[i] = rng.uniform(-a, a);
            }
        });
    }

    template <typename Fn>
    void for_each_mlp(Fn&& fn) const {
        fn(node_encoder);
        fn(edge_encoder);
        for (const auto& b : blocks) {
            fn(b[0]);
            fn(b[1]);
        }
        fn(decoder);
    }

    /// Number of stored scalars, enumerated from the layout (oracle for the
    /// closed-form count).
    std::int64_t enumerate_params() const {
        std::int64_t c = 0;
        for_each_mlp([&](const MlpLayout& m) {
            for (const auto& w : m.weights) c += w.numel();
            for (const auto& b : m.biases) c += b.numel();
        });
        return c;
    }
};

// ---------------------------------------------------------------------------
// Tape-based forward pass (reference path). Parameters are loaded as tape
// inputs so that backward() yields their gradients in declaration order.
// ---------------------------------------------------------------------------

struct TapedMlp {
    std::vector<int> w, b;
};

struct TapedModel {
    TapedMlp node_encoder, edge_encoder, decoder;
    std::vector<std::array<TapedMlp, 2>> blocks;
    std::vector<int> all_ids; // declaration order, weight then bias per layer
};

inline TapedModel load_params(Tape& tape, const ModelParams& p) {
    TapedModel t;
    auto load_mlp = [&](const MlpLayout& m) {
        TapedMlp ids;
        for (std::size_t l = 0; l < m.weights.size(); ++l) {
            ids.w.push_back(tape.input(p.tensor(m.weights[l])));
            ids.b.push_back(tape.input(p.tensor(m.biases[l])));
            t.all_ids.push_back(ids.w.back());
            t.all_ids.push_back(ids.b.back());
        }
        return ids;
    };
    t.node_encoder = load_mlp(p.node_encoder);
    t.edge_encoder = load_mlp(p.edge_encoder);
    for (const auto& b : p.blocks) t.blocks.push_back({load_mlp(b[0]), load_mlp(b[1])});
    t.decoder = load_mlp(p.decoder);
    return t;
}

inline int mlp_forward(Tape& tape, const TapedMlp& mlp, int x) {
    int h = x;
    for (std::size_t l = 0; l < mlp.w.size(); ++l) {
        h = tape.add_bias(tape.matmul(h, mlp.w[l]), mlp.b[l]);
        if (l + 1 < mlp.w.size()) h = tape.silu(h);
    }
    return h;
}

/// Node input augmentation u -> [u | xi | b_G]: the global feature broadcast
/// as constant columns plus the boundary flag column.
inline Tensor augment_node_input(const GraphSample& graph, const Tensor& u,
                                 const std::vector<double>& xi) {
    if (u.rows() != graph.n_nodes) throw ShapeMismatch("node input rows != node count");
    const std::int64_t q = u.cols(), s = static_cast<std::int64_t>(xi.size());
    Tensor aug({u.rows(), q + s + 1});
    for (std::int64_t i = 0; i < u.rows(); ++i) {
        double* r = aug.row(i);
        for (std::int64_t c = 0; c < q; ++c) r[c] = u.at(i, c);
        for (std::int64_t c = 0; c < s; ++c) r[q + c] = xi[static_cast<std::size_t>(c)];
        r[q + s] = graph.boundary[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
    }
    return aug;
}

inline int encode_nodes(Tape& tape, const TapedModel& model, const GraphSample& graph,
                        const Tensor& u, const std::vector<double>& xi) {
    return mlp_forward(tape, model.node_encoder, tape.input(augment_node_input(graph, u, xi)));
}

inline int encode_edges(Tape& tape, const TapedModel& model, const Tensor& edge_features) {
    return mlp_forward(tape, model.edge_encoder, tape.input(edge_features));
}

inline std::vector<std::int64_t> edge_sources(const GraphSample& g) {
    std::vector<std::int64_t> v(g.edges.size());
    for (std::size_t i = 0; i < g.edges.size(); ++i) v[i] = g.edges[i][0];
    return v;
}

inline std::vector<std::int64_t> edge_destinations(const GraphSample& g) {
    std::vector<std::int64_t> v(g.edges.size());
    for (std::size_t i = 0; i < g.edges.size(); ++i) v[i] = g.edges[i][1];
    return v;
}

/// One message-passing block: per-edge [e | v_src | v_dst] -> edge MLP ->
/// sum into destination nodes -> [v | aggregated] -> node MLP. Edge features
/// pass through unchanged; there is no residual connection.
inline int message_pass(Tape& tape, const GraphSample& graph, int v, int e,
                        const std::array<TapedMlp, 2>& block) {
    const int v_in = tape.gather_rows(v, edge_sources(graph));
    const int v_out = tape.gather_rows(v, edge_destinations(graph));
    const int msg_in = tape.concat_cols(tape.concat_cols(e, v_in), v_out);
    const int msg = mlp_forward(tape, block[0], msg_in);
    const int aggregated = tape.segment_sum(msg, edge_destinations(graph), graph.n_nodes);
    return mlp_forward(tape, block[1], tape.concat_cols(v, aggregated));
}

/// Full Encoder-Processor-Decoder pass on pre-built node/edge input tensors.
/// The same encoded edge features feed every block.
inline int epd_forward_taped(Tape& tape, const TapedModel& model, const GraphSample& graph,
                             const Tensor& node_aug, const Tensor& edge_features) {
    int v = mlp_forward(tape, model.node_encoder, tape.input(node_aug));
    const int e = mlp_forward(tape, model.edge_encoder, tape.input(edge_features));
    for (const auto& block : model.blocks) v = message_pass(tape, graph, v, e, block);
    return mlp_forward(tape, model.decoder, v);
}

/// Convenience inference on raw (unnormalized) inputs; returns the n x q
/// network output.
inline Tensor epd_forward(const GraphSample& graph, const Tensor& u, const std::vector<double>& xi,
                          const ModelParams& params) {
    Tape tape;
    const TapedModel model = load_params(tape, params);
    const int out =
        epd_forward_taped(tape, model, graph, augment_node_input(graph, u, xi), graph.edge_features);
    return tape.value(out);
}

} // namespace graphrom
