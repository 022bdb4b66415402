#pragma once

#include <cstdint>
#include <cstring>
#include <vector>

#include "graphrom/model.hpp"
#include "graphrom/parallel.hpp"
#include "graphrom/tensor.hpp"

namespace graphrom {

// ---------------------------------------------------------------------------
// Fused Encoder-Processor-Decoder engine.
//
// Computes exactly the same map as the tape path in model.hpp, but restructured
// for throughput: the per-edge concat [e | v_src | v_dst] never materializes.
// Its first linear layer distributes over the three column blocks,
//
//   Z0 = e W_e + v_src W_i + v_dst W_o + b
//      = (e W_e + b)  +  gather_src(v W_i)  +  gather_dst(v W_o),
//
// which turns two E-row matmuls into two n-row matmuls plus gathered adds, and
// lets the edge term (constant across a training window) be computed once per
// optimizer step. Gradients flow through the same identities; the cross-
// transition pieces (edge-encoder weights) are reduced in transition order so
// results are bitwise independent of the thread count. Agreement with the tape
// path is pinned by tests at 1e-12 relative.
// ---------------------------------------------------------------------------

namespace fast_detail {

/// Raw views of one MLP's weights inside the flat parameter vector.
struct MlpView {
    std::vector<const double*> W, b;
    std::vector<double*> Wm, bm; // mutable, only used for gradient buffers
    std::vector<int> widths;
};

inline MlpView view_mlp(const ModelParams& p, const MlpLayout& layout) {
    MlpView v;
    v.widths = layout.widths;
    for (std::size_t l = 0; l < layout.weights.size(); ++l) {
        v.W.push_back(p.ptr(layout.weights[l]));
        v.b.push_back(p.ptr(layout.biases[l]));
    }
    return v;
}

inline MlpView view_mlp_grad(double* flat, const MlpLayout& layout) {
    MlpView v;
    v.widths = layout.widths;
    for (std::size_t l = 0; l < layout.weights.size(); ++l) {
        v.Wm.push_back(flat + layout.weights[l].offset);
        v.bm.push_back(flat + layout.biases[l].offset);
    }
    return v;
}

/// Per-layer forward/backward storage for a dense chain on a fixed row count.
/// Sigmoids are kept alongside the activations so the backward pass never
/// re-evaluates an exponential.
struct ChainStore {
    std::vector<std::vector<double>> Z; // pre-activations (bias included)
    std::vector<std::vector<double>> A; // post-activations, absent for last layer
    std::vector<std::vector<double>> S; // sigmoid(Z), alongside A

    void resize(const std::vector<int>& widths, std::int64_t rows) {
        const std::size_t layers = widths.size() - 1;
        Z.resize(layers);
        A.resize(layers > 0 ? layers - 1 : 0);
        S.resize(A.size());
        for (std::size_t l = 0; l < layers; ++l) {
            Z[l].assign(static_cast<std::size_t>(rows) * widths[l + 1], 0.0);
            if (l + 1 < layers) {
                A[l].assign(static_cast<std::size_t>(rows) * widths[l + 1], 0.0);
                S[l].assign(static_cast<std::size_t>(rows) * widths[l + 1], 0.0);
            }
        }
    }
};

inline void fill_bias_rows(double* dst, const double* bias, std::int64_t rows, std::int64_t cols) {
    for (std::int64_t r = 0; r < rows; ++r)
        std::memcpy(dst + r * cols, bias, static_cast<std::size_t>(cols) * sizeof(double));
}

/// Forward through a dense chain from x0 (rows x widths[0]); returns pointer
/// to the final pre-activation buffer (rows x widths.back()).
inline const double* chain_forward(const MlpView& mlp, ChainStore& st, const double* x0,
                                   std::int64_t rows) {
    const std::size_t layers = mlp.widths.size() - 1;
    const double* x = x0;
    for (std::size_t l = 0; l < layers; ++l) {
        const std::int64_t in = mlp.widths[l], out = mlp.widths[l + 1];
        fill_bias_rows(st.Z[l].data(), mlp.b[l], rows, out);
        kernels::mm_nn(x, mlp.W[l], st.Z[l].data(), rows, in, out);
        if (l + 1 < layers) {
            fastmath::silu_array(st.Z[l].data(), st.A[l].data(), st.S[l].data(), rows * out);
            x = st.A[l].data();
        }
    }
    return st.Z[layers - 1].data();
}

/// Backward through a dense chain. d_out is the gradient at the final
/// pre-activation; dx0 (optional) is OVERWRITTEN with the gradient at the
/// chain input; weight/bias gradients accumulate into grads. scratch must hold
/// 2 * rows * max_width doubles and is clobbered.
inline void chain_backward(const MlpView& mlp, const MlpView& grads, const ChainStore& st,
                           const double* x0, const double* d_out, double* dx0, std::int64_t rows,
                           std::vector<double>& scratch) {
    const std::size_t layers = mlp.widths.size() - 1;
    std::int64_t max_w = 0;
    for (int w : mlp.widths) max_w = std::max<std::int64_t>(max_w, w);
    scratch.resize(2 * static_cast<std::size_t>(rows) * max_w);
    double* dz = scratch.data();
    double* dx = scratch.data() + static_cast<std::size_t>(rows) * max_w;

    const std::int64_t out_last = mlp.widths[layers];
    std::memcpy(dz, d_out, static_cast<std::size_t>(rows * out_last) * sizeof(double));

    for (std::size_t l = layers; l-- > 0;) {
        const std::int64_t in = mlp.widths[l], out = mlp.widths[l + 1];
        const double* x = l == 0 ? x0 : st.A[l - 1].data();
        kernels::mm_at(x, dz, grads.Wm[l], rows, in, out);
        kernels::col_sums(dz, grads.bm[l], rows, out);
        if (l == 0) {
            if (dx0) kernels::mm_nt_assign(dz, mlp.W[l], dx0, rows, out, in);
            return;
        }
        kernels::mm_nt_assign(dz, mlp.W[l], dx, rows, out, in);
        fastmath::silu_backward_array(st.A[l - 1].data(), st.S[l - 1].data(), dx, dz, rows * in);
    }
}

} // namespace fast_detail

/// Per-transition buffers; one instance per worker thread, reused across
/// transitions and windows.
struct FastWorkspace {
    std::vector<double> x_aug; // node input [u | xi | b], filled by the caller
    fast_detail::ChainStore node_enc;
    struct BlockStore {
        std::vector<double> P, Q;       // v W_i, v W_o (n x l)
        std::vector<double> A0e, SIG0e; // first edge layer activations (E x l)
        fast_detail::ChainStore edge_rest;
        std::vector<double> ebar; // aggregated messages (n x l)
        std::vector<double> C;    // [v | ebar] (n x 2l)
        fast_detail::ChainStore node_mlp;
    };
    std::vector<BlockStore> blocks;
    fast_detail::ChainStore decoder;
    std::vector<double> scratch, dv, dv2, dC, dE1, dE2, SD, ztile, mtile;
};

/// Shared per-optimizer-step state: encoded edges, per-block edge terms of the
/// first message layer, and the per-(block, transition) first-layer gradients
/// that are reduced in transition order after the parallel section.
struct WindowState {
    std::vector<double> edge_input; // normalized e_G (E x (d+1))
    fast_detail::ChainStore edge_enc;
    std::vector<std::vector<double>> EW; // per block: e_enc W_e + b (E x l)
    std::vector<double> dz0;             // (block, transition) slots of E x l each
    std::vector<double> sum_dz0, d_eenc;
    int n_transitions = 0;

    double* dz0_slot(int block, int t, std::int64_t slot_size) {
        return dz0.data() + (static_cast<std::size_t>(block) * n_transitions + t) * slot_size;
    }
};

class EpdFast {
public:
    static constexpr std::int64_t kTile = 512;

    EpdFast(const ArchConfig& arch, const GraphSample& graph) : arch_(arch) {
        arch_.validate();
        n_ = graph.n_nodes;
        E_ = graph.n_edges();
        src_.resize(static_cast<std::size_t>(E_));
        dst_.resize(static_cast<std::size_t>(E_));
        for (std::int64_t e = 0; e < E_; ++e) {
            src_[static_cast<std::size_t>(e)] = static_cast<std::int32_t>(graph.edges[static_cast<std::size_t>(e)][0]);
            dst_[static_cast<std::size_t>(e)] = static_cast<std::int32_t>(graph.edges[static_cast<std::size_t>(e)][1]);
        }
        build_csr(src_, src_offsets_, src_edges_);
        build_csr(dst_, dst_offsets_, dst_edges_);
        dst_sorted_ = std::is_sorted(dst_.begin(), dst_.end());
    }

    /// Messages can stream through tiles when the edge list is already
    /// destination-sorted and the hidden width fits the stack accumulators.
    bool fused_message_path() const {
        return arch_.mlp_depth == 2 && dst_sorted_ && arch_.hidden <= 64;
    }

    std::int64_t n_nodes() const { return n_; }
    std::int64_t n_edges() const { return E_; }
    const ArchConfig& arch() const { return arch_; }

    void bind(const ModelParams& params) {
        params_ = &params;
        node_enc_ = fast_detail::view_mlp(params, params.node_encoder);
        edge_enc_ = fast_detail::view_mlp(params, params.edge_encoder);
        blocks_.clear();
        for (const auto& b : params.blocks)
            blocks_.push_back({fast_detail::view_mlp(params, b[0]), fast_detail::view_mlp(params, b[1])});
        decoder_ = fast_detail::view_mlp(params, params.decoder);
    }

    void resize_workspace(FastWorkspace& ws) const {
        const int l = arch_.hidden;
        ws.x_aug.assign(static_cast<std::size_t>(n_) * arch_.node_encoder_in(), 0.0);
        ws.node_enc.resize(node_enc_.widths, n_);
        ws.blocks.resize(static_cast<std::size_t>(arch_.mp_steps));
        for (auto& b : ws.blocks) {
            b.P.assign(static_cast<std::size_t>(n_) * l, 0.0);
            b.Q.assign(static_cast<std::size_t>(n_) * l, 0.0);
            b.A0e.assign(static_cast<std::size_t>(E_) * l, 0.0);
            b.SIG0e.assign(static_cast<std::size_t>(E_) * l, 0.0);
            b.edge_rest.resize(rest_widths(), fused_message_path() ? 0 : E_);
            b.ebar.assign(static_cast<std::size_t>(n_) * l, 0.0);
            b.C.assign(static_cast<std::size_t>(n_) * 2 * l, 0.0);
            b.node_mlp.resize(node_mlp_widths(), n_);
        }
        ws.decoder.resize(decoder_.widths, n_);
        ws.dv.assign(static_cast<std::size_t>(n_) * std::max(l, arch_.node_encoder_in()), 0.0);
        ws.dv2.assign(static_cast<std::size_t>(n_) * l, 0.0);
        ws.dC.assign(static_cast<std::size_t>(n_) * 2 * l, 0.0);
        ws.dE1.assign(static_cast<std::size_t>(E_) * l, 0.0);
        ws.dE2.assign(static_cast<std::size_t>(E_) * l, 0.0);
        ws.SD.assign(static_cast<std::size_t>(n_) * 2 * l, 0.0);
        ws.ztile.assign(static_cast<std::size_t>(kTile) * l, 0.0);
        ws.mtile.assign(static_cast<std::size_t>(kTile) * l, 0.0);
    }

    /// Encodes edges and folds each block's edge term of the first message
    /// layer. Call once per optimizer step (training) or once per rollout
    /// (inference); `transitions` sizes the gradient store, 0 for inference.
    void prepare_window(WindowState& st, const Tensor& edge_input, int transitions) const {
        const int l = arch_.hidden;
        if (edge_input.rows() != E_ || edge_input.cols() != arch_.edge_encoder_in())
            throw ShapeMismatch("edge input must be E x (d+1)");
        st.edge_input.assign(edge_input.data(), edge_input.data() + edge_input.numel());
        st.edge_enc.resize(edge_enc_.widths, E_);
        fast_detail::chain_forward(edge_enc_, st.edge_enc, st.edge_input.data(), E_);

        st.EW.resize(static_cast<std::size_t>(arch_.mp_steps));
        for (int k = 0; k < arch_.mp_steps; ++k) {
            auto& ew = st.EW[static_cast<std::size_t>(k)];
            if (ew.size() != static_cast<std::size_t>(E_) * l) ew.resize(static_cast<std::size_t>(E_) * l);
            fast_detail::fill_bias_rows(ew.data(), blocks_[static_cast<std::size_t>(k)].edge.b[0], E_, l);
            // Edge block of the first layer: rows [0, l) of W0.
            kernels::mm_nn(e_enc(st), blocks_[static_cast<std::size_t>(k)].edge.W[0], ew.data(), E_, l, l);
        }

        st.n_transitions = transitions;
        if (transitions > 0) {
            // Slots are fully overwritten by backward(), so grow-only.
            const std::size_t need =
                static_cast<std::size_t>(arch_.mp_steps) * transitions * static_cast<std::size_t>(E_) * l;
            if (st.dz0.size() < need) st.dz0.resize(need);
        }
    }

    /// Forward pass for one transition. ws.x_aug must already contain the
    /// normalized [u | xi | b] rows. Output is n x node_in.
    void forward(const WindowState& st, FastWorkspace& ws, double* out) const {
        const int l = arch_.hidden;
        const int depth = arch_.mlp_depth;
        const double* v = fast_detail::chain_forward(node_enc_, ws.node_enc, ws.x_aug.data(), n_);

        for (int k = 0; k < arch_.mp_steps; ++k) {
            auto& bs = ws.blocks[static_cast<std::size_t>(k)];
            const auto& blk = blocks_[static_cast<std::size_t>(k)];

            // First edge layer: EW + gather_src(v W_i) + gather_dst(v W_o),
            // built tile-wise and pushed straight through the activation.
            kernels::mm_nn_assign(v, blk.edge.W[0] + static_cast<std::size_t>(l) * l, bs.P.data(), n_, l, l);
            kernels::mm_nn_assign(v, blk.edge.W[0] + 2 * static_cast<std::size_t>(l) * l, bs.Q.data(), n_, l, l);
            const double* ew = st.EW[static_cast<std::size_t>(k)].data();
            for (std::int64_t e0 = 0; e0 < E_; e0 += kTile) {
                const std::int64_t len = std::min<std::int64_t>(kTile, E_ - e0);
                for (std::int64_t i = 0; i < len; ++i) {
                    const std::int64_t e = e0 + i;
                    const double* pe = bs.P.data() + static_cast<std::size_t>(src_[static_cast<std::size_t>(e)]) * l;
                    const double* qe = bs.Q.data() + static_cast<std::size_t>(dst_[static_cast<std::size_t>(e)]) * l;
                    const double* we = ew + static_cast<std::size_t>(e) * l;
                    double* ze = depth > 1 ? ws.ztile.data() + i * l : bs.A0e.data() + e * l;
                    for (int c = 0; c < l; ++c) ze[c] = we[c] + pe[c] + qe[c];
                }
                if (depth > 1)
                    fastmath::silu_array(ws.ztile.data(), bs.A0e.data() + e0 * l,
                                         bs.SIG0e.data() + e0 * l, len * l);
            }

            // Messages and destination aggregation. With two-layer MLPs on a
            // destination-sorted edge list the message matrix streams through
            // a tile and never lands in memory; backward does not need it.
            if (fused_message_path()) {
                fused_messages(bs.A0e.data(), blk.edge.W[1], blk.edge.b[1], bs.ebar.data(), ws, l);
            } else {
                const double* msg = bs.A0e.data();
                if (depth > 2)
                    msg = fast_detail::chain_forward(edge_rest_view(blk.edge), bs.edge_rest,
                                                     bs.A0e.data(), E_);
                else if (depth == 2) {
                    // Unsorted edges: materialize messages into the rest chain.
                    auto& m = bs.edge_rest.Z[0];
                    fast_detail::fill_bias_rows(m.data(), blk.edge.b[1], E_, l);
                    kernels::mm_nn(bs.A0e.data(), blk.edge.W[1], m.data(), E_, l, l);
                    msg = m.data();
                }
                segsum(msg, dst_offsets_, dst_edges_, bs.ebar.data(), l, l);
            }

            for (std::int64_t i = 0; i < n_; ++i) {
                std::memcpy(bs.C.data() + static_cast<std::size_t>(i) * 2 * l,
                            v + static_cast<std::size_t>(i) * l, static_cast<std::size_t>(l) * sizeof(double));
                std::memcpy(bs.C.data() + static_cast<std::size_t>(i) * 2 * l + l,
                            bs.ebar.data() + static_cast<std::size_t>(i) * l,
                            static_cast<std::size_t>(l) * sizeof(double));
            }
            v = fast_detail::chain_forward(blk.node, bs.node_mlp, bs.C.data(), n_);
        }

        const double* y = fast_detail::chain_forward(decoder_, ws.decoder, v, n_);
        std::memcpy(out, y, static_cast<std::size_t>(n_ * arch_.node_in) * sizeof(double));
    }

    /// Backward pass for one transition. Gradients for node-side parameters
    /// accumulate into grad_flat (one buffer per transition); the first edge
    /// layer's upstream gradients are parked in st.dz0[...][t_slot] for the
    /// ordered reduction in reduce_window.
    void backward(WindowState& st, FastWorkspace& ws, const double* d_out, double* grad_flat,
                  int t_slot) const {
        const int l = arch_.hidden;
        auto dec_grads = fast_detail::view_mlp_grad(grad_flat, params_->decoder);

        double* dv = ws.dv.data();
        const double* dec_in = arch_.mp_steps > 0
                                   ? ws.blocks.back().node_mlp.Z.back().data()
                                   : ws.node_enc.Z.back().data();
        fast_detail::chain_backward(decoder_, dec_grads, ws.decoder, dec_in, d_out, dv, n_, ws.scratch);

        for (int k = arch_.mp_steps; k-- > 0;) {
            auto& bs = ws.blocks[static_cast<std::size_t>(k)];
            const auto& blk = blocks_[static_cast<std::size_t>(k)];
            const auto& layout = params_->blocks[static_cast<std::size_t>(k)];
            auto edge_grads = fast_detail::view_mlp_grad(grad_flat, layout[0]);
            auto node_grads = fast_detail::view_mlp_grad(grad_flat, layout[1]);
            const double* v_in = k > 0 ? ws.blocks[static_cast<std::size_t>(k - 1)].node_mlp.Z.back().data()
                                       : ws.node_enc.Z.back().data();

            // Node MLP backward on C = [v | ebar].
            fast_detail::chain_backward(blk.node, node_grads, bs.node_mlp, bs.C.data(), dv,
                                        ws.dC.data(), n_, ws.scratch);

            // Split dC: left half continues to v, right half flows to edges.
            double* dv_next = ws.dv2.data();
            for (std::int64_t i = 0; i < n_; ++i)
                std::memcpy(dv_next + static_cast<std::size_t>(i) * l,
                            ws.dC.data() + static_cast<std::size_t>(i) * 2 * l,
                            static_cast<std::size_t>(l) * sizeof(double));

            // d(ebar) -> per-edge message gradient (pure gather by destination).
            for (std::int64_t e = 0; e < E_; ++e)
                std::memcpy(ws.dE1.data() + static_cast<std::size_t>(e) * l,
                            ws.dC.data() + (static_cast<std::size_t>(dst_[static_cast<std::size_t>(e)]) * 2 + 1) * l,
                            static_cast<std::size_t>(l) * sizeof(double));

            // Edge MLP layers above the first, then SiLU back to dZ0.
            double* dz0 = st.dz0_slot(k, t_slot, E_ * l);
            const int depth = arch_.mlp_depth;
            if (depth == 2) {
                // Single upper layer, inlined: dW2 += A0e^T dM, db2 += colsums,
                // dA0e = dM W2^T, then through the activation.
                kernels::mm_at(bs.A0e.data(), ws.dE1.data(), edge_grads.Wm[1], E_, l, l);
                kernels::col_sums(ws.dE1.data(), edge_grads.bm[1], E_, l);
                kernels::mm_nt_assign(ws.dE1.data(), blk.edge.W[1], ws.dE2.data(), E_, l, l);
                fastmath::silu_backward_array(bs.A0e.data(), bs.SIG0e.data(), ws.dE2.data(), dz0,
                                              E_ * l);
            } else if (depth > 2) {
                fast_detail::chain_backward(edge_rest_view(blk.edge), edge_rest_grad_view(edge_grads),
                                            bs.edge_rest, bs.A0e.data(), ws.dE1.data(), ws.dE2.data(),
                                            E_, ws.scratch);
                fastmath::silu_backward_array(bs.A0e.data(), bs.SIG0e.data(), ws.dE2.data(), dz0,
                                              E_ * l);
            } else {
                std::memcpy(dz0, ws.dE1.data(), static_cast<std::size_t>(E_ * l) * sizeof(double));
            }

            // Segment sums of dZ0 by source and destination, side by side, feed
            // the v-gradient (one matmul against the stacked [W_i; W_o]^T) and
            // the W_i / W_o gradients.
            segsum(dz0, src_offsets_, src_edges_, ws.SD.data(), l, 2 * l);
            segsum(dz0, dst_offsets_, dst_edges_, ws.SD.data() + l, l, 2 * l);
            stacked_w_transpose(blk.edge.W[0] + static_cast<std::size_t>(l) * l, l, ws.mtile);
            kernels::mm_nn(ws.SD.data(), ws.mtile.data(), dv_next, n_, 2 * l, l);
            kernels::mm_at_strided(v_in, ws.SD.data(), edge_grads.Wm[0] + static_cast<std::size_t>(l) * l,
                                   n_, l, l, 2 * l);
            kernels::mm_at_strided(v_in, ws.SD.data() + l,
                                   edge_grads.Wm[0] + 2 * static_cast<std::size_t>(l) * l, n_, l, l,
                                   2 * l);

            std::swap(ws.dv, ws.dv2);
            dv = ws.dv.data();
        }

        auto enc_grads = fast_detail::view_mlp_grad(grad_flat, params_->node_encoder);
        fast_detail::chain_backward(node_enc_, enc_grads, ws.node_enc, ws.x_aug.data(), dv, nullptr,
                                    n_, ws.scratch);
    }

    /// Ordered cross-transition reductions: first-layer edge weights/biases and
    /// the edge-encoder chain. Adds into grad_flat; call once per window after
    /// all transition backwards completed. Blocks are independent jobs, and the
    /// edge-encoder contributions merge in block order, so results do not
    /// depend on the thread count.
    void reduce_window(WindowState& st, double* grad_flat, std::vector<double>& scratch,
                       int threads = 1) const {
        if (st.n_transitions == 0) return;
        const int l = arch_.hidden;
        const std::int64_t slot = E_ * l;
        if (st.sum_dz0.size() < static_cast<std::size_t>(slot) * arch_.mp_steps)
            st.sum_dz0.resize(static_cast<std::size_t>(slot) * arch_.mp_steps);
        if (st.d_eenc.size() < static_cast<std::size_t>(slot) * (arch_.mp_steps + 1))
            st.d_eenc.resize(static_cast<std::size_t>(slot) * (arch_.mp_steps + 1));

        parallel_for(static_cast<std::size_t>(arch_.mp_steps), threads, [&](std::size_t k, int) {
            double* sum = st.sum_dz0.data() + k * slot;
            std::memset(sum, 0, static_cast<std::size_t>(slot) * sizeof(double));
            for (int t = 0; t < st.n_transitions; ++t)
                kernels::axpy(1.0, st.dz0_slot(static_cast<int>(k), t, slot), sum, slot);
            const auto& layout = params_->blocks[k];
            auto edge_grads = fast_detail::view_mlp_grad(grad_flat, layout[0]);
            kernels::mm_at(e_enc_const(st), sum, edge_grads.Wm[0], E_, l, l);
            kernels::col_sums(sum, edge_grads.bm[0], E_, l);
            double* de = st.d_eenc.data() + (k + 1) * slot;
            kernels::mm_nt_assign(sum, blocks_[k].edge.W[0], de, E_, l, l);
        });

        double* de_total = st.d_eenc.data();
        std::memset(de_total, 0, static_cast<std::size_t>(slot) * sizeof(double));
        for (int k = 0; k < arch_.mp_steps; ++k)
            kernels::axpy(1.0, st.d_eenc.data() + static_cast<std::size_t>(k + 1) * slot, de_total,
                          slot);

        auto eenc_grads = fast_detail::view_mlp_grad(grad_flat, params_->edge_encoder);
        fast_detail::chain_backward(edge_enc_, eenc_grads, st.edge_enc, st.edge_input.data(),
                                    de_total, nullptr, E_, scratch);
    }

private:
    struct BlockViews {
        fast_detail::MlpView edge, node;
    };

    std::vector<int> rest_widths() const {
        // Edge MLP widths beyond the handled first layer.
        std::vector<int> w(static_cast<std::size_t>(arch_.mlp_depth));
        for (auto& x : w) x = arch_.hidden;
        return w;
    }

    std::vector<int> node_mlp_widths() const {
        return model_detail::mlp_widths(2 * arch_.hidden, arch_.hidden, arch_.mlp_depth, arch_.hidden);
    }

    static fast_detail::MlpView edge_rest_view(const fast_detail::MlpView& full) {
        fast_detail::MlpView v;
        v.widths.assign(full.widths.begin() + 1, full.widths.end());
        v.W.assign(full.W.begin() + 1, full.W.end());
        v.b.assign(full.b.begin() + 1, full.b.end());
        return v;
    }

    static fast_detail::MlpView edge_rest_grad_view(const fast_detail::MlpView& full) {
        fast_detail::MlpView v;
        v.widths.assign(full.widths.begin() + 1, full.widths.end());
        v.Wm.assign(full.Wm.begin() + 1, full.Wm.end());
        v.bm.assign(full.bm.begin() + 1, full.bm.end());
        return v;
    }

    const double* e_enc(const WindowState& st) const { return st.edge_enc.Z.back().data(); }
    const double* e_enc_const(const WindowState& st) const { return st.edge_enc.Z.back().data(); }

    void segsum(const double* rows, const std::vector<std::int64_t>& offsets,
                const std::vector<std::int32_t>& edge_ids, double* out, int l,
                std::int64_t ldout) const {
        if (l <= 64) {
            for (std::int64_t node = 0; node < n_; ++node) {
                double acc[64];
                std::memset(acc, 0, static_cast<std::size_t>(l) * sizeof(double));
                for (std::int64_t p = offsets[static_cast<std::size_t>(node)];
                     p < offsets[static_cast<std::size_t>(node) + 1]; ++p) {
                    const double* r =
                        rows + static_cast<std::size_t>(edge_ids[static_cast<std::size_t>(p)]) * l;
                    for (int c = 0; c < l; ++c) acc[c] += r[c];
                }
                std::memcpy(out + static_cast<std::size_t>(node) * ldout, acc,
                            static_cast<std::size_t>(l) * sizeof(double));
            }
            return;
        }
        for (std::int64_t node = 0; node < n_; ++node) {
            double* acc = out + static_cast<std::size_t>(node) * ldout;
            std::memset(acc, 0, static_cast<std::size_t>(l) * sizeof(double));
            for (std::int64_t p = offsets[static_cast<std::size_t>(node)];
                 p < offsets[static_cast<std::size_t>(node) + 1]; ++p) {
                const double* r = rows + static_cast<std::size_t>(edge_ids[static_cast<std::size_t>(p)]) * l;
                for (int c = 0; c < l; ++c) acc[c] += r[c];
            }
        }
    }

    /// Streams the second edge layer through a tile and aggregates into the
    /// destination rows; valid when the edge list is destination-sorted, so
    /// each node's messages are contiguous. The message matrix is never
    /// materialized (backward does not read it).
    void fused_messages(const double* a0e, const double* W2, const double* b2, double* ebar,
                        FastWorkspace& ws, int l) const {
        std::int64_t v0 = 0;
        while (v0 < n_) {
            // Extend the node group while its edge span fits one tile.
            std::int64_t v1 = v0;
            const std::int64_t p0 = dst_offsets_[static_cast<std::size_t>(v0)];
            while (v1 < n_ && dst_offsets_[static_cast<std::size_t>(v1) + 1] - p0 <= kTile) ++v1;

            if (v1 == v0) {
                // Degree larger than a tile: accumulate the node in chunks.
                const std::int64_t pe = dst_offsets_[static_cast<std::size_t>(v0) + 1];
                double acc[64];
                std::memset(acc, 0, static_cast<std::size_t>(l) * sizeof(double));
                for (std::int64_t p = p0; p < pe; p += kTile) {
                    const std::int64_t rows = std::min<std::int64_t>(kTile, pe - p);
                    fast_detail::fill_bias_rows(ws.mtile.data(), b2, rows, l);
                    kernels::mm_nn(a0e + p * l, W2, ws.mtile.data(), rows, l, l);
                    for (std::int64_t r = 0; r < rows; ++r)
                        for (int c = 0; c < l; ++c) acc[c] += ws.mtile[static_cast<std::size_t>(r) * l + c];
                }
                std::memcpy(ebar + static_cast<std::size_t>(v0) * l, acc,
                            static_cast<std::size_t>(l) * sizeof(double));
                v0 = v0 + 1;
                continue;
            }

            const std::int64_t p1 = dst_offsets_[static_cast<std::size_t>(v1)];
            const std::int64_t rows = p1 - p0;
            fast_detail::fill_bias_rows(ws.mtile.data(), b2, rows, l);
            kernels::mm_nn(a0e + p0 * l, W2, ws.mtile.data(), rows, l, l);
            for (std::int64_t node = v0; node < v1; ++node) {
                double acc[64];
                std::memset(acc, 0, static_cast<std::size_t>(l) * sizeof(double));
                for (std::int64_t p = dst_offsets_[static_cast<std::size_t>(node)];
                     p < dst_offsets_[static_cast<std::size_t>(node) + 1]; ++p) {
                    const double* r = ws.mtile.data() + (p - p0) * l;
                    for (int c = 0; c < l; ++c) acc[c] += r[c];
                }
                std::memcpy(ebar + static_cast<std::size_t>(node) * l, acc,
                            static_cast<std::size_t>(l) * sizeof(double));
            }
            v0 = v1;
        }
    }

    /// Builds the (2l x l) matrix that maps stacked segment sums [S | D] back
    /// to node gradients: rows c of the result hold column c of W_i then W_o.
    void stacked_w_transpose(const double* w_io, int l, std::vector<double>& scratch) const {
        scratch.resize(static_cast<std::size_t>(2 * l) * l);
        for (int c = 0; c < l; ++c)
            for (int j = 0; j < l; ++j) {
                scratch[static_cast<std::size_t>(c) * l + j] = w_io[static_cast<std::size_t>(j) * l + c];
                scratch[static_cast<std::size_t>(l + c) * l + j] =
                    w_io[static_cast<std::size_t>(l + j) * l + c];
            }
    }

    void build_csr(const std::vector<std::int32_t>& key, std::vector<std::int64_t>& offsets,
                   std::vector<std::int32_t>& edge_ids) const {
        offsets.assign(static_cast<std::size_t>(n_) + 1, 0);
        for (auto k : key) ++offsets[static_cast<std::size_t>(k) + 1];
        for (std::int64_t i = 0; i < n_; ++i)
            offsets[static_cast<std::size_t>(i) + 1] += offsets[static_cast<std::size_t>(i)];
        edge_ids.assign(key.size(), 0);
        std::vector<std::int64_t> cursor(offsets.begin(), offsets.end() - 1);
        for (std::size_t e = 0; e < key.size(); ++e)
            edge_ids[static_cast<std::size_t>(cursor[static_cast<std::size_t>(key[e])]++)] =
                static_cast<std::int32_t>(e);
    }

    ArchConfig arch_;
    std::int64_t n_ = 0, E_ = 0;
    bool dst_sorted_ = false;
    std::vector<std::int32_t> src_, dst_;
    std::vector<std::int64_t> src_offsets_, dst_offsets_;
    std::vector<std::int32_t> src_edges_, dst_edges_;

    const ModelParams* params_ = nullptr;
    fast_detail::MlpView node_enc_, edge_enc_, decoder_;
    std::vector<BlockViews> blocks_;
};

} // namespace graphrom
