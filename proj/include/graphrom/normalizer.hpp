#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "graphrom/errors.hpp"
#include "graphrom/tensor.hpp"

namespace graphrom {

struct ChannelStats {
    double mean = 0.0;
    double std = 1.0;

    double normalize(double x) const { return (x - mean) / std; }
    double denormalize(double z) const { return mean + std * z; }
};

/// Z-score statistics for node values, the time feature, edge features and
/// derivative targets, computed on the training set. Standard deviations are
/// floored at 1e-12 so constant channels stay well-defined.
struct Normalizer {
    static constexpr double kStdFloor = 1e-12;

    std::vector<ChannelStats> u;    // node channels (q)
    ChannelStats xi;                // time
    std::vector<ChannelStats> edge; // edge feature channels (d+1)
    std::vector<ChannelStats> dudt; // derivative target channels (q)

    static Normalizer identity(int q, int edge_channels) {
        Normalizer n;
        n.u.assign(static_cast<std::size_t>(q), {});
        n.edge.assign(static_cast<std::size_t>(edge_channels), {});
        n.dudt.assign(static_cast<std::size_t>(q), {});
        return n;
    }

    Tensor normalize_edges(const Tensor& features) const {
        Tensor out = features;
        const std::int64_t c = out.cols();
        if (static_cast<std::size_t>(c) != edge.size())
            throw ShapeMismatch("edge feature channel count mismatch");
        for (std::int64_t r = 0; r < out.rows(); ++r) {
            double* row = out.row(r);
            for (std::int64_t j = 0; j < c; ++j)
                row[j] = edge[static_cast<std::size_t>(j)].normalize(row[j]);
        }
        return out;
    }
};

namespace norm_detail {

class RunningStats {
public:
    void add(double x) {
        ++n_;
        sum_ += x;
        sum_sq_ += x * x;
    }
    ChannelStats finish() const {
        ChannelStats s;
        if (n_ == 0) return s;
        s.mean = sum_ / static_cast<double>(n_);
        const double var = std::max(0.0, sum_sq_ / static_cast<double>(n_) - s.mean * s.mean);
        s.std = std::max(Normalizer::kStdFloor, std::sqrt(var));
        return s;
    }

private:
    std::int64_t n_ = 0;
    double sum_ = 0.0, sum_sq_ = 0.0;
};

} // namespace norm_detail

/// Fits statistics from training trajectories (fields stored steps x (n*q))
/// and their graphs' raw edge features. Derivative targets use the clean
/// forward differences (u^{n+1} - u^n) / dt.
inline Normalizer fit_normalizer(const std::vector<const Tensor*>& fields,
                                 const std::vector<double>& dts,
                                 const std::vector<const Tensor*>& edge_features, int q) {
    if (fields.empty() || fields.size() != dts.size())
        throw ShapeMismatch("fit_normalizer: need matching fields and dts");
    const std::int64_t ec = edge_features.empty() ? 3 : edge_features.front()->cols();

    std::vector<norm_detail::RunningStats> su(static_cast<std::size_t>(q)),
        sd(static_cast<std::size_t>(q)), se(static_cast<std::size_t>(ec));
    norm_detail::RunningStats st;

    for (std::size_t f = 0; f < fields.size(); ++f) {
        const Tensor& u = *fields[f];
        const double dt = dts[f];
        const std::int64_t steps = u.rows(), width = u.cols();
        for (std::int64_t s = 0; s < steps; ++s) {
            const double* row = u.row(s);
            for (std::int64_t i = 0; i < width; ++i) su[static_cast<std::size_t>(i % q)].add(row[i]);
            if (s + 1 < steps) st.add(static_cast<double>(s) * dt);
            if (s + 1 < steps) {
                const double* next = u.row(s + 1);
                for (std::int64_t i = 0; i < width; ++i)
                    sd[static_cast<std::size_t>(i % q)].add((next[i] - row[i]) / dt);
            }
        }
    }
    for (const Tensor* ef : edge_features)
        for (std::int64_t r = 0; r < ef->rows(); ++r)
            for (std::int64_t c = 0; c < ec; ++c) se[static_cast<std::size_t>(c)].add(ef->at(r, c));

    Normalizer n;
    for (auto& s : su) n.u.push_back(s.finish());
    for (auto& s : sd) n.dudt.push_back(s.finish());
    for (auto& s : se) n.edge.push_back(s.finish());
    n.xi = st.finish();
    return n;
}

} // namespace graphrom
