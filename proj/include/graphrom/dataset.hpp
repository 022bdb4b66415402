#pragma once

#include <array>
#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "graphrom/errors.hpp"
#include "graphrom/mesh.hpp"
#include "graphrom/model.hpp"
#include "graphrom/normalizer.hpp"
#include "graphrom/rng.hpp"
#include "graphrom/tensor.hpp"

namespace graphrom {

static_assert(std::endian::native == std::endian::little,
              "container format is little-endian; big-endian hosts unsupported");

namespace io_detail {

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FileNotFound("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& data) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FileNotFound("cannot write " + path.string());
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
}

inline void append_bytes(std::string& buf, const void* data, std::size_t len) {
    buf.append(static_cast<const char*>(data), len);
}

inline nlohmann::json parse_json(const std::string& text, const std::string& what) {
    nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
    if (j.is_discarded()) throw SchemaMismatch("malformed JSON in " + what);
    return j;
}

/// Shortest round-trip decimal form; used everywhere doubles land in text.
inline std::string fmt(double v) {
    std::array<char, 40> buf{};
    auto [p, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    (void)ec;
    return std::string(buf.data(), p);
}

inline std::string hex64(std::uint64_t v) {
    std::array<char, 17> buf{};
    static const char* digits = "0123456789abcdef";
    for (int i = 15; i >= 0; --i) {
        buf[static_cast<std::size_t>(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return std::string(buf.data(), 16);
}

} // namespace io_detail

// ---------------------------------------------------------------------------
// Dataset container: JSON manifest plus one binary payload holding, per
// simulation, positions (n x 2 f64), fields ((N_t+1) x n*q f64), directed
// edges (E x 2 u32, source then destination) and the boundary mask (n u8).
// ---------------------------------------------------------------------------

struct SimData {
    int id = 0;
    GeometryParams mu;
    int q = 1;
    double dt = 0.0;
    double fom_wall_time = 0.0;
    Tensor positions; // n x 2
    Tensor fields;    // (N_t+1) x n*q
    std::vector<std::array<std::uint32_t, 2>> edges;
    std::vector<std::uint8_t> boundary;

    std::int64_t n_nodes() const { return positions.rows(); }
    std::int64_t n_steps() const { return fields.rows() - 1; }
};

struct DatasetContainer {
    static constexpr int kSchemaVersion = 1;

    std::vector<SimData> sims;
    std::vector<int> train_ids, test_ids;
    std::uint64_t payload_hash = 0;

    const SimData& sim_by_id(int id) const {
        for (const auto& s : sims)
            if (s.id == id) return s;
        throw SchemaMismatch("simulation id " + std::to_string(id) + " not in container");
    }

    /// Rebuilds the graph view; edge features are recomputed from positions,
    /// which keeps the payload minimal and the reconstruction exact.
    GraphSample graph(const SimData& s) const {
        GraphSample g;
        g.n_nodes = static_cast<int>(s.n_nodes());
        g.edges = s.edges;
        g.boundary = s.boundary;
        g.positions.resize(static_cast<std::size_t>(g.n_nodes));
        for (std::int64_t i = 0; i < s.n_nodes(); ++i)
            g.positions[static_cast<std::size_t>(i)] = {s.positions.at(i, 0), s.positions.at(i, 1)};
        g.edge_features = Tensor::zeros({g.n_edges(), 3});
        for (std::int64_t r = 0; r < g.n_edges(); ++r) {
            const auto& p = g.positions[g.edges[static_cast<std::size_t>(r)][0]];
            const auto& q2 = g.positions[g.edges[static_cast<std::size_t>(r)][1]];
            g.edge_features.at(r, 0) = 0.5 * (p[0] + q2[0]);
            g.edge_features.at(r, 1) = 0.5 * (p[1] + q2[1]);
            g.edge_features.at(r, 2) = std::hypot(p[0] - q2[0], p[1] - q2[1]);
        }
        return g;
    }

    void write(const std::filesystem::path& dir) const {
        std::filesystem::create_directories(dir);
        std::string payload;
        nlohmann::json manifest;
        manifest["schema_version"] = kSchemaVersion;
        manifest["sims"] = nlohmann::json::array();

        for (const auto& s : sims) {
            nlohmann::json rec;
            rec["id"] = s.id;
            rec["mu"] = {{"kind", to_string(s.mu.kind)},
                         {"cx", s.mu.cx},
                         {"cy", s.mu.cy},
                         {"size", s.mu.size},
                         {"resolution", s.mu.resolution}};
            rec["q"] = s.q;
            rec["n_nodes"] = s.n_nodes();
            rec["n_edges"] = s.edges.size();
            rec["n_steps"] = s.n_steps();
            rec["dt"] = s.dt;
            rec["fom_wall_time"] = s.fom_wall_time;

            nlohmann::json off;
            off["positions"] = payload.size();
            io_detail::append_bytes(payload, s.positions.data(),
                                    static_cast<std::size_t>(s.positions.numel()) * sizeof(double));
            off["fields"] = payload.size();
            io_detail::append_bytes(payload, s.fields.data(),
                                    static_cast<std::size_t>(s.fields.numel()) * sizeof(double));
            off["edges"] = payload.size();
            io_detail::append_bytes(payload, s.edges.data(), s.edges.size() * sizeof(std::uint32_t) * 2);
            off["boundary"] = payload.size();
            io_detail::append_bytes(payload, s.boundary.data(), s.boundary.size());
            rec["offsets"] = off;
            manifest["sims"].push_back(rec);
        }
        manifest["payload_hash"] = io_detail::hex64(fnv1a64(payload.data(), payload.size()));

        io_detail::write_file(dir / "payload.bin", payload);
        io_detail::write_file(dir / "manifest.json", manifest.dump(2) + "\n");

        nlohmann::json split;
        split["train"] = train_ids;
        split["test"] = test_ids;
        io_detail::write_file(dir / "split.json", split.dump(2) + "\n");
    }

    static DatasetContainer load(const std::filesystem::path& dir) {
        const nlohmann::json manifest =
            io_detail::parse_json(io_detail::read_file(dir / "manifest.json"), "manifest");
        if (!manifest.contains("schema_version") ||
            manifest["schema_version"].get<int>() != kSchemaVersion)
            throw SchemaMismatch("unsupported container schema version");
        const std::string payload = io_detail::read_file(dir / "payload.bin");

        DatasetContainer c;
        c.payload_hash = fnv1a64(payload.data(), payload.size());
        if (manifest.contains("payload_hash") &&
            manifest["payload_hash"].get<std::string>() != io_detail::hex64(c.payload_hash))
            throw SchemaMismatch("payload hash does not match manifest");

        auto take = [&payload](std::size_t offset, void* dst, std::size_t len, const char* what) {
            if (offset + len > payload.size())
                throw SchemaMismatch(std::string("payload truncated reading ") + what);
            std::memcpy(dst, payload.data() + offset, len);
        };

        for (const auto& rec : manifest["sims"]) {
            SimData s;
            s.id = rec["id"].get<int>();
            s.mu.kind = obstacle_kind_from_string(rec["mu"]["kind"].get<std::string>());
            s.mu.cx = rec["mu"]["cx"].get<double>();
            s.mu.cy = rec["mu"]["cy"].get<double>();
            s.mu.size = rec["mu"]["size"].get<double>();
            s.mu.resolution = rec["mu"]["resolution"].get<int>();
            s.q = rec["q"].get<int>();
            s.dt = rec["dt"].get<double>();
            s.fom_wall_time = rec["fom_wall_time"].get<double>();
            const auto n = rec["n_nodes"].get<std::int64_t>();
            const auto e = rec["n_edges"].get<std::int64_t>();
            const auto steps = rec["n_steps"].get<std::int64_t>();
            s.positions = Tensor::zeros({n, 2});
            s.fields = Tensor::zeros({steps + 1, n * s.q});
            s.edges.resize(static_cast<std::size_t>(e));
            s.boundary.resize(static_cast<std::size_t>(n));
            const auto& off = rec["offsets"];
            take(off["positions"].get<std::size_t>(), s.positions.data(),
                 static_cast<std::size_t>(s.positions.numel()) * sizeof(double), "positions");
            take(off["fields"].get<std::size_t>(), s.fields.data(),
                 static_cast<std::size_t>(s.fields.numel()) * sizeof(double), "fields");
            take(off["edges"].get<std::size_t>(), s.edges.data(),
                 s.edges.size() * sizeof(std::uint32_t) * 2, "edges");
            take(off["boundary"].get<std::size_t>(), s.boundary.data(), s.boundary.size(), "boundary");
            c.sims.push_back(std::move(s));
        }

        const auto split_path = dir / "split.json";
        if (std::filesystem::exists(split_path)) {
            const nlohmann::json split =
                io_detail::parse_json(io_detail::read_file(split_path), "split");
            c.train_ids = split["train"].get<std::vector<int>>();
            c.test_ids = split["test"].get<std::vector<int>>();
        }
        return c;
    }
};

// ---------------------------------------------------------------------------
// Checkpoint: JSON descriptor (architecture, normalizer, provenance) plus the
// flat little-endian parameter vector in declaration order.
// ---------------------------------------------------------------------------

namespace io_detail {

inline nlohmann::json stats_json(const ChannelStats& s) {
    return {{"mean", s.mean}, {"std", s.std}};
}

inline ChannelStats stats_from_json(const nlohmann::json& j) {
    return {j["mean"].get<double>(), j["std"].get<double>()};
}

inline nlohmann::json normalizer_json(const Normalizer& n) {
    nlohmann::json j;
    j["xi"] = stats_json(n.xi);
    for (const auto& s : n.u) j["u"].push_back(stats_json(s));
    for (const auto& s : n.edge) j["edge"].push_back(stats_json(s));
    for (const auto& s : n.dudt) j["dudt"].push_back(stats_json(s));
    return j;
}

inline Normalizer normalizer_from_json(const nlohmann::json& j) {
    Normalizer n;
    n.xi = stats_from_json(j["xi"]);
    for (const auto& s : j["u"]) n.u.push_back(stats_from_json(s));
    for (const auto& s : j["edge"]) n.edge.push_back(stats_from_json(s));
    for (const auto& s : j["dudt"]) n.dudt.push_back(stats_from_json(s));
    return n;
}

} // namespace io_detail

struct Checkpoint {
    ArchConfig arch;
    Normalizer normalizer;
    std::vector<double> flat_params;
    std::uint64_t seed = 0;
    std::string data_hash;

    void write(const std::filesystem::path& dir) const {
        std::filesystem::create_directories(dir);
        nlohmann::json j;
        j["schema_version"] = 1;
        j["arch"] = {{"hidden", arch.hidden},       {"mp_steps", arch.mp_steps},
                     {"mlp_depth", arch.mlp_depth}, {"node_in", arch.node_in},
                     {"global_in", arch.global_in}, {"space_dim", arch.space_dim}};
        j["normalizer"] = io_detail::normalizer_json(normalizer);
        j["seed"] = seed;
        j["data_hash"] = data_hash;
        j["param_count"] = flat_params.size();
        j["params_file"] = "params.bin";
        io_detail::write_file(dir / "checkpoint.json", j.dump(2) + "\n");
        std::string bin;
        io_detail::append_bytes(bin, flat_params.data(), flat_params.size() * sizeof(double));
        io_detail::write_file(dir / "params.bin", bin);
    }

    static Checkpoint load(const std::filesystem::path& dir) {
        const nlohmann::json j =
            io_detail::parse_json(io_detail::read_file(dir / "checkpoint.json"), "checkpoint");
        if (!j.contains("schema_version") || j["schema_version"].get<int>() != 1)
            throw SchemaMismatch("unsupported checkpoint schema version");
        Checkpoint c;
        c.arch.hidden = j["arch"]["hidden"].get<int>();
        c.arch.mp_steps = j["arch"]["mp_steps"].get<int>();
        c.arch.mlp_depth = j["arch"]["mlp_depth"].get<int>();
        c.arch.node_in = j["arch"]["node_in"].get<int>();
        c.arch.global_in = j["arch"]["global_in"].get<int>();
        c.arch.space_dim = j["arch"]["space_dim"].get<int>();
        c.normalizer = io_detail::normalizer_from_json(j["normalizer"]);
        c.seed = j["seed"].get<std::uint64_t>();
        c.data_hash = j["data_hash"].get<std::string>();
        const std::string bin = io_detail::read_file(dir / "params.bin");
        if (bin.size() != j["param_count"].get<std::size_t>() * sizeof(double))
            throw SchemaMismatch("parameter file size does not match checkpoint descriptor");
        c.flat_params.resize(bin.size() / sizeof(double));
        std::memcpy(c.flat_params.data(), bin.data(), bin.size());
        return c;
    }

    ModelParams to_model() const {
        ModelParams p = ModelParams::build(arch);
        if (p.flat.size() != flat_params.size())
            throw SchemaMismatch("parameter count does not match architecture");
        p.flat = flat_params;
        return p;
    }
};

/// Minimal CSV writer with deterministic shortest-round-trip formatting.
class CsvWriter {
public:
    explicit CsvWriter(std::string header) { buf_ = std::move(header) + "\n"; }

    void comment(const std::string& line) {
        buf_.insert(0, "# " + line + "\n");
    }

    void row(const std::vector<double>& values) {
        for (std::size_t i = 0; i < values.size(); ++i) {
            if (i) buf_ += ',';
            buf_ += io_detail::fmt(values[i]);
        }
        buf_ += '\n';
    }

    void raw_row(const std::string& line) { buf_ += line + "\n"; }

    void save(const std::filesystem::path& path) const {
        if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
        io_detail::write_file(path, buf_);
    }

private:
    std::string buf_;
};

} // namespace graphrom
