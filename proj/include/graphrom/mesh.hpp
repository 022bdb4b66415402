#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "graphrom/errors.hpp"
#include "graphrom/tensor.hpp"

namespace graphrom {

enum class ObstacleKind { None, Circle, Square };

inline std::string to_string(ObstacleKind k) {
    switch (k) {
        case ObstacleKind::None: return "none";
        case ObstacleKind::Circle: return "circle";
        case ObstacleKind::Square: return "square";
    }
    return "none";
}

inline ObstacleKind obstacle_kind_from_string(const std::string& s) {
    if (s == "none") return ObstacleKind::None;
    if (s == "circle") return ObstacleKind::Circle;
    if (s == "square") return ObstacleKind::Square;
    throw ConfigError("unknown obstacle kind: " + s);
}

/// Geometry parameters of a unit-square domain with a movable obstacle.
/// `size` is the circle radius or the square half-width; `resolution` is the
/// number of grid lines per side of the background lattice.
struct GeometryParams {
    ObstacleKind kind = ObstacleKind::None;
    double cx = 0.5;
    double cy = 0.5;
    double size = 0.15;
    int resolution = 29;

    void validate() const {
        if (resolution < 2) throw InvalidGeometry("resolution must be at least 2");
        if (kind == ObstacleKind::None) return;
        if (!(size > 0.0)) throw InvalidGeometry("obstacle size must be positive");
        if (!(cx > 0.0 && cx < 1.0 && cy > 0.0 && cy < 1.0))
            throw InvalidGeometry("obstacle center must lie inside the unit square");
        const double margin = std::min(std::min(cx, 1.0 - cx), std::min(cy, 1.0 - cy));
        if (margin <= size)
            throw ObstacleTooLarge("obstacle of size " + std::to_string(size) +
                                   " does not fit inside the domain at (" + std::to_string(cx) +
                                   ", " + std::to_string(cy) + ")");
    }
};

struct Mesh {
    std::vector<std::array<double, 2>> vertices;
    std::vector<std::array<int, 3>> triangles; // counterclockwise
    std::vector<std::uint8_t> boundary;        // 1 on outer square and obstacle rim
    GeometryParams geometry;

    int n_vertices() const { return static_cast<int>(vertices.size()); }
    int n_triangles() const { return static_cast<int>(triangles.size()); }
};

/// Graph view of a mesh: one directed edge per ordered pair of vertices that
/// share a triangle edge. Edge features are [midpoint_x, midpoint_y, length].
struct GraphSample {
    int n_nodes = 0;
    std::vector<std::array<std::uint32_t, 2>> edges; // (source, destination)
    Tensor edge_features;                            // E x 3
    std::vector<std::array<double, 2>> positions;
    std::vector<std::uint8_t> boundary;

    std::int64_t n_edges() const { return static_cast<std::int64_t>(edges.size()); }
};

inline double triangle_area(const std::array<double, 2>& a, const std::array<double, 2>& b,
                            const std::array<double, 2>& c) {
    return 0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]));
}

namespace mesh_detail {

constexpr double kDegenerateArea = 1e-12;
constexpr double kSnapBandFraction = 0.45; // of the lattice spacing

inline bool strictly_inside_obstacle(const GeometryParams& g, double x, double y) {
    switch (g.kind) {
        case ObstacleKind::None: return false;
        case ObstacleKind::Circle: {
            const double dx = x - g.cx, dy = y - g.cy;
            return dx * dx + dy * dy < g.size * g.size;
        }
        case ObstacleKind::Square:
            return std::max(std::abs(x - g.cx), std::abs(y - g.cy)) < g.size;
    }
    return false;
}

} // namespace mesh_detail

/// Generates a structured triangulated lattice over the unit square, deletes
/// lattice nodes strictly inside the obstacle, and (for circles) radially
/// snaps the surviving near-rim nodes onto the obstacle boundary. Square rims
/// stay lattice-aligned. Slivers produced by snapping are dropped, as are
/// vertices that end up with no incident triangle.
inline Mesh generate_mesh(const GeometryParams& params) {
    params.validate();
    const int n = params.resolution;
    const double h = 1.0 / static_cast<double>(n - 1);

    std::vector<std::array<double, 2>> pts(static_cast<std::size_t>(n) * n);
    std::vector<char> alive(pts.size(), 1);
    for (int j = 0; j < n; ++j)
        for (int i = 0; i < n; ++i) {
            const std::size_t id = static_cast<std::size_t>(j) * n + i;
            pts[id] = {i * h, j * h};
            if (mesh_detail::strictly_inside_obstacle(params, pts[id][0], pts[id][1]))
                alive[id] = 0;
        }

    // An obstacle that wipes out a full lattice row or column disconnects the
    // square; refuse rather than emit a broken domain.
    for (int j = 0; j < n; ++j) {
        bool any_row = false, any_col = false;
        for (int i = 0; i < n; ++i) {
            any_row = any_row || alive[static_cast<std::size_t>(j) * n + i];
            any_col = any_col || alive[static_cast<std::size_t>(i) * n + j];
        }
        if (!any_row || !any_col)
            throw ObstacleTooLarge("obstacle erases an entire lattice row or column");
    }

    // Radial snapping of near-rim survivors onto a circular obstacle.
    if (params.kind == ObstacleKind::Circle) {
        const double band = params.size + mesh_detail::kSnapBandFraction * h;
        for (std::size_t id = 0; id < pts.size(); ++id) {
            if (!alive[id]) continue;
            const double dx = pts[id][0] - params.cx, dy = pts[id][1] - params.cy;
            const double d = std::sqrt(dx * dx + dy * dy);
            if (d < band && d > 0.0) {
                const double f = params.size / d;
                pts[id] = {params.cx + dx * f, params.cy + dy * f};
            }
        }
    }

    // Each lattice cell splits along its up-right diagonal into two
    // counterclockwise triangles; cells touching a deleted node drop out.
    std::vector<std::array<int, 3>> tris;
    tris.reserve(static_cast<std::size_t>(2 * (n - 1) * (n - 1)));
    auto lat = [n](int i, int j) { return j * n + i; };
    for (int j = 0; j + 1 < n; ++j)
        for (int i = 0; i + 1 < n; ++i) {
            const int a = lat(i, j), b = lat(i + 1, j), c = lat(i + 1, j + 1), d = lat(i, j + 1);
            if (alive[a] && alive[b] && alive[c]) tris.push_back({a, b, c});
            if (alive[a] && alive[c] && alive[d]) tris.push_back({a, c, d});
        }

    std::vector<std::array<int, 3>> kept;
    kept.reserve(tris.size());
    for (const auto& t : tris)
        if (triangle_area(pts[t[0]], pts[t[1]], pts[t[2]]) >= mesh_detail::kDegenerateArea)
            kept.push_back(t);

    // Compact vertices: drop deleted nodes and snapping orphans.
    std::vector<int> remap(pts.size(), -1);
    Mesh mesh;
    mesh.geometry = params;
    for (const auto& t : kept)
        for (int v : t)
            if (remap[static_cast<std::size_t>(v)] < 0) {
                remap[static_cast<std::size_t>(v)] = mesh.n_vertices();
                mesh.vertices.push_back(pts[static_cast<std::size_t>(v)]);
            }
    mesh.triangles.reserve(kept.size());
    for (const auto& t : kept)
        mesh.triangles.push_back({remap[static_cast<std::size_t>(t[0])],
                                  remap[static_cast<std::size_t>(t[1])],
                                  remap[static_cast<std::size_t>(t[2])]});

    // Boundary = endpoints of edges that belong to exactly one triangle. This
    // classifies the outer square and the obstacle rim in one pass.
    std::map<std::pair<int, int>, int> edge_count;
    for (const auto& t : mesh.triangles)
        for (int e = 0; e < 3; ++e) {
            int u = t[static_cast<std::size_t>(e)], v = t[static_cast<std::size_t>((e + 1) % 3)];
            if (u > v) std::swap(u, v);
            ++edge_count[{u, v}];
        }
    mesh.boundary.assign(static_cast<std::size_t>(mesh.n_vertices()), 0);
    for (const auto& [edge, count] : edge_count)
        if (count == 1) {
            mesh.boundary[static_cast<std::size_t>(edge.first)] = 1;
            mesh.boundary[static_cast<std::size_t>(edge.second)] = 1;
        }

    if (mesh.triangles.empty()) throw ObstacleTooLarge("no triangles survive obstacle removal");
    return mesh;
}

/// Structural audit used by tests and the data generator: positive areas,
/// watertight boundary flags, no duplicate or orphan vertices.
inline void audit_mesh(const Mesh& mesh) {
    std::vector<char> incident(static_cast<std::size_t>(mesh.n_vertices()), 0);
    for (const auto& t : mesh.triangles) {
        if (triangle_area(mesh.vertices[static_cast<std::size_t>(t[0])],
                          mesh.vertices[static_cast<std::size_t>(t[1])],
                          mesh.vertices[static_cast<std::size_t>(t[2])]) <= 0.0)
            throw DegenerateElement("non-positive triangle area");
        for (int v : t) incident[static_cast<std::size_t>(v)] = 1;
    }
    for (char c : incident)
        if (!c) throw InvalidGeometry("orphan vertex");

    std::map<std::pair<int, int>, int> edge_count;
    for (const auto& t : mesh.triangles)
        for (int e = 0; e < 3; ++e) {
            int u = t[static_cast<std::size_t>(e)], v = t[static_cast<std::size_t>((e + 1) % 3)];
            if (u > v) std::swap(u, v);
            ++edge_count[{u, v}];
        }
    for (const auto& [edge, count] : edge_count) {
        if (count > 2) throw InvalidGeometry("edge shared by more than two triangles");
        if (count == 1 && (!mesh.boundary[static_cast<std::size_t>(edge.first)] ||
                           !mesh.boundary[static_cast<std::size_t>(edge.second)]))
            throw InvalidGeometry("boundary edge with unflagged endpoint");
    }

    // Duplicate detection through a spatial hash; pairwise distance > 1e-9.
    std::map<std::pair<std::int64_t, std::int64_t>, std::vector<int>> bins;
    const double cell = 1e-6;
    for (int i = 0; i < mesh.n_vertices(); ++i) {
        const auto& p = mesh.vertices[static_cast<std::size_t>(i)];
        const auto bx = static_cast<std::int64_t>(std::floor(p[0] / cell));
        const auto by = static_cast<std::int64_t>(std::floor(p[1] / cell));
        for (std::int64_t dx = -1; dx <= 1; ++dx)
            for (std::int64_t dy = -1; dy <= 1; ++dy) {
                auto it = bins.find({bx + dx, by + dy});
                if (it == bins.end()) continue;
                for (int j : it->second) {
                    const auto& q = mesh.vertices[static_cast<std::size_t>(j)];
                    const double d = std::hypot(p[0] - q[0], p[1] - q[1]);
                    if (d <= 1e-9) throw InvalidGeometry("duplicate vertices");
                }
            }
        bins[{bx, by}].push_back(i);
    }
}

/// Every undirected mesh edge becomes two directed edges. Features are the
/// edge midpoint followed by the Euclidean length, identical for the two
/// directions. Edges are emitted sorted by (destination, source).
inline GraphSample mesh_to_graph(const Mesh& mesh) {
    std::map<std::pair<int, int>, char> undirected;
    for (const auto& t : mesh.triangles)
        for (int e = 0; e < 3; ++e) {
            int u = t[static_cast<std::size_t>(e)], v = t[static_cast<std::size_t>((e + 1) % 3)];
            if (u > v) std::swap(u, v);
            undirected[{u, v}] = 1;
        }

    GraphSample g;
    g.n_nodes = mesh.n_vertices();
    g.positions = mesh.vertices;
    g.boundary = mesh.boundary;
    g.edges.reserve(undirected.size() * 2);
    for (const auto& [e, unused] : undirected) {
        (void)unused;
        g.edges.push_back({static_cast<std::uint32_t>(e.first), static_cast<std::uint32_t>(e.second)});
        g.edges.push_back({static_cast<std::uint32_t>(e.second), static_cast<std::uint32_t>(e.first)});
    }
    std::sort(g.edges.begin(), g.edges.end(),
              [](const auto& a, const auto& b) {
                  return a[1] != b[1] ? a[1] < b[1] : a[0] < b[0];
              });

    g.edge_features = Tensor::zeros({g.n_edges(), 3});
    for (std::int64_t r = 0; r < g.n_edges(); ++r) {
        const auto& p = g.positions[g.edges[static_cast<std::size_t>(r)][0]];
        const auto& q = g.positions[g.edges[static_cast<std::size_t>(r)][1]];
        g.edge_features.at(r, 0) = 0.5 * (p[0] + q[0]);
        g.edge_features.at(r, 1) = 0.5 * (p[1] + q[1]);
        g.edge_features.at(r, 2) = std::hypot(p[0] - q[0], p[1] - q[1]);
    }
    return g;
}

/// P1 interpolation of a nodal field onto a uniform grid_n x grid_n grid over
/// the unit square; grid points outside the meshed domain evaluate to 0.
inline std::vector<double> interpolate_to_grid(const Mesh& mesh, const std::vector<double>& field,
                                               int grid_n) {
    if (static_cast<int>(field.size()) != mesh.n_vertices())
        throw ShapeMismatch("field length must equal vertex count");
    if (grid_n < 2) throw ConfigError("grid_n must be at least 2");

    // Bin triangles for point location.
    const int bins = std::max(4, mesh.geometry.resolution);
    std::vector<std::vector<int>> bucket(static_cast<std::size_t>(bins) * bins);
    auto clampi = [bins](int v) { return std::min(bins - 1, std::max(0, v)); };
    for (int t = 0; t < mesh.n_triangles(); ++t) {
        const auto& tri = mesh.triangles[static_cast<std::size_t>(t)];
        double xmin = 1e30, xmax = -1e30, ymin = 1e30, ymax = -1e30;
        for (int v : tri) {
            const auto& p = mesh.vertices[static_cast<std::size_t>(v)];
            xmin = std::min(xmin, p[0]);
            xmax = std::max(xmax, p[0]);
            ymin = std::min(ymin, p[1]);
            ymax = std::max(ymax, p[1]);
        }
        const int bx0 = clampi(static_cast<int>(xmin * bins)), bx1 = clampi(static_cast<int>(xmax * bins));
        const int by0 = clampi(static_cast<int>(ymin * bins)), by1 = clampi(static_cast<int>(ymax * bins));
        for (int by = by0; by <= by1; ++by)
            for (int bx = bx0; bx <= bx1; ++bx)
                bucket[static_cast<std::size_t>(by) * bins + bx].push_back(t);
    }

    const double tol = 1e-12;
    std::vector<double> out(static_cast<std::size_t>(grid_n) * grid_n, 0.0);
    const double gh = 1.0 / static_cast<double>(grid_n - 1);
    for (int gy = 0; gy < grid_n; ++gy)
        for (int gx = 0; gx < grid_n; ++gx) {
            const double x = gx * gh, y = gy * gh;
            const auto& cands =
                bucket[static_cast<std::size_t>(clampi(static_cast<int>(y * bins))) * bins +
                       clampi(static_cast<int>(x * bins))];
            for (int t : cands) {
                const auto& tri = mesh.triangles[static_cast<std::size_t>(t)];
                const auto& a = mesh.vertices[static_cast<std::size_t>(tri[0])];
                const auto& b = mesh.vertices[static_cast<std::size_t>(tri[1])];
                const auto& c = mesh.vertices[static_cast<std::size_t>(tri[2])];
                const double area2 = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
                const double w0 = ((b[0] - x) * (c[1] - y) - (c[0] - x) * (b[1] - y)) / area2;
                const double w1 = ((c[0] - x) * (a[1] - y) - (a[0] - x) * (c[1] - y)) / area2;
                const double w2 = 1.0 - w0 - w1;
                if (w0 >= -tol && w1 >= -tol && w2 >= -tol) {
                    out[static_cast<std::size_t>(gy) * grid_n + gx] =
                        w0 * field[static_cast<std::size_t>(tri[0])] +
                        w1 * field[static_cast<std::size_t>(tri[1])] +
                        w2 * field[static_cast<std::size_t>(tri[2])];
                    break;
                }
            }
        }
    return out;
}

} // namespace graphrom
