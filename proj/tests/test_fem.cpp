#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "graphrom/fem.hpp"
#include "graphrom/mesh.hpp"

using namespace graphrom;
using Catch::Approx;

namespace {

constexpr double kPi = 3.14159265358979323846;

/// Manufactured solution u = exp(-t) sin(pi x) sin(pi y) on the obstacle-free
/// square, with matching forcing for the advection-diffusion operator.
PdeConfig manufactured_config(double T, double dt) {
    PdeConfig c;
    c.diffusivity = 0.1;
    c.T = T;
    c.dt = dt;
    c.dirichlet = [](double, double) { return 0.0; };
    c.initial = [](double x, double y) { return std::sin(kPi * x) * std::sin(kPi * y); };
    c.advection = [](double, double, double) { return std::array<double, 2>{0.4, 0.3}; };
    c.forcing = [](double t, double x, double y) {
        const double sx = std::sin(kPi * x), sy = std::sin(kPi * y);
        const double cx = std::cos(kPi * x), cy = std::cos(kPi * y);
        const double u = std::exp(-t) * sx * sy;
        const double lap = -2.0 * kPi * kPi * u;
        const double bx = 0.4, by = 0.3;
        const double conv = std::exp(-t) * kPi * (bx * cx * sy + by * sx * cy);
        return -u - 0.1 * lap + conv;
    };
    return c;
}

double exact_at(double t, double x, double y) {
    return std::exp(-t) * std::sin(kPi * x) * std::sin(kPi * y);
}

/// Mass-weighted L2 error against the manufactured solution at final time.
double manufactured_l2_error(int resolution, double T, double dt) {
    const Mesh mesh = generate_mesh({ObstacleKind::None, 0.5, 0.5, 0.15, resolution});
    const PdeConfig cfg = manufactured_config(T, dt);
    const Trajectory traj = solve_trajectory(mesh, cfg);
    const auto matrices = assemble(mesh, cfg, 0.0);

    std::vector<double> err(static_cast<std::size_t>(mesh.n_vertices()));
    const double* last = traj.snapshots.row(traj.n_snapshots() - 1);
    for (int i = 0; i < mesh.n_vertices(); ++i) {
        const auto& p = mesh.vertices[static_cast<std::size_t>(i)];
        err[static_cast<std::size_t>(i)] = last[i] - exact_at(T, p[0], p[1]);
    }
    const std::vector<double> me = matrices.M.multiply(err);
    double acc = 0.0;
    for (std::size_t i = 0; i < err.size(); ++i) acc += err[i] * me[i];
    return std::sqrt(acc);
}

} // namespace

TEST_CASE("mass matrix sums to the mesh area", "[fem]") {
    const Mesh plain = generate_mesh({ObstacleKind::None, 0.5, 0.5, 0.15, 17});
    PdeConfig cfg;
    auto m = assemble(plain, cfg, 0.0);
    REQUIRE(m.M.sum_entries() == Approx(1.0).margin(1e-12));

    const Mesh holed = generate_mesh({ObstacleKind::Circle, 0.5, 0.7, 0.15, 29});
    auto mh = assemble(holed, cfg, 0.0);
    // Partition of unity: the sum equals the exact meshed area, which in turn
    // approximates the square minus the obstacle disk (the polygonal hole is
    // slightly larger than the circle).
    double area = 0.0;
    for (const auto& t : holed.triangles)
        area += triangle_area(holed.vertices[static_cast<std::size_t>(t[0])],
                              holed.vertices[static_cast<std::size_t>(t[1])],
                              holed.vertices[static_cast<std::size_t>(t[2])]);
    REQUIRE(mh.M.sum_entries() == Approx(area).margin(1e-12));
    REQUIRE(mh.M.sum_entries() == Approx(1.0 - kPi * 0.15 * 0.15).margin(0.03));
}

TEST_CASE("stiffness and convection annihilate constants", "[fem]") {
    const Mesh mesh = generate_mesh({ObstacleKind::Circle, 0.45, 0.65, 0.15, 17});
    PdeConfig cfg;
    auto m = assemble(mesh, cfg, 0.3);
    const std::vector<double> ones(static_cast<std::size_t>(mesh.n_vertices()), 1.0);
    for (double v : m.K.multiply(ones)) REQUIRE(std::abs(v) < 1e-12);
    for (double v : m.C.multiply(ones)) REQUIRE(std::abs(v) < 1e-12);
}

TEST_CASE("boundary rows become identity rows after lifting", "[fem]") {
    const Mesh mesh = generate_mesh({ObstacleKind::None, 0.5, 0.5, 0.15, 9});
    PdeConfig cfg;
    const CsrPattern pattern = fem_detail::mesh_pattern(mesh);
    CsrMatrix M, K, C;
    assemble_mass_stiffness(mesh, pattern, M, K);
    assemble_convection(mesh, pattern, cfg, cfg.dt, C);

    // Reproduce the lifted system used inside the stepper.
    CsrMatrix A = pattern.zeros_like();
    for (std::size_t p = 0; p < A.vals.size(); ++p)
        A.vals[p] = M.vals[p] + cfg.dt * (cfg.diffusivity * K.vals[p] + C.vals[p]);
    for (std::int64_t i = 0; i < A.n; ++i) {
        if (!mesh.boundary[static_cast<std::size_t>(i)]) continue;
        for (std::int64_t p = A.row_ptr[static_cast<std::size_t>(i)];
             p < A.row_ptr[static_cast<std::size_t>(i + 1)]; ++p)
            A.vals[static_cast<std::size_t>(p)] = A.col_idx[static_cast<std::size_t>(p)] == i ? 1.0 : 0.0;
    }
    for (std::int64_t i = 0; i < A.n; ++i) {
        if (!mesh.boundary[static_cast<std::size_t>(i)]) continue;
        for (std::int64_t p = A.row_ptr[static_cast<std::size_t>(i)];
             p < A.row_ptr[static_cast<std::size_t>(i + 1)]; ++p)
            REQUIRE(A.vals[static_cast<std::size_t>(p)] ==
                    (A.col_idx[static_cast<std::size_t>(p)] == i ? 1.0 : 0.0));
    }
}

TEST_CASE("zero diffusion and zero advection keep the state fixed", "[fem]") {
    const Mesh mesh = generate_mesh({ObstacleKind::None, 0.5, 0.5, 0.15, 9});
    PdeConfig cfg;
    cfg.diffusivity = 0.0;
    cfg.advection = [](double, double, double) { return std::array<double, 2>{0.0, 0.0}; };
    cfg.dirichlet = [](double x, double y) { return (x - 1) * (x - 1) + (y - 1) * (y - 1); };
    cfg.initial = cfg.dirichlet;
    cfg.T = 0.1;
    cfg.dt = 0.02;
    const Trajectory traj = solve_trajectory(mesh, cfg);
    for (std::int64_t s = 1; s < traj.n_snapshots(); ++s)
        for (std::int64_t i = 0; i < traj.n_nodes(); ++i)
            REQUIRE(traj.snapshots.at(s, i) == Approx(traj.snapshots.at(0, i)).margin(1e-9));
}

TEST_CASE("Dirichlet nodes carry the boundary data at every step", "[fem]") {
    const Mesh mesh = generate_mesh({ObstacleKind::Circle, 0.5, 0.7, 0.15, 17});
    PdeConfig cfg;
    cfg.T = 0.2;
    const Trajectory traj = solve_trajectory(mesh, cfg);
    for (std::int64_t s = 0; s < traj.n_snapshots(); ++s)
        for (int i = 0; i < mesh.n_vertices(); ++i)
            if (mesh.boundary[static_cast<std::size_t>(i)]) {
                const auto& p = mesh.vertices[static_cast<std::size_t>(i)];
                REQUIRE(traj.snapshots.at(s, i) ==
                        Approx(cfg.dirichlet(p[0], p[1])).margin(1e-12));
            }
}

TEST_CASE("default problem produces 101 snapshots and records time", "[fem]") {
    const Mesh mesh = generate_mesh({ObstacleKind::Circle, 0.5, 0.7, 0.15, 17});
    PdeConfig cfg; // T = 2, dt = 0.02
    const Trajectory traj = solve_trajectory(mesh, cfg);
    REQUIRE(traj.n_snapshots() == 101);
    REQUIRE(traj.wall_time_seconds > 0.0);
    // Corner (1,1) carries g(1,1) = 0 at every step including the first.
    for (int i = 0; i < mesh.n_vertices(); ++i) {
        const auto& p = mesh.vertices[static_cast<std::size_t>(i)];
        if (std::abs(p[0] - 1.0) < 1e-12 && std::abs(p[1] - 1.0) < 1e-12)
            REQUIRE(traj.snapshots.at(0, i) == Approx(0.0).margin(1e-15));
    }
}

TEST_CASE("diffusion settles monotonically toward steady state", "[fem]") {
    const Mesh mesh = generate_mesh({ObstacleKind::None, 0.5, 0.5, 0.15, 17});
    PdeConfig cfg;
    cfg.advection = [](double, double, double) { return std::array<double, 2>{0.0, 0.0}; };
    cfg.T = 1.0;
    cfg.dt = 0.02;
    const Trajectory traj = solve_trajectory(mesh, cfg);
    std::vector<double> increments;
    for (std::int64_t s = 1; s < traj.n_snapshots(); ++s) {
        double d = 0.0;
        for (std::int64_t i = 0; i < traj.n_nodes(); ++i) {
            const double diff = traj.snapshots.at(s, i) - traj.snapshots.at(s - 1, i);
            d += diff * diff;
        }
        increments.push_back(std::sqrt(d));
    }
    for (std::size_t s = increments.size() / 2; s + 1 < increments.size(); ++s)
        REQUIRE(increments[s + 1] <= increments[s] + 1e-14);
}

TEST_CASE("manufactured solution: spatial convergence order", "[fem][slow]") {
    const double T = 0.1, dt = 5e-4;
    const double e_coarse = manufactured_l2_error(17, T, dt);
    const double e_fine = manufactured_l2_error(33, T, dt);
    const double order = std::log2(e_coarse / e_fine);
    INFO("coarse " << e_coarse << " fine " << e_fine << " order " << order);
    REQUIRE(order >= 1.7);
}

TEST_CASE("backward Euler temporal order via self-convergence", "[fem][slow]") {
    // Fixed mesh; reference at dt/8. Pure time-stepping error.
    const int n = 17;
    const double T = 0.5;
    const Mesh mesh = generate_mesh({ObstacleKind::None, 0.5, 0.5, 0.15, n});
    auto solve_final = [&](double dt) {
        const PdeConfig cfg = manufactured_config(T, dt);
        const Trajectory t = solve_trajectory(mesh, cfg);
        return std::vector<double>(t.snapshots.row(t.n_snapshots() - 1),
                                   t.snapshots.row(t.n_snapshots() - 1) + t.n_nodes());
    };
    const auto ref = solve_final(0.00625);
    auto err = [&](double dt) {
        const auto u = solve_final(dt);
        double s = 0.0;
        for (std::size_t i = 0; i < u.size(); ++i) s += (u[i] - ref[i]) * (u[i] - ref[i]);
        return std::sqrt(s);
    };
    const double e1 = err(0.1), e2 = err(0.05);
    const double order = std::log2(e1 / e2);
    INFO("e(0.1) " << e1 << " e(0.05) " << e2 << " order " << order);
    REQUIRE(order >= 0.8);
}

TEST_CASE("convection-dominated setups are refused", "[fem]") {
    const Mesh mesh = generate_mesh({ObstacleKind::None, 0.5, 0.5, 0.15, 9});
    PdeConfig cfg;
    cfg.diffusivity = 1e-4; // Peclet far above 2 at this resolution
    cfg.T = 0.1;
    REQUIRE_THROWS_AS(solve_trajectory(mesh, cfg), PecletExceeded);
}

TEST_CASE("step count rounds the horizon over the time step", "[fem]") {
    PdeConfig cfg;
    cfg.T = 2.0;
    cfg.dt = 0.02;
    REQUIRE(cfg.n_steps() == 100);
    cfg.T = 1.0;
    cfg.dt = 0.3; // T/dt = 3.33 rounds to 3
    REQUIRE(cfg.n_steps() == 3);
    cfg.dt = -0.1;
    REQUIRE_THROWS_AS(cfg.n_steps(), ConfigError);
}
