#include "superenv/particles.hpp"

#include "superenv/csv.hpp"

#include <cmath>
#include <stdexcept>

namespace superenv {

std::string to_string(Boundary b) { return b == Boundary::Reflect ? "Reflect" : "Free"; }

Boundary boundary_from_string(const std::string& s)
{
    if (s == "Reflect") return Boundary::Reflect;
    if (s == "Free") return Boundary::Free;
    throw std::invalid_argument("unknown boundary '" + s + "'");
}

ParticleCloud init_cloud(int n, const GridSpec& grid, std::uint64_t seed, Boundary boundary, std::size_t max_particles)
{
    if (n < 1)
        throw std::invalid_argument("init_cloud: n must be >= 1");
    ParticleCloud c;
    c.dim = grid.dim;
    c.grid = grid;
    c.boundary = boundary;
    c.n = n;
    c.mass = 1.0 / n;
    c.max_particles = max_particles;
    c.rng = make_engine(derive_seed(seed, 0xC10D));
    const double expected = n * grid.box_volume();
    if (expected > static_cast<double>(max_particles))
        throw CapExceeded("init_cloud: expected particle count " + std::to_string(expected) +
                              " exceeds caps.max_particles " + std::to_string(max_particles),
                          0.0);
    std::poisson_distribution<long> pois(expected);
    long count = pois(c.rng);
    if (static_cast<std::size_t>(count) > max_particles)
        throw CapExceeded("init_cloud: sampled particle count exceeds caps.max_particles", 0.0);
    c.positions.resize(static_cast<std::size_t>(count) * grid.dim);
    const double L = grid.half_width;
    for (auto& x : c.positions)
        x = -L + 2.0 * L * uniform01(c.rng);
    return c;
}

void step(ParticleCloud& cloud, const Eigen::VectorXd& inc)
{
    const int d = cloud.dim;
    const double sdt = std::sqrt(cloud.dt());
    const double L = cloud.grid.half_width;
    const bool reflect = cloud.boundary == Boundary::Reflect;
    const std::size_t count = cloud.count();
    std::vector<double> next;
    next.reserve(2 * cloud.positions.size() + 16);
    double x[16];
    if (d > 16)
        throw std::invalid_argument("particles: dim > 16 unsupported");
    for (std::size_t p = 0; p < count; ++p) {
        const double* src = cloud.positions.data() + p * d;
        for (int a = 0; a < d; ++a) {
            double v = src[a] + sdt * cloud.normal(cloud.rng);
            if (reflect) {
                while (v > L || v < -L)
                    v = v > L ? 2.0 * L - v : -2.0 * L - v;
            }
            x[a] = v;
        }
        long c = cloud.grid.cell_of(x);
        double theta = 0.0;
        if (c >= 0) {
            theta = inc[c];
            ++cloud.tilt_draws;
            if (theta > 1.0 || theta < -1.0) {
                ++cloud.clipped_draws;
                theta = theta > 1.0 ? 1.0 : -1.0;
            }
        }
        if (uniform01(cloud.rng) < 0.5 * (1.0 + theta)) {
            next.insert(next.end(), x, x + d);
            next.insert(next.end(), x, x + d);
        }
    }
    cloud.positions.swap(next);
    ++cloud.steps;
    cloud.time = static_cast<double>(cloud.steps) / cloud.n;
    if (cloud.count() > cloud.max_particles)
        throw CapExceeded("particle population " + std::to_string(cloud.count()) + " exceeds caps.max_particles " +
                              std::to_string(cloud.max_particles),
                          0.0);
}

double measure(const ParticleCloud& cloud, const TestFunction& phi)
{
    double s = 0.0;
    const std::size_t count = cloud.count();
    for (std::size_t p = 0; p < count; ++p)
        s += phi(cloud.positions.data() + p * cloud.dim);
    return cloud.mass * s;
}

OccupationRun run_occupation(ParticleCloud& cloud, const EnvironmentField& field, double T,
                             const std::vector<TestFunction>& phis, const std::vector<double>& snapshot_times)
{
    if (std::abs(field.dt() * cloud.n - 1.0) > 1e-12)
        throw std::invalid_argument("run_occupation: field step must equal 1/n");
    if (!(cloud.grid == field.grid()))
        throw std::invalid_argument("run_occupation: cloud and field grids differ");
    const std::size_t N = static_cast<std::size_t>(std::llround(T * cloud.n));
    std::vector<std::size_t> snap_steps;
    for (double t : snapshot_times)
        snap_steps.push_back(static_cast<std::size_t>(std::llround(t * cloud.n)));
    OccupationRun run;
    run.acc.test_functions = phis;
    run.acc.partial_sums.assign(phis.size(), 0.0);
    const double dt = cloud.dt();
    auto snapshot = [&](const std::vector<double>& X) {
        Snapshot s;
        s.t = cloud.time;
        s.X = X;
        s.Y = run.acc.partial_sums;
        s.total_mass = cloud.total_mass();
        run.snapshots.push_back(std::move(s));
    };
    std::vector<double> X(phis.size());
    const std::size_t k0 = cloud.steps;
    for (std::size_t k = 0; k <= N; ++k) {
        for (std::size_t j = 0; j < phis.size(); ++j)
            X[j] = measure(cloud, phis[j]);
        bool want = k == N;
        for (std::size_t s : snap_steps)
            want = want || (s == k && k != N);
        if (want)
            snapshot(X);
        if (k == N)
            break;
        for (std::size_t j = 0; j < phis.size(); ++j)
            run.acc.partial_sums[j] += dt * X[j];
        try {
            step(cloud, field.increment(k0 + k));
        } catch (CapExceeded& e) {
            throw CapExceeded(e.what(), phis.empty() ? 0.0 : run.acc.partial_sums[0]);
        }
        run.max_count = std::max(run.max_count, cloud.count());
    }
    run.clip_fraction = cloud.tilt_draws ? static_cast<double>(cloud.clipped_draws) / cloud.tilt_draws : 0.0;
    return run;
}

std::string occupation_csv(const std::vector<OccupationRow>& rows)
{
    CsvWriter w({"replica", "t", "phi_id", "X_t_phi", "Y_t_phi"});
    for (const auto& r : rows)
        w.row(r.replica, r.t, r.phi_id, r.X, r.Y);
    return w.str();
}

} // namespace superenv
