#pragma once

#include "superenv/environment.hpp"
#include "superenv/rng.hpp"
#include "superenv/test_function.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace superenv {

// Reflect: particles fold back into the box (mass-conserving, matches the zero-flux solver).
// Free: particles leave the box and keep diffusing with the environment switched off.
enum class Boundary { Reflect, Free };

std::string to_string(Boundary b);
Boundary boundary_from_string(const std::string& s);

struct ParticleCloud {
    int dim = 3;
    GridSpec grid;
    Boundary boundary = Boundary::Reflect;
    std::vector<double> positions;   // particle-major, dim entries each
    double mass = 0.0;               // = dt = 1/n
    double time = 0.0;
    std::size_t steps = 0;
    int n = 0;
    std::size_t max_particles = 50'000'000;
    Engine rng;
    NormalSource normal;
    std::size_t clipped_draws = 0;   // |dW| > 1 events
    std::size_t tilt_draws = 0;

    std::size_t count() const { return positions.size() / static_cast<std::size_t>(dim); }
    double dt() const { return 1.0 / n; }
    double total_mass() const { return mass * static_cast<double>(count()); }
};

class CapExceeded : public std::runtime_error {
public:
    CapExceeded(const std::string& what, double partial_Y) : std::runtime_error(what), partial(partial_Y) {}
    double partial;
};

// Poisson(n (2L)^d) particles, uniform on the box, mass 1/n.
ParticleCloud init_cloud(int n, const GridSpec& grid, std::uint64_t seed, Boundary boundary = Boundary::Reflect,
                         std::size_t max_particles = 50'000'000);

// Move (Brownian step of variance dt per axis), then branch: two offspring with probability (1+theta)/2,
// none otherwise, theta = clip(dW(cell), -1, 1) and 0 outside the box.
void step(ParticleCloud& cloud, const Eigen::VectorXd& field_increment);

double measure(const ParticleCloud& cloud, const TestFunction& phi);

struct OccupationAccumulator {
    std::vector<TestFunction> test_functions;
    std::vector<double> partial_sums;   // left-Riemann sums of X_s(phi_j) dt
};

struct Snapshot {
    double t = 0.0;
    std::vector<double> X;   // X_t(phi_j)
    std::vector<double> Y;   // Y_t(phi_j)
    double total_mass = 0.0;
};

struct OccupationRun {
    OccupationAccumulator acc;
    std::vector<Snapshot> snapshots;
    std::size_t max_count = 0;
    double clip_fraction = 0.0;
};

// Runs the cloud to horizon T, reading increment k of the field at step k. Snapshots are taken at the
// requested times (rounded to the step grid) and always at T.
OccupationRun run_occupation(ParticleCloud& cloud, const EnvironmentField& field, double T,
                             const std::vector<TestFunction>& phis, const std::vector<double>& snapshot_times = {});

struct OccupationRow {
    std::size_t replica;
    double t;
    std::size_t phi_id;
    double X;
    double Y;
};

std::string occupation_csv(const std::vector<OccupationRow>& rows);

} // namespace superenv
