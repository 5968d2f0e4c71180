#pragma once

#include "superenv/environment.hpp"
#include "superenv/kernels.hpp"
#include "superenv/particles.hpp"
#include "superenv/spde.hpp"
#include "superenv/stats.hpp"
#include "superenv/test_function.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace superenv {

enum class Mode { LLN, CLT, PROP, MOMENTS };
std::string to_string(Mode m);
Mode mode_from_string(const std::string& s);

// Replicas form an n_fields x n_clouds table: clouds on one field share its seed (quenched),
// fields are drawn afresh (annealed = pooled over the table).
struct ExperimentConfig {
    Mode mode = Mode::LLN;
    std::vector<double> horizons{4.0, 8.0, 16.0};
    std::size_t n_fields = 1;
    std::size_t n_clouds = 200;
    GridSpec grid{3, 4.0, 16};
    CorrelationKernel kernel;
    TestFunction phi = make_test_function(TestKind::Bump, 3, 1.0);
    int n = 50;   // particle intensity; also 1/dt
    Boundary boundary = Boundary::Reflect;
    FieldOptions field;
    SolverOptions solver;
    std::size_t max_particles = 20'000'000;
    std::uint64_t master_seed = 1;
    // MOMENTS
    int moment_order = 2;
    std::size_t oracle_paths = 20000;
    double oracle_dt = 0.01;
};

void validate(const ExperimentConfig& c);

struct HorizonRow {
    std::string scope;   // annealed | quenched
    double T = 0.0;
    std::size_t n = 0;
    double mean = 0.0;
    double std_err = 0.0;
    double ci_lo = 0.0, ci_hi = 0.0;   // 99% normal interval
    double target = 0.0;
    double variance = 0.0;
    double abs_dev = 0.0;              // mean |sample - target|
};

struct KSRow {
    std::string label;
    double T = 0.0;
    KSResult ks;
};

struct SampleRow {
    std::size_t field;
    std::size_t cloud;
    double T;
    double value;
};

struct StatReport {
    Mode mode = Mode::LLN;
    std::vector<HorizonRow> rows;
    std::vector<KSRow> ks;
    std::map<std::string, double> metrics;
    std::vector<std::string> notes;
    std::vector<SampleRow> samples;
    std::size_t failed_replicas = 0;
    bool inconclusive = false;

    double metric(const std::string& key) const;
    std::string summary_csv() const;
    std::string samples_csv() const;
};

HorizonRow summarize(const std::string& scope, double T, const std::vector<double>& v, double target);

StatReport run_lln(const ExperimentConfig& config);
StatReport run_clt(const ExperimentConfig& config);
StatReport run_prop(const ExperimentConfig& config);
StatReport moment_crosscheck(const ExperimentConfig& config);

} // namespace superenv
