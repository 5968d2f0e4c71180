#include "doctest.h"

#include "superenv/particles.hpp"
#include "superenv/stats.hpp"

using namespace superenv;

namespace {

ParticleCloud frozen_cloud(const GridSpec& g, int n, const std::vector<double>& pos, std::uint64_t seed)
{
    ParticleCloud c;
    c.dim = g.dim;
    c.grid = g;
    c.n = n;
    c.mass = 1.0 / n;
    c.positions = pos;
    c.rng = make_engine(seed);
    return c;
}

} // namespace

TEST_SUITE("particles")
{
    TEST_CASE("Poisson initial cloud")
    {
        GridSpec g{3, 1.0, 4};
        auto phi = make_test_function(TestKind::Bump, 3, 0.8);
        const double target = box_mass(phi, g);
        RunningStats count, mass1, massphi;
        for (std::uint64_t s = 0; s < 1000; ++s) {
            ParticleCloud c = init_cloud(100, g, s);
            count.push(static_cast<double>(c.count()));
            mass1.push(c.total_mass());
            massphi.push(measure(c, phi));
            for (double x : c.positions)
                REQUIRE(std::abs(x) <= 1.0);
        }
        CHECK(std::abs(count.mean() - 800.0) <= 3.0 * count.std_error());
        CHECK(count.variance() == doctest::Approx(800.0).epsilon(0.15));
        CHECK(std::abs(mass1.mean() - 8.0) <= 3.0 * mass1.std_error());
        CHECK(std::abs(massphi.mean() - target) <= 3.0 * massphi.std_error());
        // X_0(1) centred on (2L)^d regardless of n
        RunningStats m10;
        for (std::uint64_t s = 0; s < 1000; ++s)
            m10.push(init_cloud(10, g, 5000 + s).total_mass());
        CHECK(std::abs(m10.mean() - 8.0) <= 3.0 * m10.std_error());
    }

    TEST_CASE("cap on the initial cloud")
    {
        GridSpec g{3, 4.0, 8};
        CHECK_THROWS_AS(init_cloud(50, g, 1, Boundary::Reflect, 10), CapExceeded);
    }

    TEST_CASE("critical branching without environment")
    {
        GridSpec g{3, 2.0, 4};
        const int n = 20;
        std::vector<double> pos;
        for (int i = 0; i < 50; ++i)
            for (int a = 0; a < 3; ++a)
                pos.push_back(-1.5 + 0.06 * i + 0.1 * a);
        Eigen::VectorXd zero = Eigen::VectorXd::Zero(64);
        RunningStats dx;
        for (std::uint64_t r = 0; r < 20000; ++r) {
            ParticleCloud c = frozen_cloud(g, n, pos, r);
            double before = c.total_mass();
            step(c, zero);
            dx.push(c.total_mass() - before);
        }
        const double mass = 1.0 / n;
        // E[dX(1)] = 0, Var = mass^2 count = dt X(1)
        CHECK(std::abs(dx.mean()) <= 3.0 * dx.std_error());
        CHECK(dx.variance() == doctest::Approx(mass * mass * 50).epsilon(0.05));
    }

    TEST_CASE("shared tilt correlates offspring in one cell")
    {
        GridSpec g{3, 2.0, 1};
        const int n = 10;
        const double dt = 0.1, eps = 0.5;
        auto k = make_kernel(KernelKind::CauchyPD, eps, 3.0, 3);
        EnvironmentField w = build_field(g, k, 31, dt);
        std::vector<double> pos{0.1, 0.0, 0.0, -0.2, 0.3, 0.0};
        RunningStats dx, th2;
        for (std::uint64_t r = 0; r < 100000; ++r) {
            ParticleCloud c = frozen_cloud(g, n, pos, 1000 + r);
            Eigen::VectorXd inc = w.compute_increment(r);
            th2.push(inc[0] * inc[0]);
            step(c, inc);
            dx.push(c.total_mass() - 2.0 / n);
        }
        const double m2 = 1.0 / (n * n);
        // Var(dX1 + dX2) = 2 m^2 + 2 Cov, Cov = m^2 E[theta^2]
        double cov = 0.5 * (dx.variance() - 2.0 * m2);
        double se = 0.5 * dx.variance() * std::sqrt(2.0 / 100000.0);
        CHECK(std::abs(cov - m2 * eps * dt) <= 3.0 * se);
        CHECK(std::abs(th2.mean() - eps * dt) <= 3.0 * th2.std_error());
    }

    TEST_CASE("measure")
    {
        GridSpec g{3, 2.0, 4};
        auto phi = make_test_function(TestKind::Bump, 3, 1.0, 2.5);
        ParticleCloud empty = frozen_cloud(g, 10, {}, 1);
        CHECK(measure(empty, phi) == 0.0);
        ParticleCloud one = frozen_cloud(g, 10, {0.0, 0.0, 0.0}, 1);
        CHECK(measure(one, phi) == doctest::Approx(0.1 * 2.5));
        std::vector<double> pos;
        Engine e = make_engine(4);
        for (int i = 0; i < 30; ++i)
            pos.push_back(2.0 * uniform01(e) - 1.0);
        ParticleCloud ten = frozen_cloud(g, 10, pos, 1);
        double brute = 0.0;
        for (int p = 0; p < 10; ++p) {
            double r2 = pos[3 * p] * pos[3 * p] + pos[3 * p + 1] * pos[3 * p + 1] + pos[3 * p + 2] * pos[3 * p + 2];
            brute += r2 < 1.0 ? 2.5 * (1.0 - r2) * (1.0 - r2) : 0.0;
        }
        CHECK(measure(ten, phi) == doctest::Approx(0.1 * brute).epsilon(1e-14));
    }

    TEST_CASE("occupation is a left Riemann sum and nondecreasing")
    {
        GridSpec g{3, 2.0, 4};
        const int n = 10;
        auto k = make_kernel(KernelKind::CauchyPD, 0.2, 3.0, 3);
        EnvironmentField w = build_field(g, k, 3, 1.0 / n, {BackendChoice::Auto, 4096, 2'000'000, 0.4, 1e-13,
                                                           HistoryPolicy::KeepAll});
        auto phi = make_test_function(TestKind::Bump, 3, 1.5);
        ParticleCloud c = init_cloud(n, g, 11);
        std::vector<double> times;
        for (int i = 0; i < 20; ++i)
            times.push_back(0.1 * i);
        OccupationRun run = run_occupation(c, w, 2.0, {phi}, times);
        REQUIRE(run.snapshots.size() == 21);
        CHECK(run.snapshots[0].Y[0] == 0.0);
        for (std::size_t i = 1; i < run.snapshots.size(); ++i) {
            const auto& a = run.snapshots[i - 1];
            const auto& b = run.snapshots[i];
            CHECK(b.Y[0] - a.Y[0] == doctest::Approx(0.1 * a.X[0]).epsilon(1e-12));
            CHECK(b.Y[0] >= a.Y[0]);
        }
        CHECK(run.clip_fraction == 0.0);
    }

    TEST_CASE("annealed occupation mean under reflection")
    {
        GridSpec g{3, 2.0, 4};
        const int n = 20;
        const double T = 1.0;
        auto k = make_kernel(KernelKind::CauchyPD, 0.1, 3.0, 3);
        auto f = build_factor(g, k);
        auto phi = make_test_function(TestKind::Bump, 3, 1.2);
        RunningStats y;
        for (std::uint64_t r = 0; r < 400; ++r) {
            EnvironmentField w(g, k, f, 100 + r, 1.0 / n, HistoryPolicy::KeepLast);
            ParticleCloud c = init_cloud(n, g, 900 + r);
            y.push(run_occupation(c, w, T, {phi}).snapshots.back().Y[0]);
        }
        CHECK(std::abs(y.mean() - T * box_mass(phi, g)) <= 3.0 * y.std_error());
    }

    TEST_CASE("population cap during a step")
    {
        GridSpec g{3, 1.0, 2};
        ParticleCloud c = init_cloud(10, g, 2, Boundary::Reflect, 100);
        REQUIRE(c.count() > 50);
        Eigen::VectorXd ones = Eigen::VectorXd::Ones(8);   // theta = 1: every particle splits
        CHECK_THROWS_AS(step(c, ones), CapExceeded);
    }

    TEST_CASE("free boundary switches the environment off outside")
    {
        GridSpec g{3, 1.0, 1};
        Eigen::VectorXd inc = Eigen::VectorXd::Constant(1, 1.0);   // theta = 1 inside: always split
        ParticleCloud c = frozen_cloud(g, 100, {0.0, 0.0, 0.0}, 3);
        c.boundary = Boundary::Free;
        step(c, inc);
        CHECK(c.count() == 2);
        ParticleCloud far = frozen_cloud(g, 100, {5.0, 5.0, 5.0}, 3);
        far.boundary = Boundary::Free;
        RunningStats kids;
        for (int r = 0; r < 4000; ++r) {
            ParticleCloud x = far;
            x.rng = make_engine(r);
            step(x, inc);
            kids.push(static_cast<double>(x.count()));
        }
        CHECK(std::abs(kids.mean() - 1.0) <= 3.0 * kids.std_error());
    }
}
