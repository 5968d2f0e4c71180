#include "doctest.h"

#include "superenv/environment.hpp"

#include <cstdio>
#include <filesystem>

using namespace superenv;

TEST_SUITE("environment")
{
    TEST_CASE("zero kernel")
    {
        GridSpec g{3, 2.0, 4};
        auto f = build_factor(g, make_kernel(KernelKind::Zero, 0.0, 3.0, 3));
        CHECK(f->backend == FactorBackend::Zero);
        EnvironmentField w = build_field(g, make_kernel(KernelKind::Zero, 0.0, 3.0, 3), 5, 0.1);
        CHECK(sample_increment(w).isZero(0.0));
        CHECK(sample_increment(w).size() == 64);
    }

    TEST_CASE("one cell factor is the standard deviation")
    {
        GridSpec g{3, 1.0, 1};
        auto f = build_factor(g, make_kernel(KernelKind::CauchyPD, 0.25, 3.0, 3), {BackendChoice::Dense});
        REQUIRE(f->backend == FactorBackend::Dense);
        CHECK(f->lower.rows() == 1);
        CHECK(f->lower(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
    }

    TEST_CASE("dense factor on 16^3 needs no large jitter")
    {
        GridSpec g{3, 4.0, 16};
        auto k = make_kernel(KernelKind::CauchyPD, 0.05, 3.0, 3);
        auto f = build_factor(g, k, {BackendChoice::Dense});
        CHECK(f->backend == FactorBackend::Dense);
        CHECK(f->jitter <= 1e-9 * k.epsilon);
        CHECK_FALSE(f->clipped);
    }

    TEST_CASE("reconstruction and separable backends")
    {
        GridSpec g{3, 2.0, 6};
        auto k = make_kernel(KernelKind::CauchyPD, 0.1, 3.0, 3);
        Eigen::MatrixXd G = gram_matrix(k, g.centers());
        auto dense = build_factor(g, k, {BackendChoice::Dense});
        CHECK((reconstructed_gram(*dense) - G).norm() / G.norm() < 1e-8);
        auto sep = build_factor(g, k, {BackendChoice::Separable});
        REQUIRE(sep->backend == FactorBackend::Separable);
        CHECK((reconstructed_gram(*sep) - G).cwiseAbs().maxCoeff() / k.epsilon < 1e-6);

        auto pk = make_kernel(KernelKind::ProductCauchy, 0.1, 3.0, 3);
        auto psep = build_factor(g, pk, {BackendChoice::Separable});
        Eigen::MatrixXd PG = gram_matrix(pk, g.centers());
        CHECK((reconstructed_gram(*psep) - PG).norm() / PG.norm() < 1e-10);

        // quad_form agrees with v^T G v
        Eigen::VectorXd v = Eigen::VectorXd::LinSpaced(static_cast<Eigen::Index>(g.n_cells()), -1.0, 2.0);
        CHECK(quad_form(*sep, v) == doctest::Approx(v.dot(G * v)).epsilon(1e-6));
    }

    TEST_CASE("PowerCapped: clipping is bounded or refused")
    {
        auto k = make_kernel(KernelKind::PowerCapped, 0.1, 3.0, 3);
        // coarse cells: nearly diagonal Gram matrix
        auto f = build_factor(GridSpec{3, 8.0, 4}, k, {BackendChoice::Dense});
        CHECK(f->distortion <= 0.01);
        // fine cells: the capped plateau is far from positive definite
        CHECK_THROWS_WITH_AS(build_factor(GridSpec{3, 2.0, 6}, k, {BackendChoice::Dense}),
                             doctest::Contains("distortion"), std::runtime_error);
    }

    TEST_CASE("increment covariance")
    {
        GridSpec g{3, 1.5, 3};
        auto k = make_kernel(KernelKind::CauchyPD, 0.4, 3.0, 3);
        const double dt = 0.05;
        EnvironmentField w = build_field(g, k, 99, dt, {BackendChoice::Dense});
        const std::size_t n = 100000;
        const std::vector<std::pair<int, int>> pairs{{0, 0}, {0, 1}, {0, 13}, {4, 26}};
        std::vector<double> s(pairs.size()), s2(pairs.size());
        for (std::size_t i = 0; i < n; ++i) {
            Eigen::VectorXd v = w.compute_increment(i);
            for (std::size_t p = 0; p < pairs.size(); ++p) {
                double z = v[pairs[p].first] * v[pairs[p].second];
                s[p] += z;
                s2[p] += z * z;
            }
        }
        for (std::size_t p = 0; p < pairs.size(); ++p) {
            double m = s[p] / n, var = s2[p] / n - m * m;
            double se = std::sqrt(var / n);
            double target = evaluate(k, g.center(pairs[p].first), g.center(pairs[p].second)) * dt;
            CHECK(std::abs(m - target) <= 3.0 * se);
        }
    }

    TEST_CASE("increments are pure functions of (seed, index)")
    {
        GridSpec g{3, 2.0, 4};
        auto k = make_kernel(KernelKind::CauchyPD, 0.1, 3.0, 3);
        EnvironmentField a = build_field(g, k, 7, 0.1), b = build_field(g, k, 7, 0.1);
        CHECK(a.compute_increment(12) == b.compute_increment(12));
        CHECK(a.compute_increment(3) != a.compute_increment(4));
        CHECK(sample_increment(a) == b.compute_increment(0));
        CHECK(sample_increment(a) == b.compute_increment(1));
        CHECK(a.reseeded(8).compute_increment(0) != b.compute_increment(0));
    }

    TEST_CASE("value_at")
    {
        GridSpec g{3, 2.0, 4};
        Eigen::VectorXd inc = Eigen::VectorXd::LinSpaced(64, 0.0, 63.0);
        for (std::size_t c : {0ul, 17ul, 63ul})
            CHECK(value_at(inc, g, g.center(c)) == inc[static_cast<Eigen::Index>(c)]);
        Eigen::Vector3d out(2.5, 0.0, 0.0);
        CHECK(value_at(inc, g, out) == 0.0);
        Eigen::Vector3d p(0.1, 0.2, 0.3), q(0.9, 0.6, 0.05);
        CHECK(value_at(inc, g, p) == value_at(inc, g, q));
    }

    TEST_CASE("history file round trip")
    {
        std::vector<Eigen::VectorXd> steps{Eigen::VectorXd::LinSpaced(8, -1, 1), Eigen::VectorXd::Constant(8, 0.1)};
        auto path = (std::filesystem::temp_directory_path() / "superenv_history_test.bin").string();
        write_history(path, steps);
        auto back = read_history(path, 8);
        REQUIRE(back.size() == 2);
        CHECK(back[0] == steps[0]);
        CHECK(back[1] == steps[1]);
        CHECK(std::filesystem::file_size(path) == 2 * 8 * sizeof(double));
        std::filesystem::remove(path);
    }
}
