#include "doctest.h"

#include "superenv/kernels.hpp"

#include <boost/math/quadrature/exp_sinh.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <Eigen/Eigenvalues>

#include <numbers>

using namespace superenv;
using std::numbers::pi;

TEST_SUITE("kernels")
{
    TEST_CASE("pointwise values")
    {
        Eigen::Vector3d x(0, 0, 0), y(2, 0, 0);
        auto pc = make_kernel(KernelKind::PowerCapped, 0.1, 3.0, 3);
        CHECK(evaluate(pc, x, y) == doctest::Approx(0.0125).epsilon(1e-15));
        CHECK(evaluate(pc, x, x) == doctest::Approx(0.1));
        auto cp = make_kernel(KernelKind::CauchyPD, 0.3, 3.0, 3);
        CHECK(evaluate(cp, y, y) == doctest::Approx(0.3));
        CHECK(evaluate(cp, x, y) == doctest::Approx(0.3 * std::pow(5.0, -1.5)));
        auto z = make_kernel(KernelKind::Zero, 0.0, 3.0, 3);
        CHECK(evaluate(z, x, y) == 0.0);
        // product form is dominated by the radial bound
        auto pr = make_kernel(KernelKind::ProductCauchy, 0.2, 3.0, 3);
        Eigen::Vector3d w(1.0, -0.5, 2.0);
        CHECK(evaluate(pr, x, w) <= 0.2 * std::pow(1.0 + w.squaredNorm(), -1.5) + 1e-16);
    }

    TEST_CASE("validation")
    {
        CHECK_THROWS_AS(validate(make_kernel(KernelKind::CauchyPD, -0.1, 3.0, 3)), std::invalid_argument);
        CHECK_THROWS_AS(validate(make_kernel(KernelKind::CauchyPD, 0.1, 2.0, 3)), std::invalid_argument);
        CHECK_THROWS_AS(validate(make_kernel(KernelKind::CauchyPD, 0.1, 3.0, 2)), std::invalid_argument);
        CorrelationKernel bad{KernelKind::Custom, 0.1, 3.0, 3, {}};
        CHECK_THROWS_AS(validate(bad), std::invalid_argument);
        bad.custom = [](double) { return 0.2; };   // exceeds eps everywhere
        CHECK_THROWS_AS(validate(bad), std::invalid_argument);
    }

    TEST_CASE("gram matrices")
    {
        Eigen::MatrixXd pts(3, 3);
        pts << 0, 1, 2, 0, 0, 1, 0, 3, 0;
        CHECK(gram_matrix(make_kernel(KernelKind::Zero, 0.0, 3.0, 3), pts).isZero(0.0));
        Eigen::MatrixXd one = gram_matrix(make_kernel(KernelKind::CauchyPD, 0.5, 3.0, 3), pts.col(0));
        REQUIRE(one.rows() == 1);
        CHECK(one(0, 0) == 0.5);

        Eigen::MatrixXd line = Eigen::MatrixXd::Zero(3, 4);
        for (int i = 0; i < 4; ++i)
            line(0, i) = 0.7 * i;
        Eigen::MatrixXd G = gram_matrix(make_kernel(KernelKind::CauchyPD, 1.0, 3.0, 3), line);
        CHECK((G - G.transpose()).norm() == 0.0);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(G);
        CHECK(es.eigenvalues().minCoeff() >= -1e-12);
    }

    TEST_CASE("green integral")
    {
        CHECK(green_integral(3.0, 3) == doctest::Approx(6.0 * pi).epsilon(1e-8));
        // 4 pi (1/2 + 1/(alpha - 2)); the tail term vanishes as alpha grows
        CHECK(green_integral(50.0, 3) == doctest::Approx(4.0 * pi * (0.5 + 1.0 / 48.0)).epsilon(1e-8));
        CHECK(green_integral(5000.0, 3) == doctest::Approx(2.0 * pi).epsilon(1e-3));
        // d = 5, alpha = 3: |S^4| (int_0^1 r dr + int_1^inf r^{-2} dr) = (8 pi^2 / 3) * 3/2
        CHECK(green_integral(3.0, 5) == doctest::Approx(4.0 * pi * pi).epsilon(1e-8));
        CHECK(sphere_area(3) == doctest::Approx(4.0 * pi));
        CHECK(green_constant(3) == doctest::Approx(1.0 / (4.0 * pi)));
    }

    TEST_CASE("epsilon threshold")
    {
        // brute force: int_0^inf E_0[g_bar(beta_s)] ds with beta of per-axis variance 2s. The time integral
        // of the heat kernel is done numerically at r = 1 and carried to other radii by s -> r^2 s.
        boost::math::quadrature::exp_sinh<double> es;
        const double unit = es.integrate([](double s) { return std::pow(4.0 * pi * s, -1.5) * std::exp(-1.0 / (4.0 * s)); });
        auto time_integral = [unit](double r) { return unit / r; };
        auto radial = [&](double r) {
            double gbar = r <= 1.0 ? 1.0 : std::pow(r, -3.0);
            return 4.0 * pi * r * r * gbar * time_integral(r);
        };
        using GK = boost::math::quadrature::gauss_kronrod<double, 31>;
        double head = GK::integrate(radial, 0.0, 1.0, 12, 1e-10);
        double tail = GK::integrate([&](double u) { return radial(1.0 / u) / (u * u); }, 0.0, 1.0, 12, 1e-10);
        double oracle = 1.0 / (2.0 * (head + tail));
        CHECK(oracle == doctest::Approx(1.0 / 3.0).epsilon(1e-6));
        CHECK(epsilon_threshold(1.0, 3.0, 3) == doctest::Approx(oracle).epsilon(1e-6));
        double q = 21.0;
        CHECK(epsilon_threshold(2 * q, 3.0, 3) == doctest::Approx(epsilon_threshold(q, 3.0, 3) / 2).epsilon(1e-12));
        CHECK(epsilon_threshold(q, 3.0, 3) == doctest::Approx(0.015873015873).epsilon(1e-8));
        CHECK(epsilon_threshold(5.0, 4.0, 5) > 0.0);
    }
}
