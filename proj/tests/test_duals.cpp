#include "doctest.h"

#include "superenv/duals.hpp"
#include "superenv/numerics.hpp"

#include <numbers>

using namespace superenv;
using std::numbers::pi;

namespace {

Eigen::VectorXd vec(std::initializer_list<double> v)
{
    Eigen::VectorXd x(static_cast<Eigen::Index>(v.size()));
    int i = 0;
    for (double a : v)
        x[i++] = a;
    return x;
}

const CorrelationKernel zero3 = make_kernel(KernelKind::Zero, 0.0, 3.0, 3);

} // namespace

TEST_SUITE("duals")
{
    TEST_CASE("heat kernel")
    {
        CHECK(heat_p(1.0, vec({0.3}), vec({0.3})) == doctest::Approx(0.3989423).epsilon(1e-7));
        CHECK_THROWS_AS(heat_p(0.0, vec({0.0}), vec({0.0})), std::domain_error);
        // normalization and Chapman-Kolmogorov in d = 1
        double mass = integrate([](double y) { return heat_p_radial(0.7, y - 0.4, 1); }, -30.0, 30.0, 1e-12);
        CHECK(mass == doctest::Approx(1.0).epsilon(1e-8));
        double ck = integrate([](double z) { return heat_p_radial(0.3, z - 0.2, 1) * heat_p_radial(0.9, 1.1 - z, 1); },
                              -30.0, 30.0, 1e-12);
        CHECK(ck == doctest::Approx(heat_p_radial(1.2, 0.9, 1)).epsilon(1e-8));
        // the d-dimensional kernel is the product of 1-d kernels
        CHECK(heat_p(0.5, vec({0.1, 0.2, -0.3}), vec({0.0, 0.0, 0.0})) ==
              doctest::Approx(heat_p_radial(0.5, 0.1, 1) * heat_p_radial(0.5, 0.2, 1) * heat_p_radial(0.5, 0.3, 1)));
    }

    TEST_CASE("P_t of a truncated Gaussian")
    {
        auto phi = make_test_function(TestKind::TruncGauss, 3, 1.2, 2.0);
        const double s2 = phi.gauss_sigma() * phi.gauss_sigma();
        for (double t : {0.05, 0.5, 2.0})
            for (double r : {0.0, 0.7, 2.5}) {
                // Gaussian convolution; the truncation constant exp(-18) and the cut tail are below 1e-7
                double closed = 2.0 * std::pow(s2 / (s2 + t), 1.5) * std::exp(-r * r / (2.0 * (s2 + t)));
                CHECK(std::abs(apply_P(phi, t, vec({r, 0.0, 0.0})) - closed) <= 1e-5);
            }
        // far away: below the amplitude times the Gaussian tail of the support
        double far = apply_P(phi, 0.5, vec({8.0, 0.0, 0.0}));
        CHECK(far >= 0.0);
        CHECK(far <= 2.0 * std::exp(-(8.0 - 1.2) * (8.0 - 1.2) / 1.0));
    }

    TEST_CASE("apply_Q: linearity, small t, table")
    {
        auto phi = make_test_function(TestKind::Bump, 3, 1.0);
        auto phi3 = make_test_function(TestKind::Bump, 3, 1.0, 3.0);
        Eigen::VectorXd x = vec({0.3, -0.2, 0.5});
        CHECK(apply_Q(phi3, 1.3, x) == doctest::Approx(3.0 * apply_Q(phi, 1.3, x)).epsilon(1e-12));
        CHECK(apply_Q(phi, 1e-3, x) == doctest::Approx(1e-3 * phi(x)).epsilon(2e-3));
        // Q_t is the time integral of P_s
        double viaP = integrate([&](double s) { return s == 0.0 ? phi(x) : apply_P(phi, s, x); }, 0.0, 1.3, 1e-9);
        CHECK(apply_Q(phi, 1.3, x) == doctest::Approx(viaP).epsilon(1e-7));
        QTable q(phi, 2.0);
        for (double t : {0.05, 0.9, 2.0})
            for (double r : {0.0, 0.6, 1.7, 4.0})
                CHECK(std::abs(q(t, r) - apply_Q(phi, t, vec({r, 0.0, 0.0}))) <= 1e-5 * apply_Q(phi, t, vec({0, 0, 0})));
        CHECK_THROWS(q(2.5, 0.0));
    }

    TEST_CASE("dual_V with g = 0 factorizes; symmetry")
    {
        auto phi = make_test_function(TestKind::Bump, 3, 1.0);
        auto psi = make_test_function(TestKind::TruncGauss, 3, 1.2);
        Eigen::VectorXd x = vec({0.2, 0.1, 0.0}), y = vec({-0.5, 0.3, 0.4});
        const double t = 0.8;
        MCEstimate e = dual_V(phi, psi, t, x, y, zero3, 4000, 0.02, 1);
        double ref = apply_Q(phi, t, x) * apply_Q(psi, t, y);
        CHECK(std::abs(e.mean - ref) <= 3.0 * e.std_err);
        CHECK(e.n_samples == 4000);

        auto k = make_kernel(KernelKind::CauchyPD, 0.2, 3.0, 3);
        MCEstimate a = dual_V(phi, psi, t, x, y, k, 4000, 0.02, 2);
        MCEstimate b = dual_V(psi, phi, t, y, x, k, 4000, 0.02, 3);
        CHECK(std::abs(a.mean - b.mean) <= 3.0 * std::hypot(a.std_err, b.std_err));
        CHECK(a.mean >= ref - 3.0 * a.std_err);   // g >= 0 only adds weight
    }

    TEST_CASE("exponential moment")
    {
        Eigen::VectorXd o = Eigen::VectorXd::Zero(3);
        ExpMoment z = dual_expmoment(21.0, zero3, o, o, 1000.0, 100, 0.01, 5);
        CHECK(z.estimate.mean == 1.0);
        auto k = make_kernel(KernelKind::PowerCapped, epsilon_threshold(21.0, 3.0, 3), 3.0, 3);
        ExpMoment a = dual_expmoment(21.0, k, o, o, 10.0, 500, 0.01, 6);
        ExpMoment b = dual_expmoment(21.0, k, o, o, 100.0, 500, 0.01, 6);
        CHECK(a.estimate.mean >= 1.0);
        CHECK(b.estimate.mean >= a.estimate.mean);
        CHECK(b.estimate.mean <= 2.0 + 3.0 * b.estimate.std_err);
        CHECK(residual_green_potential(21.0, k, 0.0) == doctest::Approx(0.5).epsilon(1e-6));
    }

    TEST_CASE("three-point moment with g = 0")
    {
        auto phi = make_test_function(TestKind::Bump, 3, 1.0);
        Eigen::MatrixXd pts(3, 3);
        pts << 0.0, 0.4, -0.3, 0.0, 0.1, 0.2, 0.0, -0.2, 0.1;
        const double t = 0.5;
        FourthBudget b;
        b.outer_paths = 2000;
        b.inner_paths = 2;
        b.dt_path = 0.02;
        MCEstimate e = dual_fourth(phi, t, pts, zero3, b);
        double ref = 1.0;
        for (int i = 0; i < 3; ++i)
            ref *= apply_Q(phi, t, pts.col(i));
        CHECK(std::abs(e.mean - ref) <= 3.0 * e.std_err + 1e-9 * ref);
    }

    TEST_CASE("bound functions")
    {
        BoundFns bf{1.05, 1.0, 3, 3.0};
        CHECK(bf.q() == doctest::Approx(21.0));
        CHECK(bound_Qtilde(0.0, vec({0.5, 0.0, 0.0}), bf) == 0.0);
        for (double t : {0.5, 4.0, 64.0})
            for (double r : {0.0, 0.5, 3.0, 20.0})
                CHECK(bound_I(t, vec({r, 0.0, 0.0}), bf) <= 1.0);
        // bound_I ~ |x|^{2 - d/p} for large |x|
        std::vector<double> ratio;
        for (double r : {2.0, 4.0, 8.0, 16.0})
            ratio.push_back(bound_I(1e6, vec({r, 0.0, 0.0}), bf) / std::pow(r, 2.0 - 3.0 / 1.05));
        double lo = *std::min_element(ratio.begin(), ratio.end()), hi = *std::max_element(ratio.begin(), ratio.end());
        CHECK(hi / lo < 1.5);
        CHECK_THROWS_AS(validate(BoundFns{1.2, 1.0, 3, 3.0}), std::invalid_argument);
        CHECK_THROWS_AS(bound_J(1.0, vec({0.0, 0.0, 0.0}), bf), std::domain_error);
        BoundFns b5{1.05, 1.0, 5, 3.0};
        Eigen::VectorXd x5 = Eigen::VectorXd::Zero(5);
        for (double r : {0.0, 4.0, 16.0}) {
            x5[0] = r;
            double j = bound_J(16.0, x5, b5);
            CHECK(std::isfinite(j));
            CHECK(j > 0.0);
        }
        // Qtilde grows with t
        CHECK(bound_Qtilde(4.0, vec({0.0, 0.0, 0.0}), bf) > bound_Qtilde(1.0, vec({0.0, 0.0, 0.0}), bf));
    }

    TEST_CASE("bound report with g = 0")
    {
        auto phi = make_test_function(TestKind::Bump, 3, 1.0);
        BoundFns bf{1.05, 1.0, 3, 3.0};
        std::vector<BoundSample> s;
        for (double t : {1.0, 4.0})
            s.push_back({t, vec({0.5, 0.0, 0.0}), vec({0.0, 0.5, 0.0})});
        BoundReport r = bound_checks(zero3, phi, bf, s, 200, 0.02, 1);
        CHECK(r.finite);
        REQUIRE(r.rows.size() == 2);
        for (const auto& row : r.rows) {
            double qq = apply_Q(phi, row.t, vec({0.5, 0.0, 0.0})) * apply_Q(phi, row.t, vec({0.0, 0.5, 0.0}));
            double tt = bound_Qtilde(row.t, vec({0.5, 0.0, 0.0}), bf) * bound_Qtilde(row.t, vec({0.0, 0.5, 0.0}), bf);
            CHECK(row.ratio_V_QQ == doctest::Approx(qq / tt).epsilon(0.05));
            CHECK(std::isnan(row.ratio_J_I));
        }
    }

    TEST_CASE("Green function and tail integrals")
    {
        CHECK(green_G(1.0, 3) == doctest::Approx(1.0 / (4.0 * pi)).epsilon(1e-6));
        // independent check by direct time quadrature
        double direct = integrate([](double s) { return s == 0.0 ? 0.0 : heat_p_radial(2.0 * s, 1.0, 3); }, 0.0, 50.0,
                                  1e-12) +
                        integrate([](double u) { return heat_p_radial(2.0 / u, 1.0, 3) / (u * u); }, 1e-12, 0.02, 1e-12);
        CHECK(green_G(1.0, 3) == doctest::Approx(direct).epsilon(1e-6));
        for (int d : {3, 5})
            for (double r : {0.5, 2.0, 4.0})
                CHECK(green_G(r, d) * std::pow(r, d - 2) == doctest::Approx(green_G(1.0, d)).epsilon(1e-6));
        double g4 = green_G(1.0, 4);
        CHECK(std::isfinite(g4));
        CHECK(g4 > 0.0);
        CHECK(g4 == doctest::Approx(green_constant(4)).epsilon(1e-6));
        CHECK_THROWS_AS(green_G(vec({1.0, 1.0, 1.0}), vec({1.0, 1.0, 1.0})), std::domain_error);

        std::vector<double> lt, lv;
        for (double t : {10.0, 100.0, 1000.0, 10000.0}) {
            lt.push_back(std::log(t));
            lv.push_back(std::log(tail_integral(6.0, 3, t)));
        }
        CHECK(fitted_slope(lt, lv) == doctest::Approx(-1.5).epsilon(0.05 / 1.5));
    }
}
