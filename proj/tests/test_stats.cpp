#include "doctest.h"

#include "superenv/csv.hpp"
#include "superenv/experiments.hpp"
#include "superenv/numerics.hpp"
#include "superenv/rng.hpp"
#include "superenv/stats.hpp"
#include "superenv/svg.hpp"

using namespace superenv;

TEST_SUITE("stats")
{
    TEST_CASE("KS p-values are uniform under the null")
    {
        Engine e = make_engine(2024);
        NormalSource nrm;
        std::vector<double> p;
        for (int rep = 0; rep < 200; ++rep) {
            std::vector<double> s(60);
            for (double& x : s)
                x = nrm(e);
            p.push_back(ks_test(s, normal_cdf).p_value);
        }
        KSResult meta = ks_test(p, [](double u) { return std::clamp(u, 0.0, 1.0); });
        CHECK(meta.p_value > 0.01);
        CHECK(mean(p) == doctest::Approx(0.5).epsilon(3.0 * std::sqrt(1.0 / 12.0 / 200.0) / 0.5));
    }

    TEST_CASE("KS power against a shifted reference")
    {
        Engine e = make_engine(7);
        NormalSource nrm;
        std::vector<double> s(100);
        for (double& x : s)
            x = nrm(e);
        KSResult r = ks_test(s, [](double x) { return normal_cdf(x - 5.0); });
        CHECK(r.p_value < 1e-6);
    }

    TEST_CASE("KS degenerate and small samples")
    {
        std::vector<double> same(8, 0.3);
        KSResult r = ks_test(same, normal_cdf);
        CHECK(r.degenerate);
        CHECK(r.p_value == 0.0);
        CHECK_THROWS(ks_test(std::vector<double>(5, 0.1), normal_cdf));
        std::vector<double> s{-1.2, -0.4, 0.1, 0.3, 0.5, 0.9, 1.4, -0.2, 0.05, -0.8};
        KSResult small = ks_test(s, normal_cdf);
        CHECK(small.exact);
        CHECK(small.n == 10);
    }

    TEST_CASE("Kolmogorov distribution")
    {
        // n = 1: P(D_1 < d) = 2d - 1 on [1/2, 1]
        CHECK(kolmogorov_cdf_exact(1, 0.75) == doctest::Approx(0.5).epsilon(1e-10));
        // tail at the 5% critical value 1.3581
        CHECK(kolmogorov_tail(1.3581) == doctest::Approx(0.05).epsilon(1e-3));
        // exact distribution approaches the limit for large n
        CHECK(1.0 - kolmogorov_cdf_exact(400, 1.0 / 20.0) == doctest::Approx(kolmogorov_tail(1.0)).epsilon(0.03));
    }

    TEST_CASE("running statistics and summaries")
    {
        RunningStats r;
        for (double x : {1.0, 2.0, 3.0, 4.0})
            r.push(x);
        CHECK(r.mean() == 2.5);
        CHECK(r.variance() == doctest::Approx(5.0 / 3.0));
        CHECK(r.std_error() == doctest::Approx(std::sqrt(5.0 / 12.0)));
        HorizonRow h = summarize("annealed", 4.0, {1.0, 2.0, 3.0, 4.0}, 2.0);
        CHECK(h.n == 4);
        CHECK(h.ci_lo == doctest::Approx(2.5 - 2.5758293035489 * std::sqrt(5.0 / 12.0)).epsilon(1e-9));
        CHECK(h.abs_dev == doctest::Approx(1.0));
        CHECK(fitted_slope({0.0, 1.0, 2.0}, {1.0, 3.0, 5.0}) == doctest::Approx(2.0));
    }

    TEST_CASE("seed derivation")
    {
        CHECK(derive_seed(1, 2, 3) == derive_seed(1, 2, 3));
        CHECK(derive_seed(1, 2, 3) != derive_seed(1, 3, 2));
        CHECK(derive_seed(1, 2, 3) != derive_seed(2, 2, 3));
    }

    TEST_CASE("CSV quoting and SVG output")
    {
        CsvWriter w({"name", "value"});
        w.row(std::string("a,b"), 0.1);
        w.row(std::string("say \"hi\""), 3);
        CHECK(w.str() == "name,value\r\n\"a,b\",0.10000000000000001\r\n\"say \"\"hi\"\"\",3\r\n");
        std::string svg = line_plot_svg("t", {{"s", {1.0, 2.0, 4.0}, {3.0, 1.0, 2.0}}}, true, false);
        CHECK(svg.find("<polyline") != std::string::npos);
        CHECK(svg.find("</svg>") != std::string::npos);
        CHECK(histogram_svg("h", {0.1, 0.2, 0.2, 0.9}, 4).find("<rect") != std::string::npos);
    }
}
