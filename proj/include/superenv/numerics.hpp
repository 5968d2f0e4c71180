#pragma once

#include <Eigen/Dense>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <vector>

namespace superenv {

struct GaussRule {
    Eigen::VectorXd nodes;   // on [-1, 1]
    Eigen::VectorXd weights;
};

// Gauss-Legendre rule via the Golub-Welsch eigenproblem.
const GaussRule& gauss_legendre(int n);

template <class F>
double integrate(F&& f, double a, double b, double rel_tol = 1e-10, unsigned max_depth = 15)
{
    if (a == b)
        return 0.0;
    return boost::math::quadrature::gauss_kronrod<double, 21>::integrate(f, a, b, max_depth, rel_tol);
}

// Integrate over consecutive pieces [b_0,b_1], [b_1,b_2], ...
template <class F>
double integrate_pieces(F&& f, const std::vector<double>& breaks, double rel_tol = 1e-10)
{
    double s = 0.0;
    for (std::size_t i = 0; i + 1 < breaks.size(); ++i)
        if (breaks[i + 1] > breaks[i])
            s += integrate(f, breaks[i], breaks[i + 1], rel_tol);
    return s;
}

// Least-squares slope of y on x.
double fitted_slope(const std::vector<double>& x, const std::vector<double>& y);

} // namespace superenv
