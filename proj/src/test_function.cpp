#include "superenv/test_function.hpp"

#include "superenv/kernels.hpp"
#include "superenv/numerics.hpp"

#include <boost/math/special_functions/gamma.hpp>

#include <numbers>
#include <stdexcept>

namespace superenv {

std::string to_string(TestKind k) { return k == TestKind::Bump ? "Bump" : "TruncGauss"; }

TestKind test_kind_from_string(const std::string& s)
{
    if (s == "Bump") return TestKind::Bump;
    if (s == "TruncGauss") return TestKind::TruncGauss;
    throw std::invalid_argument("unknown test function kind '" + s + "'");
}

TestFunction make_test_function(TestKind kind, int dim, double radius, double amplitude)
{
    if (!(radius > 0.0) || !(amplitude > 0.0))
        throw std::invalid_argument("test function radius and amplitude must be > 0");
    TestFunction f;
    f.kind = kind;
    f.center = Eigen::VectorXd::Zero(dim);
    f.radius = radius;
    f.amplitude = amplitude;
    return f;
}

double TestFunction::profile(double r) const
{
    if (r >= radius)
        return 0.0;
    if (kind == TestKind::Bump) {
        double u = 1.0 - (r * r) / (radius * radius);
        return amplitude * u * u;
    }
    double s2 = 2.0 * gauss_sigma() * gauss_sigma();
    return amplitude * (std::exp(-r * r / s2) - std::exp(-radius * radius / s2));
}

double TestFunction::operator()(const double* x) const
{
    double r2 = 0.0;
    const int d = dim();
    for (int a = 0; a < d; ++a) {
        double t = x[a] - center[a];
        r2 += t * t;
    }
    if (r2 >= radius * radius)
        return 0.0;
    if (kind == TestKind::Bump) {
        double u = 1.0 - r2 / (radius * radius);
        return amplitude * u * u;
    }
    double s2 = 2.0 * gauss_sigma() * gauss_sigma();
    return amplitude * (std::exp(-r2 / s2) - std::exp(-radius * radius / s2));
}

double total_mass(const TestFunction& phi)
{
    const int d = phi.dim();
    const double K = phi.radius;
    if (phi.kind == TestKind::Bump)
        return phi.amplitude * sphere_area(d) * std::pow(K, d) * (1.0 / d - 2.0 / (d + 2) + 1.0 / (d + 4));
    double s = phi.gauss_sigma();
    double gauss = std::pow(2.0 * std::numbers::pi * s * s, 0.5 * d) *
                   boost::math::gamma_p(0.5 * d, K * K / (2.0 * s * s));
    double ball = sphere_area(d) / d * std::pow(K, d);
    return phi.amplitude * (gauss - std::exp(-K * K / (2.0 * s * s)) * ball);
}

namespace {

// Tensor Gauss-Legendre over the box [lo, hi] with n nodes per axis.
double tensor_integral(const TestFunction& phi, const Eigen::VectorXd& lo, const Eigen::VectorXd& hi, int n)
{
    const int d = phi.dim();
    const GaussRule& g = gauss_legendre(n);
    std::vector<int> idx(d, 0);
    Eigen::VectorXd x(d);
    double jac = 1.0;
    for (int a = 0; a < d; ++a)
        jac *= 0.5 * (hi[a] - lo[a]);
    double sum = 0.0;
    while (true) {
        double w = 1.0;
        for (int a = 0; a < d; ++a) {
            x[a] = 0.5 * (lo[a] + hi[a]) + 0.5 * (hi[a] - lo[a]) * g.nodes[idx[a]];
            w *= g.weights[idx[a]];
        }
        sum += w * phi(x);
        int a = d - 1;
        while (a >= 0 && ++idx[a] == n)
            idx[a--] = 0;
        if (a < 0)
            break;
    }
    return sum * jac;
}

} // namespace

double box_mass(const TestFunction& phi, const GridSpec& grid)
{
    const int d = phi.dim();
    bool inside = true;
    for (int a = 0; a < d; ++a)
        inside = inside && std::abs(phi.center[a]) + phi.radius <= grid.half_width;
    if (inside)
        return total_mass(phi);
    // composite rule on the clipped support box
    Eigen::VectorXd lo(d), hi(d);
    for (int a = 0; a < d; ++a) {
        lo[a] = std::max(-grid.half_width, phi.center[a] - phi.radius);
        hi[a] = std::min(grid.half_width, phi.center[a] + phi.radius);
        if (hi[a] <= lo[a])
            return 0.0;
    }
    const int panels = d <= 3 ? 8 : 4;
    const int n = d <= 3 ? 8 : 5;
    double total = 0.0;
    std::vector<int> p(d, 0);
    Eigen::VectorXd plo(d), phi_hi(d);
    while (true) {
        for (int a = 0; a < d; ++a) {
            double w = (hi[a] - lo[a]) / panels;
            plo[a] = lo[a] + p[a] * w;
            phi_hi[a] = plo[a] + w;
        }
        total += tensor_integral(phi, plo, phi_hi, n);
        int a = d - 1;
        while (a >= 0 && ++p[a] == panels)
            p[a--] = 0;
        if (a < 0)
            break;
    }
    return total;
}

Eigen::VectorXd cell_average(const TestFunction& phi, const GridSpec& grid, int nodes_per_axis)
{
    if (phi.dim() != grid.dim)
        throw std::invalid_argument("cell_average: dimension mismatch");
    int n = nodes_per_axis > 0 ? nodes_per_axis : (grid.dim <= 3 ? 6 : (grid.dim == 4 ? 5 : 4));
    const double h = grid.h();
    const double reach = phi.radius + 0.5 * h * std::sqrt(static_cast<double>(grid.dim));
    Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(grid.n_cells()));
    for (std::size_t i = 0; i < grid.n_cells(); ++i) {
        Eigen::VectorXd c = grid.center(i);
        if ((c - phi.center).norm() >= reach)
            continue;
        Eigen::VectorXd lo = c.array() - 0.5 * h, hi = c.array() + 0.5 * h;
        out[static_cast<Eigen::Index>(i)] = tensor_integral(phi, lo, hi, n) / grid.cell_volume();
    }
    return out;
}

Eigen::VectorXd cell_sample(const TestFunction& phi, const GridSpec& grid)
{
    Eigen::VectorXd out(static_cast<Eigen::Index>(grid.n_cells()));
    for (std::size_t i = 0; i < grid.n_cells(); ++i)
        out[static_cast<Eigen::Index>(i)] = phi(grid.center(i));
    return out;
}

} // namespace superenv
