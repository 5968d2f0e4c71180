#include "superenv/kernels.hpp"

#include <boost/math/quadrature/exp_sinh.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include <array>
#include <numbers>
#include <stdexcept>

namespace superenv {

std::string to_string(KernelKind k)
{
    switch (k) {
    case KernelKind::Zero: return "Zero";
    case KernelKind::CauchyPD: return "CauchyPD";
    case KernelKind::PowerCapped: return "PowerCapped";
    case KernelKind::ProductCauchy: return "ProductCauchy";
    case KernelKind::Custom: return "Custom";
    }
    return "?";
}

KernelKind kernel_kind_from_string(const std::string& s)
{
    if (s == "Zero") return KernelKind::Zero;
    if (s == "CauchyPD") return KernelKind::CauchyPD;
    if (s == "PowerCapped") return KernelKind::PowerCapped;
    if (s == "ProductCauchy") return KernelKind::ProductCauchy;
    if (s == "Custom") return KernelKind::Custom;
    throw std::invalid_argument("unknown kernel kind '" + s + "'");
}

CorrelationKernel make_kernel(KernelKind kind, double epsilon, double alpha, int dim)
{
    CorrelationKernel k;
    k.kind = kind;
    k.epsilon = epsilon;
    k.alpha = alpha;
    k.dim = dim;
    validate(k);
    return k;
}

void validate(const CorrelationKernel& k)
{
    if (!(k.epsilon >= 0.0))
        throw std::invalid_argument("kernel.epsilon must be >= 0");
    if (!(k.alpha > 2.0))
        throw std::invalid_argument("kernel.alpha must be > 2 (standing assumption alpha > 2)");
    if (k.dim < 3)
        throw std::invalid_argument("dim must be >= 3");
    if (k.kind == KernelKind::Custom) {
        if (!k.custom)
            throw std::invalid_argument("Custom kernel needs a radial profile");
        for (double r : {0.0, 0.25, 0.5, 1.0, 1.5, 2.0, 4.0, 8.0, 16.0, 64.0}) {
            double g = k.custom(r);
            double bound = k.epsilon * capped_power(r, k.alpha);
            if (!(g >= 0.0) || g > bound * (1.0 + 1e-12))
                throw std::invalid_argument("Custom kernel violates g <= eps (|z|^-alpha ^ 1) at r=" +
                                            std::to_string(r));
        }
    }
}

Eigen::MatrixXd gram_matrix(const CorrelationKernel& k, const Eigen::MatrixXd& points)
{
    const Eigen::Index n = points.cols();
    Eigen::MatrixXd g(n, n);
    for (Eigen::Index j = 0; j < n; ++j) {
        g(j, j) = evaluate_offset(k, Eigen::VectorXd::Zero(points.rows()));
        for (Eigen::Index i = j + 1; i < n; ++i) {
            double v = evaluate(k, points.col(i), points.col(j));
            g(i, j) = v;
            g(j, i) = v;
        }
    }
    return g;
}

double sphere_area(int d)
{
    return 2.0 * std::pow(std::numbers::pi, 0.5 * d) / std::tgamma(0.5 * d);
}

double green_constant(int d)
{
    if (d < 3)
        throw std::invalid_argument("green_constant: d must be >= 3");
    return std::tgamma(0.5 * d - 1.0) / (4.0 * std::pow(std::numbers::pi, 0.5 * d));
}

double green_integral(double alpha, int d, const QuadratureConfig& q)
{
    if (!(alpha > 2.0) || d < 3)
        throw std::domain_error("green_integral diverges unless alpha > 2 and d >= 3");
    using boost::math::quadrature::gauss_kronrod;
    // radial weight r^{d-1} times |y|^{2-d} leaves r
    auto inner = [](double r) { return r; };
    auto outer = [alpha](double r) { return std::pow(r, 1.0 - alpha); };
    double a = gauss_kronrod<double, 15>::integrate(inner, 0.0, 1.0, q.max_depth, q.rel_tol);
    boost::math::quadrature::exp_sinh<double> es;
    double b = es.integrate(outer, 1.0, std::numeric_limits<double>::infinity(), q.rel_tol);
    return sphere_area(d) * (a + b);
}

double epsilon_threshold(double q, double alpha, int d, const QuadratureConfig& quad)
{
    if (!(q > 0.0))
        throw std::invalid_argument("epsilon_threshold: q must be > 0");
    // int_0^inf E_0[g_bar(beta_s)] ds = int g_bar(y) G(0,y) dy with eps = 1
    double potential = green_constant(d) * green_integral(alpha, d, quad);
    return 1.0 / (2.0 * q * potential);
}

} // namespace superenv
