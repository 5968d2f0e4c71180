#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <string>

namespace superenv {

enum class KernelKind { Zero, CauchyPD, PowerCapped, ProductCauchy, Custom };

std::string to_string(KernelKind k);
KernelKind kernel_kind_from_string(const std::string& s);

struct CorrelationKernel {
    KernelKind kind = KernelKind::CauchyPD;
    double epsilon = 0.05;
    double alpha = 3.0;
    int dim = 3;
    // Custom kernels are radial: g(x,y) = custom(|x-y|).
    std::function<double(double)> custom;
};

CorrelationKernel make_kernel(KernelKind kind, double epsilon, double alpha, int dim);

// Throws std::invalid_argument on epsilon < 0, alpha <= 2, dim < 3, or a Custom
// profile that breaks the tail bound on a probe set of radii.
void validate(const CorrelationKernel& k);

// Bound profile |z|^{-alpha} ^ 1.
template <class Scalar>
Scalar capped_power(Scalar r, Scalar alpha)
{
    using std::pow;
    return r <= Scalar(1) ? Scalar(1) : pow(r, -alpha);
}

// g as a function of the offset z = x - y.
template <class Derived>
typename Derived::Scalar evaluate_offset(const CorrelationKernel& k, const Eigen::MatrixBase<Derived>& z)
{
    using Scalar = typename Derived::Scalar;
    using std::pow;
    const Scalar eps(k.epsilon), a(k.alpha);
    switch (k.kind) {
    case KernelKind::Zero:
        return Scalar(0);
    case KernelKind::CauchyPD:
        return eps * pow(Scalar(1) + z.squaredNorm(), -a / Scalar(2));
    case KernelKind::PowerCapped:
        return eps * capped_power<Scalar>(z.norm(), a);
    case KernelKind::ProductCauchy: {
        Scalar p(1);
        for (Eigen::Index i = 0; i < z.size(); ++i)
            p *= Scalar(1) + z[i] * z[i];
        return eps * pow(p, -a / Scalar(2));
    }
    case KernelKind::Custom:
        return Scalar(k.custom(static_cast<double>(z.norm())));
    }
    return Scalar(0);
}

template <class DX, class DY>
typename DX::Scalar evaluate(const CorrelationKernel& k, const Eigen::MatrixBase<DX>& x,
                             const Eigen::MatrixBase<DY>& y)
{
    return evaluate_offset(k, (x - y).eval());
}

// Points are the columns of `points` (d x N).
Eigen::MatrixXd gram_matrix(const CorrelationKernel& k, const Eigen::MatrixXd& points);

// Surface area of the unit sphere S^{d-1}.
double sphere_area(int d);

// Constant in G(z,y) = int_0^inf p_{2s}(z,y) ds = C_d |z-y|^{2-d}.
double green_constant(int d);

struct QuadratureConfig {
    double rel_tol = 1e-6;
    int max_depth = 15;
};

// int (|y|^{-alpha} ^ 1) |y|^{2-d} dy, by adaptive radial quadrature on [0,1] and [1,inf).
double green_integral(double alpha, int d, const QuadratureConfig& q = {});

// Largest eps with sup_z q * int_0^inf E_z[g_bar(beta_s)] ds <= 1/2 for g_bar = eps (|.|^{-alpha} ^ 1),
// beta = B - B~. The supremum sits at z = 0.
double epsilon_threshold(double q, double alpha, int d, const QuadratureConfig& quad = {});

} // namespace superenv
