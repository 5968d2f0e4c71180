#pragma once

#include "superenv/grid.hpp"
#include "superenv/kernels.hpp"
#include "superenv/stats.hpp"
#include "superenv/test_function.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace superenv {

inline double heat_p_radial(double t, double r, int d)
{
    if (!(t > 0.0))
        throw std::domain_error("heat_p: t must be > 0");
    return std::pow(2.0 * std::numbers::pi * t, -0.5 * d) * std::exp(-r * r / (2.0 * t));
}

template <class DX, class DY>
typename DX::Scalar heat_p(typename DX::Scalar t, const Eigen::MatrixBase<DX>& x, const Eigen::MatrixBase<DY>& y)
{
    using Scalar = typename DX::Scalar;
    using std::exp;
    using std::pow;
    if (!(t > Scalar(0)))
        throw std::domain_error("heat_p: t must be > 0");
    const auto d = static_cast<Scalar>(x.size());
    return pow(Scalar(2) * Scalar(std::numbers::pi) * t, -d / Scalar(2)) * exp(-(x - y).squaredNorm() / (Scalar(2) * t));
}

// Gamma(d/2) (2/z)^nu e^{-z} I_nu(z), nu = d/2 - 1: the spherical mean of exp(z cos) times e^{-z}.
double sphere_mean_scaled(int d, double z);

// (P_t f)(x) for a radial profile f(|y|), evaluated at |x| = r. `breaks` are the profile's
// natural break points in increasing order, the last one its support end (may be +inf).
double radial_heat_convolution(const std::function<double(double)>& f, std::vector<double> breaks, double t, double r,
                               int d, double rel_tol = 1e-10);

double apply_P(const TestFunction& phi, double t, const Eigen::VectorXd& x);
double apply_Q(const TestFunction& phi, double t, const Eigen::VectorXd& x);

// Q_tau phi on a (sqrt(tau), radius) lattice with bicubic interpolation; zero beyond r_max.
class QTable {
public:
    QTable() = default;
    QTable(const TestFunction& phi, double tau_max, int n_u = 48, int n_r = 256);

    double operator()(double tau, double r) const;
    double at(double tau, const double* x) const;
    double tau_max() const { return tau_max_; }
    double r_max() const { return r_max_; }

private:
    TestFunction phi_;
    double tau_max_ = 0.0;
    double r_max_ = 0.0;
    int n_u_ = 0;
    int n_r_ = 0;
    Eigen::MatrixXd values_;   // (n_u+1) x (n_r+1)
};

MCEstimate dual_V(const TestFunction& phi, const TestFunction& psi, double t, const Eigen::VectorXd& x,
                  const Eigen::VectorXd& y, const CorrelationKernel& kernel, std::size_t n_paths, double dt_path,
                  std::uint64_t seed, const QTable* q_phi = nullptr, const QTable* q_psi = nullptr);

struct ExpMoment {
    MCEstimate estimate;
    double horizon_diagnostic = 0.0;   // E[w_H h(beta_H)] / E[w_H]
    double mean_steps = 0.0;
};

// Pi_{(x,y)} exp(q int_0^H g(B_s, B~_s) ds) for translation-invariant g, simulated through beta = B - B~
// with steps max(dt_path, kappa |beta|^2).
ExpMoment dual_expmoment(double q, const CorrelationKernel& kernel, const Eigen::VectorXd& x,
                         const Eigen::VectorXd& y, double horizon, std::size_t n_paths, double dt_path,
                         std::uint64_t seed, double kappa = 0.005);

// q int g_bar(z) G(b, z) dz with g_bar = eps (|z|^-alpha ^ 1), |b| = r.
double residual_green_potential(double q, const CorrelationKernel& kernel, double r);

struct FourthBudget {
    std::size_t outer_paths = 20000;
    std::size_t inner_paths = 4;
    double dt_path = 0.01;
    std::uint64_t seed = 1;
    std::size_t max_work = 50'000'000;   // outer * inner * levels path simulations
};

// E[prod_i V1(t, x_i)] for 3 or 4 points (columns of `points`) by nested Monte Carlo of the
// n-Brownian Feynman-Kac recursion.
MCEstimate dual_fourth(const TestFunction& phi, double t, const Eigen::MatrixXd& points,
                       const CorrelationKernel& kernel, const FourthBudget& budget);

struct BoundFns {
    double p = 1.05;
    double K = 1.0;
    int d = 3;
    double alpha = 3.0;

    double q() const { return p / (p - 1.0); }
};

void validate(const BoundFns& bf);

double bound_Qtilde(double t, const Eigen::VectorXd& x, const BoundFns& bf);
double bound_I(double t, const Eigen::VectorXd& x, const BoundFns& bf);
double bound_J(double t, const Eigen::VectorXd& x, const BoundFns& bf);

struct BoundSample {
    double t;
    Eigen::VectorXd x;
    Eigen::VectorXd y;
};

struct BoundRow {
    double t;
    double x_norm;
    double y_norm;
    double ratio_V_QQ;     // V^{phi,phi}_t(x,y) / (Qtilde(t,x) Qtilde(t,y))
    double ratio_Q_I;      // Qtilde(t,x) / I_t(x)
    double ratio_J_I;      // J_t(x) / I_t(x), NaN for d < 5
};

struct BoundReport {
    std::vector<BoundRow> rows;
    double sup_V_QQ = 0.0, sup_Q_I = 0.0, sup_J_I = 0.0;
    // sup over the largest t divided by sup over the smaller t values
    double growth_V_QQ = 0.0, growth_Q_I = 0.0, growth_J_I = 0.0;
    bool finite = true;
    bool stable(double tol) const
    {
        return finite && growth_V_QQ <= 1.0 + tol && growth_Q_I <= 1.0 + tol &&
               (std::isnan(growth_J_I) || growth_J_I <= 1.0 + tol);
    }
};

BoundReport bound_checks(const CorrelationKernel& kernel, const TestFunction& phi, const BoundFns& bf,
                         const std::vector<BoundSample>& samples, std::size_t n_paths = 4000, double dt_path = 0.01,
                         std::uint64_t seed = 7);

// int p_t(x) (|x|^-alpha ^ 1) dx.
double tail_integral(double alpha, int d, double t);

// int_0^inf p_{2s}(z,y) ds.
double green_G(double r, int d);
template <class DZ, class DY>
double green_G(const Eigen::MatrixBase<DZ>& z, const Eigen::MatrixBase<DY>& y)
{
    double r = (z - y).norm();
    if (r == 0.0)
        throw std::domain_error("green_G: singular at z = y");
    return green_G(r, static_cast<int>(z.size()));
}

// <lambda_box, Q_t phi> = int phi(y) int_0^t P_y(B_s in box) ds dy.
double box_mean_Q(const TestFunction& phi, const GridSpec& grid, double t);

// int_box (Q_t phi)(x)^2 dx by tensor quadrature with the Q table.
double box_integral_Q_squared(const QTable& q, double t, const GridSpec& grid, int nodes_per_axis = 24);

// E[Y_t(phi)^2] for the particle system started from a Poisson cloud of intensity lambda_box with
// atoms of mass `atom`, particles free to leave the box and the field read at cell centres inside it:
//   A      = int_box int_box V_t(x,y) dx dy                       (distinct ancestors)
//   A_self = atom int_box E_x[(int_0^t phi(B_s) ds)^2] dx         (one lineage, no environment weight)
//   B      = int_0^t ds int pi_box(y, t-s) V_s(y,y) dy,  pi_box(y,r) = P_y(B_r in box)
// A and B are the g = 0 value by quadrature plus a Monte Carlo correction for V - Q Q.
struct SecondMomentOracle {
    double A0 = 0.0, A_self = 0.0, B0 = 0.0;
    MCEstimate dA, dB;
    double value() const { return A0 + A_self + B0 + dA.mean + dB.mean; }
    double std_err() const { return std::sqrt(dA.std_err * dA.std_err + dB.std_err * dB.std_err); }
};

SecondMomentOracle second_moment_oracle(const TestFunction& phi, double t, const GridSpec& grid,
                                        const CorrelationKernel& kernel, double atom, std::size_t n_paths,
                                        double dt_path, std::uint64_t seed);

} // namespace superenv
