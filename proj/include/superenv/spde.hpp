#pragma once

#include "superenv/environment.hpp"
#include "superenv/test_function.hpp"

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace superenv {

enum class SolutionLabel { V1, U, uT, vT, V2, V3, V4 };
std::string to_string(SolutionLabel l);

struct FieldSolution {
    GridSpec grid;
    double dt = 0.0;
    std::vector<double> times;
    std::vector<Eigen::VectorXd> values;
    SolutionLabel label = SolutionLabel::V1;

    const Eigen::VectorXd& final() const { return values.back(); }
};

// Dual: the increments are consumed in reversed order (dW_{N-1}, ..., dW_0), which makes the
// final value the conditional mean density of the forward particle system at horizon T.
enum class Orientation { Dual, Forward };

// Increments in the order one Euler pass consumes them.
struct NoisePath {
    GridSpec grid;
    double dt = 0.0;
    std::vector<Eigen::VectorXd> increments;
    std::shared_ptr<const FieldFactor> factor;

    double horizon() const { return dt * static_cast<double>(increments.size()); }
};

NoisePath noise_path(const EnvironmentField& field, double T, Orientation orientation = Orientation::Dual);

struct SolverOptions {
    double c_stab = 0.5;          // CFL: dt <= c_stab h^2 / d
    double overflow = 1e150;
    std::size_t store_every = 1;  // 0 keeps only t = 0 and the final time
};

struct SolverDiagnostics {
    std::size_t order_violations = 0;   // cells with 1 - dt*nbrs/(2h^2) + dW < 0
    double max_abs_increment = 0.0;
};

// dt <= c_stab h^2 / d, otherwise std::invalid_argument.
void check_cfl(const GridSpec& grid, double dt, double c_stab);

// out += coef * (1/2) Delta_h v with zero-flux walls.
void add_half_laplacian(const GridSpec& grid, const Eigen::VectorXd& v, double coef, Eigen::VectorXd& out);

// <lambda_grid, v> = h^d sum v.
double grid_mass(const GridSpec& grid, const Eigen::VectorXd& v);

// V(t+dt) = V + dt (1/2 Delta_h V + source) + V dW.
FieldSolution solve_v1(const Eigen::VectorXd& source, const NoisePath& path, const SolverOptions& opt = {},
                       SolverDiagnostics* diag = nullptr);
FieldSolution solve_v1(const TestFunction& phi, const NoisePath& path, const SolverOptions& opt = {},
                       SolverDiagnostics* diag = nullptr);

// U(t+dt) = U + dt (1/2 Delta_h U + theta source - U^2/2) + U dW.
FieldSolution solve_u(const Eigen::VectorXd& source, double theta, const NoisePath& path,
                      const SolverOptions& opt = {}, SolverDiagnostics* diag = nullptr);

struct UVPair {
    FieldSolution uT;
    FieldSolution vT;
};

// uT = sqrt(T) U^{theta = T^{-1/2}}, vT = V1 - uT, on the path that produced V1.
UVPair solve_uT_vT(const Eigen::VectorXd& source, const FieldSolution& V1, const NoisePath& path,
                   const SolverOptions& opt = {});

// Horizon family: entry j is the dual pass over the first j*stride field increments, i.e. the
// conditional mean density at horizon j*stride*dt. Cellwise nondecreasing in j.
FieldSolution solve_v1_sweep(const Eigen::VectorXd& source, const EnvironmentField& field, double T,
                             std::size_t stride = 1, const SolverOptions& opt = {},
                             SolverDiagnostics* diag = nullptr);

struct CLTDecomposition {
    double I1 = 0.0;
    double I2 = 0.0;
    double I3 = 0.0;
    double lhs = 0.0;

    double residual() const { return lhs - (I1 - I2 + I3); }
    double scale() const { return std::abs(I1) + std::abs(I2) + std::abs(I3) + std::abs(lhs); }
};

CLTDecomposition clt_decomposition(const FieldSolution& V1, const FieldSolution& uT, const FieldSolution& vT,
                                   const NoisePath& path, double T);

struct Trace {
    double value = 0.0;
    std::vector<double> times;
    std::vector<double> trace;
};

// h^d sum V1(t)^2 at the last stored time, and its trace over stored times.
Trace sigma_sq(const FieldSolution& V1);

// h^{2d} sum_ij V_i V_j g_ij using the sampled covariance.
double xi_value(const Eigen::VectorXd& v, const GridSpec& grid, const FieldFactor& factor);
// Same sum computed directly from the kernel (small grids).
double xi_value(const Eigen::VectorXd& v, const GridSpec& grid, const CorrelationKernel& kernel);
Trace xi_estimate(const FieldSolution& V1, const FieldFactor& factor);

struct MartingaleStat {
    std::vector<double> times;
    std::vector<double> N_mass;   // h^d sum V1(t) - t <lambda_grid, phi>
    std::vector<double> N_sum;    // sum_k h^d sum V1_k dW_k
    std::vector<double> qv;       // sum_k dt h^{2d} V1_k^T G V1_k
};

MartingaleStat martingale_stat(const FieldSolution& V1, const Eigen::VectorXd& source, const NoisePath& path);

struct MomentSolutions {
    std::vector<FieldSolution> V;   // V[0] = V1, ..., V[n_max-1]
    std::vector<double> L;          // L^(0..n_max) at the final time
};

// V_n with source sum_{k=1}^{n-1} C(n-1,k) V_{n-k} V_k on the same path; L^(n) by the binomial recursion.
MomentSolutions solve_v2_and_moments(const FieldSolution& V1, const NoisePath& path, const Eigen::VectorXd& mu,
                                     int n_max, const SolverOptions& opt = {});

// Summary CSV: t, <lambda,V1>, sigma^2, xi, N_mass, N_sum, qv.
std::string solution_summary_csv(const FieldSolution& V1, const MartingaleStat& m, const FieldFactor& factor);

} // namespace superenv
