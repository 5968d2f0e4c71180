#pragma once

#include "superenv/grid.hpp"
#include "superenv/kernels.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace superenv {

enum class FactorBackend { Zero, Dense, Separable };
enum class BackendChoice { Auto, Dense, Separable };
enum class HistoryPolicy { KeepAll, KeepLast };

struct FieldOptions {
    BackendChoice backend = BackendChoice::Auto;
    std::size_t dense_cap = 4096;
    std::size_t separable_cap = 2'000'000;
    double mixture_step = 0.4;        // spacing in log-scale for the CauchyPD mixture
    double rank_tol = 1e-13;          // per-axis eigenvalue cut, relative to the largest
    HistoryPolicy history = HistoryPolicy::KeepLast;
};

// One Kronecker term: weight * (A A^T) (x) ... (x) (A A^T), the same A on every axis.
struct SeparableTerm {
    double weight = 0.0;
    Eigen::MatrixXd axis_factor;   // m x r
};

struct FieldFactor {
    FactorBackend backend = FactorBackend::Zero;
    GridSpec grid;
    Eigen::MatrixXd lower;                 // dense backend
    std::vector<SeparableTerm> terms;      // separable backend
    double jitter = 0.0;                   // dense: diagonal shift that made LLT succeed
    bool clipped = false;                  // dense: eigenvalue clipping engaged
    double distortion = 0.0;               // sum |clipped eigenvalues| / trace
    double kernel_error = 0.0;             // separable: max |g_approx - g| / eps on probe pairs
    std::size_t normals_per_step = 0;
};

std::shared_ptr<const FieldFactor> build_factor(const GridSpec& grid, const CorrelationKernel& kernel,
                                                const FieldOptions& opt = {});

// Grid realisation of the white-in-time, coloured-in-space field. Increment k is a pure
// function of (seed, k), so replays and reversed traversals are cheap and exact.
class EnvironmentField {
public:
    EnvironmentField() = default;
    EnvironmentField(GridSpec grid, CorrelationKernel kernel, std::shared_ptr<const FieldFactor> factor,
                     std::uint64_t seed, double dt, HistoryPolicy policy);

    const GridSpec& grid() const { return grid_; }
    const CorrelationKernel& kernel() const { return kernel_; }
    const FieldFactor& factor() const { return *factor_; }
    std::shared_ptr<const FieldFactor> shared_factor() const { return factor_; }
    std::uint64_t seed() const { return seed_; }
    double dt() const { return dt_; }
    HistoryPolicy history_policy() const { return policy_; }
    std::size_t counter() const { return counter_; }

    // Increment for step k (covariance g(x_i,x_j) dt). Cached when the policy is KeepAll.
    const Eigen::VectorXd& increment(std::size_t k) const;
    Eigen::VectorXd compute_increment(std::size_t k) const;

    // Same factor, new stream.
    EnvironmentField reseeded(std::uint64_t seed) const;

    // Sequential access used by sample_increment.
    Eigen::VectorXd next();

private:
    GridSpec grid_;
    CorrelationKernel kernel_;
    std::shared_ptr<const FieldFactor> factor_;
    std::uint64_t seed_ = 0;
    double dt_ = 0.0;
    HistoryPolicy policy_ = HistoryPolicy::KeepLast;
    std::size_t counter_ = 0;
    mutable std::map<std::size_t, Eigen::VectorXd> cache_;
    mutable Eigen::VectorXd last_;
    mutable std::size_t last_k_ = static_cast<std::size_t>(-1);
};

EnvironmentField build_field(const GridSpec& grid, const CorrelationKernel& kernel, std::uint64_t seed, double dt,
                             const FieldOptions& opt = {});

Eigen::VectorXd sample_increment(EnvironmentField& field);

// Nearest-cell value; 0 outside the box.
double value_at(const Eigen::VectorXd& increment, const GridSpec& grid, const double* x);
inline double value_at(const Eigen::VectorXd& increment, const GridSpec& grid, const Eigen::VectorXd& x)
{
    return value_at(increment, grid, x.data());
}

// v^T G v for the covariance actually sampled (G = factor factor^T).
double quad_form(const FieldFactor& f, const Eigen::VectorXd& v);

// factor factor^T as a dense matrix (small grids only).
Eigen::MatrixXd reconstructed_gram(const FieldFactor& f);

// Apply the separable Kronecker operator A (x) ... (x) A to a row-major tensor with `r` entries per axis.
Eigen::VectorXd kron_apply(const Eigen::MatrixXd& A, const Eigen::VectorXd& z, int dim);

// Binary history record: little-endian float64, row-major grid order, one record per step.
void write_history(const std::string& path, const std::vector<Eigen::VectorXd>& steps);
std::vector<Eigen::VectorXd> read_history(const std::string& path, std::size_t cells_per_step);

} // namespace superenv
