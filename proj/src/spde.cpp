#include "superenv/spde.hpp"

#include "superenv/csv.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace superenv {

std::string to_string(SolutionLabel l)
{
    switch (l) {
    case SolutionLabel::V1: return "V1";
    case SolutionLabel::U: return "U";
    case SolutionLabel::uT: return "uT";
    case SolutionLabel::vT: return "vT";
    case SolutionLabel::V2: return "V2";
    case SolutionLabel::V3: return "V3";
    case SolutionLabel::V4: return "V4";
    }
    return "?";
}

NoisePath noise_path(const EnvironmentField& field, double T, Orientation orientation)
{
    const std::size_t N = static_cast<std::size_t>(std::llround(T / field.dt()));
    if (std::abs(N * field.dt() - T) > 1e-9 * std::max(1.0, T))
        throw std::invalid_argument("noise_path: T is not a multiple of the field step");
    NoisePath p;
    p.grid = field.grid();
    p.dt = field.dt();
    p.factor = field.shared_factor();
    p.increments.reserve(N);
    for (std::size_t j = 0; j < N; ++j)
        p.increments.push_back(field.increment(orientation == Orientation::Dual ? N - 1 - j : j));
    return p;
}

void check_cfl(const GridSpec& grid, double dt, double c_stab)
{
    double h = grid.h();
    double limit = c_stab * h * h / grid.dim;
    if (dt > limit * (1.0 + 1e-12))
        throw std::invalid_argument("CFL violation: dt=" + std::to_string(dt) + " > c_stab h^2/d = " +
                                    std::to_string(limit));
}

void add_half_laplacian(const GridSpec& grid, const Eigen::VectorXd& v, double coef, Eigen::VectorXd& out)
{
    const Eigen::Index m = grid.cells_per_axis;
    const double c = coef / (2.0 * grid.h() * grid.h());
    const Eigen::Index n = v.size();
    for (int a = 0; a < grid.dim; ++a) {
        const Eigen::Index s = static_cast<Eigen::Index>(grid.stride(a));
        const Eigen::Index outer = n / (m * s);
        for (Eigen::Index o = 0; o < outer; ++o) {
            for (Eigen::Index i = 0; i < m; ++i) {
                const Eigen::Index base = (o * m + i) * s;
                if (i > 0)
                    out.segment(base, s) += c * (v.segment(base - s, s) - v.segment(base, s));
                if (i + 1 < m)
                    out.segment(base, s) += c * (v.segment(base + s, s) - v.segment(base, s));
            }
        }
    }
}

double grid_mass(const GridSpec& grid, const Eigen::VectorXd& v) { return grid.cell_volume() * v.sum(); }

namespace {

void check_path(const GridSpec& grid, const NoisePath& path)
{
    if (!(grid == path.grid))
        throw std::invalid_argument("mesh mismatch between source grid and noise path");
}

void count_order_violations(const GridSpec& grid, double dt, const Eigen::VectorXd& dW, SolverDiagnostics* diag)
{
    if (!diag)
        return;
    // interior cells are the worst case: 2d neighbours
    double base = 1.0 - dt * grid.dim / (grid.h() * grid.h());
    for (Eigen::Index i = 0; i < dW.size(); ++i) {
        if (base + dW[i] < 0.0)
            ++diag->order_violations;
        diag->max_abs_increment = std::max(diag->max_abs_increment, std::abs(dW[i]));
    }
}

void check_overflow(const Eigen::VectorXd& v, double limit, std::size_t k, const Eigen::VectorXd& dW)
{
    double mx = v.cwiseAbs().maxCoeff();
    if (!std::isfinite(mx) || mx > limit) {
        std::ostringstream os;
        os << "solver overflow at step " << k << ": max|V|=" << mx << ", max|dW|=" << dW.cwiseAbs().maxCoeff()
           << " (noise too strong for this grid; reduce epsilon or dt)";
        throw std::runtime_error(os.str());
    }
}

bool keep_step(std::size_t k, std::size_t N, std::size_t every)
{
    if (k == 0 || k == N)
        return true;
    return every > 0 && k % every == 0;
}

// Linear pass: V <- V + dt (1/2 Delta V + src) + V dW, for the increments in `incs`, starting from zero.
template <class Store>
void linear_pass(const GridSpec& grid, const Eigen::VectorXd& source, double dt,
                 const std::vector<const Eigen::VectorXd*>& incs, double overflow, SolverDiagnostics* diag,
                 Store&& store)
{
    Eigen::VectorXd V = Eigen::VectorXd::Zero(source.size()), next(source.size());
    store(0, V);
    for (std::size_t k = 0; k < incs.size(); ++k) {
        const Eigen::VectorXd& dW = *incs[k];
        count_order_violations(grid, dt, dW, diag);
        next = V + dt * source + V.cwiseProduct(dW);
        add_half_laplacian(grid, V, dt, next);
        V.swap(next);
        check_overflow(V, overflow, k + 1, dW);
        store(k + 1, V);
    }
}

} // namespace

FieldSolution solve_v1(const Eigen::VectorXd& source, const NoisePath& path, const SolverOptions& opt,
                       SolverDiagnostics* diag)
{
    if (static_cast<std::size_t>(source.size()) != path.grid.n_cells())
        throw std::invalid_argument("mesh mismatch between source and noise path");
    check_cfl(path.grid, path.dt, opt.c_stab);
    FieldSolution sol;
    sol.grid = path.grid;
    sol.dt = path.dt;
    sol.label = SolutionLabel::V1;
    std::vector<const Eigen::VectorXd*> incs;
    for (const auto& v : path.increments)
        incs.push_back(&v);
    const std::size_t N = incs.size();
    linear_pass(path.grid, source, path.dt, incs, opt.overflow, diag, [&](std::size_t k, const Eigen::VectorXd& V) {
        if (keep_step(k, N, opt.store_every)) {
            sol.times.push_back(k * path.dt);
            sol.values.push_back(V);
        }
    });
    return sol;
}

FieldSolution solve_v1(const TestFunction& phi, const NoisePath& path, const SolverOptions& opt,
                       SolverDiagnostics* diag)
{
    return solve_v1(cell_average(phi, path.grid), path, opt, diag);
}

FieldSolution solve_u(const Eigen::VectorXd& source, double theta, const NoisePath& path, const SolverOptions& opt,
                      SolverDiagnostics* diag)
{
    if (static_cast<std::size_t>(source.size()) != path.grid.n_cells())
        throw std::invalid_argument("mesh mismatch between source and noise path");
    if (!(theta > 0.0))
        throw std::invalid_argument("solve_u: theta must be > 0");
    check_cfl(path.grid, path.dt, opt.c_stab);
    const double dt = path.dt;
    const std::size_t N = path.increments.size();
    FieldSolution sol;
    sol.grid = path.grid;
    sol.dt = dt;
    sol.label = SolutionLabel::U;
    Eigen::VectorXd U = Eigen::VectorXd::Zero(source.size()), next(source.size());
    sol.times.push_back(0.0);
    sol.values.push_back(U);
    for (std::size_t k = 0; k < N; ++k) {
        const Eigen::VectorXd& dW = path.increments[k];
        count_order_violations(path.grid, dt, dW, diag);
        next = U + dt * (theta * source - 0.5 * U.cwiseProduct(U)) + U.cwiseProduct(dW);
        add_half_laplacian(path.grid, U, dt, next);
        U.swap(next);
        check_overflow(U, opt.overflow, k + 1, dW);
        if (keep_step(k + 1, N, opt.store_every)) {
            sol.times.push_back((k + 1) * dt);
            sol.values.push_back(U);
        }
    }
    return sol;
}

UVPair solve_uT_vT(const Eigen::VectorXd& source, const FieldSolution& V1, const NoisePath& path,
                   const SolverOptions& opt)
{
    check_path(V1.grid, path);
    const double T = path.horizon();
    UVPair out;
    out.uT = solve_u(source, 1.0 / std::sqrt(T), path, opt);
    if (out.uT.times.size() != V1.times.size())
        throw std::invalid_argument("solve_uT_vT: V1 was stored on a different time mesh");
    out.uT.label = SolutionLabel::uT;
    const double sT = std::sqrt(T);
    out.vT = out.uT;
    out.vT.label = SolutionLabel::vT;
    for (std::size_t i = 0; i < out.uT.values.size(); ++i) {
        out.uT.values[i] *= sT;
        out.vT.values[i] = V1.values[i] - out.uT.values[i];
    }
    return out;
}

FieldSolution solve_v1_sweep(const Eigen::VectorXd& source, const EnvironmentField& field, double T,
                             std::size_t stride, const SolverOptions& opt, SolverDiagnostics* diag)
{
    if (stride == 0)
        throw std::invalid_argument("solve_v1_sweep: stride must be >= 1");
    const GridSpec& grid = field.grid();
    check_cfl(grid, field.dt(), opt.c_stab);
    const std::size_t N = static_cast<std::size_t>(std::llround(T / field.dt()));
    FieldSolution sol;
    sol.grid = grid;
    sol.dt = field.dt();
    sol.label = SolutionLabel::V1;
    sol.times.push_back(0.0);
    sol.values.push_back(Eigen::VectorXd::Zero(source.size()));
    std::vector<Eigen::VectorXd> incs;
    incs.reserve(N);
    for (std::size_t k = 0; k < N; ++k)
        incs.push_back(field.increment(k));
    for (std::size_t j = stride; j <= N; j += stride) {
        std::vector<const Eigen::VectorXd*> pass;
        for (std::size_t k = 0; k < j; ++k)
            pass.push_back(&incs[j - 1 - k]);
        Eigen::VectorXd last;
        linear_pass(grid, source, field.dt(), pass, opt.overflow, j == N ? diag : nullptr,
                    [&](std::size_t k, const Eigen::VectorXd& V) {
                        if (k == j)
                            last = V;
                    });
        sol.times.push_back(j * field.dt());
        sol.values.push_back(std::move(last));
    }
    return sol;
}

CLTDecomposition clt_decomposition(const FieldSolution& V1, const FieldSolution& uT, const FieldSolution& vT,
                                   const NoisePath& path, double T)
{
    check_path(V1.grid, path);
    const std::size_t N = path.increments.size();
    if (V1.values.size() != N + 1 || uT.values.size() != N + 1 || vT.values.size() != N + 1)
        throw std::invalid_argument("clt_decomposition: solutions must be stored at every step of the path");
    if (!(uT.grid == V1.grid) || !(vT.grid == V1.grid))
        throw std::invalid_argument("clt_decomposition: mesh mismatch");
    const double hd = V1.grid.cell_volume();
    const double dt = path.dt;
    CLTDecomposition c;
    for (std::size_t k = 0; k < N; ++k) {
        const auto& v = V1.values[k];
        const auto& u = uT.values[k];
        c.I1 += dt * hd * v.squaredNorm();
        c.I2 += dt * hd * (v.squaredNorm() - u.squaredNorm());
        c.I3 += hd * vT.values[k].dot(path.increments[k]);
    }
    c.I1 /= 2.0 * T;
    c.I2 /= 2.0 * T;
    c.I3 /= std::sqrt(T);
    c.lhs = grid_mass(V1.grid, vT.values[N]) / std::sqrt(T);
    return c;
}

Trace sigma_sq(const FieldSolution& V1)
{
    Trace t;
    const double hd = V1.grid.cell_volume();
    for (std::size_t i = 0; i < V1.values.size(); ++i) {
        t.times.push_back(V1.times[i]);
        t.trace.push_back(hd * V1.values[i].squaredNorm());
    }
    t.value = t.trace.back();
    return t;
}

double xi_value(const Eigen::VectorXd& v, const GridSpec& grid, const FieldFactor& factor)
{
    const double hd = grid.cell_volume();
    return hd * hd * quad_form(factor, v);
}

double xi_value(const Eigen::VectorXd& v, const GridSpec& grid, const CorrelationKernel& kernel)
{
    const double hd = grid.cell_volume();
    const std::size_t n = grid.n_cells();
    Eigen::MatrixXd c = grid.centers();
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (v[static_cast<Eigen::Index>(i)] == 0.0)
            continue;
        for (std::size_t j = 0; j < n; ++j)
            s += v[static_cast<Eigen::Index>(i)] * v[static_cast<Eigen::Index>(j)] *
                 evaluate(kernel, c.col(static_cast<Eigen::Index>(i)), c.col(static_cast<Eigen::Index>(j)));
    }
    return hd * hd * s;
}

Trace xi_estimate(const FieldSolution& V1, const FieldFactor& factor)
{
    Trace t;
    for (std::size_t i = 0; i < V1.values.size(); ++i) {
        t.times.push_back(V1.times[i]);
        t.trace.push_back(xi_value(V1.values[i], V1.grid, factor));
    }
    t.value = t.trace.back();
    return t;
}

MartingaleStat martingale_stat(const FieldSolution& V1, const Eigen::VectorXd& source, const NoisePath& path)
{
    check_path(V1.grid, path);
    const std::size_t N = path.increments.size();
    if (V1.values.size() != N + 1)
        throw std::invalid_argument("martingale_stat: V1 must be stored at every step of the path");
    const GridSpec& g = V1.grid;
    const double hd = g.cell_volume();
    const double phi_mass = grid_mass(g, source);
    MartingaleStat m;
    double sum = 0.0, qv = 0.0;
    for (std::size_t k = 0; k <= N; ++k) {
        double t = k * path.dt;
        m.times.push_back(t);
        m.N_mass.push_back(grid_mass(g, V1.values[k]) - t * phi_mass);
        m.N_sum.push_back(sum);
        m.qv.push_back(qv);
        if (k == N)
            break;
        sum += hd * V1.values[k].dot(path.increments[k]);
        qv += path.dt * hd * hd * (path.factor ? quad_form(*path.factor, V1.values[k]) : 0.0);
    }
    return m;
}

MomentSolutions solve_v2_and_moments(const FieldSolution& V1, const NoisePath& path, const Eigen::VectorXd& mu,
                                     int n_max, const SolverOptions& opt)
{
    check_path(V1.grid, path);
    if (n_max < 1 || n_max > 4)
        throw std::invalid_argument("solve_v2_and_moments: n_max must be in 1..4");
    const std::size_t N = path.increments.size();
    if (V1.values.size() != N + 1)
        throw std::invalid_argument("solve_v2_and_moments: V1 must be stored at every step");
    check_cfl(path.grid, path.dt, opt.c_stab);
    const double dt = path.dt;
    const GridSpec& g = V1.grid;
    static const double binom[4][4] = {{1, 0, 0, 0}, {1, 1, 0, 0}, {1, 2, 1, 0}, {1, 3, 3, 1}};
    MomentSolutions out;
    out.V.push_back(V1);
    const Eigen::Index n = static_cast<Eigen::Index>(g.n_cells());
    std::vector<Eigen::VectorXd> cur(static_cast<std::size_t>(n_max + 1), Eigen::VectorXd::Zero(n));
    for (int q = 2; q <= n_max; ++q) {
        FieldSolution s;
        s.grid = g;
        s.dt = dt;
        s.label = q == 2 ? SolutionLabel::V2 : (q == 3 ? SolutionLabel::V3 : SolutionLabel::V4);
        s.times.push_back(0.0);
        s.values.push_back(Eigen::VectorXd::Zero(n));
        out.V.push_back(std::move(s));
    }
    Eigen::VectorXd src(n), next(n);
    for (std::size_t k = 0; k < N; ++k) {
        const Eigen::VectorXd& dW = path.increments[k];
        cur[1] = V1.values[k];
        std::vector<Eigen::VectorXd> upd(cur);
        for (int q = 2; q <= n_max; ++q) {
            src.setZero();
            for (int j = 1; j <= q - 1; ++j)
                src += binom[q - 1][j] * cur[q - j].cwiseProduct(cur[j]);
            next = cur[q] + dt * src + cur[q].cwiseProduct(dW);
            add_half_laplacian(g, cur[q], dt, next);
            check_overflow(next, opt.overflow, k + 1, dW);
            upd[q] = next;
        }
        cur.swap(upd);
        if (keep_step(k + 1, N, opt.store_every))
            for (int q = 2; q <= n_max; ++q) {
                out.V[q - 1].times.push_back((k + 1) * dt);
                out.V[q - 1].values.push_back(cur[q]);
            }
    }
    cur[1] = V1.values[N];
    std::vector<double> mv(static_cast<std::size_t>(n_max + 1), 0.0);
    for (int q = 1; q <= n_max; ++q)
        mv[q] = mu.dot(cur[q]);
    out.L.assign(static_cast<std::size_t>(n_max + 1), 0.0);
    out.L[0] = 1.0;
    for (int q = 1; q <= n_max; ++q)
        for (int k = 0; k <= q - 1; ++k)
            out.L[q] += binom[q - 1][k] * mv[q - k] * out.L[k];
    return out;
}

std::string solution_summary_csv(const FieldSolution& V1, const MartingaleStat& m, const FieldFactor& factor)
{
    CsvWriter w({"t", "lambda_V1", "sigma_sq", "xi", "N_mass", "N_sum", "qv"});
    for (std::size_t i = 0; i < V1.values.size(); ++i) {
        const auto& v = V1.values[i];
        double hd = V1.grid.cell_volume();
        std::size_t k = static_cast<std::size_t>(std::llround(V1.times[i] / V1.dt));
        double nm = k < m.N_mass.size() ? m.N_mass[k] : std::nan("");
        double ns = k < m.N_sum.size() ? m.N_sum[k] : std::nan("");
        double qv = k < m.qv.size() ? m.qv[k] : std::nan("");
        w.row(V1.times[i], grid_mass(V1.grid, v), hd * v.squaredNorm(), xi_value(v, V1.grid, factor), nm, ns, qv);
    }
    return w.str();
}

} // namespace superenv
