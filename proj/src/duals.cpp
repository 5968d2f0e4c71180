#include "superenv/duals.hpp"

#include "superenv/numerics.hpp"
#include "superenv/rng.hpp"

#include <boost/math/special_functions/gamma.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

namespace superenv {

namespace {

constexpr int kMaxDim = 16;

double lagrange_weight(int k, double p, int i0, std::array<double, 4>& w)
{
    (void)k;
    for (int a = 0; a < 4; ++a) {
        double num = 1.0, den = 1.0;
        for (int b = 0; b < 4; ++b) {
            if (b == a)
                continue;
            num *= p - (i0 + b);
            den *= static_cast<double>(a - b);
        }
        w[a] = num / den;
    }
    return 0.0;
}

int stencil_start(double p, int n)
{
    int i0 = static_cast<int>(std::floor(p)) - 1;
    return std::clamp(i0, 0, n - 3);
}

} // namespace

double sphere_mean_scaled(int d, double z)
{
    const double nu = 0.5 * d - 1.0;
    if (z < 0.5) {
        double term = 1.0, s = 1.0, q = 0.25 * z * z;
        for (int k = 1; k < 30; ++k) {
            term *= q / (k * (nu + k));
            s += term;
            if (term < 1e-18 * s)
                break;
        }
        return s * std::exp(-z);
    }
    const double e2 = std::exp(-2.0 * z);
    if (d == 3)
        return (1.0 - e2) / (2.0 * z);
    if (d == 5)
        return 3.0 * (0.5 * z * (1.0 + e2) - 0.5 * (1.0 - e2)) / (z * z * z);
    const double pre = std::lgamma(nu + 1.0) + nu * std::log(2.0 / z);
    if (z < 500.0)
        return std::exp(pre + std::log(std::cyl_bessel_i(nu, z)) - z);
    // Hankel expansion of e^{-z} I_nu(z)
    double s = 1.0, term = 1.0, mu = 4.0 * nu * nu;
    for (int k = 1; k < 12; ++k) {
        term *= -(mu - (2.0 * k - 1.0) * (2.0 * k - 1.0)) / (k * 8.0 * z);
        s += term;
    }
    return std::exp(pre) * s / std::sqrt(2.0 * std::numbers::pi * z);
}

double radial_heat_convolution(const std::function<double(double)>& f, std::vector<double> breaks, double t, double r,
                               int d, double rel_tol)
{
    if (!(t > 0.0))
        throw std::domain_error("radial_heat_convolution: t must be > 0");
    const double st = std::sqrt(t);
    double end = breaks.empty() ? std::numeric_limits<double>::infinity() : breaks.back();
    const double lo = std::max(0.0, r - 40.0 * st);
    const double hi = std::min(end, r + 40.0 * st);
    if (hi <= lo)
        return 0.0;
    std::vector<double> cuts{lo, hi};
    for (double b : breaks)
        if (b > lo && b < hi)
            cuts.push_back(b);
    for (double c : {r - 8.0 * st, r - 2.0 * st, r, r + 2.0 * st, r + 8.0 * st})
        if (c > lo && c < hi)
            cuts.push_back(c);
    std::sort(cuts.begin(), cuts.end());
    cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
    const double S = sphere_area(d);
    const double norm = std::pow(2.0 * std::numbers::pi * t, -0.5 * d);
    auto integrand = [&](double rho) {
        double fv = f(rho);
        if (fv == 0.0)
            return 0.0;
        double g = std::exp(-(r - rho) * (r - rho) / (2.0 * t)) * sphere_mean_scaled(d, rho * r / t);
        return fv * S * std::pow(rho, d - 1) * norm * g;
    };
    return integrate_pieces(integrand, cuts, rel_tol);
}

double apply_P(const TestFunction& phi, double t, const Eigen::VectorXd& x)
{
    if (t < 0.0)
        throw std::domain_error("apply_P: t must be >= 0");
    if (t == 0.0)
        return phi(x);
    double r = (x - phi.center).norm();
    return radial_heat_convolution([&](double rho) { return phi.profile(rho); }, {phi.radius}, t, r, phi.dim());
}

double apply_Q(const TestFunction& phi, double t, const Eigen::VectorXd& x)
{
    if (t < 0.0)
        throw std::domain_error("apply_Q: t must be >= 0");
    if (t == 0.0)
        return 0.0;
    return integrate([&](double s) { return apply_P(phi, s, x); }, 0.0, t, 1e-9);
}

QTable::QTable(const TestFunction& phi, double tau_max, int n_u, int n_r)
    : phi_(phi), tau_max_(tau_max), n_u_(n_u), n_r_(n_r)
{
    if (!(tau_max > 0.0) || n_u < 4 || n_r < 4)
        throw std::invalid_argument("QTable: need tau_max > 0 and at least 4 intervals per axis");
    r_max_ = phi.radius + 10.0 * std::sqrt(tau_max);
    values_ = Eigen::MatrixXd::Zero(n_u + 1, n_r + 1);
    const GaussRule& gl = gauss_legendre(8);
    const int d = phi.dim();
    auto profile = [&](double rho) { return phi.profile(rho); };
    for (int i = 0; i <= n_r; ++i) {
        double r = r_max_ * i / n_r;
        double acc = 0.0;
        for (int j = 1; j <= n_u; ++j) {
            double a = tau_max * std::pow((j - 1.0) / n_u, 2), b = tau_max * std::pow(double(j) / n_u, 2);
            double part = 0.0;
            for (int k = 0; k < gl.nodes.size(); ++k) {
                double s = 0.5 * (a + b) + 0.5 * (b - a) * gl.nodes[k];
                part += gl.weights[k] * radial_heat_convolution(profile, {phi.radius}, s, r, d, 1e-9);
            }
            acc += 0.5 * (b - a) * part;
            values_(j, i) = acc;
        }
    }
}

double QTable::operator()(double tau, double r) const
{
    if (tau <= 0.0 || r >= r_max_)
        return 0.0;
    if (tau > tau_max_ * (1.0 + 1e-12))
        throw std::out_of_range("QTable: tau beyond table range");
    double pu = std::sqrt(std::min(tau, tau_max_) / tau_max_) * n_u_;
    double pr = r / r_max_ * n_r_;
    int iu = stencil_start(pu, n_u_), ir = stencil_start(pr, n_r_);
    std::array<double, 4> wu, wr;
    lagrange_weight(0, pu, iu, wu);
    lagrange_weight(0, pr, ir, wr);
    double s = 0.0;
    for (int a = 0; a < 4; ++a) {
        double row = 0.0;
        for (int b = 0; b < 4; ++b)
            row += wr[b] * values_(iu + a, ir + b);
        s += wu[a] * row;
    }
    return std::max(s, 0.0);
}

double QTable::at(double tau, const double* x) const
{
    double r2 = 0.0;
    for (int a = 0; a < phi_.dim(); ++a)
        r2 += (x[a] - phi_.center[a]) * (x[a] - phi_.center[a]);
    return (*this)(tau, std::sqrt(r2));
}

namespace {

struct PairContext {
    const TestFunction* phi;
    const TestFunction* psi;
    const QTable* qphi;
    const QTable* qpsi;
    const CorrelationKernel* kernel;
    double t;
    double dt;
    int d;
    const GridSpec* box = nullptr;   // kernel read at cell centres, zero outside the box
    bool excess = false;             // weight e^{int g} - 1 instead of e^{int g}
};

double pair_g(const PairContext& c, const double* b1, const double* b2)
{
    if (c.kernel->kind == KernelKind::Zero || c.kernel->epsilon == 0.0)
        return 0.0;
    Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kMaxDim, 1> z(c.d);
    if (c.box) {
        long i = c.box->cell_of(b1), j = c.box->cell_of(b2);
        if (i < 0 || j < 0)
            return 0.0;
        const long m = c.box->cells_per_axis;
        for (int a = c.d - 1; a >= 0; --a, i /= m, j /= m)
            z[a] = c.box->h() * static_cast<double>(i % m - j % m);
        return evaluate_offset(*c.kernel, z);
    }
    for (int a = 0; a < c.d; ++a)
        z[a] = b1[a] - b2[a];
    return evaluate_offset(*c.kernel, z);
}

// One path of int_0^t [phi(B_s) Q_{t-s}psi(B~_s) + psi(B~_s) Q_{t-s}phi(B_s)] e^{int_0^s g} ds, trapezoid in s.
double pair_sample(const PairContext& c, const double* x, const double* y, Engine& eng, NormalSource& normal)
{
    double b1[kMaxDim], b2[kMaxDim];
    std::copy(x, x + c.d, b1);
    std::copy(y, y + c.d, b2);
    auto integrand = [&](double s, double logw) {
        double tau = c.t - s;
        double v = 0.0;
        double f1 = (*c.phi)(b1);
        if (f1 != 0.0)
            v += f1 * c.qpsi->at(tau, b2);
        double f2 = (*c.psi)(b2);
        if (f2 != 0.0)
            v += f2 * c.qphi->at(tau, b1);
        if (v == 0.0)
            return 0.0;
        return c.excess ? v * std::expm1(logw) : v * std::exp(logw);
    };
    double s = 0.0, logw = 0.0;
    double g_prev = pair_g(c, b1, b2);
    double f_prev = integrand(0.0, 0.0);
    double total = 0.0;
    while (s < c.t * (1.0 - 1e-14)) {
        double ds = std::min(c.dt, c.t - s);
        double sd = std::sqrt(ds);
        for (int a = 0; a < c.d; ++a) {
            b1[a] += sd * normal(eng);
            b2[a] += sd * normal(eng);
        }
        s += ds;
        double g = pair_g(c, b1, b2);
        logw += 0.5 * (g_prev + g) * ds;
        g_prev = g;
        double f = integrand(s, logw);
        total += 0.5 * (f_prev + f) * ds;
        f_prev = f;
    }
    return total;
}

} // namespace

MCEstimate dual_V(const TestFunction& phi, const TestFunction& psi, double t, const Eigen::VectorXd& x,
                  const Eigen::VectorXd& y, const CorrelationKernel& kernel, std::size_t n_paths, double dt_path,
                  std::uint64_t seed, const QTable* q_phi, const QTable* q_psi)
{
    if (n_paths == 0)
        throw std::invalid_argument("dual_V: n_paths must be > 0");
    if (!(t > 0.0) || !(dt_path > 0.0))
        throw std::invalid_argument("dual_V: t and dt_path must be > 0");
    const int d = phi.dim();
    if (d > kMaxDim || psi.dim() != d || x.size() != d || y.size() != d)
        throw std::invalid_argument("dual_V: dimension mismatch");
    QTable own_phi, own_psi;
    if (!q_phi || q_phi->tau_max() < t) {
        own_phi = QTable(phi, t);
        q_phi = &own_phi;
    }
    if (!q_psi || q_psi->tau_max() < t) {
        own_psi = QTable(psi, t);
        q_psi = &own_psi;
    }
    PairContext c{&phi, &psi, q_phi, q_psi, &kernel, t, dt_path, d};
    Engine eng = make_engine(derive_seed(seed, 0xD7A1));
    NormalSource normal;
    RunningStats rs;
    for (std::size_t i = 0; i < n_paths; ++i)
        rs.push(pair_sample(c, x.data(), y.data(), eng, normal));
    return rs.estimate(seed);
}

double residual_green_potential(double q, const CorrelationKernel& kernel, double r)
{
    if (kernel.kind == KernelKind::Zero || kernel.epsilon == 0.0)
        return 0.0;
    const int d = kernel.dim;
    const double a = kernel.alpha;
    const double S = sphere_area(d);
    if (r <= 0.0)
        return q * kernel.epsilon * green_constant(d) * green_integral(a, d);
    // mass of g_bar inside the ball of radius r
    double inner;
    if (r <= 1.0)
        inner = S * std::pow(r, d) / d;
    else if (std::abs(a - d) < 1e-12)
        inner = S * (1.0 / d + std::log(r));
    else
        inner = S * (1.0 / d + (std::pow(r, d - a) - 1.0) / (d - a));
    // int_{|z|>r} g_bar(z) |z|^{2-d} dz
    double outer = r >= 1.0 ? S * std::pow(r, 2.0 - a) / (a - 2.0) : S * ((1.0 - r * r) / 2.0 + 1.0 / (a - 2.0));
    return q * kernel.epsilon * green_constant(d) * (std::pow(r, 2.0 - d) * inner + outer);
}

ExpMoment dual_expmoment(double q, const CorrelationKernel& kernel, const Eigen::VectorXd& x,
                         const Eigen::VectorXd& y, double horizon, std::size_t n_paths, double dt_path,
                         std::uint64_t seed, double kappa)
{
    if (n_paths == 0 || !(horizon > 0.0) || !(dt_path > 0.0))
        throw std::invalid_argument("dual_expmoment: need n_paths > 0, horizon > 0, dt_path > 0");
    const int d = static_cast<int>(x.size());
    ExpMoment out;
    if (kernel.kind == KernelKind::Zero || kernel.epsilon == 0.0) {
        out.estimate.mean = 1.0;
        out.estimate.n_samples = n_paths;
        out.estimate.seed = seed;
        return out;
    }
    Engine eng = make_engine(derive_seed(seed, 0xE4B0));
    NormalSource normal;
    RunningStats rs;
    double wsum = 0.0, whsum = 0.0, steps = 0.0;
    Eigen::VectorXd beta(d);
    for (std::size_t i = 0; i < n_paths; ++i) {
        beta = x - y;
        double s = 0.0, expo = 0.0, g_prev = evaluate_offset(kernel, beta);
        while (s < horizon * (1.0 - 1e-14)) {
            double ds = std::min(std::max(dt_path, kappa * beta.squaredNorm()), horizon - s);
            double sd = std::sqrt(2.0 * ds);
            for (int a = 0; a < d; ++a)
                beta[a] += sd * normal(eng);
            s += ds;
            double g = evaluate_offset(kernel, beta);
            expo += 0.5 * q * (g_prev + g) * ds;
            g_prev = g;
            steps += 1.0;
        }
        double w = std::exp(expo);
        rs.push(w);
        wsum += w;
        whsum += w * residual_green_potential(q, kernel, beta.norm());
    }
    out.estimate = rs.estimate(seed);
    out.horizon_diagnostic = whsum / wsum;
    out.mean_steps = steps / static_cast<double>(n_paths);
    return out;
}

namespace {

struct FourthContext {
    const TestFunction* phi;
    const QTable* table;
    const CorrelationKernel* kernel;
    double dt;
    int d;
    std::size_t inner;
};

double moment_sample(const FourthContext& c, int n, double t, const std::vector<const double*>& pts, Engine& eng,
                     NormalSource& normal)
{
    if (t <= 0.0)
        return 0.0;
    if (n == 1)
        return c.table->at(t, pts[0]);
    if (n == 2) {
        PairContext pc{c.phi, c.phi, c.table, c.table, c.kernel, t, c.dt, c.d};
        double s = 0.0;
        for (std::size_t i = 0; i < c.inner; ++i)
            s += pair_sample(pc, pts[0], pts[1], eng, normal);
        return s / static_cast<double>(c.inner);
    }
    // random time s, then the n-Brownian weight up to s
    const double s_end = t * uniform01(eng);
    std::vector<double> b(static_cast<std::size_t>(n * c.d));
    for (int k = 0; k < n; ++k)
        std::copy(pts[k], pts[k] + c.d, b.begin() + k * c.d);
    auto gsum = [&]() {
        double g = 0.0;
        if (c.kernel->kind == KernelKind::Zero || c.kernel->epsilon == 0.0)
            return 0.0;
        Eigen::VectorXd z(c.d);
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) {
                for (int a = 0; a < c.d; ++a)
                    z[a] = b[i * c.d + a] - b[j * c.d + a];
                g += evaluate_offset(*c.kernel, z);
            }
        return g;
    };
    double s = 0.0, logw = 0.0, g_prev = gsum();
    while (s < s_end * (1.0 - 1e-14)) {
        double ds = std::min(c.dt, s_end - s);
        double sd = std::sqrt(ds);
        for (auto& v : b)
            v += sd * normal(eng);
        s += ds;
        double g = gsum();
        logw += 0.5 * (g_prev + g) * ds;
        g_prev = g;
    }
    double total = 0.0;
    for (int k = 0; k < n; ++k) {
        double f = (*c.phi)(&b[k * c.d]);
        if (f == 0.0)
            continue;
        std::vector<const double*> rest;
        for (int i = 0; i < n; ++i)
            if (i != k)
                rest.push_back(&b[i * c.d]);
        total += f * moment_sample(c, n - 1, t - s_end, rest, eng, normal);
    }
    return t * total * std::exp(logw);
}

} // namespace

MCEstimate dual_fourth(const TestFunction& phi, double t, const Eigen::MatrixXd& points,
                       const CorrelationKernel& kernel, const FourthBudget& budget)
{
    const int n = static_cast<int>(points.cols());
    if (n < 3 || n > 4)
        throw std::invalid_argument("dual_fourth: 3 or 4 points required");
    if (points.rows() != phi.dim())
        throw std::invalid_argument("dual_fourth: dimension mismatch");
    FourthBudget b = budget;
    bool flagged = false;
    const std::size_t levels = static_cast<std::size_t>(n - 2);
    auto work = [&](std::size_t inner) {
        std::size_t w = b.outer_paths;
        for (std::size_t l = 0; l < levels; ++l)
            w *= std::max<std::size_t>(inner, 1);
        return w;
    };
    while (b.inner_paths > 1 && work(b.inner_paths) > b.max_work) {
        --b.inner_paths;
        flagged = true;
    }
    if (work(b.inner_paths) > b.max_work) {
        b.outer_paths = std::max<std::size_t>(b.max_work, 100);
        flagged = true;
    }
    QTable table(phi, t);
    FourthContext c{&phi, &table, &kernel, b.dt_path, phi.dim(), b.inner_paths};
    Engine eng = make_engine(derive_seed(b.seed, 0xF0F0));
    NormalSource normal;
    RunningStats rs;
    std::vector<const double*> pts;
    for (int k = 0; k < n; ++k)
        pts.push_back(points.col(k).data());
    for (std::size_t i = 0; i < b.outer_paths; ++i)
        rs.push(moment_sample(c, n, t, pts, eng, normal));
    MCEstimate e = rs.estimate(b.seed);
    if (flagged) {
        // budget cut: report a conservative error bar
        e.flagged = true;
        e.std_err *= 2.0;
        e.note = "budget exhausted; stderr inflated x2";
    }
    return e;
}

void validate(const BoundFns& bf)
{
    if (!(bf.p > 1.0 && bf.p < 10.0 / 9.0))
        throw std::invalid_argument("BoundFns: p must lie in (1, 10/9)");
    if (!(bf.K > 0.0))
        throw std::invalid_argument("BoundFns: K must be > 0");
    if (bf.d < 3)
        throw std::invalid_argument("BoundFns: d must be >= 3");
}

double bound_Qtilde(double t, const Eigen::VectorXd& x, const BoundFns& bf)
{
    validate(bf);
    if (t < 0.0)
        throw std::domain_error("bound_Qtilde: t must be >= 0");
    if (t == 0.0)
        return 0.0;
    const double r = x.norm();
    auto indicator = [&](double rho) { return rho <= bf.K ? 1.0 : 0.0; };
    auto f = [&](double s) {
        double inner = radial_heat_convolution(indicator, {bf.K}, s, r, bf.d, 1e-9);
        return std::pow(std::max(inner, 0.0), 1.0 / bf.p);
    };
    std::vector<double> cuts{0.0};
    for (double c : {0.01, 0.1, 1.0, 10.0, 100.0})
        if (c < t)
            cuts.push_back(c);
    cuts.push_back(t);
    return integrate_pieces(f, cuts, 1e-8);
}

double bound_I(double t, const Eigen::VectorXd& x, const BoundFns& bf)
{
    validate(bf);
    if (t < 0.0)
        throw std::domain_error("bound_I: t must be >= 0");
    if (t == 0.0)
        return 0.0;
    const int d = bf.d;
    const double r2 = x.squaredNorm();
    const double a = 0.5 * d - 0.5 * d / bf.p;
    if (r2 == 0.0 && 0.5 * d / bf.p >= 1.0)
        return 1.0;   // the integral diverges at s = 0; the minimum with 1 is attained
    auto f = [&](double s) {
        if (s <= 0.0)
            return 0.0;
        return std::pow(s, a) * std::pow(16.0 * std::numbers::pi * s, -0.5 * d) * std::exp(-r2 / (16.0 * s));
    };
    std::vector<double> cuts{0.0};
    for (double c : {r2 / 160.0, r2 / 16.0, r2 / 1.6, 10.0 * r2})
        if (c > 0.0 && c < t && c > cuts.back())
            cuts.push_back(c);
    cuts.push_back(t);
    return std::min(1.0, integrate_pieces(f, cuts, 1e-9));
}

double bound_J(double t, const Eigen::VectorXd& x, const BoundFns& bf)
{
    validate(bf);
    if (bf.d < 5)
        throw std::domain_error("bound_J: requires d >= 5");
    if (t < 0.0)
        throw std::domain_error("bound_J: t must be >= 0");
    if (t == 0.0)
        return 0.0;
    const double e = 4.0 * bf.p - 2.0 * bf.d;
    auto prof = [&](double rho) { return rho <= 1.0 ? 1.0 : std::pow(rho, e); };
    const double r = x.norm();
    auto f = [&](double s) {
        double inner = radial_heat_convolution(prof, {1.0, std::numeric_limits<double>::infinity()}, s, r, bf.d, 1e-9);
        return std::pow(std::max(inner, 0.0), 1.0 / bf.p);
    };
    std::vector<double> cuts{0.0};
    for (double c : {0.01, 0.1, 1.0, 10.0, 100.0})
        if (c < t)
            cuts.push_back(c);
    cuts.push_back(t);
    return integrate_pieces(f, cuts, 1e-8);
}

BoundReport bound_checks(const CorrelationKernel& kernel, const TestFunction& phi, const BoundFns& bf,
                         const std::vector<BoundSample>& samples, std::size_t n_paths, double dt_path,
                         std::uint64_t seed)
{
    validate(bf);
    BoundReport rep;
    if (samples.empty())
        return rep;
    double t_max = 0.0;
    for (const auto& s : samples)
        t_max = std::max(t_max, s.t);
    QTable table(phi, t_max);
    const double nan = std::numeric_limits<double>::quiet_NaN();
    double sup_top[3] = {0, 0, 0}, sup_rest[3] = {0, 0, 0};
    std::size_t idx = 0;
    for (const auto& s : samples) {
        BoundRow row;
        row.t = s.t;
        row.x_norm = s.x.norm();
        row.y_norm = s.y.norm();
        double qx = bound_Qtilde(s.t, s.x, bf), qy = bound_Qtilde(s.t, s.y, bf);
        MCEstimate v = dual_V(phi, phi, s.t, s.x, s.y, kernel, n_paths, dt_path, derive_seed(seed, idx++), &table,
                              &table);
        row.ratio_V_QQ = v.mean / (qx * qy);
        double ix = bound_I(s.t, s.x, bf);
        row.ratio_Q_I = qx / ix;
        row.ratio_J_I = bf.d >= 5 ? bound_J(s.t, s.x, bf) / ix : nan;
        double vals[3] = {row.ratio_V_QQ, row.ratio_Q_I, row.ratio_J_I};
        for (int k = 0; k < 3; ++k) {
            if (std::isnan(vals[k]))
                continue;
            if (!std::isfinite(vals[k]))
                rep.finite = false;
            double& target = s.t == t_max ? sup_top[k] : sup_rest[k];
            target = std::max(target, vals[k]);
        }
        rep.rows.push_back(row);
    }
    rep.sup_V_QQ = std::max(sup_top[0], sup_rest[0]);
    rep.sup_Q_I = std::max(sup_top[1], sup_rest[1]);
    rep.sup_J_I = bf.d >= 5 ? std::max(sup_top[2], sup_rest[2]) : nan;
    auto growth = [](double top, double rest) { return rest > 0.0 ? top / rest : 1.0; };
    rep.growth_V_QQ = growth(sup_top[0], sup_rest[0]);
    rep.growth_Q_I = growth(sup_top[1], sup_rest[1]);
    rep.growth_J_I = bf.d >= 5 ? growth(sup_top[2], sup_rest[2]) : nan;
    return rep;
}

double tail_integral(double alpha, int d, double t)
{
    if (!(t > 0.0))
        throw std::domain_error("tail_integral: t must be > 0");
    auto prof = [alpha](double rho) { return capped_power(rho, alpha); };
    return radial_heat_convolution(prof, {1.0, std::numeric_limits<double>::infinity()}, t, 0.0, d, 1e-11);
}

double green_G(double r, int d)
{
    if (d < 3)
        throw std::domain_error("green_G: d must be >= 3");
    if (!(r > 0.0))
        throw std::domain_error("green_G: singular at z = y");
    const double S0 = r * r;
    auto f = [&](double s) {
        if (s <= 0.0)
            return 0.0;
        return std::pow(4.0 * std::numbers::pi * s, -0.5 * d) * std::exp(-r * r / (4.0 * s));
    };
    double head = integrate(f, 0.0, S0, 1e-12);
    double tail = 0.25 * std::pow(std::numbers::pi, -0.5 * d) * std::pow(r, 2.0 - d) *
                  boost::math::tgamma_lower(0.5 * d - 1.0, r * r / (4.0 * S0));
    return head + tail;
}

double box_mean_Q(const TestFunction& phi, const GridSpec& grid, double t)
{
    if (t <= 0.0)
        return 0.0;
    const int d = phi.dim();
    const double L = grid.half_width;
    const GaussRule& gv = gauss_legendre(24);
    const int panels = d <= 3 ? 4 : 2;
    const GaussRule& gy = gauss_legendre(d <= 3 ? 8 : 6);
    const int per_axis = panels * static_cast<int>(gy.nodes.size());
    // 1-d node set over [c-K, c+K] per axis
    std::vector<std::vector<double>> ax(d), aw(d);
    for (int a = 0; a < d; ++a) {
        double lo = phi.center[a] - phi.radius, w = 2.0 * phi.radius / panels;
        for (int p = 0; p < panels; ++p)
            for (Eigen::Index k = 0; k < gy.nodes.size(); ++k) {
                ax[a].push_back(lo + p * w + 0.5 * w * (1.0 + gy.nodes[k]));
                aw[a].push_back(0.5 * w * gy.weights[k]);
            }
    }
    // per-axis survival factor for each time node: F[a][i][v]
    const Eigen::Index nv = gv.nodes.size();
    std::vector<double> svals(static_cast<std::size_t>(nv)), sw(static_cast<std::size_t>(nv));
    for (Eigen::Index k = 0; k < nv; ++k) {
        double v = 0.5 * (1.0 + gv.nodes[k]);
        svals[k] = t * v * v;
        sw[k] = 0.5 * gv.weights[k] * 2.0 * t * v;
    }
    std::vector<std::vector<std::vector<double>>> F(d);
    for (int a = 0; a < d; ++a) {
        F[a].assign(per_axis, std::vector<double>(static_cast<std::size_t>(nv)));
        for (int i = 0; i < per_axis; ++i)
            for (Eigen::Index k = 0; k < nv; ++k) {
                double ss = std::sqrt(svals[k]);
                F[a][i][k] = normal_cdf((L - ax[a][i]) / ss) - normal_cdf((-L - ax[a][i]) / ss);
            }
    }
    std::vector<int> idx(d, 0);
    Eigen::VectorXd y(d);
    double total = 0.0;
    std::vector<double> prod(static_cast<std::size_t>(nv));
    while (true) {
        double w = 1.0;
        for (int a = 0; a < d; ++a) {
            y[a] = ax[a][idx[a]];
            w *= aw[a][idx[a]];
        }
        double f = phi(y);
        if (f != 0.0) {
            double inner = 0.0;
            for (Eigen::Index k = 0; k < nv; ++k) {
                double p = sw[k];
                for (int a = 0; a < d; ++a)
                    p *= F[a][idx[a]][k];
                inner += p;
            }
            total += w * f * inner;
        }
        int a = d - 1;
        while (a >= 0 && ++idx[a] == per_axis)
            idx[a--] = 0;
        if (a < 0)
            break;
    }
    return total;
}

double box_integral_Q_squared(const QTable& q, double t, const GridSpec& grid, int nodes_per_axis)
{
    const int d = grid.dim;
    const GaussRule& g = gauss_legendre(8);
    const int panels = std::max(1, nodes_per_axis / 8);
    const double L = grid.half_width;
    std::vector<double> ax, aw;
    double w = 2.0 * L / panels;
    for (int p = 0; p < panels; ++p)
        for (Eigen::Index k = 0; k < g.nodes.size(); ++k) {
            ax.push_back(-L + p * w + 0.5 * w * (1.0 + g.nodes[k]));
            aw.push_back(0.5 * w * g.weights[k]);
        }
    const int n = static_cast<int>(ax.size());
    std::vector<int> idx(d, 0);
    double x[kMaxDim];
    double total = 0.0;
    while (true) {
        double wt = 1.0;
        for (int a = 0; a < d; ++a) {
            x[a] = ax[idx[a]];
            wt *= aw[idx[a]];
        }
        double v = q.at(t, x);
        total += wt * v * v;
        int a = d - 1;
        while (a >= 0 && ++idx[a] == n)
            idx[a--] = 0;
        if (a < 0)
            break;
    }
    return total;
}

SecondMomentOracle second_moment_oracle(const TestFunction& phi, double t, const GridSpec& grid,
                                        const CorrelationKernel& kernel, double atom, std::size_t n_paths,
                                        double dt_path, std::uint64_t seed)
{
    if (!(t > 0.0) || !(atom >= 0.0))
        throw std::invalid_argument("second_moment_oracle: need t > 0 and atom >= 0");
    const int d = phi.dim();
    if (grid.dim != d || d > kMaxDim)
        throw std::invalid_argument("second_moment_oracle: dimension mismatch");
    SecondMomentOracle out;
    QTable q(phi, t);
    const double L = grid.half_width;
    out.A0 = std::pow(box_mean_Q(phi, grid, t), 2);

    auto pi_box = [&](const double* y, double r) {
        double p = 1.0;
        for (int a = 0; a < d; ++a) {
            if (r <= 0.0) {
                p *= std::abs(y[a]) <= L ? 1.0 : 0.0;
                continue;
            }
            double sr = std::sqrt(r);
            p *= normal_cdf((L - y[a]) / sr) - normal_cdf((-L - y[a]) / sr);
        }
        return p;
    };

    // B0: GL in s, composite GL over the cube where Q_s phi lives
    const double R = phi.radius + 6.0 * std::sqrt(t);
    {
        const GaussRule& gs = gauss_legendre(16);
        const GaussRule& gy = gauss_legendre(8);
        const int panels = d <= 3 ? 6 : 3;
        std::vector<double> ax, aw;
        double w = 2.0 * R / panels;
        for (int p = 0; p < panels; ++p)
            for (Eigen::Index k = 0; k < gy.nodes.size(); ++k) {
                ax.push_back(-R + p * w + 0.5 * w * (1.0 + gy.nodes[k]));
                aw.push_back(0.5 * w * gy.weights[k]);
            }
        const int n = static_cast<int>(ax.size());
        std::vector<int> idx(d, 0);
        double y[kMaxDim];
        double total = 0.0;
        while (true) {
            double wt = 1.0;
            for (int a = 0; a < d; ++a) {
                y[a] = phi.center[a] + ax[idx[a]];
                wt *= aw[idx[a]];
            }
            double inner = 0.0;
            for (Eigen::Index k = 0; k < gs.nodes.size(); ++k) {
                double s = 0.5 * t * (1.0 + gs.nodes[k]);
                double v = q.at(s, y);
                if (v != 0.0)
                    inner += 0.5 * t * gs.weights[k] * v * v * pi_box(y, t - s);
            }
            total += wt * inner;
            int a = d - 1;
            while (a >= 0 && ++idx[a] == n)
                idx[a--] = 0;
            if (a < 0)
                break;
        }
        out.B0 = total;
    }

    // A_self = 2 atom int_0^t ds int phi(y) Q_{t-s}phi(y) pi_box(y, s) dy over the support cube of phi
    {
        const GaussRule& gs = gauss_legendre(16);
        const GaussRule& gy = gauss_legendre(8);
        const int panels = d <= 3 ? 4 : 2;
        const double K = phi.radius;
        std::vector<double> ax, aw;
        double w = 2.0 * K / panels;
        for (int p = 0; p < panels; ++p)
            for (Eigen::Index k = 0; k < gy.nodes.size(); ++k) {
                ax.push_back(-K + p * w + 0.5 * w * (1.0 + gy.nodes[k]));
                aw.push_back(0.5 * w * gy.weights[k]);
            }
        const int n = static_cast<int>(ax.size());
        std::vector<int> idx(d, 0);
        double y[kMaxDim];
        double total = 0.0;
        while (true) {
            double wt = 1.0;
            for (int a = 0; a < d; ++a) {
                y[a] = phi.center[a] + ax[idx[a]];
                wt *= aw[idx[a]];
            }
            double f = phi(y);
            if (f != 0.0) {
                double inner = 0.0;
                for (Eigen::Index k = 0; k < gs.nodes.size(); ++k) {
                    double s = 0.5 * t * (1.0 + gs.nodes[k]);
                    inner += 0.5 * t * gs.weights[k] * q.at(t - s, y) * pi_box(y, s);
                }
                total += wt * f * inner;
            }
            int a = d - 1;
            while (a >= 0 && ++idx[a] == n)
                idx[a--] = 0;
            if (a < 0)
                break;
        }
        out.A_self = 2.0 * atom * total;
    }

    if (kernel.kind == KernelKind::Zero || kernel.epsilon == 0.0) {
        return out;
    }
    if (n_paths == 0 || !(dt_path > 0.0))
        throw std::invalid_argument("second_moment_oracle: n_paths and dt_path must be > 0");

    PairContext c{&phi, &phi, &q, &q, &kernel, t, dt_path, d, &grid, true};
    Engine eng = make_engine(derive_seed(seed, 0x5EC0));
    NormalSource normal;
    const double box_vol = grid.box_volume();
    const double cube_vol = std::pow(2.0 * R, d);
    RunningStats rA, rB;
    double x[kMaxDim], y[kMaxDim];
    for (std::size_t i = 0; i < n_paths; ++i) {
        for (int a = 0; a < d; ++a) {
            x[a] = L * (2.0 * uniform01(eng) - 1.0);
            y[a] = L * (2.0 * uniform01(eng) - 1.0);
        }
        c.t = t;
        rA.push(box_vol * box_vol * pair_sample(c, x, y, eng, normal));
        double s = t * uniform01(eng);
        for (int a = 0; a < d; ++a)
            y[a] = phi.center[a] + R * (2.0 * uniform01(eng) - 1.0);
        double pb = pi_box(y, t - s);
        c.t = s;
        rB.push(s > 0.0 && pb > 0.0 ? t * cube_vol * pb * pair_sample(c, y, y, eng, normal) : 0.0);
    }
    out.dA = rA.estimate(seed);
    out.dB = rB.estimate(seed);
    return out;
}

} // namespace superenv
