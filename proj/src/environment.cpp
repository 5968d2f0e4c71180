#include "superenv/environment.hpp"

#include "superenv/rng.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <bit>
#include <cstring>
#include <fstream>
#include <numbers>
#include <stdexcept>

namespace superenv {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Symmetric square root factor with small eigenvalues dropped: returns m x r.
Eigen::MatrixXd psd_factor(const Eigen::MatrixXd& G, double rel_tol)
{
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(G);
    const Eigen::VectorXd& lam = es.eigenvalues();
    double top = lam.maxCoeff();
    if (top <= 0.0)
        return Eigen::MatrixXd::Zero(G.rows(), 1);
    std::vector<Eigen::Index> keep;
    for (Eigen::Index i = lam.size() - 1; i >= 0; --i)
        if (lam[i] > rel_tol * top)
            keep.push_back(i);
    Eigen::MatrixXd A(G.rows(), static_cast<Eigen::Index>(keep.size()));
    for (std::size_t j = 0; j < keep.size(); ++j)
        A.col(static_cast<Eigen::Index>(j)) = es.eigenvectors().col(keep[j]) * std::sqrt(lam[keep[j]]);
    return A;
}

Eigen::VectorXd axis_centers(const GridSpec& g)
{
    Eigen::VectorXd x(g.cells_per_axis);
    for (int i = 0; i < g.cells_per_axis; ++i)
        x[i] = g.axis_center(i);
    return x;
}

void build_dense(FieldFactor& f, const GridSpec& grid, const CorrelationKernel& kernel)
{
    Eigen::MatrixXd G = gram_matrix(kernel, grid.centers());
    const double eps = kernel.epsilon;
    const Eigen::Index n = G.rows();
    Eigen::LLT<Eigen::MatrixXd> llt(G);
    if (llt.info() == Eigen::Success) {
        f.lower = llt.matrixL();
        return;
    }
    for (double j = 1e-12; j <= 1e-6 * (1 + 1e-9); j *= 10.0) {
        Eigen::MatrixXd Gj = G;
        Gj.diagonal().array() += j * eps;
        llt.compute(Gj);
        if (llt.info() == Eigen::Success) {
            f.jitter = j * eps;
            f.lower = llt.matrixL();
            return;
        }
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(G);
    Eigen::VectorXd lam = es.eigenvalues();
    double neg = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
        if (lam[i] < 0.0) {
            neg += -lam[i];
            lam[i] = 0.0;
        }
    f.clipped = true;
    f.distortion = neg / G.trace();
    if (f.distortion > 0.01)
        throw std::runtime_error("field factorization: eigenvalue clipping distortion " +
                                 std::to_string(f.distortion) + " exceeds 1% of the trace");
    // The lower factor is replaced by U sqrt(Lambda); it is square but not triangular.
    f.lower = es.eigenvectors() * lam.cwiseSqrt().asDiagonal();
}

void build_separable(FieldFactor& f, const GridSpec& grid, const CorrelationKernel& kernel, const FieldOptions& opt)
{
    const Eigen::VectorXd x = axis_centers(grid);
    const Eigen::Index m = x.size();
    const int d = grid.dim;
    if (kernel.kind == KernelKind::ProductCauchy) {
        Eigen::MatrixXd G(m, m);
        for (Eigen::Index i = 0; i < m; ++i)
            for (Eigen::Index j = 0; j < m; ++j)
                G(i, j) = std::pow(1.0 + (x[i] - x[j]) * (x[i] - x[j]), -0.5 * kernel.alpha);
        f.terms.push_back({kernel.epsilon, psd_factor(G, opt.rank_tol)});
    } else if (kernel.kind == KernelKind::CauchyPD) {
        // (1+r^2)^{-a} = Gamma(a)^{-1} int exp(a u - e^u) exp(-e^u r^2) du, trapezoid in u.
        const double a = 0.5 * kernel.alpha;
        const double rmax = (x[m - 1] - x[0]) * std::sqrt(static_cast<double>(d));
        const double ulo = -std::log1p(rmax * rmax) - 23.0 / a;
        const double uhi = 4.5;
        const double hs = opt.mixture_step;
        const double lg = std::lgamma(a);
        for (double u = ulo; u <= uhi; u += hs) {
            double w = kernel.epsilon * hs * std::exp(a * u - std::exp(u) - lg);
            Eigen::MatrixXd G(m, m);
            double s = std::exp(u);
            for (Eigen::Index i = 0; i < m; ++i)
                for (Eigen::Index j = 0; j < m; ++j)
                    G(i, j) = std::exp(-s * (x[i] - x[j]) * (x[i] - x[j]));
            f.terms.push_back({w, psd_factor(G, opt.rank_tol)});
        }
        // probe the mixture against the exact kernel along the diagonal direction and each axis
        double err = 0.0;
        for (Eigen::Index i = 0; i < m; ++i) {
            double dx = x[i] - x[0];
            for (int k = 1; k <= d; ++k) {
                double r2 = k * dx * dx;
                double approx = 0.0;
                for (const auto& t : f.terms) {
                    double row = t.axis_factor.row(i).dot(t.axis_factor.row(0));
                    double diag = t.axis_factor.row(0).squaredNorm();
                    approx += t.weight * std::pow(row, k) * std::pow(diag, d - k);
                }
                double exact = kernel.epsilon * std::pow(1.0 + r2, -a);
                err = std::max(err, std::abs(approx - exact) / kernel.epsilon);
            }
        }
        f.kernel_error = err;
    } else {
        throw std::invalid_argument("separable field backend supports CauchyPD and ProductCauchy only");
    }
    std::size_t normals = 0;
    for (const auto& t : f.terms)
        normals += static_cast<std::size_t>(std::pow(static_cast<double>(t.axis_factor.cols()), d) + 0.5);
    f.normals_per_step = normals;
}

} // namespace

std::shared_ptr<const FieldFactor> build_factor(const GridSpec& grid, const CorrelationKernel& kernel,
                                                const FieldOptions& opt)
{
    validate(kernel);
    if (kernel.dim != grid.dim)
        throw std::invalid_argument("kernel dim and grid dim differ");
    if (grid.cells_per_axis < 1 || !(grid.half_width > 0.0))
        throw std::invalid_argument("grid needs m >= 1 and L > 0");
    auto f = std::make_shared<FieldFactor>();
    f->grid = grid;
    const std::size_t n = grid.n_cells();
    if (kernel.kind == KernelKind::Zero || kernel.epsilon == 0.0) {
        f->backend = FactorBackend::Zero;
        return f;
    }
    bool separable_ok = kernel.kind == KernelKind::CauchyPD || kernel.kind == KernelKind::ProductCauchy;
    BackendChoice choice = opt.backend;
    if (choice == BackendChoice::Auto) {
        if (kernel.kind == KernelKind::ProductCauchy)
            choice = BackendChoice::Separable;
        else if (n <= opt.dense_cap)
            choice = BackendChoice::Dense;
        else if (separable_ok)
            choice = BackendChoice::Separable;
        else
            throw std::invalid_argument("grid has " + std::to_string(n) + " cells, above the dense cap " +
                                        std::to_string(opt.dense_cap) + ", and the kernel is not separable");
    }
    if (choice == BackendChoice::Dense) {
        if (n > opt.dense_cap)
            throw std::invalid_argument("grid has " + std::to_string(n) + " cells, above the dense cap " +
                                        std::to_string(opt.dense_cap));
        f->backend = FactorBackend::Dense;
        build_dense(*f, grid, kernel);
        f->normals_per_step = n;
    } else {
        if (n > opt.separable_cap)
            throw std::invalid_argument("grid has " + std::to_string(n) + " cells, above the separable cap");
        f->backend = FactorBackend::Separable;
        build_separable(*f, grid, kernel, opt);
    }
    return f;
}

EnvironmentField::EnvironmentField(GridSpec grid, CorrelationKernel kernel, std::shared_ptr<const FieldFactor> factor,
                                   std::uint64_t seed, double dt, HistoryPolicy policy)
    : grid_(grid), kernel_(std::move(kernel)), factor_(std::move(factor)), seed_(seed), dt_(dt), policy_(policy)
{
    if (!(dt > 0.0))
        throw std::invalid_argument("field step size must be > 0");
}

Eigen::VectorXd EnvironmentField::compute_increment(std::size_t k) const
{
    const FieldFactor& f = *factor_;
    const Eigen::Index n = static_cast<Eigen::Index>(grid_.n_cells());
    if (f.backend == FactorBackend::Zero)
        return Eigen::VectorXd::Zero(n);
    Engine eng = make_engine(derive_seed(seed_, 0x57ee1ULL, k));
    NormalSource normal;
    const double sdt = std::sqrt(dt_);
    if (f.backend == FactorBackend::Dense) {
        Eigen::VectorXd z(n);
        for (Eigen::Index i = 0; i < n; ++i)
            z[i] = normal(eng);
        if (f.clipped)
            return sdt * (f.lower * z);
        Eigen::VectorXd out = f.lower.triangularView<Eigen::Lower>() * z;
        return sdt * out;
    }
    Eigen::VectorXd out = Eigen::VectorXd::Zero(n);
    for (const auto& t : f.terms) {
        const Eigen::Index r = t.axis_factor.cols();
        Eigen::Index cnt = 1;
        for (int a = 0; a < grid_.dim; ++a)
            cnt *= r;
        Eigen::VectorXd z(cnt);
        for (Eigen::Index i = 0; i < cnt; ++i)
            z[i] = normal(eng);
        out += std::sqrt(t.weight) * kron_apply(t.axis_factor, z, grid_.dim);
    }
    return sdt * out;
}

const Eigen::VectorXd& EnvironmentField::increment(std::size_t k) const
{
    if (policy_ == HistoryPolicy::KeepAll) {
        auto it = cache_.find(k);
        if (it == cache_.end())
            it = cache_.emplace(k, compute_increment(k)).first;
        return it->second;
    }
    if (k != last_k_) {
        last_ = compute_increment(k);
        last_k_ = k;
    }
    return last_;
}

EnvironmentField EnvironmentField::reseeded(std::uint64_t seed) const
{
    return EnvironmentField(grid_, kernel_, factor_, seed, dt_, policy_);
}

Eigen::VectorXd EnvironmentField::next() { return increment(counter_++); }

EnvironmentField build_field(const GridSpec& grid, const CorrelationKernel& kernel, std::uint64_t seed, double dt,
                             const FieldOptions& opt)
{
    return EnvironmentField(grid, kernel, build_factor(grid, kernel, opt), seed, dt, opt.history);
}

Eigen::VectorXd sample_increment(EnvironmentField& field) { return field.next(); }

double value_at(const Eigen::VectorXd& increment, const GridSpec& grid, const double* x)
{
    long c = grid.cell_of(x);
    return c < 0 ? 0.0 : increment[c];
}

Eigen::VectorXd kron_apply(const Eigen::MatrixXd& A, const Eigen::VectorXd& z, int dim)
{
    const Eigen::Index m = A.rows(), r = A.cols();
    std::vector<Eigen::Index> dims(static_cast<std::size_t>(dim), r);
    Eigen::VectorXd cur = z, nxt;
    for (int a = 0; a < dim; ++a) {
        Eigen::Index outer = 1, inner = 1;
        for (int b = 0; b < a; ++b)
            outer *= dims[b];
        for (int b = a + 1; b < dim; ++b)
            inner *= dims[b];
        if (cur.size() != outer * r * inner)
            throw std::invalid_argument("kron_apply: tensor size mismatch");
        nxt.resize(outer * m * inner);
        for (Eigen::Index o = 0; o < outer; ++o) {
            Eigen::Map<const RowMat> in(cur.data() + o * r * inner, r, inner);
            Eigen::Map<RowMat> out(nxt.data() + o * m * inner, m, inner);
            out.noalias() = A * in;
        }
        dims[a] = m;
        cur.swap(nxt);
    }
    return cur;
}

double quad_form(const FieldFactor& f, const Eigen::VectorXd& v)
{
    switch (f.backend) {
    case FactorBackend::Zero:
        return 0.0;
    case FactorBackend::Dense:
        if (f.clipped)
            return (f.lower.transpose() * v).squaredNorm();
        return (f.lower.triangularView<Eigen::Lower>().transpose() * v).squaredNorm();
    case FactorBackend::Separable: {
        double s = 0.0;
        Eigen::MatrixXd At;
        for (const auto& t : f.terms) {
            At = t.axis_factor.transpose();
            s += t.weight * kron_apply(At, v, f.grid.dim).squaredNorm();
        }
        return s;
    }
    }
    return 0.0;
}

Eigen::MatrixXd reconstructed_gram(const FieldFactor& f)
{
    const Eigen::Index n = static_cast<Eigen::Index>(f.grid.n_cells());
    if (n > 8192)
        throw std::invalid_argument("reconstructed_gram: grid too large");
    switch (f.backend) {
    case FactorBackend::Zero:
        return Eigen::MatrixXd::Zero(n, n);
    case FactorBackend::Dense:
        if (f.clipped)
            return f.lower * f.lower.transpose();
        return Eigen::MatrixXd(f.lower.triangularView<Eigen::Lower>()) *
               Eigen::MatrixXd(f.lower.triangularView<Eigen::Lower>()).transpose();
    case FactorBackend::Separable: {
        Eigen::MatrixXd G = Eigen::MatrixXd::Zero(n, n);
        for (const auto& t : f.terms) {
            Eigen::MatrixXd g1 = t.axis_factor * t.axis_factor.transpose();
            Eigen::MatrixXd k = g1;
            for (int a = 1; a < f.grid.dim; ++a) {
                Eigen::MatrixXd nk(k.rows() * g1.rows(), k.cols() * g1.cols());
                for (Eigen::Index i = 0; i < k.rows(); ++i)
                    for (Eigen::Index j = 0; j < k.cols(); ++j)
                        nk.block(i * g1.rows(), j * g1.cols(), g1.rows(), g1.cols()) = k(i, j) * g1;
                k.swap(nk);
            }
            G += t.weight * k;
        }
        return G;
    }
    }
    return {};
}

void write_history(const std::string& path, const std::vector<Eigen::VectorXd>& steps)
{
    std::ofstream os(path, std::ios::binary);
    if (!os)
        throw std::runtime_error("cannot open " + path + " for writing");
    static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);
    for (const auto& v : steps)
        for (Eigen::Index i = 0; i < v.size(); ++i) {
            std::uint64_t bits;
            double x = v[i];
            std::memcpy(&bits, &x, 8);
            if constexpr (std::endian::native == std::endian::big)
                bits = __builtin_bswap64(bits);
            os.write(reinterpret_cast<const char*>(&bits), 8);
        }
}

std::vector<Eigen::VectorXd> read_history(const std::string& path, std::size_t cells_per_step)
{
    std::ifstream is(path, std::ios::binary | std::ios::ate);
    if (!is)
        throw std::runtime_error("cannot open " + path);
    std::size_t bytes = static_cast<std::size_t>(is.tellg());
    if (cells_per_step == 0 || bytes % (8 * cells_per_step) != 0)
        throw std::runtime_error("history file size is not a whole number of records");
    is.seekg(0);
    std::vector<Eigen::VectorXd> out(bytes / (8 * cells_per_step), Eigen::VectorXd(cells_per_step));
    for (auto& v : out)
        for (std::size_t i = 0; i < cells_per_step; ++i) {
            std::uint64_t bits;
            is.read(reinterpret_cast<char*>(&bits), 8);
            if constexpr (std::endian::native == std::endian::big)
                bits = __builtin_bswap64(bits);
            std::memcpy(&v[static_cast<Eigen::Index>(i)], &bits, 8);
        }
    return out;
}

} // namespace superenv
