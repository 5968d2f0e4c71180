#include "superenv/experiments.hpp"

#include "superenv/csv.hpp"
#include "superenv/duals.hpp"
#include "superenv/numerics.hpp"
#include "superenv/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace superenv {

namespace {

constexpr double kZ99 = 2.5758293035489004;

std::uint64_t field_seed(std::uint64_t master, std::size_t f) { return derive_seed(master, 0xF1E1D, f); }

std::uint64_t cloud_seed(std::uint64_t master, std::size_t f, std::size_t c)
{
    return derive_seed(derive_seed(master, 0xC10D, f), c);
}

double biased_variance(const std::vector<double>& v)
{
    if (v.empty())
        return 0.0;
    double m = mean(v), s = 0.0;
    for (double x : v)
        s += (x - m) * (x - m);
    return s / static_cast<double>(v.size());
}

bool zero_kernel(const CorrelationKernel& k) { return k.kind == KernelKind::Zero || k.epsilon == 0.0; }

std::string fmt(double x)
{
    char b[40];
    std::snprintf(b, sizeof b, "%g", x);
    return b;
}

// Y_T(phi) at every horizon for one cloud; empty on failure.
std::vector<double> occupation_at(const ExperimentConfig& c, const EnvironmentField& field, std::uint64_t seed,
                                  StatReport& rep, const std::string& tag)
{
    try {
        ParticleCloud cloud = init_cloud(c.n, c.grid, seed, c.boundary, c.max_particles);
        OccupationRun run = run_occupation(cloud, field, c.horizons.back(), {c.phi}, c.horizons);
        std::vector<double> out;
        for (double T : c.horizons) {
            auto it = std::find_if(run.snapshots.begin(), run.snapshots.end(),
                                   [&](const Snapshot& s) { return std::abs(s.t - T) < 0.5 / c.n; });
            if (it == run.snapshots.end())
                throw std::runtime_error("missing snapshot at T=" + fmt(T));
            out.push_back(it->Y[0]);
        }
        return out;
    } catch (const std::exception& e) {
        ++rep.failed_replicas;
        rep.notes.push_back(tag + ": " + e.what());
        return {};
    }
}

FieldOptions options_for(const ExperimentConfig& c)
{
    FieldOptions o = c.field;
    if (c.n_clouds > 1)
        o.history = HistoryPolicy::KeepAll;
    return o;
}

struct Table {
    // values[h][f] = samples over clouds of field f at horizon h
    std::vector<std::vector<std::vector<double>>> values;
};

Table run_table(const ExperimentConfig& c, StatReport& rep, const std::shared_ptr<const FieldFactor>& factor,
                const std::function<double(std::size_t, std::size_t, double)>& transform,
                const std::function<void(std::size_t, const EnvironmentField&)>& on_field = {})
{
    Table t;
    t.values.assign(c.horizons.size(), std::vector<std::vector<double>>(c.n_fields));
    const double dt = 1.0 / c.n;
    FieldOptions o = options_for(c);
    for (std::size_t f = 0; f < c.n_fields; ++f) {
        EnvironmentField field(c.grid, c.kernel, factor, field_seed(c.master_seed, f), dt, o.history);
        if (on_field)
            on_field(f, field);
        for (std::size_t cl = 0; cl < c.n_clouds; ++cl) {
            auto y = occupation_at(c, field, cloud_seed(c.master_seed, f, cl), rep,
                                   "field " + std::to_string(f) + " cloud " + std::to_string(cl));
            if (y.empty())
                continue;
            for (std::size_t h = 0; h < c.horizons.size(); ++h) {
                double v = transform(f, h, y[h]);
                t.values[h][f].push_back(v);
                rep.samples.push_back({f, cl, c.horizons[h], v});
            }
        }
    }
    return t;
}

std::vector<double> pooled(const std::vector<std::vector<double>>& per_field)
{
    std::vector<double> v;
    for (const auto& f : per_field)
        v.insert(v.end(), f.begin(), f.end());
    return v;
}

void total_variance_check(StatReport& rep, const Table& t, const ExperimentConfig& c)
{
    if (c.n_clouds < 2)
        return;
    bool ok = true;
    for (std::size_t h = 0; h < c.horizons.size(); ++h) {
        double within = 0.0;
        std::size_t total = 0;
        for (const auto& f : t.values[h]) {
            if (f.empty())
                continue;
            within += biased_variance(f) * f.size();
            total += f.size();
        }
        if (total == 0)
            continue;
        within /= static_cast<double>(total);
        double all = biased_variance(pooled(t.values[h]));
        ok = ok && all >= within * (1.0 - 1e-12);
    }
    rep.metrics["total_variance_ok"] = ok ? 1.0 : 0.0;
}

} // namespace

std::string to_string(Mode m)
{
    switch (m) {
    case Mode::LLN:
        return "LLN";
    case Mode::CLT:
        return "CLT";
    case Mode::PROP:
        return "PROP";
    case Mode::MOMENTS:
        return "MOMENTS";
    }
    return "?";
}

Mode mode_from_string(const std::string& s)
{
    for (Mode m : {Mode::LLN, Mode::CLT, Mode::PROP, Mode::MOMENTS})
        if (to_string(m) == s)
            return m;
    throw std::invalid_argument("unknown mode '" + s + "'");
}

void validate(const ExperimentConfig& c)
{
    validate(c.kernel);
    if (c.horizons.empty())
        throw std::invalid_argument("experiment: horizons must not be empty");
    for (std::size_t i = 0; i < c.horizons.size(); ++i) {
        if (!(c.horizons[i] > 0.0))
            throw std::invalid_argument("experiment: horizons must be > 0");
        if (i && c.horizons[i] <= c.horizons[i - 1])
            throw std::invalid_argument("experiment: horizons must increase");
    }
    if (c.n_fields == 0 || c.n_clouds == 0)
        throw std::invalid_argument("experiment: replicas must be >= 1");
    if (c.n < 1)
        throw std::invalid_argument("experiment: n must be >= 1");
    if (c.moment_order < 1 || c.moment_order > 2)
        throw std::invalid_argument("experiment: moment_order must be 1 or 2");
    if (c.grid.dim != c.kernel.dim || c.phi.dim() != c.grid.dim)
        throw std::invalid_argument("experiment: grid, kernel and test function dimensions differ");
}

double StatReport::metric(const std::string& key) const
{
    auto it = metrics.find(key);
    return it == metrics.end() ? std::numeric_limits<double>::quiet_NaN() : it->second;
}

std::string StatReport::summary_csv() const
{
    CsvWriter w({"kind", "scope", "T", "n", "mean", "stderr", "ci99_lo", "ci99_hi", "target", "variance", "abs_dev",
                 "statistic", "p_value"});
    for (const auto& r : rows)
        w.row("horizon", r.scope, r.T, r.n, r.mean, r.std_err, r.ci_lo, r.ci_hi, r.target, r.variance, r.abs_dev,
              std::string(), std::string());
    for (const auto& k : ks)
        w.row("ks", k.label, k.T, k.ks.n, std::string(), std::string(), std::string(), std::string(), std::string(),
              std::string(), std::string(), k.ks.statistic, k.ks.p_value);
    for (const auto& [key, v] : metrics)
        w.row("metric", key, std::string(), std::string(), v, std::string(), std::string(), std::string(),
              std::string(), std::string(), std::string(), std::string(), std::string());
    return w.str();
}

std::string StatReport::samples_csv() const
{
    CsvWriter w({"field", "cloud", "T", "value"});
    for (const auto& s : samples)
        w.row(s.field, s.cloud, s.T, s.value);
    return w.str();
}

HorizonRow summarize(const std::string& scope, double T, const std::vector<double>& v, double target)
{
    HorizonRow r;
    r.scope = scope;
    r.T = T;
    r.n = v.size();
    RunningStats rs;
    double ad = 0.0;
    for (double x : v) {
        rs.push(x);
        ad += std::abs(x - target);
    }
    r.mean = rs.mean();
    r.std_err = rs.std_error();
    r.ci_lo = r.mean - kZ99 * r.std_err;
    r.ci_hi = r.mean + kZ99 * r.std_err;
    r.target = target;
    r.variance = rs.variance();
    r.abs_dev = v.empty() ? 0.0 : ad / static_cast<double>(v.size());
    return r;
}

StatReport run_lln(const ExperimentConfig& c)
{
    validate(c);
    if (c.mode != Mode::LLN)
        throw std::invalid_argument("run_lln: mode must be LLN");
    StatReport rep;
    rep.mode = Mode::LLN;
    auto factor = build_factor(c.grid, c.kernel, options_for(c));
    const double target = box_mass(c.phi, c.grid);
    Table t = run_table(c, rep, factor, [&](std::size_t, std::size_t h, double y) { return y / c.horizons[h]; });
    std::vector<double> lx, lv;
    bool agree = true, within = true;
    for (std::size_t h = 0; h < c.horizons.size(); ++h) {
        const double T = c.horizons[h];
        HorizonRow a = summarize("annealed", T, pooled(t.values[h]), target);
        rep.rows.push_back(a);
        if (a.n > 1 && a.variance > 0.0) {
            lx.push_back(std::log(T));
            lv.push_back(std::log(a.variance));
        }
        within = within && std::abs(a.mean - target) <= 3.0 * a.std_err;
        if (c.n_clouds > 1 && !t.values[h][0].empty()) {
            HorizonRow q = summarize("quenched", T, t.values[h][0], target);
            rep.rows.push_back(q);
            agree = agree && std::abs(q.mean - a.mean) <= kZ99 * std::hypot(q.std_err, a.std_err);
        }
        rep.metrics["abs_dev_T" + fmt(T)] = a.abs_dev;
        rep.metrics["deviation_T" + fmt(T)] = std::abs(a.mean - target);
    }
    bool dev_decreasing = true;
    std::vector<double> ad;
    for (const auto& r : rep.rows)
        if (r.scope == "annealed")
            ad.push_back(r.abs_dev);
    for (std::size_t i = 1; i < ad.size(); ++i)
        dev_decreasing = dev_decreasing && ad[i] < ad[i - 1];
    rep.metrics["target"] = target;
    rep.metrics["variance_slope"] = lx.size() >= 2 ? fitted_slope(lx, lv) : std::numeric_limits<double>::quiet_NaN();
    rep.metrics["abs_dev_decreasing"] = dev_decreasing ? 1.0 : 0.0;
    rep.metrics["means_within_3se"] = within ? 1.0 : 0.0;
    if (c.n_clouds > 1)
        rep.metrics["quenched_annealed_agree"] = agree ? 1.0 : 0.0;
    rep.metrics["failed_replicas"] = static_cast<double>(rep.failed_replicas);
    total_variance_check(rep, t, c);
    return rep;
}

StatReport run_clt(const ExperimentConfig& c)
{
    validate(c);
    if (c.mode != Mode::CLT)
        throw std::invalid_argument("run_clt: mode must be CLT");
    StatReport rep;
    rep.mode = Mode::CLT;
    ExperimentConfig cc = c;
    cc.field.history = HistoryPolicy::KeepAll;
    auto factor = build_factor(c.grid, c.kernel, cc.field);
    const Eigen::VectorXd source = cell_average(c.phi, c.grid);
    const double atom = 1.0 / c.n;
    // per field, per horizon: centre and sigma^2
    std::vector<std::vector<double>> centre(c.n_fields, std::vector<double>(c.horizons.size())),
        sig2(c.n_fields, std::vector<double>(c.horizons.size()));
    auto on_field = [&](std::size_t f, const EnvironmentField& field) {
        for (std::size_t h = 0; h < c.horizons.size(); ++h) {
            const double T = c.horizons[h];
            NoisePath path = noise_path(field, T, Orientation::Dual);
            SolverOptions so = c.solver;
            const bool last = h + 1 == c.horizons.size();
            so.store_every = last && f == 0 ? 1 : 0;
            FieldSolution V1 = solve_v1(source, path, so);
            centre[f][h] = grid_mass(c.grid, V1.final());
            sig2[f][h] = sigma_sq(V1).value;
            if (last && f == 0) {
                rep.metrics["sigma_sq"] = sig2[f][h];
                rep.metrics["xi"] = xi_estimate(V1, *factor).value;
                // finite-T quenched variance of the statistic on this field, Poisson start included
                Eigen::VectorXd mu = Eigen::VectorXd::Constant(source.size(), c.grid.cell_volume());
                MomentSolutions ms = solve_v2_and_moments(V1, path, mu, 2, c.solver);
                double v2 = ms.L[2] - ms.L[1] * ms.L[1] + atom * c.grid.cell_volume() * V1.final().squaredNorm();
                rep.metrics["model_variance"] = v2 / T;
            }
        }
    };
    Table t = run_table(
        cc, rep, factor,
        [&](std::size_t f, std::size_t h, double y) { return (y - centre[f][h]) / std::sqrt(c.horizons[h]); },
        on_field);
    const double alpha = 0.01 / static_cast<double>(c.horizons.size());
    bool all_pass = true, centred = true;
    std::size_t min_n = std::numeric_limits<std::size_t>::max();
    for (std::size_t h = 0; h < c.horizons.size(); ++h) {
        const double T = c.horizons[h];
        for (std::size_t f = 0; f < c.n_fields; ++f) {
            const auto& v = t.values[h][f];
            min_n = std::min(min_n, v.size());
            HorizonRow q = summarize("quenched_f" + std::to_string(f), T, v, 0.0);
            rep.rows.push_back(q);
            centred = centred && std::abs(q.mean) <= 3.0 * q.std_err;
            if (v.size() >= 8) {
                const double sd = std::sqrt(sig2[f][h]);
                KSResult k = ks_test(v, [sd](double x) { return sd > 0.0 ? normal_cdf(x / sd) : (x >= 0 ? 1.0 : 0.0); });
                rep.ks.push_back({"quenched_f" + std::to_string(f), T, k});
                all_pass = all_pass && k.p_value > alpha;
            }
        }
        if (c.n_fields > 1) {
            std::vector<double> all = pooled(t.values[h]);
            rep.rows.push_back(summarize("annealed", T, all, 0.0));
            if (all.size() >= 8) {
                std::vector<double> sds;
                for (std::size_t f = 0; f < c.n_fields; ++f)
                    if (!t.values[h][f].empty())
                        sds.push_back(std::sqrt(sig2[f][h]));
                KSResult k = ks_test(all, [&](double x) {
                    double s = 0.0;
                    for (double sd : sds)
                        s += sd > 0.0 ? normal_cdf(x / sd) : (x >= 0 ? 1.0 : 0.0);
                    return s / static_cast<double>(sds.size());
                });
                rep.ks.push_back({"annealed_mixture", T, k});
            }
        }
    }
    const std::size_t last = c.horizons.size() - 1;
    const auto& v0 = t.values[last][0];
    rep.metrics["variance_ratio"] = sig2[0][last] > 0.0 ? sample_variance(v0) / sig2[0][last]
                                                        : std::numeric_limits<double>::quiet_NaN();
    rep.metrics["ks_alpha"] = alpha;
    rep.metrics["ks_all_pass"] = all_pass ? 1.0 : 0.0;
    rep.metrics["centred_within_3se"] = centred ? 1.0 : 0.0;
    rep.metrics["failed_replicas"] = static_cast<double>(rep.failed_replicas);
    if (!rep.ks.empty())
        rep.metrics["ks_p_last"] = rep.ks.back().ks.p_value;
    if (min_n < 50) {
        rep.inconclusive = true;
        rep.notes.push_back("fewer than 50 valid samples in a quenched cell");
    }
    total_variance_check(rep, t, c);
    return rep;
}

StatReport run_prop(const ExperimentConfig& c)
{
    validate(c);
    if (c.mode != Mode::PROP)
        throw std::invalid_argument("run_prop: mode must be PROP");
    StatReport rep;
    rep.mode = Mode::PROP;
    auto factor = build_factor(c.grid, c.kernel, c.field);
    const Eigen::VectorXd source = cell_average(c.phi, c.grid);
    const double phi_mass = grid_mass(c.grid, source);
    const double dt = 1.0 / c.n;
    std::vector<std::vector<double>> S(c.horizons.size()), Z(c.horizons.size());
    double max_identity = 0.0;
    for (std::size_t f = 0; f < c.n_fields; ++f) {
        EnvironmentField field(c.grid, c.kernel, factor, field_seed(c.master_seed, f), dt, HistoryPolicy::KeepAll);
        for (std::size_t h = 0; h < c.horizons.size(); ++h) {
            const double T = c.horizons[h];
            try {
                NoisePath path = noise_path(field, T, Orientation::Dual);
                FieldSolution V1 = solve_v1(source, path, c.solver);
                MartingaleStat m = martingale_stat(V1, source, path);
                double s = (grid_mass(c.grid, V1.final()) - T * phi_mass) / std::sqrt(T);
                double ns = m.N_sum.back() / std::sqrt(T);
                double scale = std::max({std::abs(s), std::abs(ns), 1e-300});
                max_identity = std::max(max_identity, std::abs(s - ns) / scale);
                double xi = xi_estimate(V1, *factor).value;
                S[h].push_back(s);
                Z[h].push_back(xi > 0.0 ? s / std::sqrt(xi) : 0.0);
                rep.samples.push_back({f, 0, T, s});
            } catch (const std::exception& e) {
                ++rep.failed_replicas;
                rep.notes.push_back("field " + std::to_string(f) + ": " + e.what());
            }
        }
    }
    for (std::size_t h = 0; h < c.horizons.size(); ++h) {
        const double T = c.horizons[h];
        rep.rows.push_back(summarize("S_T", T, S[h], 0.0));
        rep.rows.push_back(summarize("S_T/sqrt(xi)", T, Z[h], 0.0));
        if (Z[h].size() >= 8)
            rep.ks.push_back({"normalized", T, ks_test(Z[h], [](double x) { return normal_cdf(x); })});
        if (Z[h].size() < 50)
            rep.inconclusive = true;
    }
    double max_abs = 0.0;
    for (const auto& v : S)
        for (double x : v)
            max_abs = std::max(max_abs, std::abs(x));
    rep.metrics["max_abs_S"] = max_abs;
    rep.metrics["identity_residual"] = max_identity;
    rep.metrics["failed_replicas"] = static_cast<double>(rep.failed_replicas);
    if (!rep.ks.empty())
        rep.metrics["ks_p_last"] = rep.ks.back().ks.p_value;
    if (zero_kernel(c.kernel))
        rep.notes.push_back("zero kernel: S_T vanishes identically");
    return rep;
}

StatReport moment_crosscheck(const ExperimentConfig& c)
{
    validate(c);
    if (c.mode != Mode::MOMENTS)
        throw std::invalid_argument("moment_crosscheck: mode must be MOMENTS");
    if (c.horizons.back() > 1.0 + 1e-12)
        throw std::invalid_argument("moment_crosscheck: horizon must be <= 1");
    StatReport rep;
    rep.mode = Mode::MOMENTS;
    const double t = c.horizons.back();
    const std::size_t hl = c.horizons.size() - 1;
    FieldOptions o = c.field;
    o.history = HistoryPolicy::KeepLast;
    auto factor = build_factor(c.grid, c.kernel, o);

    // annealed: one cloud per fresh field
    ExperimentConfig ca = c;
    ca.n_clouds = 1;
    Table ta = run_table(ca, rep, factor, [](std::size_t, std::size_t, double y) { return y; });
    std::vector<double> y1 = pooled(ta.values[hl]), y2;
    for (double y : y1)
        y2.push_back(y * y);

    double m1 = c.boundary == Boundary::Free ? box_mean_Q(c.phi, c.grid, t) : t * box_mass(c.phi, c.grid);
    HorizonRow r1 = summarize("first_moment", t, y1, m1);
    rep.rows.push_back(r1);
    rep.metrics["first_oracle"] = m1;
    rep.metrics["first_z"] = r1.std_err > 0.0 ? (r1.mean - m1) / r1.std_err : 0.0;

    if (c.moment_order >= 2 && c.boundary == Boundary::Free) {
        SecondMomentOracle so = second_moment_oracle(c.phi, t, c.grid, c.kernel, 1.0 / c.n, c.oracle_paths,
                                                     c.oracle_dt, derive_seed(c.master_seed, 0x0AC1E));
        HorizonRow r2 = summarize("second_moment", t, y2, so.value());
        rep.rows.push_back(r2);
        double comb = std::hypot(r2.std_err, so.std_err());
        rep.metrics["second_oracle"] = so.value();
        rep.metrics["second_oracle_stderr"] = so.std_err();
        rep.metrics["second_oracle_g0"] = so.A0 + so.A_self + so.B0;
        rep.metrics["second_z"] = comb > 0.0 ? (r2.mean - so.value()) / comb : 0.0;
    } else if (c.moment_order >= 2) {
        rep.notes.push_back("second-moment oracle uses the free heat kernel; skipped for reflecting particles");
    }

    // conditional identity on one frozen field (reflecting particles match the zero-flux solver)
    if (c.moment_order >= 2 && c.boundary == Boundary::Reflect && c.n_clouds > 1) {
        EnvironmentField field(c.grid, c.kernel, factor, field_seed(c.master_seed, 0), 1.0 / c.n,
                               HistoryPolicy::KeepAll);
        NoisePath path = noise_path(field, t, Orientation::Dual);
        const Eigen::VectorXd source = cell_average(c.phi, c.grid);
        FieldSolution V1 = solve_v1(source, path, c.solver);
        Eigen::VectorXd mu = Eigen::VectorXd::Constant(source.size(), c.grid.cell_volume());
        MomentSolutions ms = solve_v2_and_moments(V1, path, mu, 2, c.solver);
        double L2 = ms.L[2] + c.grid.cell_volume() * V1.final().squaredNorm() / c.n;
        std::vector<double> q2;
        for (std::size_t cl = 0; cl < c.n_clouds; ++cl) {
            auto y = occupation_at(c, field, derive_seed(c.master_seed, 0xC0DE, cl), rep, "frozen cloud");
            if (!y.empty())
                q2.push_back(y[hl] * y[hl]);
        }
        HorizonRow r3 = summarize("conditional_second", t, q2, L2);
        rep.rows.push_back(r3);
        rep.metrics["conditional_L2"] = L2;
        rep.metrics["conditional_z"] = r3.std_err > 0.0 ? (r3.mean - L2) / r3.std_err : 0.0;
    }
    rep.metrics["failed_replicas"] = static_cast<double>(rep.failed_replicas);
    return rep;
}

} // namespace superenv
