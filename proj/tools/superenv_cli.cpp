// superenv: command-line front end. Each subcommand writes CSV (+ SVG) and a manifest into a
// timestamped run directory and exits 0 iff all of its checks passed.
#include "superenv/config.hpp"
#include "superenv/csv.hpp"
#include "superenv/duals.hpp"
#include "superenv/environment.hpp"
#include "superenv/experiments.hpp"
#include "superenv/kernels.hpp"
#include "superenv/particles.hpp"
#include "superenv/rng.hpp"
#include "superenv/spde.hpp"
#include "superenv/svg.hpp"

#include "CLI11.hpp"

#include <Eigen/Eigenvalues>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace superenv;

namespace {

struct Context {
    std::string command;
    RunConfig config;
    fs::path dir;
    bool strict = false;
    RunManifest manifest;

    void check(const std::string& name, bool ok, const std::string& detail)
    {
        manifest.checks.push_back(name + ": " + (ok ? "PASS" : "FAIL") + " " + detail);
        manifest.passed = manifest.passed && ok;
        std::printf("  %-28s %s  %s\n", name.c_str(), ok ? "PASS" : "FAIL", detail.c_str());
    }
    // Soft checks only fail the run under --strict.
    void soft(const std::string& name, bool ok, const std::string& detail)
    {
        if (ok || strict)
            check(name, ok, detail);
        else {
            manifest.checks.push_back(name + ": WARN " + detail);
            std::printf("  %-28s WARN  %s\n", name.c_str(), detail.c_str());
        }
    }
    void write(const std::string& name, const std::string& content) const
    {
        write_text((dir / name).string(), content);
    }
};

std::string g(double x)
{
    char b[40];
    std::snprintf(b, sizeof b, "%.6g", x);
    return b;
}

fs::path make_run_dir(const std::string& root, const std::string& command)
{
    std::time_t now = std::time(nullptr);
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y%m%d-%H%M%S", std::gmtime(&now));
    fs::path base = fs::path(root) / (command + "-" + stamp);
    fs::path p = base;
    for (int k = 1; fs::exists(p); ++k)
        p = base.string() + "-" + std::to_string(k);
    fs::create_directories(p);
    return p;
}

void kernel_check(Context& ctx)
{
    const auto& e = ctx.config.experiment;
    const auto& k = e.kernel;
    validate(k);
    GridSpec probe = e.grid;
    while (probe.n_cells() > 1000)
        --probe.cells_per_axis;
    Eigen::MatrixXd G = gram_matrix(k, probe.centers());
    double asym = (G - G.transpose()).cwiseAbs().maxCoeff();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(G, Eigen::EigenvaluesOnly);
    double lmin = es.eigenvalues().minCoeff(), lmax = std::max(es.eigenvalues().maxCoeff(), 1e-300);
    ctx.check("gram_symmetric", asym == 0.0, "max |G - G^T| = " + g(asym));
    bool pd_kernel = k.kind != KernelKind::PowerCapped;
    if (pd_kernel)
        ctx.check("gram_psd", lmin >= -1e-10 * lmax, "min eigenvalue / max = " + g(lmin / lmax));
    else
        ctx.soft("gram_psd", lmin >= -1e-10 * lmax, "min eigenvalue / max = " + g(lmin / lmax) + " (PowerCapped)");

    // tail bound g <= eps (|z|^-alpha ^ 1) on a radial probe
    double worst = 0.0;
    Eigen::VectorXd z = Eigen::VectorXd::Zero(k.dim);
    for (int i = 0; i <= 400; ++i) {
        double r = 0.025 * i;
        z[0] = r;
        double b = k.epsilon * capped_power(r, k.alpha);
        worst = std::max(worst, evaluate_offset(k, z) - b);
    }
    ctx.check("tail_bound", worst <= 1e-14, "max(g - bound) = " + g(worst));

    CsvWriter w({"q", "alpha", "d", "green_integral", "epsilon_threshold", "q_times_threshold"});
    std::vector<double> qs{2.0, 5.0, 11.0, 21.0};
    double ref = 0.0, spread = 0.0;
    for (double q : qs) {
        double gi = green_integral(k.alpha, k.dim);
        double eps = epsilon_threshold(q, k.alpha, k.dim);
        w.row(q, k.alpha, k.dim, gi, eps, q * eps);
        if (ref == 0.0)
            ref = q * eps;
        spread = std::max(spread, std::abs(q * eps / ref - 1.0));
    }
    ctx.check("threshold_scaling", spread < 1e-12, "q eps*(q) constant to " + g(spread));
    ctx.write("kernel_check.csv", w.str());
}

void field_check(Context& ctx)
{
    const auto& e = ctx.config.experiment;
    auto factor = build_factor(e.grid, e.kernel, e.field);
    const double dt = 1.0 / e.n;
    EnvironmentField f(e.grid, e.kernel, factor, e.master_seed, dt, HistoryPolicy::KeepLast);
    CsvWriter w({"cell_i", "cell_j", "distance", "empirical_cov_over_dt", "kernel", "stderr"});
    const std::size_t n_steps = 4000;
    const std::size_t nc = e.grid.n_cells();
    std::vector<std::size_t> cells{0, nc / 2, nc - 1};
    std::vector<RunningStats> st(cells.size() * cells.size());
    for (std::size_t s = 0; s < n_steps; ++s) {
        Eigen::VectorXd v = f.compute_increment(s);
        for (std::size_t a = 0; a < cells.size(); ++a)
            for (std::size_t b = 0; b < cells.size(); ++b)
                st[a * cells.size() + b].push(v[cells[a]] * v[cells[b]] / dt);
    }
    double worst_z = 0.0;
    for (std::size_t a = 0; a < cells.size(); ++a)
        for (std::size_t b = 0; b < cells.size(); ++b) {
            auto xa = e.grid.center(cells[a]), xb = e.grid.center(cells[b]);
            double kv = evaluate(e.kernel, xa, xb);
            const auto& s = st[a * cells.size() + b];
            double se = std::max(s.std_error(), 1e-300);
            if (s.mean() != 0.0 || kv != 0.0)
                worst_z = std::max(worst_z, std::abs(s.mean() - kv) / se);
            w.row(cells[a], cells[b], (xa - xb).norm(), s.mean(), kv, s.std_error());
        }
    ctx.check("covariance_mc", worst_z <= 4.5, "max |cov/dt - g| / stderr = " + g(worst_z) + " (<= 4.5)");
    if (factor->backend == FactorBackend::Dense) {
        Eigen::MatrixXd G = gram_matrix(e.kernel, e.grid.centers());
        double rel = (reconstructed_gram(*factor) - G).norm() / std::max(G.norm(), 1e-300);
        if (factor->clipped)
            ctx.soft("factor_clipping", factor->distortion <= 0.01,
                     "eigenvalue clipping engaged, distortion " + g(factor->distortion));
        else
            ctx.check("factor_reconstruction", rel <= 1e-8, "relative Frobenius error " + g(rel));
    } else if (factor->backend == FactorBackend::Separable) {
        ctx.check("separable_kernel_error", factor->kernel_error <= 1e-6,
                  "max |g_approx - g| / eps = " + g(factor->kernel_error));
    }
    ctx.write("field_check.csv", w.str());
}

void simulate(Context& ctx)
{
    const auto& e = ctx.config.experiment;
    auto factor = build_factor(e.grid, e.kernel, e.field);
    EnvironmentField f(e.grid, e.kernel, factor, derive_seed(e.master_seed, 0xF1E1D, 0), 1.0 / e.n,
                       HistoryPolicy::KeepAll);
    std::vector<OccupationRow> rows;
    Series mass{"total mass", {}, {}};
    std::vector<double> snaps;
    for (double t = 0.25; t < ctx.config.sim_horizon; t += 0.25)
        snaps.push_back(t);
    std::size_t failed = 0;
    for (std::size_t r = 0; r < ctx.config.sim_replicas; ++r) {
        try {
            ParticleCloud c = init_cloud(e.n, e.grid, derive_seed(e.master_seed, 0xC10D, r), e.boundary,
                                         e.max_particles);
            OccupationRun run = run_occupation(c, f, ctx.config.sim_horizon, {e.phi}, snaps);
            for (const auto& s : run.snapshots) {
                rows.push_back({r, s.t, 0, s.X[0], s.Y[0]});
                if (r == 0) {
                    mass.x.push_back(s.t);
                    mass.y.push_back(s.total_mass);
                }
            }
        } catch (const CapExceeded& ex) {
            ++failed;
            std::fprintf(stderr, "replica %zu: %s\n", r, ex.what());
        }
    }
    ctx.write("occupation.csv", occupation_csv(rows));
    if (ctx.config.svg && !mass.x.empty())
        ctx.write("total_mass.svg", line_plot_svg("replica 0 total mass", {mass}));
    ctx.check("particle_cap", failed == 0,
              std::to_string(failed) + " of " + std::to_string(ctx.config.sim_replicas) + " replicas hit the cap");
}

void duals(Context& ctx)
{
    const auto& c = ctx.config;
    const auto& e = c.experiment;
    const auto& k = e.kernel;
    const int d = k.dim;
    const double t = c.dual_t;
    QTable qt(e.phi, t);
    CsvWriter w({"quantity", "t", "x_norm", "y_norm", "estimate", "stderr", "reference"});
    Eigen::VectorXd x = Eigen::VectorXd::Zero(d), y = Eigen::VectorXd::Zero(d);
    y[0] = 0.5;
    MCEstimate v = dual_V(e.phi, e.phi, t, x, y, k, c.dual_paths, c.dual_dt, e.master_seed, &qt, &qt);
    double qq = apply_Q(e.phi, t, x) * apply_Q(e.phi, t, y);
    w.row("V", t, 0.0, 0.5, v.mean, v.std_err, qq);
    if (k.kind == KernelKind::Zero || k.epsilon == 0.0) {
        double z = std::abs(v.mean - qq) / std::max(v.std_err, 1e-300);
        ctx.check("zero_kernel_factorization", z <= 3.0, "|V - Q Q| / stderr = " + g(z) + " (<= 3)");
    } else {
        ctx.check("V_at_least_QQ", v.mean >= qq - 3.0 * v.std_err,
                  "V = " + g(v.mean) + " +- " + g(v.std_err) + ", Q Q = " + g(qq));
    }

    BoundFns bf{c.bound_p, e.phi.radius, d, k.alpha};
    validate(bf);
    std::vector<BoundSample> samples;
    for (double tt : {0.5, 1.0, 2.0, 4.0})
        for (double r : {0.0, 1.0, 3.0}) {
            Eigen::VectorXd p = Eigen::VectorXd::Zero(d);
            p[0] = r;
            samples.push_back({tt, p, p});
        }
    BoundReport br = bound_checks(k, e.phi, bf, samples, c.dual_paths / 4 + 2, c.dual_dt, e.master_seed + 1);
    for (const auto& r : br.rows)
        w.row("bound_ratio_V_QQ", r.t, r.x_norm, r.y_norm, r.ratio_V_QQ, 0.0, r.ratio_Q_I);
    ctx.check("bounds_finite", br.finite,
              "sup V/QQ = " + g(br.sup_V_QQ) + ", sup Q/I = " + g(br.sup_Q_I));

    const double q = bf.q();
    const double eps_star = epsilon_threshold(q, k.alpha, d);
    w.row("epsilon_threshold", 0.0, 0.0, 0.0, eps_star, 0.0, 0.0);
    if (k.kind == KernelKind::Zero) {
        ExpMoment em = dual_expmoment(q, k, x, x, c.expmoment_horizon, 64, c.dual_dt, e.master_seed);
        ctx.check("zero_kernel_expmoment", em.estimate.mean == 1.0, "E exp = " + g(em.estimate.mean));
    } else if (k.epsilon <= eps_star) {
        ExpMoment em = dual_expmoment(q, k, x, x, c.expmoment_horizon, c.dual_paths, c.dual_dt, e.master_seed);
        w.row("expmoment", c.expmoment_horizon, 0.0, 0.0, em.estimate.mean, em.estimate.std_err,
              em.horizon_diagnostic);
        ctx.check("expmoment_bound", em.estimate.mean <= 2.0 + 3.0 * em.estimate.std_err,
                  "E exp = " + g(em.estimate.mean) + " +- " + g(em.estimate.std_err) + " (<= 2)");
        ctx.soft("expmoment_horizon", em.horizon_diagnostic < 0.01,
                 "residual exponent diagnostic " + g(em.horizon_diagnostic));
    } else {
        ctx.soft("epsilon_below_threshold", false, "epsilon " + g(k.epsilon) + " > eps*(q) = " + g(eps_star));
    }
    ctx.write("duals.csv", w.str());
}

void report_outputs(Context& ctx, const StatReport& r)
{
    ctx.write("summary.csv", r.summary_csv());
    ctx.write("samples.csv", r.samples_csv());
    CsvWriter m({"metric", "value"});
    for (const auto& [k, v] : r.metrics)
        m.row(k, v);
    ctx.write("metrics.csv", m.str());
    for (const auto& n : r.notes)
        std::printf("  note: %s\n", n.c_str());
    if (!ctx.config.svg)
        return;
    std::map<std::string, Series> by_scope;
    for (const auto& row : r.rows) {
        auto& s = by_scope[row.scope];
        s.label = row.scope;
        s.x.push_back(row.T);
        s.y.push_back(row.mean);
    }
    std::vector<Series> series;
    for (auto& [k, s] : by_scope)
        series.push_back(s);
    if (!series.empty())
        ctx.write("means.svg", line_plot_svg(to_string(r.mode) + ": mean vs T", series, true, false));
    std::vector<double> vals;
    for (const auto& s : r.samples)
        vals.push_back(s.value);
    if (!vals.empty())
        ctx.write("samples.svg", histogram_svg(to_string(r.mode) + ": samples", vals));
}

void experiment(Context& ctx, Mode mode)
{
    ExperimentConfig e = ctx.config.experiment;
    e.mode = mode;
    StatReport r;
    switch (mode) {
    case Mode::LLN:
        r = run_lln(e);
        ctx.check("means_within_3se", r.metric("means_within_3se") == 1.0, "annealed mean vs <lambda_box, phi>");
        ctx.soft("variance_slope", r.metric("variance_slope") < 0.0,
                 "log-log slope " + g(r.metric("variance_slope")));
        ctx.soft("quenched_annealed_agree", r.metric("quenched_annealed_agree") == 1.0, "combined CI");
        break;
    case Mode::CLT:
        r = run_clt(e);
        ctx.check("total_variance", r.metric("total_variance_ok") == 1.0, "annealed >= mean quenched variance");
        ctx.soft("centred_within_3se", r.metric("centred_within_3se") == 1.0, "quenched statistic mean");
        ctx.soft("ks_all_pass", r.metric("ks_all_pass") == 1.0, "Bonferroni-corrected KS");
        ctx.soft("variance_ratio", std::abs(r.metric("variance_ratio") - 1.0) <= 0.3,
                 "empirical / sigma^2 = " + g(r.metric("variance_ratio")));
        break;
    case Mode::PROP:
        r = run_prop(e);
        ctx.check("identity_residual", r.metric("identity_residual") <= 1e-8,
                  "|S_T - N_T / sqrt T| = " + g(r.metric("identity_residual")));
        ctx.soft("ks_all_pass", r.metric("ks_all_pass") == 1.0, "S / sqrt(xi) vs N(0,1)");
        break;
    case Mode::MOMENTS:
        r = moment_crosscheck(e);
        ctx.check("first_moment", std::abs(r.metric("first_z")) <= 3.0, "z = " + g(r.metric("first_z")));
        if (!std::isnan(r.metric("second_z")))
            ctx.check("second_moment", std::abs(r.metric("second_z")) <= 3.0, "z = " + g(r.metric("second_z")));
        if (!std::isnan(r.metric("conditional_z")))
            ctx.check("conditional_second_moment", std::abs(r.metric("conditional_z")) <= 3.0,
                      "z = " + g(r.metric("conditional_z")));
        break;
    }
    std::size_t survivors = 0;
    for (const auto& row : r.rows)
        survivors += row.n;
    ctx.check("survivors", survivors > 0, std::to_string(survivors) + " samples over all horizons");
    ctx.soft("replicas", r.failed_replicas == 0 && !r.inconclusive,
             std::to_string(r.failed_replicas) + " failed replicas" + (r.inconclusive ? ", inconclusive" : ""));
    report_outputs(ctx, r);
}

// Re-plot and summarize an existing run directory.
int report(const std::string& run_dir)
{
    fs::path p(run_dir);
    std::ifstream man(p / "manifest.txt");
    if (!man) {
        std::fprintf(stderr, "report: no manifest.txt in %s\n", run_dir.c_str());
        return 2;
    }
    std::string line;
    bool pass = false;
    while (std::getline(man, line)) {
        if (line.rfind("[config]", 0) == 0)
            break;
        if (line == "status = PASS")
            pass = true;
        std::printf("%s\n", line.c_str());
    }
    std::ifstream sum(p / "summary.csv");
    if (sum) {
        std::printf("\nsummary.csv:\n");
        while (std::getline(sum, line)) {
            if (!line.empty() && line.back() == '\r')
                line.pop_back();
            std::printf("  %s\n", line.c_str());
        }
    }
    return pass ? 0 : 1;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"superenv: branching particles in a random environment, dual SPDEs and limit-theorem checks"};
    app.require_subcommand(1);
    std::string config_path, out_root;
    std::uint64_t seed = 0;
    int threads = 0;
    bool strict = false;
    std::vector<std::string> sets;
    app.add_option("--config", config_path, "key = value configuration file")->check(CLI::ExistingFile);
    app.add_option("--seed", seed, "master seed (overrides run.master_seed)");
    app.add_option("--out", out_root, "output root (default $SUPERENV_OUT or ./runs)");
    app.add_option("--threads", threads, "worker count (recorded; runs are single-threaded)");
    app.add_option("--set", sets, "override one key, e.g. --set kernel.epsilon=0.01");
    app.add_flag("--strict", strict, "treat warnings and statistical soft checks as failures");

    const std::vector<std::string> names{"kernel-check", "field-check", "simulate", "duals", "lln",
                                         "clt",          "prop",        "moments",  "report", "emit-config"};
    std::map<std::string, CLI::App*> subs;
    for (const auto& n : names)
        subs[n] = app.add_subcommand(n);
    std::string report_dir;
    subs["report"]->add_option("run_dir", report_dir, "run directory to summarize")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }
    std::string command;
    for (const auto& n : names)
        if (subs[n]->parsed())
            command = n;
    if (command == "report")
        return report(report_dir);

    Context ctx;
    ctx.command = command;
    ctx.strict = strict;
    try {
        ctx.config = config_path.empty() ? RunConfig{} : parse_config(config_path);
        for (const auto& s : sets) {
            auto eq = s.find('=');
            if (eq == std::string::npos)
                throw ConfigError(s + ": expected key=value");
            set_config_key(ctx.config, s.substr(0, eq), s.substr(eq + 1));
        }
        if (app.count("--seed"))
            ctx.config.experiment.master_seed = seed;
        if (threads > 0)
            ctx.config.threads = threads;
        validate(ctx.config);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    }
    if (command == "emit-config") {
        std::cout << emit_config(ctx.config);
        return 0;
    }

    if (out_root.empty()) {
        const char* env = std::getenv("SUPERENV_OUT");
        out_root = env && *env ? env : "runs";
    }
    ctx.dir = make_run_dir(out_root, command);
    ctx.manifest.command = command;
    ctx.manifest.hash = config_hash(ctx.config);
    ctx.manifest.master_seed = ctx.config.experiment.master_seed;
    ctx.manifest.threads = ctx.config.threads;
    ctx.manifest.config_echo = emit_config(ctx.config);
    ctx.write("config.txt", ctx.manifest.config_echo);
    std::printf("%s -> %s\n", command.c_str(), ctx.dir.string().c_str());
    for (const auto& w : ctx.config.warnings)
        ctx.soft("config_warning", false, w);

    auto t0 = std::chrono::steady_clock::now();
    int status = 0;
    try {
        if (command == "kernel-check")
            kernel_check(ctx);
        else if (command == "field-check")
            field_check(ctx);
        else if (command == "simulate")
            simulate(ctx);
        else if (command == "duals")
            duals(ctx);
        else if (command == "lln")
            experiment(ctx, Mode::LLN);
        else if (command == "clt")
            experiment(ctx, Mode::CLT);
        else if (command == "prop")
            experiment(ctx, Mode::PROP);
        else if (command == "moments")
            experiment(ctx, Mode::MOMENTS);
    } catch (const std::exception& e) {
        ctx.check("run", false, e.what());
        std::fprintf(stderr, "error: %s\n", e.what());
        status = 3;
    }
    ctx.manifest.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    ctx.write("manifest.txt", ctx.manifest.text());
    if (status == 0 && !ctx.manifest.passed)
        status = 1;
    std::printf("%s\n", status == 0 ? "PASS" : "FAIL");
    return status;
}
