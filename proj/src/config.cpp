#include "superenv/config.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>

namespace superenv {

namespace {

std::string trim(const std::string& s)
{
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos)
        return "";
    auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::string fmt(double v)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

[[noreturn]] void bad(const std::string& key, const std::string& why) { throw ConfigError(key + ": " + why); }

double to_double(const std::string& key, const std::string& v)
{
    std::size_t pos = 0;
    double x = 0.0;
    try {
        x = std::stod(v, &pos);
    } catch (const std::exception&) {
        bad(key, "expected a number, got '" + v + "'");
    }
    if (pos != v.size())
        bad(key, "expected a number, got '" + v + "'");
    return x;
}

long long to_int(const std::string& key, const std::string& v)
{
    std::size_t pos = 0;
    long long x = 0;
    try {
        x = std::stoll(v, &pos);
    } catch (const std::exception&) {
        bad(key, "expected an integer, got '" + v + "'");
    }
    if (pos != v.size())
        bad(key, "expected an integer, got '" + v + "'");
    return x;
}

std::uint64_t to_u64(const std::string& key, const std::string& v)
{
    if (v.empty() || v[0] == '-')
        bad(key, "expected an unsigned integer, got '" + v + "'");
    std::size_t pos = 0;
    unsigned long long x = 0;
    try {
        x = std::stoull(v, &pos, 0);
    } catch (const std::exception&) {
        bad(key, "expected an unsigned integer, got '" + v + "'");
    }
    if (pos != v.size())
        bad(key, "expected an unsigned integer, got '" + v + "'");
    return x;
}

bool to_bool(const std::string& key, const std::string& v)
{
    if (v == "true" || v == "1" || v == "on")
        return true;
    if (v == "false" || v == "0" || v == "off")
        return false;
    bad(key, "expected true or false, got '" + v + "'");
}

double at_least(const std::string& key, double x, double lo, bool strict)
{
    if (strict ? !(x > lo) : !(x >= lo))
        bad(key, "value " + fmt(x) + " must be " + (strict ? "> " : ">= ") + fmt(lo));
    return x;
}

std::size_t count_at_least(const std::string& key, long long x, long long lo)
{
    if (x < lo)
        bad(key, "value " + std::to_string(x) + " must be >= " + std::to_string(lo));
    return static_cast<std::size_t>(x);
}

std::string backend_name(BackendChoice b)
{
    switch (b) {
    case BackendChoice::Auto: return "auto";
    case BackendChoice::Dense: return "dense";
    case BackendChoice::Separable: return "separable";
    }
    return "auto";
}

void set_dim(RunConfig& c, int d)
{
    auto& e = c.experiment;
    e.grid.dim = d;
    e.kernel.dim = d;
    e.phi = make_test_function(e.phi.kind, d, e.phi.radius, e.phi.amplitude);
}

struct Entry {
    std::string key;
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;
};

const std::vector<Entry>& entries()
{
    static const std::vector<Entry> table = [] {
        std::vector<Entry> t;
        auto add = [&](std::string k, auto get, auto set) { t.push_back({std::move(k), get, set}); };

        add("run.master_seed", [](const RunConfig& c) { return std::to_string(c.experiment.master_seed); },
            [](RunConfig& c, const std::string& v) { c.experiment.master_seed = to_u64("run.master_seed", v); });
        add("run.threads", [](const RunConfig& c) { return std::to_string(c.threads); },
            [](RunConfig& c, const std::string& v) {
                c.threads = static_cast<int>(count_at_least("run.threads", to_int("run.threads", v), 1));
            });
        add("run.svg", [](const RunConfig& c) { return std::string(c.svg ? "true" : "false"); },
            [](RunConfig& c, const std::string& v) { c.svg = to_bool("run.svg", v); });

        add("grid.dim", [](const RunConfig& c) { return std::to_string(c.experiment.grid.dim); },
            [](RunConfig& c, const std::string& v) {
                long long d = to_int("grid.dim", v);
                if (d < 3)
                    bad("grid.dim", "value " + v + " must be >= 3 (the model needs d >= 3)");
                if (d > 8)
                    bad("grid.dim", "value " + v + " must be <= 8");
                set_dim(c, static_cast<int>(d));
            });
        add("grid.half_width", [](const RunConfig& c) { return fmt(c.experiment.grid.half_width); },
            [](RunConfig& c, const std::string& v) {
                c.experiment.grid.half_width = at_least("grid.half_width", to_double("grid.half_width", v), 0.0, true);
            });
        add("grid.cells", [](const RunConfig& c) { return std::to_string(c.experiment.grid.cells_per_axis); },
            [](RunConfig& c, const std::string& v) {
                c.experiment.grid.cells_per_axis =
                    static_cast<int>(count_at_least("grid.cells", to_int("grid.cells", v), 1));
            });

        add("kernel.kind", [](const RunConfig& c) { return to_string(c.experiment.kernel.kind); },
            [](RunConfig& c, const std::string& v) {
                KernelKind k;
                try {
                    k = kernel_kind_from_string(v);
                } catch (const std::invalid_argument&) {
                    bad("kernel.kind", "expected Zero, CauchyPD, PowerCapped or ProductCauchy, got '" + v + "'");
                }
                if (k == KernelKind::Custom)
                    bad("kernel.kind", "Custom kernels are only available through the library");
                c.experiment.kernel.kind = k;
            });
        add("kernel.epsilon", [](const RunConfig& c) { return fmt(c.experiment.kernel.epsilon); },
            [](RunConfig& c, const std::string& v) {
                c.experiment.kernel.epsilon = at_least("kernel.epsilon", to_double("kernel.epsilon", v), 0.0, false);
            });
        add("kernel.alpha", [](const RunConfig& c) { return fmt(c.experiment.kernel.alpha); },
            [](RunConfig& c, const std::string& v) {
                double a = to_double("kernel.alpha", v);
                if (!(a > 2.0))
                    bad("kernel.alpha", "value " + v + " must be > 2 (standing assumption alpha > 2)");
                c.experiment.kernel.alpha = a;
            });

        add("field.sampling", [](const RunConfig& c) { return std::string(c.field_sampling ? "true" : "false"); },
            [](RunConfig& c, const std::string& v) { c.field_sampling = to_bool("field.sampling", v); });
        add("field.backend", [](const RunConfig& c) { return backend_name(c.experiment.field.backend); },
            [](RunConfig& c, const std::string& v) {
                if (v == "auto")
                    c.experiment.field.backend = BackendChoice::Auto;
                else if (v == "dense")
                    c.experiment.field.backend = BackendChoice::Dense;
                else if (v == "separable")
                    c.experiment.field.backend = BackendChoice::Separable;
                else
                    bad("field.backend", "expected auto, dense or separable, got '" + v + "'");
            });
        add("field.dense_cap", [](const RunConfig& c) { return std::to_string(c.experiment.field.dense_cap); },
            [](RunConfig& c, const std::string& v) {
                c.experiment.field.dense_cap = count_at_least("field.dense_cap", to_int("field.dense_cap", v), 1);
            });

        add("phi.kind", [](const RunConfig& c) { return to_string(c.experiment.phi.kind); },
            [](RunConfig& c, const std::string& v) {
                try {
                    c.experiment.phi.kind = test_kind_from_string(v);
                } catch (const std::invalid_argument&) {
                    bad("phi.kind", "expected Bump or TruncGauss, got '" + v + "'");
                }
            });
        add("phi.radius", [](const RunConfig& c) { return fmt(c.experiment.phi.radius); },
            [](RunConfig& c, const std::string& v) {
                c.experiment.phi.radius = at_least("phi.radius", to_double("phi.radius", v), 0.0, true);
            });
        add("phi.amplitude", [](const RunConfig& c) { return fmt(c.experiment.phi.amplitude); },
            [](RunConfig& c, const std::string& v) {
                c.experiment.phi.amplitude = at_least("phi.amplitude", to_double("phi.amplitude", v), 0.0, true);
            });

        add("sim.n", [](const RunConfig& c) { return std::to_string(c.experiment.n); },
            [](RunConfig& c, const std::string& v) {
                c.experiment.n = static_cast<int>(count_at_least("sim.n", to_int("sim.n", v), 1));
            });
        add("sim.boundary", [](const RunConfig& c) { return to_string(c.experiment.boundary); },
            [](RunConfig& c, const std::string& v) {
                try {
                    c.experiment.boundary = boundary_from_string(v);
                } catch (const std::invalid_argument&) {
                    bad("sim.boundary", "expected Reflect or Free, got '" + v + "'");
                }
            });
        add("sim.max_particles", [](const RunConfig& c) { return std::to_string(c.experiment.max_particles); },
            [](RunConfig& c, const std::string& v) {
                c.experiment.max_particles =
                    count_at_least("sim.max_particles", to_int("sim.max_particles", v), 1);
            });
        add("sim.horizon", [](const RunConfig& c) { return fmt(c.sim_horizon); },
            [](RunConfig& c, const std::string& v) {
                c.sim_horizon = at_least("sim.horizon", to_double("sim.horizon", v), 0.0, true);
            });
        add("sim.replicas", [](const RunConfig& c) { return std::to_string(c.sim_replicas); },
            [](RunConfig& c, const std::string& v) {
                c.sim_replicas = count_at_least("sim.replicas", to_int("sim.replicas", v), 1);
            });

        add("solver.c_stab", [](const RunConfig& c) { return fmt(c.experiment.solver.c_stab); },
            [](RunConfig& c, const std::string& v) {
                c.experiment.solver.c_stab = at_least("solver.c_stab", to_double("solver.c_stab", v), 0.0, true);
            });

        add("experiment.horizons",
            [](const RunConfig& c) {
                std::string s;
                for (std::size_t i = 0; i < c.experiment.horizons.size(); ++i)
                    s += (i ? "," : "") + fmt(c.experiment.horizons[i]);
                return s;
            },
            [](RunConfig& c, const std::string& v) {
                std::vector<double> h;
                std::stringstream ss(v);
                std::string item;
                while (std::getline(ss, item, ','))
                    h.push_back(at_least("experiment.horizons", to_double("experiment.horizons", trim(item)), 0.0,
                                         true));
                if (h.empty())
                    bad("experiment.horizons", "needs at least one horizon");
                for (std::size_t i = 1; i < h.size(); ++i)
                    if (h[i] <= h[i - 1])
                        bad("experiment.horizons", "horizons must increase");
                c.experiment.horizons = h;
            });
        add("experiment.n_fields", [](const RunConfig& c) { return std::to_string(c.experiment.n_fields); },
            [](RunConfig& c, const std::string& v) {
                c.experiment.n_fields = count_at_least("experiment.n_fields", to_int("experiment.n_fields", v), 1);
            });
        add("experiment.n_clouds", [](const RunConfig& c) { return std::to_string(c.experiment.n_clouds); },
            [](RunConfig& c, const std::string& v) {
                c.experiment.n_clouds = count_at_least("experiment.n_clouds", to_int("experiment.n_clouds", v), 1);
            });
        add("experiment.moment_order", [](const RunConfig& c) { return std::to_string(c.experiment.moment_order); },
            [](RunConfig& c, const std::string& v) {
                long long o = to_int("experiment.moment_order", v);
                if (o < 1 || o > 2)
                    bad("experiment.moment_order", "value " + v + " must be 1 or 2");
                c.experiment.moment_order = static_cast<int>(o);
            });
        add("experiment.oracle_paths", [](const RunConfig& c) { return std::to_string(c.experiment.oracle_paths); },
            [](RunConfig& c, const std::string& v) {
                c.experiment.oracle_paths =
                    count_at_least("experiment.oracle_paths", to_int("experiment.oracle_paths", v), 2);
            });
        add("experiment.oracle_dt", [](const RunConfig& c) { return fmt(c.experiment.oracle_dt); },
            [](RunConfig& c, const std::string& v) {
                c.experiment.oracle_dt =
                    at_least("experiment.oracle_dt", to_double("experiment.oracle_dt", v), 0.0, true);
            });

        add("duals.p", [](const RunConfig& c) { return fmt(c.bound_p); },
            [](RunConfig& c, const std::string& v) {
                double p = to_double("duals.p", v);
                if (!(p > 1.0 && p < 10.0 / 9.0))
                    bad("duals.p", "value " + v + " must lie in (1, 10/9)");
                c.bound_p = p;
            });
        add("duals.t", [](const RunConfig& c) { return fmt(c.dual_t); },
            [](RunConfig& c, const std::string& v) { c.dual_t = at_least("duals.t", to_double("duals.t", v), 0.0, true); });
        add("duals.paths", [](const RunConfig& c) { return std::to_string(c.dual_paths); },
            [](RunConfig& c, const std::string& v) {
                c.dual_paths = count_at_least("duals.paths", to_int("duals.paths", v), 2);
            });
        add("duals.dt", [](const RunConfig& c) { return fmt(c.dual_dt); },
            [](RunConfig& c, const std::string& v) {
                c.dual_dt = at_least("duals.dt", to_double("duals.dt", v), 0.0, true);
            });
        add("duals.expmoment_horizon", [](const RunConfig& c) { return fmt(c.expmoment_horizon); },
            [](RunConfig& c, const std::string& v) {
                c.expmoment_horizon =
                    at_least("duals.expmoment_horizon", to_double("duals.expmoment_horizon", v), 0.0, true);
            });
        return t;
    }();
    return table;
}

void add_warnings(RunConfig& c)
{
    c.warnings.clear();
    if (c.experiment.kernel.kind == KernelKind::PowerCapped && c.field_sampling)
        c.warnings.push_back("kernel.kind = PowerCapped is not guaranteed positive definite; field sampling may "
                             "engage eigenvalue clipping");
}

} // namespace

void set_config_key(RunConfig& c, const std::string& key, const std::string& value)
{
    for (const auto& e : entries())
        if (e.key == key) {
            e.set(c, value);
            add_warnings(c);
            return;
        }
    throw ConfigError(key + ": unknown key");
}

std::vector<std::string> config_keys()
{
    std::vector<std::string> k;
    for (const auto& e : entries())
        k.push_back(e.key);
    return k;
}

RunConfig parse_config_text(const std::string& text)
{
    RunConfig c;
    std::istringstream in(text);
    std::string line;
    std::map<std::string, int> seen;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos)
            line.erase(hash);
        line = trim(line);
        if (line.empty())
            continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (seen.count(key))
            throw ConfigError(key + ": set twice (lines " + std::to_string(seen[key]) + " and " +
                              std::to_string(lineno) + ")");
        seen[key] = lineno;
        set_config_key(c, key, value);
    }
    validate(c);
    add_warnings(c);
    return c;
}

RunConfig parse_config(const std::string& path)
{
    std::ifstream f(path);
    if (!f)
        throw ConfigError("cannot open config file '" + path + "'");
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_config_text(ss.str());
}

std::string emit_config(const RunConfig& c)
{
    std::string out;
    std::string section;
    for (const auto& e : entries()) {
        std::string s = e.key.substr(0, e.key.find('.'));
        if (s != section) {
            if (!section.empty())
                out += "\n";
            section = s;
        }
        out += e.key + " = " + e.get(c) + "\n";
    }
    return out;
}

std::uint64_t config_hash(const RunConfig& c)
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : emit_config(c)) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

void validate(const RunConfig& c)
{
    const auto& e = c.experiment;
    if (e.grid.dim != e.kernel.dim || e.phi.dim() != e.grid.dim)
        throw ConfigError("grid.dim: grid, kernel and test function dimensions differ");
    if (!(c.bound_p > 1.0 && c.bound_p < 10.0 / 9.0))
        throw ConfigError("duals.p: value " + fmt(c.bound_p) + " must lie in (1, 10/9)");
    if (!(e.kernel.alpha > 2.0))
        throw ConfigError("kernel.alpha: value " + fmt(e.kernel.alpha) + " must be > 2");
    if (e.kernel.epsilon < 0.0)
        throw ConfigError("kernel.epsilon: value " + fmt(e.kernel.epsilon) + " must be >= 0");
}

std::string RunManifest::text() const
{
    char hex[24];
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(hash));
    std::string s;
    s += "command = " + command + "\n";
    s += "version = " + version + "\n";
    s += "csv_schema = " + csv_version + "\n";
    s += "config_hash = " + std::string(hex) + "\n";
    s += "master_seed = " + std::to_string(master_seed) + "\n";
    s += "threads = " + std::to_string(threads) + "\n";
    s += "wall_seconds = " + fmt(wall_seconds) + "\n";
    s += "status = " + std::string(passed ? "PASS" : "FAIL") + "\n";
    for (const auto& ch : checks)
        s += "check = " + ch + "\n";
    s += "\n[config]\n" + config_echo;
    return s;
}

} // namespace superenv
