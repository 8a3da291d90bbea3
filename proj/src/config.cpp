#include "towerlab/config.hpp"

#include <boost/program_options.hpp>
#include <fmt/format.h>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "towerlab/correlate.hpp"

namespace towerlab {

namespace po = boost::program_options;

namespace {

template <class T>
T parse_number(const std::string& key, const std::string& s) {
    T v{};
    const char* b = s.data();
    const char* e = s.data() + s.size();
    auto [p, ec] = std::from_chars(b, e, v);
    if (ec != std::errc() || p != e) throw ConfigError("config: bad value '" + s + "' for " + key);
    return v;
}

struct Field {
    const char* key;
    std::function<std::string(const Config&)> get;
    std::function<void(Config&, const std::string&)> set;
};

#define TL_NUM(KEY, EXPR, TYPE)                                                        \
    Field {                                                                            \
        KEY, [](const Config& c) { return fmt::format("{}", c.EXPR); },               \
            [](Config& c, const std::string& s) { c.EXPR = parse_number<TYPE>(KEY, s); } \
    }
#define TL_STR(KEY, EXPR)                                                    \
    Field {                                                                  \
        KEY, [](const Config& c) { return c.EXPR; },                         \
            [](Config& c, const std::string& s) { c.EXPR = s; }              \
    }

const std::vector<Field>& fields() {
    static const std::vector<Field> f = {
        Field{"driver.kind",
              [](const Config& c) {
                  return std::string(c.driver.kind == DriverKind::rotation ? "rotation" : "shift");
              },
              [](Config& c, const std::string& s) {
                  if (s == "rotation") c.driver.kind = DriverKind::rotation;
                  else if (s == "shift") c.driver.kind = DriverKind::bernoulli_shift;
                  else throw ConfigError("config: driver.kind must be rotation or shift");
              }},
        TL_NUM("driver.angle", driver.angle, double),
        TL_NUM("driver.seed", driver.seed, std::uint64_t),
        TL_NUM("driver.alpha_min", driver.alpha_min, double),
        TL_NUM("driver.alpha_max", driver.alpha_max, double),
        TL_NUM("driver.back_window", driver.back_window, std::int64_t),
        Field{"fiber.family",
              [](const Config& c) {
                  return std::string(c.fiber.family == Family::quadratic ? "quadratic" : "lorenz");
              },
              [](Config& c, const std::string& s) {
                  if (s == "quadratic") c.fiber.family = Family::quadratic;
                  else if (s == "lorenz") c.fiber.family = Family::lorenz;
                  else throw ConfigError("config: fiber.family must be quadratic or lorenz");
              }},
        TL_NUM("fiber.lorenz_alpha", fiber.lorenz_alpha, double),
        TL_NUM("tower.n_max", tower.n_max, int),
        TL_NUM("tower.L_max", tower.L_max, int),
        TL_NUM("tower.cells_per_interval", tower.cells_per_interval, int),
        TL_NUM("tower.gamma", tower.gamma, double),
        TL_NUM("tower.theta_prime", tower.theta_prime, double),
        TL_NUM("tower.zeta", tower.zeta, double),
        TL_NUM("tower.return_cap", tower.return_cap, int),
        TL_NUM("ulam.defect_budget", ulam.defect_budget, double),
        TL_NUM("ulam.pullback_max", ulam.pullback_max, int),
        TL_NUM("ulam.density_tol", ulam.density_tol, double),
        TL_NUM("ulam.cesaro_length", ulam.cesaro_length, int),
        TL_NUM("cones.alpha", cones.alpha, double),
        TL_NUM("cones.alpha_prime", cones.alpha_prime, double),
        TL_NUM("cones.kappa", cones.kappa, double),
        TL_NUM("cones.depth", cones.depth, int),
        TL_NUM("cones.horizon", cones.horizon, int),
        TL_NUM("cones.k_max", cones.k_max, int),
        TL_NUM("cones.c_horizon", cones.c_horizon, int),
        TL_NUM("schedule.cap", schedule.params.cap, int),
        TL_NUM("schedule.probes", schedule.params.probes, int),
        TL_NUM("schedule.eps", schedule.params.eps, double),
        TL_NUM("schedule.blocks", schedule.params.blocks, int),
        TL_NUM("schedule.bands", schedule.params.bands, int),
        TL_NUM("schedule.window", schedule.params.window, int),
        TL_NUM("schedule.q1_samples", schedule.q1_samples, int),
        TL_NUM("schedule.sample_stride", schedule.sample_stride, int),
        TL_NUM("schedule.horizon_factor", schedule.horizon_factor, int),
        TL_NUM("correlate.n_max", correlate.n_max, int),
        TL_NUM("correlate.mc_samples", correlate.mc_samples, long),
        TL_NUM("correlate.mc_batches", correlate.mc_batches, int),
        TL_NUM("correlate.fit_lo", correlate.fit_lo, int),
        TL_NUM("correlate.fit_hi", correlate.fit_hi, int),
        TL_STR("correlate.phi", correlate.phi),
        TL_STR("correlate.psi", correlate.psi),
        TL_NUM("run.seed", run.seed, std::uint64_t),
        TL_NUM("run.fibers", run.fibers, int),
        TL_NUM("run.fiber_stride", run.fiber_stride, int),
        TL_NUM("run.workers", run.workers, int),
        TL_NUM("run.tail_depth", run.tail_depth, int),
        TL_STR("run.out", run.out),
    };
    return f;
}

#undef TL_NUM
#undef TL_STR

}  // namespace

void set_config_value(Config& c, const std::string& key, const std::string& value) {
    for (const Field& f : fields())
        if (key == f.key) {
            f.set(c, value);
            return;
        }
    throw ConfigError("config: unknown key '" + key + "'");
}

Config parse_config(const std::string& text) {
    po::options_description desc;
    for (const Field& f : fields()) desc.add_options()(f.key, po::value<std::string>());
    std::istringstream in(text);
    po::variables_map vm;
    try {
        po::store(po::parse_config_file(in, desc, false), vm);
    } catch (const po::error& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    Config c;
    for (const Field& f : fields())
        if (vm.count(f.key)) f.set(c, vm[f.key].as<std::string>());
    validate_config(c);
    return c;
}

Config load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("config: cannot read " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_config(ss.str());
}

std::vector<std::pair<std::string, std::string>> config_entries(const Config& c) {
    std::vector<std::pair<std::string, std::string>> out;
    for (const Field& f : fields()) out.emplace_back(f.key, f.get(c));
    std::sort(out.begin(), out.end());
    return out;
}

std::string canonical_text(const Config& c) {
    std::string s;
    for (const auto& [k, v] : config_entries(c)) s += k + " = " + v + "\n";
    return s;
}

void validate_config(const Config& c) {
    auto need = [](bool ok, const char* msg) {
        if (!ok) throw ConfigError(std::string("config: ") + msg);
    };
    need(c.driver.alpha_min > 1.0 && c.driver.alpha_max >= c.driver.alpha_min,
         "need 1 < driver.alpha_min <= driver.alpha_max");
    need(c.driver.back_window > 0, "driver.back_window must be positive");
    need(c.fiber.lorenz_alpha > 0.0 && c.fiber.lorenz_alpha < 0.5, "fiber.lorenz_alpha must be in (0, 1/2)");
    need(c.tower.n_max >= 2, "tower.n_max must be >= 2");
    need(c.tower.L_max >= 1, "tower.L_max must be >= 1");
    need(c.tower.cells_per_interval >= 1, "tower.cells_per_interval must be >= 1");
    need(c.tower.gamma > 0.0 && c.tower.gamma < 1.0, "tower.gamma must be in (0,1)");
    need(c.tower.theta_prime >= 0.0, "tower.theta_prime must be >= 0 (0 selects theta_hat / 2)");
    need(c.tower.zeta > 0.0 && c.tower.zeta < 1.0, "tower.zeta must be in (0,1)");
    need(c.tower.return_cap >= 1, "tower.return_cap must be >= 1");
    need(c.ulam.defect_budget > 0.0, "ulam.defect_budget must be positive");
    need(c.ulam.pullback_max >= 5 && c.ulam.density_tol > 0.0, "bad ulam density settings");
    need(c.ulam.cesaro_length >= 1, "ulam.cesaro_length must be >= 1");
    need(c.cones.alpha > 0.0 && c.cones.alpha < 1.0 && c.cones.alpha_prime > 1.0,
         "need 0 < cones.alpha < 1 < cones.alpha_prime");
    need(c.cones.kappa >= 0.0 && c.cones.kappa < 1.0, "cones.kappa must be in [0,1)");
    need(c.cones.depth >= 0 && c.cones.horizon >= 1 && c.cones.k_max >= 1, "bad cone geometry sizes");
    need(c.schedule.params.cap >= 1, "schedule.cap must be >= 1");
    need(c.schedule.params.eps > 0.0 && c.schedule.params.eps < 0.5, "schedule.eps must be in (0, 1/2)");
    need(c.schedule.params.probes >= 0 && c.schedule.params.blocks >= 1 && c.schedule.params.bands >= 1,
         "bad schedule partition sizes");
    need(c.schedule.q1_samples >= 100, "schedule.q1_samples must be >= 100");
    need(c.schedule.sample_stride >= 1 && c.schedule.horizon_factor >= 1, "bad schedule strides");
    need(c.correlate.n_max >= 1 && c.correlate.mc_samples >= 1000, "need correlate.n_max >= 1, mc_samples >= 1000");
    need(c.correlate.mc_batches >= 2, "correlate.mc_batches must be >= 2");
    need(c.correlate.fit_lo >= 0 && c.correlate.fit_hi <= c.correlate.n_max &&
             c.correlate.fit_lo < c.correlate.fit_hi,
         "need 0 <= correlate.fit_lo < correlate.fit_hi <= correlate.n_max");
    need(c.run.fibers >= 1 && c.run.fiber_stride >= 1, "bad run.fibers / run.fiber_stride");
    need(c.run.workers >= 1, "run.workers must be >= 1");
    need(c.run.tail_depth >= 8, "run.tail_depth must be >= 8");
    for (const std::string* name : {&c.correlate.phi, &c.correlate.psi}) {
        try {
            named_observable(*name);
        } catch (const std::invalid_argument&) {
            throw ConfigError("config: unknown observable '" + *name + "'");
        }
    }
}

std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace towerlab
