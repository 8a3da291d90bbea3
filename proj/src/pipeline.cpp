#include "towerlab/pipeline.hpp"

#include <fmt/format.h>
#include <fmt/os.h>
#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <limits>
#include <numeric>
#include <random>

#include "json.hpp"
#include "towerlab/stats.hpp"
#include "towerlab/svg.hpp"

namespace towerlab {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr int kTailLo = 5, kTailHi = 30;
constexpr long kFar = std::numeric_limits<long>::min() / 2;

Config validated(Config c) {
    validate_config(c);
    return c;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

struct Skip : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace

// ---------------------------------------------------------------------------
// Experiment

Experiment::Experiment(Config cfg) : cfg_(validated(std::move(cfg))), d_(cfg_.driver) {}

std::vector<long> Experiment::sample_fibers() const {
    std::vector<long> ks;
    for (int j = 0; j < cfg_.run.fibers; ++j) ks.push_back(static_cast<long>(j) * cfg_.run.fiber_stride);
    return ks;
}

TowerPartition Experiment::tail_partition(long k) const {
    const int depth = cfg_.run.tail_depth;
    const Omega w = d_.orbit(d_.origin(), k);
    if (cfg_.fiber.family == Family::quadratic)
        return build_quadratic_partition(fiber_param(cfg_.fiber, d_, w), depth);
    std::vector<double> a(depth + 1);
    for (int j = 0; j <= depth; ++j) a[j] = fiber_param(cfg_.fiber, d_, d_.orbit(w, j));
    return build_lorenz_partition(a, depth);
}

const TailSummary& Experiment::tail() {
    if (tail_) return *tail_;
    TailSummary t;
    const int hi = std::min(kTailHi, cfg_.run.tail_depth - 2);
    t.theta_hat = INFINITY;
    for (long k : sample_fibers()) {
        const TailFit f = fit_tail(tail_partition(k), kTailLo, hi);
        t.theta.push_back(f.theta);
        t.theta_hat = std::min(t.theta_hat, f.theta);
        t.r2_min = std::min(t.r2_min, f.r2);
    }
    const TowerPartition P0 = tail_partition(0);
    for (int n = 0; n <= cfg_.run.tail_depth; ++n) t.mass.push_back(tail_mass(P0, n));
    const double tp = cfg_.tower.theta_prime;
    if (tp > 0.0 && !(tp < t.theta_hat))
        throw ConfigError(fmt::format("config: tower.theta_prime = {} is not below the fitted tail rate {:.6g}",
                                      tp, t.theta_hat));
    tail_ = std::move(t);
    return *tail_;
}

double Experiment::theta_prime() {
    return cfg_.tower.theta_prime > 0.0 ? cfg_.tower.theta_prime : tail().theta_hat / 2.0;
}

TowerChain& Experiment::chain() {
    if (!chain_) {
        TowerParams p = cfg_.tower;
        p.theta_prime = theta_prime();
        chain_ = std::make_unique<TowerChain>(d_, cfg_.fiber, d_.origin(), p);
    }
    return *chain_;
}

Cocycle& Experiment::cocycle() {
    if (!L_) L_ = std::make_unique<Cocycle>(chain(), cfg_.ulam.defect_budget);
    return *L_;
}

const DensityResult& Experiment::density(long k) {
    auto it = dens_.find(k);
    if (it != dens_.end()) return it->second;
    DensityResult r = equivariant_density(cocycle(), k, cfg_.ulam.pullback_max, cfg_.ulam.density_tol);
    return dens_.emplace(k, std::move(r)).first->second;
}

const Calibration& Experiment::calibration() {
    if (cal_) return *cal_;
    Calibration k;
    k.theta_hat = tail().theta_hat;
    k.theta_prime = theta_prime();
    TowerChain& c = chain();
    Cocycle& L = cocycle();
    const ConeConfig& cc = cfg_.cones;
    k.C = 1.0;
    for (long f : sample_fibers()) {
        k.D_F = std::max(k.D_F, distortion_constant(c, f));
        Vec psi = Vec::Ones(c.layout().size());
        for (int n = 1; n < cc.c_horizon; ++n) {
            psi = L.normalized(f + n - 1, psi);
            k.C = std::max(k.C, sup_norm(psi));
        }
        const ConeGeometry g = cone_geometry(c, f, cc.horizon, cc.depth, cc.k_max, density(f).h);
        k.Dcal = std::max(k.Dcal, g.Dcal);
        k.D2 = std::max(k.D2, g.D2);
    }
    k.D1 = good_diam(c.params().gamma, cc.depth);
    k.kappa = cc.kappa > 0.0 ? cc.kappa : std::min(0.5, 0.9 * std::exp(-k.theta_prime));
    k.eps = k.kappa / 2.0;

    ConeInputs in;
    in.alpha = cc.alpha;
    in.alpha_p = cc.alpha_prime;
    in.kappa = k.kappa;
    in.eps = k.eps;
    in.C = k.C;
    in.D_F = k.D_F;
    in.Dcal = k.Dcal;
    in.D1 = k.D1;
    in.D2 = k.D2;
    if (!(k.kappa < std::exp(-k.theta_prime))) {
        k.infeasible_reason = fmt::format("kappa {:.6g} is not below exp(-theta') = {:.6g}", k.kappa,
                                          std::exp(-k.theta_prime));
    } else {
        try {
            k.params = default_params(in);
            k.params.depth = cc.depth;
            k.params.horizon = cc.horizon;
            k.feasible = true;
            k.small_ok = smallness_ok(k.params) && header_inequalities_ok(k.params);
        } catch (const ConeInfeasible& e) {
            k.infeasible_reason = e.what();
        }
    }
    cal_ = std::move(k);
    return *cal_;
}

Vec Experiment::phi() { return sample_observable(chain(), 0, named_observable(cfg_.correlate.phi)); }

Vec Experiment::psi(long k) { return sample_observable(chain(), k, named_observable(cfg_.correlate.psi)); }

const ScheduleResult& Experiment::schedule() {
    if (sched_) return *sched_;
    const Calibration& cal = calibration();
    if (!cal.feasible) throw std::runtime_error("schedule: cone parameters infeasible: " + cal.infeasible_reason);
    const ScheduleConfig& sc = cfg_.schedule;
    ScheduleParams s = sc.params;
    s.k_max = cfg_.cones.k_max;
    s.seed = cfg_.run.seed;
    TowerChain& c = chain();
    Cocycle& L = cocycle();
    const Vec h0 = density(0).h;
    auto drop = [&](LocalGoodness& lg, long k) {
        lg.release_before(k);
        L.evict(kFar, k);
        c.evict(kFar, k);
    };

    ScheduleResult r;
    {
        LocalGoodness lg(L, 0, h0, cal.params, s);
        for (int i = 0; i < sc.q1_samples; ++i) {
            const long k = static_cast<long>(i) * sc.sample_stride;
            const Q1Result q = lg.q1(k, s.cap);
            if (i == 0) r.origin = q;
            r.q1_samples.push_back(q.q1);
            drop(lg, k + sc.sample_stride);
        }
    }
    r.M = choose_M(r.q1_samples, s.eps);
    const long H = static_cast<long>(sc.horizon_factor) * r.M;
    r.flags.assign(H + 1, 0);
    {
        LocalGoodness lg(L, 0, h0, cal.params, s);
        for (long k = 0; k <= H; ++k) {
            r.flags[k] = lg.q1(k, r.M, r.M).q1 <= r.M;
            drop(lg, k + 1);
        }
    }
    r.good = good_times(r.flags, r.M, s.eps, r.origin.q1);
    L.evict(kFar, std::numeric_limits<long>::max());
    c.evict(kFar, std::numeric_limits<long>::max());
    sched_ = std::move(r);
    return *sched_;
}

const CorrelationResult& Experiment::correlations() {
    if (corr_) return *corr_;
    const CorrelateConfig& cc = cfg_.correlate;
    Cocycle& L = cocycle();
    const Vec h = density(0).h;
    const Vec ph = phi().cwiseProduct(h);
    auto psi_at = [this](long m) { return psi(m); };

    CorrelationResult r;
    r.op = operator_correlation_series(L, 0, ph, psi_at, h, cc.n_max);
    const std::vector<Vec> orbit = density_orbit(L, 0, h, cc.n_max + 1);
    r.mc = mc_correlation_series(chain(), 0, ph, psi_at, orbit, cc.n_max, cc.mc_samples, cfg_.run.seed,
                                 cc.mc_batches);
    double defect = 0.0;
    std::vector<int> ns;
    std::vector<double> vs;
    for (const CorrValue& v : r.op) {
        defect = std::max(defect, std::abs(v.defect));
        ns.push_back(v.n);
        vs.push_back(v.value);
    }
    r.floor = 10.0 * defect;
    try {
        r.fit = fit_decay(ns, vs, cc.fit_lo, cc.fit_hi, r.floor);
    } catch (const std::exception& e) {
        r.fit_error = e.what();
    }
    for (std::size_t n = 0; n < r.op.size(); ++n) {
        const double d = std::abs(r.op[n].signed_value - r.mc[n].estimate);
        const double se = r.mc[n].stderr_;
        r.max_abs_z = std::max(r.max_abs_z, se > 0.0 ? d / se : (d > 0.0 ? INFINITY : 0.0));
    }
    corr_ = std::move(r);
    return *corr_;
}

// ---------------------------------------------------------------------------
// Checks

namespace {

using CheckFn = std::function<std::pair<bool, std::string>(Experiment&)>;

std::pair<bool, std::string> check_partition(Experiment& e) {
    const TowerChain& c = e.chain();
    const Config& cfg = e.config();
    double worst = 0.0;
    long pieces = 0, inconsistent = 0;
    for (long k : e.sample_fibers()) {
        const TowerPartition& P = c.partition(k);
        const Omega w = c.omega(k);
        for (int p = 0; p < static_cast<int>(P.pieces.size()); ++p) {
            const Piece& pc = P.pieces[p];
            worst = std::max(worst, full_branch_error(P, p));
            ++pieces;
            for (int j = 1; j <= 100; ++j) {
                const double x = P.x_of(pc, pc.u_lo + pc.length() * j / 101.0);
                if (return_time(cfg.fiber, e.driving(), w, x, cfg.tower.return_cap) != pc.ret) ++inconsistent;
            }
        }
    }
    return {worst <= 1e-8 && inconsistent == 0,
            fmt::format("pieces={} max_endpoint_error={:.3g} inconsistent_return_samples={}", pieces, worst,
                        inconsistent)};
}

std::pair<bool, std::string> check_distortion(Experiment& e) {
    const std::uint64_t seed = e.config().run.seed;
    const DistortionReport a = verify_distortion(e.chain(), 0, 6, 32000, seed);
    const DistortionReport b = verify_distortion(e.chain(), 0, 6, 64000, seed);
    const bool finite = std::isfinite(a.D_hat) && std::isfinite(b.D_hat) && a.D_hat > 0.0;
    const double rel = finite ? std::abs(b.D_hat - a.D_hat) / a.D_hat : INFINITY;
    return {finite && rel <= 0.10,
            fmt::format("D_hat={:.6g} D_hat_doubled={:.6g} rel_change={:.3g}", a.D_hat, b.D_hat, rel)};
}

std::pair<bool, std::string> check_expansion(Experiment& e) {
    const TowerChain& c = e.chain();
    double jmin = INFINITY;
    for (long k : e.sample_fibers()) {
        const TowerPartition& P = c.partition(k);
        for (int p = 0; p < static_cast<int>(P.pieces.size()); ++p) {
            const Piece& pc = P.pieces[p];
            for (int j = 1; j <= 64; ++j)
                jmin = std::min(jmin, piece_jacobian(P, p, pc.u_lo + pc.length() * j / 65.0));
        }
    }
    return {jmin > 1.0, fmt::format("min_induced_derivative={:.6g}", jmin)};
}

std::pair<bool, std::string> check_aperiodicity(Experiment& e) {
    const TowerChain& c = e.chain();
    int fibers_ok = 0, fibers = 0;
    std::string witness;
    for (long k : e.sample_fibers()) {
        const TowerPartition& P = c.partition(k);
        std::map<int, double> mass;
        for (const Piece& pc : P.pieces) mass[pc.ret] += pc.length();
        std::vector<int> heavy;
        for (const auto& [r, m] : mass)
            if (m >= 1e-4) heavy.push_back(r);
        bool found = false;
        for (std::size_t i = 0; i < heavy.size() && !found; ++i)
            for (std::size_t j = i + 1; j < heavy.size() && !found; ++j)
                if (std::gcd(heavy[i], heavy[j]) == 1) {
                    found = true;
                    if (witness.empty()) witness = fmt::format("{},{}", heavy[i], heavy[j]);
                }
        ++fibers;
        fibers_ok += found ? 1 : 0;
    }
    return {fibers_ok == fibers, fmt::format("fibers_with_coprime_pair={}/{} witness={}", fibers_ok, fibers, witness)};
}

std::pair<bool, std::string> check_tail(Experiment& e) {
    const TailSummary& t = e.tail();
    const TowerPartition P = e.tail_partition(0);
    std::map<int, double> by_depth;
    for (const Piece& pc : P.pieces)
        if (pc.depth >= 1) by_depth[pc.depth] += pc.length();
    std::vector<double> n, m;
    for (const auto& [d, len] : by_depth) {
        n.push_back(d);
        m.push_back(len);
    }
    const FitResult f = fit_log_linear(n, m);
    const double eta = -f.slope / std::log(2.0);
    double Cp = 0.0;
    for (std::size_t i = 0; i < n.size(); ++i) Cp = std::max(Cp, m[i] * std::exp2(eta * n[i]));
    const bool ok = t.theta_hat > 0.0 && t.r2_min >= 0.98 && eta > 0.0;
    return {ok, fmt::format("theta_hat={:.6g} r2_min={:.6g} eta={:.6g} C'={:.3g}", t.theta_hat, t.r2_min, eta, Cp)};
}

std::pair<bool, std::string> check_operator(Experiment& e) {
    const Cocycle& L = e.cocycle();
    const TowerChain& c = e.chain();
    const std::vector<long> ks = e.sample_fibers();
    const std::size_t nk = std::min<std::size_t>(ks.size(), 5);
    double row_err = 0.0, dual = 0.0, comp = 0.0;
    bool ok = true;
    std::mt19937_64 rng(mix64(e.config().run.seed ^ 0x0b5e55edULL));
    std::uniform_real_distribution<double> U(-1.0, 1.0);
    const int size = c.layout().size();
    for (std::size_t j = 0; j < nk; ++j) {
        const long k = ks[j];
        const TransferMatrix& T = L.op(k);
        for (int i = 0; i < T.rows(); ++i) {
            double s = T.defect[i];
            for (SparseRM::InnerIterator it(T.E, i); it; ++it) s += it.value();
            row_err = std::max(row_err, std::abs(s - 1.0));
        }
        ok = ok && row_err <= 1e-9;
        for (int p = 0; p < 20; ++p) {
            Vec phi(size), psi(size);
            for (int i = 0; i < size; ++i) phi[i] = U(rng);
            for (int i = 0; i < size; ++i) psi[i] = U(rng);
            const DualityGap g = duality_check(L, k, phi, psi);
            const double rel = g.gap / std::max(g.scale, 1e-300);
            dual = std::max(dual, rel);
            ok = ok && g.gap <= (1e-8 + T.max_defect) * std::max(g.scale, 1.0);
        }
        const TransferMatrix T2 = L.compose(k, 2);
        const TransferMatrix& T1 = L.op(k + 1);
        Eigen::RowVectorXd row(size);
        for (int i = 0; i < size; ++i) {
            row.setZero();
            double d = T.defect[i];
            for (SparseRM::InnerIterator it(T.E, i); it; ++it) {
                for (SparseRM::InnerIterator jt(T1.E, it.col()); jt; ++jt) row[jt.col()] += it.value() * jt.value();
                d += it.value() * T1.defect[it.col()];
            }
            for (SparseRM::InnerIterator it(T2.E, i); it; ++it) row[it.col()] -= it.value();
            comp = std::max({comp, row.cwiseAbs().maxCoeff(), std::abs(d - T2.defect[i])});
        }
        ok = ok && comp <= 1e-12;
    }
    return {ok, fmt::format("fibers={} max_row_error={:.3g} max_rel_duality_gap={:.3g} compose2_error={:.3g}", nk,
                            row_err, dual, comp)};
}

std::pair<bool, std::string> check_density(Experiment& e) {
    const Cocycle& L = e.cocycle();
    const TowerChain& c = e.chain();
    double gap = 0.0, C = 1.0, equi = 0.0;
    bool ok = true;
    for (long k : e.sample_fibers()) {
        const DensityResult& r = e.density(k);
        gap = std::max(gap, r.gap);
        const TowerGrid& G = c.grid(k);
        for (Eigen::Index i = 0; i < r.h.size(); ++i) {
            if (!(G.lam[i] > 0.0)) continue;
            C = std::max({C, r.h[i], r.h[i] > 0.0 ? 1.0 / r.h[i] : INFINITY});
        }
        const Vec pushed = L.push(k, r.h);
        const double d = l1_distance(c.grid(k + 1), pushed, e.density(k + 1).h);
        equi = std::max(equi, d);
        ok = ok && d <= 2e-4 + L.op(k).max_defect;
    }
    const DensityResult ces = cesaro_density(L, 0, e.config().ulam.cesaro_length);
    const double cdist = l1_distance(c.grid(0), ces.h, e.density(0).h);
    ok = ok && gap <= 1e-4 && C <= 50.0 && cdist <= 1e-3;
    return {ok, fmt::format("max_gap={:.3g} C={:.6g} cesaro_l1={:.3g} equivariance_l1={:.3g}", gap, C, cdist, equi)};
}

std::pair<bool, std::string> check_mixing(Experiment& e) {
    const Config& cfg = e.config();
    const ScheduleParams& s = cfg.schedule.params;
    const MixingSeries ms = mixing_series(e.cocycle(), 0, e.density(0).h, s.blocks, s.bands, s.cap + s.window);
    int last = 0;
    for (std::size_t k = 1; k < ms.max_dev.size(); ++k)
        if (ms.max_dev[k] > 0.5) last = static_cast<int>(k);
    const int q0 = last + 1;
    return {q0 <= s.cap, fmt::format("q0_hat={} window={} max_dev_at_q0={:.3g}", q0, s.cap + s.window,
                                     q0 < static_cast<int>(ms.max_dev.size()) ? ms.max_dev[q0] : NAN)};
}

std::vector<Vec> random_probes(Experiment& e, const ConeGeometry& g, int count, std::uint64_t salt) {
    std::vector<Vec> out;
    const Vec& h = e.density(0).h;
    const Calibration& cal = e.calibration();
    for (int j = 0; j < count; ++j) {
        const Vec phi = random_lipschitz(e.chain(), 0, mix64(e.config().run.seed ^ salt) + static_cast<std::uint64_t>(j));
        out.push_back(cone_shift(e.chain(), g, phi, h, cal.params).phi_tilde);
    }
    return out;
}

std::pair<bool, std::string> check_projective(Experiment& e) {
    const Calibration& cal = e.calibration();
    std::mt19937_64 rng(mix64(e.config().run.seed ^ 0x9e0f0ULL));
    std::uniform_real_distribution<double> U(0.1, 10.0);
    const int size = e.chain().layout().size();
    bool ok = true;
    for (int j = 0; j < 20; ++j) {
        Vec phi(size);
        for (int i = 0; i < size; ++i) phi[i] = U(rng);
        ok = ok && hilbert_plus(U(rng) * phi, phi) == 0.0;
    }
    const bool zero_ok = ok;

    const TowerChain& c = e.chain();
    const Vec v = weights(c);
    const TowerGrid& G = c.grid(0);
    double bridge = 0.0;  // max lhs / rhs
    for (int j = 0; j < 100; ++j) {
        Vec a(size), b(size);
        for (int i = 0; i < size; ++i) a[i] = U(rng);
        for (int i = 0; i < size; ++i) b[i] = U(rng);
        b *= m_integral(c, G, a) / m_integral(c, G, b);
        const double lhs = (a.array() / b.array() - 1.0).abs().maxCoeff();
        const double rhs = std::exp(hilbert_plus(a, b)) - 1.0;
        bridge = std::max(bridge, rhs > 0.0 ? lhs / rhs : (lhs > 0.0 ? INFINITY : 0.0));
        ok = ok && lhs <= rhs * (1.0 + 1e-12);
    }

    double scan = 0.0;
    if (cal.feasible) {
        const ConeGeometry g = cone_geometry(c, 0, cal.params.horizon, cal.params.depth, e.config().cones.k_max,
                                             e.density(0).h);
        const std::vector<Vec> pr = random_probes(e, g, 51, 0x7a1ULL);
        for (int j = 0; j < 50; ++j) {
            const HilbertResult x = hilbert_cone(pr[j], pr[j + 1], g, cal.params);
            const HilbertResult y = hilbert_cone_bisection(pr[j], pr[j + 1], g, cal.params);
            const double d = x.finite && y.finite ? std::abs(x.theta - y.theta) : (x.finite == y.finite ? 0.0 : INFINITY);
            scan = std::max(scan, d);
        }
        ok = ok && scan <= 1e-8;
    }
    // without a feasible cone only the positive-cone parts are checked; the cones check reports the cause
    const std::string scan_text = cal.feasible ? fmt::format("{:.3g}", scan) : "skipped (cones infeasible)";
    return {ok, fmt::format("theta_plus_scaling_zero={} scan_vs_bisection={} bridge_ratio={:.3g}", zero_ok,
                            scan_text, bridge)};
}

std::pair<bool, std::string> check_cones(Experiment& e) {
    const Calibration& cal = e.calibration();
    if (!cal.feasible) return {false, "default_params infeasible: " + cal.infeasible_reason};
    const Config& cfg = e.config();
    const TowerChain& c = e.chain();
    const Cocycle& L = e.cocycle();
    const ConeParams& p = cal.params;
    ScheduleParams s = cfg.schedule.params;
    s.k_max = cfg.cones.k_max;
    s.seed = cfg.run.seed;
    LocalGoodness lg(L, 0, e.density(0).h, p, s);
    const Q1Result q = lg.q1(0, s.cap);
    const int k = q.q1 + 5;

    const ConeGeometry& g0 = lg.geometry(0);
    const ConeGeometry& gk = lg.geometry(k);
    const std::vector<Vec> pr = random_probes(e, g0, 50, 0xc0e5ULL);
    std::vector<std::pair<Vec, Vec>> pairs;
    for (int j = 0; j + 1 < 50; j += 2) pairs.emplace_back(pr[j], pr[j + 1]);
    const ContractionReport rep = contraction_check(L, 0, k, pairs, g0, gk, p);
    int members = 0;
    double worst_ratio = 0.0;
    for (const ContractionPair& cp : rep.pairs) {
        members += (cp.report_phi.member ? 1 : 0) + (cp.report_psi.member ? 1 : 0);
        if (cp.theta_before > 0.0 && std::isfinite(cp.theta_after))
            worst_ratio = std::max(worst_ratio, cp.theta_after / cp.theta_before);
    }
    const Vec h_m = e.density(0).h.cwiseQuotient(weights(c));
    const bool h_member = membership(h_m, g0, p).member;

    const int N = ly_threshold(cal.theta_prime, cal.C, cal.D_F, cal.eps);
    const int kly = 20;
    const ConeGeometry& gly = lg.geometry(kly);
    bool ly_ok = true;
    double ly_worst = 0.0;
    for (int j = 0; j < 5; ++j) {
        const Vec psi = random_lipschitz(c, 0, mix64(cfg.run.seed ^ 0x1a5ULL) + j);
        const LYReport ly = lasota_yorke_check(L, 0, kly, psi, g0, gly, cal.eps, cal.D_F, cal.C, N);
        ly_ok = ly_ok && ly.ok;
        for (double w : ly.worst) ly_worst = std::max(ly_worst, w);
    }
    const bool ok = cal.small_ok && q.resolved && rep.ok && h_member && ly_ok;
    return {ok, fmt::format("a={:.4g} b={:.4g} c={:.4g} kappa={:.4g} small_ok={} q1_hat={} k={} members={}/50 "
                            "contracted={} D={:.4g} max_theta_ratio={:.4g} tanh(D/4)={:.4g} h_member={} ly_N={} "
                            "ly_worst={:.3g}",
                            p.a, p.b, p.c, p.kappa, cal.small_ok, q.q1, k, members, rep.ok, rep.D, worst_ratio,
                            std::tanh(rep.D / 4.0), h_member, N, ly_worst)};
}

std::pair<bool, std::string> check_schedule(Experiment& e) {
    if (!e.calibration().feasible) throw Skip("cone parameters infeasible");
    const ScheduleResult& s = e.schedule();
    const GoodTimes& g = s.good;
    bool density_ok = g.q3 >= 0;
    if (density_ok)
        for (long n = std::max<long>(g.q3, 1); n <= g.horizon; ++n)
            if (static_cast<double>(count_times(g, n)) * g.M / static_cast<double>(n) < 1.0 - 2.0 * g.eps - 0.05) {
                density_ok = false;
                break;
            }
    const bool ok = g.resolved && density_ok && g.q3 <= 100L * g.M;
    return {ok, fmt::format("M={} eps={} r={} visit={:.4g} q3_hat={} horizon={} times={} q1_origin={}", g.M, g.eps,
                            g.r, g.visit, g.q3, g.horizon, g.times.size(), s.origin.q1)};
}

std::pair<bool, std::string> check_correlation(Experiment& e) {
    const CorrelationResult& r = e.correlations();
    const Cocycle& L = e.cocycle();
    const Vec& h = e.density(0).h;
    const Vec ph = e.phi().cwiseProduct(h);
    const auto flat = operator_correlation_series(
        L, 0, ph, [&](long) { return Vec(Vec::Constant(e.chain().layout().size(), 0.7)); }, h,
        e.config().correlate.n_max);
    double flat_max = 0.0;
    for (const CorrValue& v : flat) flat_max = std::max(flat_max, v.value);
    const bool fit_ok = r.fit && r.fit->beta > 0.0 && r.fit->beta < 1.0 && r.fit->r2 >= 0.95;
    const bool ok = fit_ok && r.max_abs_z <= 3.0 && flat_max == 0.0;
    if (!r.fit) return {false, "fit failed: " + r.fit_error};
    return {ok, fmt::format("beta={:.6g} r2={:.6g} points={} floor={:.3g} max_abs_z={:.3g} const_psi_max={:.3g}",
                            r.fit->beta, r.fit->r2, r.fit->points, r.floor, r.max_abs_z, flat_max)};
}

std::pair<bool, std::string> check_shift(Experiment& e) {
    const Calibration& cal = e.calibration();
    if (!cal.feasible) throw Skip("cone parameters infeasible");
    const TowerChain& c = e.chain();
    const Cocycle& L = e.cocycle();
    const Vec& h = e.density(0).h;
    const ConeGeometry g = cone_geometry(c, 0, cal.params.horizon, cal.params.depth, e.config().cones.k_max, h);
    const Vec v = weights(c);
    const int n = 3;
    const Vec psi_n = e.psi(n);
    int members = 0;
    double worst = 0.0;
    for (int j = 0; j < 20; ++j) {
        const Vec phi = random_lipschitz(c, 0, mix64(e.config().run.seed ^ 0x5b1f7ULL) + j);
        const ShiftResult s = cone_shift(c, g, phi, h, cal.params);
        members += membership(s.phi_tilde, g, cal.params).member ? 1 : 0;
        const double before = operator_correlation(L, 0, phi, psi_n, h, n).signed_value;
        const double after =
            (s.K + s.C_phi) * operator_correlation(L, 0, s.phi_tilde.cwiseProduct(v), psi_n, h, n).signed_value;
        worst = std::max(worst, std::abs(before - after));
    }
    return {members == 20 && worst <= 1e-10, fmt::format("members={}/20 max_corr_diff={:.3g}", members, worst)};
}

const std::vector<std::pair<std::string, CheckFn>>& check_table() {
    static const std::vector<std::pair<std::string, CheckFn>> t = {
        {"partition", check_partition},   {"distortion", check_distortion}, {"expansion", check_expansion},
        {"aperiodicity", check_aperiodicity}, {"tail", check_tail},       {"operator", check_operator},
        {"density", check_density},       {"mixing", check_mixing},         {"projective", check_projective},
        {"cones", check_cones},           {"schedule", check_schedule},     {"correlation", check_correlation},
        {"shift", check_shift},
    };
    return t;
}

}  // namespace

std::vector<std::string> check_names() {
    std::vector<std::string> out;
    for (const auto& [n, f] : check_table()) out.push_back(n);
    return out;
}

CheckResult run_check(Experiment& e, const std::string& name) {
    CheckResult r;
    r.name = name;
    const auto& t = check_table();
    auto it = std::find_if(t.begin(), t.end(), [&](const auto& x) { return x.first == name; });
    if (it == t.end()) throw std::invalid_argument("unknown check '" + name + "'");
    const auto t0 = std::chrono::steady_clock::now();
    try {
        const auto [ok, detail] = it->second(e);
        r.status = ok ? "pass" : "fail";
        r.detail = detail;
    } catch (const ConfigError&) {
        throw;
    } catch (const Skip& s) {
        r.status = "skip";
        r.detail = s.what();
    } catch (const std::exception& ex) {
        r.status = "fail";
        r.detail = std::string("error: ") + ex.what();
    }
    r.seconds = seconds_since(t0);
    return r;
}

// ---------------------------------------------------------------------------
// Runs

std::string output_root(const Config& c) {
    const char* env = std::getenv("TOWERLAB_OUT");
    return env && *env ? std::string(env) : c.run.out;
}

std::string run_id(const Config& c) {
    // Knobs that cannot change any output value stay out of the hash.
    std::string text;
    for (const auto& [k, v] : config_entries(c))
        if (k != "run.workers" && k != "run.out") text += k + " = " + v + "\n";
    return fmt::format("{:016x}-s{}", fnv1a64(text), c.run.seed);
}

namespace {

void write_outputs_tail(const std::string& dir, const TailSummary& t) {
    auto out = fmt::output_file(dir + "/tail.csv");
    out.print("n,mass\n");
    for (std::size_t n = 0; n < t.mass.size(); ++n) out.print("{},{:.17g}\n", n, t.mass[n]);
    out.close();
    Series s{"mass", {}, {}};
    for (std::size_t n = 0; n < t.mass.size(); ++n) {
        s.x.push_back(static_cast<double>(n));
        s.y.push_back(t.mass[n]);
    }
    write_line_chart(dir + "/tail.svg", "Return-time tail", "n", "mass of {R > n}", {s}, true);
}

void write_density_plot(const std::string& dir, Experiment& e, const std::vector<long>& ks) {
    const TowerChain& c = e.chain();
    std::vector<Series> ss;
    for (long k : ks) {
        const Vec& h = e.density(k).h;
        const TowerGrid& G = c.grid(k);
        std::vector<std::pair<double, double>> pts;
        for (int i = 0; i < c.layout().level0_size(); ++i)
            pts.emplace_back(0.5 * (G.x_lo0[i] + G.x_hi0[i]), h[i]);
        std::sort(pts.begin(), pts.end());
        Series s{fmt::format("k={}", k), {}, {}};
        for (const auto& [x, y] : pts) {
            s.x.push_back(x);
            s.y.push_back(y);
        }
        ss.push_back(std::move(s));
    }
    write_line_chart(dir + "/density.svg", "Equivariant density on the base", "x", "h", ss, false);
}

void write_correlations(const std::string& dir, const CorrelationResult& r) {
    auto out = fmt::output_file(dir + "/correlations.csv");
    out.print("n,op_value,op_bound,mc_value,mc_stderr\n");
    for (std::size_t n = 0; n < r.op.size(); ++n)
        out.print("{},{:.17g},{:.17g},{:.17g},{:.17g}\n", r.op[n].n, r.op[n].signed_value, r.op[n].bound,
                  r.mc[n].estimate, r.mc[n].stderr_);
    out.close();
    auto fit = fmt::output_file(dir + "/fit.csv");
    fit.print("window_lo,window_hi,beta,C,r2\n");
    if (r.fit) fit.print("{},{},{:.17g},{:.17g},{:.17g}\n", r.fit->lo, r.fit->hi, r.fit->beta, r.fit->C, r.fit->r2);
    fit.close();
    Series op{"operator", {}, {}}, mc{"monte carlo", {}, {}};
    for (std::size_t n = 0; n < r.op.size(); ++n) {
        op.x.push_back(r.op[n].n);
        op.y.push_back(r.op[n].value);
        mc.x.push_back(r.mc[n].n);
        mc.y.push_back(std::abs(r.mc[n].estimate));
    }
    std::vector<Series> ss{op, mc};
    if (r.fit) {
        Series f{"fit", {}, {}};
        for (int n = r.fit->lo; n <= r.fit->hi; ++n) {
            f.x.push_back(n);
            f.y.push_back(r.fit->C * std::pow(r.fit->beta, n));
        }
        ss.push_back(std::move(f));
    }
    write_line_chart(dir + "/correlations.svg", "Correlation decay", "n", "|Cor|", ss, true);
}

}  // namespace

int run_experiment(const Config& cfg, std::ostream& log, std::string* dir_out) {
    omp_set_num_threads(cfg.run.workers);
    const std::string dir = output_root(cfg) + "/" + run_id(cfg);
    if (dir_out) *dir_out = dir;
    fs::create_directories(dir);

    json man;
    man["version"] = kVersion;
    man["seed"] = cfg.run.seed;
    man["run_id"] = run_id(cfg);
    json cj = json::object();
    for (const auto& [k, v] : config_entries(cfg)) cj[k] = v;
    man["config"] = cj;
    man["timings"] = json::object();
    man["checks"] = json::object();
    man["constants"] = json::object();
    man["errors"] = json::array();

    auto save = [&] {
        auto out = fmt::output_file(dir + "/manifest.json");
        out.print("{}\n", man.dump(2));
    };

    Experiment e(cfg);
    bool all_ok = true;
    auto check = [&](const char* name, bool ok) {
        man["checks"][name] = ok ? "pass" : "fail";
        all_ok = all_ok && ok;
    };
    // Returns false after recording an abort.
    auto stage = [&](const char* name, const std::function<void()>& body) {
        const auto t0 = std::chrono::steady_clock::now();
        log << "[" << name << "] ..." << std::flush;
        try {
            body();
            man["timings"][name] = seconds_since(t0);
            log << fmt::format(" {:.1f}s\n", seconds_since(t0));
            return true;
        } catch (const ConfigError&) {
            throw;
        } catch (const std::exception& ex) {
            man["timings"][name] = seconds_since(t0);
            man["errors"].push_back({{"stage", name}, {"diagnostic", ex.what()}});
            log << " aborted: " << ex.what() << "\n";
            return false;
        }
    };

    try {
        bool ok = stage("tail", [&] {
            const TailSummary& t = e.tail();
            man["constants"]["theta_hat"] = t.theta_hat;
            man["constants"]["theta_prime"] = e.theta_prime();
            man["constants"]["tail_r2_min"] = t.r2_min;
            write_outputs_tail(dir, t);
            check("tail", t.theta_hat > 0.0 && t.r2_min >= 0.98);
        });
        ok = ok && stage("density", [&] {
            const std::vector<long> ks = e.sample_fibers();
            const std::vector<long> snaps(ks.begin(), ks.begin() + std::min<std::size_t>(3, ks.size()));
            double gap = 0.0, defect = 0.0;
            for (long k : ks) {
                gap = std::max(gap, e.density(k).gap);
                defect = std::max(defect, e.density(k).defect);
            }
            for (long k : snaps) write_density_csv(fmt::format("{}/density_{}.csv", dir, k), e.chain(), k, e.density(k).h);
            write_density_plot(dir, e, snaps);
            man["defect"]["density_pullback_max"] = defect;
            man["defect"]["budget"] = cfg.ulam.defect_budget;
            check("density", gap <= 1e-4);
        });
        ok = ok && stage("cones", [&] {
            const Calibration& cal = e.calibration();
            json& k = man["constants"];
            k["D_F"] = cal.D_F;
            k["C"] = cal.C;
            k["Dcal"] = cal.Dcal;
            k["D1"] = cal.D1;
            k["D2"] = cal.D2;
            k["alpha"] = cfg.cones.alpha;
            k["alpha_prime"] = cfg.cones.alpha_prime;
            k["kappa"] = cal.kappa;
            k["eps_ly"] = cal.eps;
            if (!cal.feasible) {
                man["errors"].push_back({{"stage", "cones"}, {"diagnostic", cal.infeasible_reason}});
                check("cones", false);
                return;
            }
            k["a"] = cal.params.a;
            k["b"] = cal.params.b;
            k["c"] = cal.params.c;
            k["diameter_bound"] = diameter_bound(cal.params.alpha, cal.params.alpha_p, cal.params.kappa);
            const ConeGeometry g = cone_geometry(e.chain(), 0, cfg.cones.horizon, cfg.cones.depth,
                                                 cfg.cones.k_max, e.density(0).h);
            const ConeReport rep =
                membership(e.density(0).h.cwiseQuotient(weights(e.chain())), g, cal.params);
            auto out = fmt::output_file(dir + "/cone_report.csv");
            out.print("condition,slack,worst_cell\n");
            for (int i = 0; i < 4; ++i)
                out.print("{},{:.17g},{}\n", kConditionNames[i], rep.slack[i], rep.worst_cell[i]);
            out.close();
            check("cones", cal.small_ok && rep.member);
        });
        if (ok && e.calibration().feasible)
            ok = stage("schedule", [&] {
                const ScheduleResult& s = e.schedule();
                const GoodTimes& g = s.good;
                json& k = man["constants"];
                k["M"] = g.M;
                k["eps"] = g.eps;
                k["r"] = g.r;
                k["visit"] = g.visit;
                k["q0_hat"] = s.origin.q0;
                k["q1_hat"] = s.origin.q1;
                k["q3_hat"] = g.q3;
                k["good_times_horizon"] = g.horizon;
                auto out = fmt::output_file(dir + "/schedule.csv");
                out.print("i,t_i\n");
                for (std::size_t i = 0; i < g.times.size(); ++i) out.print("{},{}\n", i + 1, g.times[i]);
                out.close();
                check("schedule", g.resolved && g.q3 >= 0 && g.q3 <= 100L * g.M);
            });
        ok = stage("correlations", [&] {
            const CorrelationResult& r = e.correlations();
            write_correlations(dir, r);
            double def = 0.0;
            for (const CorrValue& v : r.op) def = std::max(def, std::abs(v.defect));
            man["defect"]["correlation_max"] = def;
            man["constants"]["noise_floor"] = r.floor;
            man["constants"]["mc_max_abs_z"] = r.max_abs_z;
            if (r.fit) {
                man["constants"]["beta_hat"] = r.fit->beta;
                man["constants"]["fit_r2"] = r.fit->r2;
            } else {
                man["errors"].push_back({{"stage", "fit"}, {"diagnostic", r.fit_error}});
            }
            check("correlation", r.fit && r.fit->beta > 0.0 && r.fit->beta < 1.0 && r.fit->r2 >= 0.95);
            check("monte_carlo", r.max_abs_z <= 3.0);
        }) && ok;
        save();
        if (!ok) return 3;
        return all_ok ? 0 : 1;
    } catch (const ConfigError& ex) {
        man["errors"].push_back({{"stage", "config"}, {"diagnostic", ex.what()}});
        save();
        throw;
    }
}

int verify_suite(const Config& cfg, const std::string& only, std::ostream& report) {
    omp_set_num_threads(cfg.run.workers);
    std::vector<std::string> names = check_names();
    if (!only.empty()) {
        if (std::find(names.begin(), names.end(), only) == names.end())
            throw ConfigError("verify: unknown check '" + only + "'");
        names = {only};
    }
    Experiment e(cfg);
    e.tail();  // theta' gate before anything else
    json out = json::array();
    bool ok = true;
    for (const std::string& n : names) {
        const CheckResult r = run_check(e, n);
        ok = ok && r.status != "fail";
        out.push_back({{"name", r.name}, {"status", r.status}, {"detail", r.detail}, {"seconds", r.seconds}});
        report << json{{"check", r.name}, {"status", r.status}, {"detail", r.detail}}.dump() << "\n" << std::flush;
    }
    report << json{{"summary", ok ? "pass" : "fail"}, {"checks", names.size()}}.dump() << "\n";
    return ok ? 0 : 1;
}

int sweep(const Config& base, const std::string& key, const std::vector<std::string>& values, std::ostream& log) {
    int worst = 0;
    std::vector<Config> configs;
    for (const std::string& v : values) {
        Config c = base;
        set_config_value(c, key, v);
        validate_config(c);
        configs.push_back(std::move(c));
    }
    for (std::size_t i = 0; i < configs.size(); ++i) {
        std::string dir;
        int code;
        try {
            code = run_experiment(configs[i], log, &dir);
        } catch (const ConfigError& ex) {
            log << ex.what() << "\n";
            code = 2;
        }
        log << fmt::format("{} = {} -> exit {} ({})\n", key, values[i], code, dir);
        worst = std::max(worst, code);
    }
    return worst;
}

}  // namespace towerlab
