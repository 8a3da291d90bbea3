// Acceptance run on the shipped default experiment. One PASS/FAIL line per
// criterion; the exit code is the number of failures (capped at 1).
//
// Heavy objects (towers, densities, calibration, schedule, correlation series)
// come from the library; each criterion is re-checked here against oracles
// written independently of the code under test.

#include <fmt/core.h>

#include <chrono>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "towerlab/pipeline.hpp"

using namespace towerlab;

namespace {

struct Outcome {
    bool ok = false;
    std::string detail;
};

struct Criterion {
    int id;
    const char* name;
    double limit_s;
    std::function<Outcome()> body;
};

// --- oracles --------------------------------------------------------------

double logistic(double x) { return 4.0 * x * (1.0 - x); }

double bisect(double lo, double hi, double y) {
    const bool up = logistic(hi) > logistic(lo);
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        if ((logistic(mid) < y) == up) lo = mid; else hi = mid;
    }
    return 0.5 * (lo + hi);
}

struct Line {
    double slope, intercept, r2;
};

Line least_squares(const std::vector<double>& x, const std::vector<double>& y) {
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
        syy += (y[i] - my) * (y[i] - my);
    }
    const double slope = sxy / sxx;
    return {slope, my - slope * mx, syy > 0.0 ? sxy * sxy / (sxx * syy) : 1.0};
}

// L_k on a lambda-density, straight from the Ulam matrix.
Vec push(const TowerChain& c, const TransferMatrix& T, long k, const Vec& rho) {
    const TowerGrid& G0 = c.grid(k);
    const TowerGrid& G1 = c.grid(k + 1);
    Vec out = Vec::Zero(rho.size());
    for (int i = 0; i < T.rows(); ++i)
        for (SparseRM::InnerIterator it(T.E, i); it; ++it) out[it.col()] += rho[i] * G0.lam[i] * it.value();
    for (Eigen::Index j = 0; j < out.size(); ++j) out[j] = G1.lam[j] > 0.0 ? out[j] / G1.lam[j] : 0.0;
    return out;
}

double integral(const TowerGrid& g, const Vec& f) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < f.size(); ++i) s += f[i] * g.lam[i];
    return s;
}

double l1(const TowerGrid& g, const Vec& a, const Vec& b) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]) * g.lam[i];
    return s;
}

double theta_plus(const Vec& a, const Vec& b) {
    return std::log((a.array() / b.array()).maxCoeff() * (b.array() / a.array()).maxCoeff());
}

std::vector<Vec> cone_probes(Experiment& e, const ConeGeometry& g, int count, std::uint64_t seed) {
    std::vector<Vec> out;
    for (int j = 0; j < count; ++j)
        out.push_back(cone_shift(e.chain(), g, random_lipschitz(e.chain(), 0, seed + j), e.density(0).h,
                                 e.calibration().params)
                          .phi_tilde);
    return out;
}

// --- criteria -------------------------------------------------------------

Outcome partition_exactness() {
    const QuadSequences q = quadratic_sequences(3);
    const double x1 = (2.0 - std::sqrt(3.0)) / 4.0, y1 = (2.0 + std::sqrt(3.0)) / 4.0;
    const double e0 = std::abs(q.x[0] - 0.25);
    const double e1 = std::abs(q.x[1] - x1);
    const double e2 = std::abs(q.y[1] - y1);
    // bisection agrees with the closed forms
    const double eb = std::max({std::abs(bisect(0.0, 0.5, 0.75) - 0.25), std::abs(bisect(0.0, 0.5, 0.25) - x1),
                                std::abs(bisect(0.5, 1.0, 0.25) - y1)});
    const double worst = std::max({e0, e1, e2, eb});
    return {worst <= 1e-12, fmt::format("|x0|={:.2g} |x1|={:.2g} |y1|={:.2g} bisection={:.2g}", e0, e1, e2, eb)};
}

Outcome markov_full_branch(Experiment& e) {
    const TowerChain& c = e.chain();
    const DrivingSystem& d = e.driving();
    double worst = 0.0;
    long pieces = 0, mismatched = 0;
    const auto fibers = e.sample_fibers();
    for (long k : fibers) {
        const TowerPartition& P = c.partition(k);
        const Omega w = c.omega(k);
        for (int p = 0; p < static_cast<int>(P.pieces.size()); ++p) {
            const Piece& pc = P.pieces[p];
            worst = std::max(worst, full_branch_error(P, p));
            ++pieces;
            // plain iteration of the fiber maps from the piece midpoint (shallow pieces
            // only; deeper ones lose the orbit to rounding near 1)
            if (pc.depth > 8) continue;
            double x = P.x_of(pc, 0.5 * (pc.u_lo + pc.u_hi));
            int n = 0;
            do {
                x = eval(FiberMap{Family::quadratic, fiber_param(e.config().fiber, d, d.orbit(w, n))}, x);
                ++n;
            } while (!(x >= P.base_lo && x <= P.base_hi) && n < 200);
            mismatched += n != pc.ret;
        }
    }
    return {fibers.size() == 20 && worst <= 1e-8 && mismatched == 0,
            fmt::format("fibers={} intervals={} max_endpoint_error={:.3g} midpoint_return_mismatch={}",
                        fibers.size(), pieces, worst, mismatched)};
}

Outcome tail_control(Experiment& e) {
    double theta = INFINITY, r2 = 1.0;
    for (long k : e.sample_fibers()) {
        const TowerPartition P = e.tail_partition(k);
        std::vector<double> n, m;
        for (int j = 5; j <= 30; ++j) {
            n.push_back(j);
            m.push_back(std::log(tail_mass(P, j)));
        }
        const Line f = least_squares(n, m);
        theta = std::min(theta, -f.slope);
        r2 = std::min(r2, f.r2);
    }
    // mass at depth n against C' 2^{-eta n}
    const TowerPartition P0 = e.tail_partition(0);
    std::map<int, double> depth_mass;
    for (const Piece& pc : P0.pieces)
        if (pc.depth >= 1) depth_mass[pc.depth] += pc.length();
    std::vector<double> n, m;
    for (const auto& [dpt, len] : depth_mass) {
        n.push_back(dpt);
        m.push_back(std::log2(len));
    }
    const Line g = least_squares(n, m);
    const double eta = -g.slope;
    double Cp = 0.0;
    for (const auto& [dpt, len] : depth_mass) Cp = std::max(Cp, len * std::exp2(eta * dpt));
    return {theta > 0.0 && r2 >= 0.98 && eta > 0.0 && std::isfinite(Cp),
            fmt::format("theta_hat={:.6g} r2_min={:.6g} eta={:.6g} C'={:.3g}", theta, r2, eta, Cp)};
}

Outcome distortion(Experiment& e) {
    const std::uint64_t seed = e.config().run.seed;
    const DistortionReport a = verify_distortion(e.chain(), 0, 6, 32000, seed);
    const DistortionReport b = verify_distortion(e.chain(), 0, 6, 64000, seed);
    const bool finite = std::isfinite(a.D_hat) && std::isfinite(b.D_hat) && a.D_hat > 0.0;
    const double rel = finite ? std::abs(b.D_hat - a.D_hat) / a.D_hat : INFINITY;
    return {finite && rel <= 0.10, fmt::format("depth=6 D_hat={:.6g} (32k pairs) {:.6g} (64k pairs) rel_change={:.3g}",
                                               a.D_hat, b.D_hat, rel)};
}

Outcome operator_identities(Experiment& e) {
    const TowerChain& c = e.chain();
    const Cocycle& L = e.cocycle();
    const Vec v = weights(c);
    const int size = c.layout().size();
    std::mt19937_64 rng(20240);
    std::uniform_real_distribution<double> U(-1.0, 1.0);
    double row = 0.0, dual = 0.0, comp = 0.0;
    bool ok = true;
    const auto fibers = e.sample_fibers();
    for (int f = 0; f < 5; ++f) {
        const long k = fibers[f];
        const TransferMatrix& T = L.op(k);
        for (int i = 0; i < T.rows(); ++i) {
            double s = 0.0;
            for (SparseRM::InnerIterator it(T.E, i); it; ++it) s += it.value();
            row = std::max(row, std::abs(s + T.defect[i] - 1.0));
        }
        // int (phi o F) psi dm against int (P psi) phi dm'
        const TowerGrid& G0 = c.grid(k);
        const TowerGrid& G1 = c.grid(k + 1);
        for (int p = 0; p < 20; ++p) {
            Vec phi(size), psi(size);
            for (int i = 0; i < size; ++i) phi[i] = U(rng);
            for (int i = 0; i < size; ++i) psi[i] = U(rng);
            double lhs = 0.0;
            for (int i = 0; i < size; ++i) {
                double Kphi = 0.0;
                for (SparseRM::InnerIterator it(T.E, i); it; ++it) Kphi += it.value() * phi[it.col()];
                lhs += Kphi * psi[i] * v[i] * G0.lam[i];
            }
            const Vec Ppsi = L.normalized(k, psi);
            double rhs = 0.0;
            for (int j = 0; j < size; ++j) rhs += Ppsi[j] * phi[j] * v[j] * G1.lam[j];
            dual = std::max(dual, std::abs(lhs - rhs));
            ok = ok && std::abs(lhs - rhs) <= 1e-8 + T.max_defect;
        }
        // compose(2) against an entrywise product of the two single steps
        const TransferMatrix& T1 = L.op(k + 1);
        const TransferMatrix T2 = L.compose(k, 2);
        for (int i = 0; i < size; ++i) {
            std::map<int, double> prod;
            for (SparseRM::InnerIterator it(T.E, i); it; ++it)
                for (SparseRM::InnerIterator jt(T1.E, it.col()); jt; ++jt)
                    prod[static_cast<int>(jt.col())] += it.value() * jt.value();
            for (SparseRM::InnerIterator it(T2.E, i); it; ++it) prod[static_cast<int>(it.col())] -= it.value();
            for (const auto& [col, val] : prod) comp = std::max(comp, std::abs(val));
        }
    }
    ok = ok && row <= 1e-9 && comp <= 1e-12;
    return {ok, fmt::format("fibers=5 pairs=100 max_row_error={:.3g} max_duality_gap={:.3g} compose2_error={:.3g}",
                            row, dual, comp)};
}

Outcome density(Experiment& e) {
    const TowerChain& c = e.chain();
    const Cocycle& L = e.cocycle();
    double gap = 0.0, C = 1.0, equi = 0.0;
    bool ok = true;
    for (long k : e.sample_fibers()) {
        const DensityResult& r = e.density(k);
        // Cauchy gap by direct pullback: h^(n) and h^(n+5) from the constant density
        auto pull = [&](int n) {
            Vec h = Vec::Ones(c.layout().size());
            for (long j = k - n; j < k; ++j) h = push(c, L.op(j), j, h);
            return Vec(h / integral(c.grid(k), h));
        };
        const double g = l1(c.grid(k), pull(r.n), pull(r.n + 5));
        gap = std::max(gap, g);
        const TowerGrid& G = c.grid(k);
        for (Eigen::Index i = 0; i < r.h.size(); ++i)
            if (G.lam[i] > 0.0) C = std::max({C, r.h[i], 1.0 / r.h[i]});
        const double d = l1(c.grid(k + 1), push(c, L.op(k), k, r.h), e.density(k + 1).h);
        equi = std::max(equi, d);
        ok = ok && d <= 2e-4 + L.op(k).max_defect;
    }
    const DensityResult ces = cesaro_density(L, 0, e.config().ulam.cesaro_length);
    const double cd = l1(c.grid(0), ces.h, e.density(0).h);
    ok = ok && gap <= 1e-4 && C <= 50.0 && cd <= 1e-3;
    return {ok, fmt::format("fibers=20 cauchy_gap={:.3g} C={:.4g} cesaro_l1={:.3g} equivariance_l1={:.3g}", gap, C,
                            cd, equi)};
}

Outcome mixing(Experiment& e) {
    const TowerChain& c = e.chain();
    const Cocycle& L = e.cocycle();
    const ScheduleParams& s = e.config().schedule.params;
    const Vec& h = e.density(0).h;
    const std::vector<int> elem = mixing_partition(c, 0, s.blocks, s.bands);
    const int ne = s.blocks + s.bands;
    const int kmax = s.cap + s.window;
    // rho(A, A') = mu(A & F^{-k} A') / (mu(A) mu'(A')), densities pushed by hand
    const TowerGrid& G0 = c.grid(0);
    std::vector<Vec> part(ne, Vec::Zero(h.size()));
    std::vector<double> muA(ne, 0.0);
    for (Eigen::Index i = 0; i < h.size(); ++i) {
        part[elem[i]][i] = h[i];
        muA[elem[i]] += h[i] * G0.lam[i];
    }
    Vec whole = h;
    std::vector<double> dev(kmax + 1, 0.0);
    for (int k = 0; k <= kmax; ++k) {
        // A' is taken from the partition of the k-th fibre
        const TowerGrid& Gk = c.grid(k);
        const std::vector<int> ek = mixing_partition(c, k, s.blocks, s.bands);
        const double tot = integral(Gk, whole);
        std::vector<double> muAp(ne, 0.0);
        for (Eigen::Index i = 0; i < h.size(); ++i) muAp[ek[i]] += whole[i] * Gk.lam[i];
        for (int a = 0; a < ne; ++a) {
            std::vector<double> num(ne, 0.0);
            for (Eigen::Index i = 0; i < h.size(); ++i) num[ek[i]] += part[a][i] * Gk.lam[i];
            for (int b = 0; b < ne; ++b)
                if (muA[a] > 0.0 && muAp[b] > 0.0)
                    dev[k] = std::max(dev[k], std::abs(num[b] * tot / (muA[a] * muAp[b]) - 1.0));
        }
        if (k == kmax) break;
        for (Vec& p : part) p = push(c, L.op(k), k, p);
        whole = push(c, L.op(k), k, whole);
    }
    int last = 0;
    for (int k = 1; k <= kmax; ++k)
        if (dev[k] > 0.5) last = k;
    const int q0 = last + 1;
    const MixingSeries lib = mixing_series(L, 0, h, s.blocks, s.bands, kmax);
    double agree = 0.0;
    for (int k = 0; k <= kmax; ++k) agree = std::max(agree, std::abs(lib.max_dev[k] - dev[k]));
    return {q0 <= 200 && q0 <= kmax && agree <= 1e-9,
            fmt::format("q0_hat={} max_dev(q0)={:.3g} max_dev(k_max={})={:.3g} library_agreement={:.2g}", q0,
                        q0 <= kmax ? dev[q0] : NAN, kmax, dev[kmax], agree)};
}

Outcome projective(Experiment& e) {
    const TowerChain& c = e.chain();
    const int size = c.layout().size();
    std::mt19937_64 rng(77);
    std::uniform_real_distribution<double> U(0.1, 10.0);
    bool zero = true;
    for (int j = 0; j < 20; ++j) {
        Vec phi(size);
        for (int i = 0; i < size; ++i) phi[i] = U(rng);
        zero = zero && hilbert_plus(U(rng) * phi, phi) == 0.0;
    }
    const Calibration& cal = e.calibration();
    double scan = INFINITY;
    if (cal.feasible) {
        scan = 0.0;
        const ConeGeometry g = cone_geometry(c, 0, cal.params.horizon, cal.params.depth, e.config().cones.k_max,
                                             e.density(0).h);
        const std::vector<Vec> pr = cone_probes(e, g, 51, 0xace0ULL);
        for (int j = 0; j < 50; ++j) {
            const HilbertResult a = hilbert_cone(pr[j], pr[j + 1], g, cal.params);
            const HilbertResult b = hilbert_cone_bisection(pr[j], pr[j + 1], g, cal.params);
            scan = std::max(scan, a.finite == b.finite ? (a.finite ? std::abs(a.theta - b.theta) : 0.0) : INFINITY);
        }
    }
    // |phi/psi - 1|_inf <= e^{Theta+} - 1 for equal m-integrals
    const Vec v = weights(c);
    const TowerGrid& G = c.grid(0);
    double worst = 0.0, lib = 0.0;
    for (int j = 0; j < 100; ++j) {
        Vec a(size), b(size);
        for (int i = 0; i < size; ++i) a[i] = U(rng);
        for (int i = 0; i < size; ++i) b[i] = U(rng);
        b *= integral(G, a.cwiseProduct(v)) / integral(G, b.cwiseProduct(v));
        const double t = theta_plus(a, b);
        lib = std::max(lib, std::abs(t - hilbert_plus(a, b)));
        worst = std::max(worst, (a.array() / b.array() - 1.0).abs().maxCoeff() / (std::exp(t) - 1.0));
    }
    return {zero && scan <= 1e-8 && worst <= 1.0 + 1e-12 && lib <= 1e-12,
            fmt::format("theta_plus_scaling_zero={} scan_vs_bisection={:.3g} (50 pairs) inftyP_ratio={:.3g} "
                        "(100 pairs) theta_plus_vs_oracle={:.2g}",
                        zero, scan, worst, lib)};
}

Outcome cone_contraction(Experiment& e) {
    const Calibration& cal = e.calibration();
    if (!cal.feasible) return {false, "cone parameters infeasible: " + cal.infeasible_reason};
    const Config& cfg = e.config();
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
    const std::vector<Vec> pr = cone_probes(e, g0, 50, 0x5eedULL);
    const ConeParams inner = p.scaled(p.kappa);
    const double D = diameter_bound(p.alpha, p.alpha_p, p.kappa);
    const double t = std::tanh(D / 4.0);
    int members = 0, contracted = 0;
    double ratio = 0.0;
    std::vector<Vec> img;
    for (const Vec& phi : pr) {
        img.push_back(L.normalized_n(0, k, phi));
        members += is_member(img.back(), gk, inner);
    }
    for (int j = 0; j + 1 < 50; j += 2) {
        const double before = hilbert_cone_bisection(pr[j], pr[j + 1], g0, p).theta;
        const double after = hilbert_cone_bisection(img[j], img[j + 1], gk, p).theta;
        contracted += after <= t * before + 1e-10;
        if (before > 0.0) ratio = std::max(ratio, after / before);
    }
    return {q.resolved && members == 50 && contracted == 25,
            fmt::format("q1_hat={} k={} members={}/50 contracted={}/25 max_theta_ratio={:.3g} tanh(D/4)={:.3g} "
                        "a={:.4g} b={:.4g} c={:.4g} kappa={:.3g}",
                        q.q1, k, members, contracted, ratio, t, p.a, p.b, p.c, p.kappa)};
}

Outcome good_times_density(Experiment& e) {
    if (!e.calibration().feasible) return {false, "cone parameters infeasible"};
    const ScheduleResult& s = e.schedule();
    const GoodTimes& g = s.good;
    const double eps = e.config().schedule.params.eps;
    const int M = s.M;
    // best residue by direct count
    double visit = 0.0;
    for (int r = 0; r < M; ++r) {
        long hits = 0, total = 0;
        for (std::size_t t = r; t < s.flags.size(); t += M) {
            ++total;
            hits += s.flags[t];
        }
        visit = std::max(visit, static_cast<double>(hits) / total);
    }
    bool dens = g.q3 >= 1;
    double worst = INFINITY;
    if (dens)
        for (long n = g.q3; n <= g.horizon; ++n) {
            long cnt = 0;
            for (long t : g.times) cnt += t <= n;
            const double f = static_cast<double>(cnt) * M / n;
            worst = std::min(worst, f);
            dens = dens && f >= 1.0 - 2.0 * eps - 0.05;
        }
    return {visit >= 1.0 - eps && dens && g.q3 <= 100L * M,
            fmt::format("M={} r={} visit={:.4g} q3_hat={} (<= {}) horizon={} min_density={:.4g}", M, g.r, visit,
                        g.q3, 100L * M, g.horizon, worst)};
}

Outcome correlation_decay(Experiment& e) {
    const CorrelationResult& r = e.correlations();
    const Config& cfg = e.config();
    std::vector<double> n, y;
    for (const CorrValue& v : r.op)
        if (v.n >= 5 && v.n <= 40 && v.value > r.floor) {
            n.push_back(v.n);
            y.push_back(std::log(v.value));
        }
    bool ok = n.size() >= 5 && cfg.correlate.mc_samples >= 1000000;
    double beta = NAN, r2 = NAN;
    if (n.size() >= 5) {
        const Line f = least_squares(n, y);
        beta = std::exp(f.slope);
        r2 = f.r2;
        ok = ok && beta > 0.0 && beta < 1.0 && r2 >= 0.95;
    }
    double z = 0.0;
    for (std::size_t i = 0; i < r.mc.size(); ++i) {
        const double d = std::abs(r.mc[i].estimate - r.op[i].signed_value);
        z = std::max(z, d / r.mc[i].stderr_);
        ok = ok && d <= 3.0 * r.mc[i].stderr_;
    }
    const Vec& h = e.density(0).h;
    const Vec ph = e.phi().cwiseProduct(h);
    double flat = 0.0;
    for (int m : {0, 1, 5, 20, 40})
        flat = std::max(flat, std::abs(operator_correlation(e.cocycle(), 0, ph,
                                                            Vec::Constant(h.size(), -1.3), h, m)
                                           .signed_value));
    ok = ok && flat == 0.0;
    return {ok, fmt::format("beta={:.6g} r2={:.6g} points={} floor={:.3g} mc_samples={} max_abs_z={:.3g} "
                            "const_psi={:.3g}",
                            beta, r2, n.size(), r.floor, cfg.correlate.mc_samples, z, flat)};
}

Outcome cone_shift_invariance(Experiment& e) {
    const Calibration& cal = e.calibration();
    if (!cal.feasible) return {false, "cone parameters infeasible"};
    const TowerChain& c = e.chain();
    const Cocycle& L = e.cocycle();
    const Vec& h = e.density(0).h;
    const ConeGeometry g = cone_geometry(c, 0, cal.params.horizon, cal.params.depth, e.config().cones.k_max, h);
    const Vec v = weights(c);
    const Vec psi = e.psi(3);
    int members = 0;
    double worst = 0.0;
    for (int j = 0; j < 20; ++j) {
        const Vec phi = random_lipschitz(c, 0, 0xbeef00ULL + j);
        const ShiftResult s = cone_shift(c, g, phi, h, cal.params);
        members += is_member(s.phi_tilde, g, cal.params);
        // the shift by C_phi h is invisible to a centred correlation
        const double before = operator_correlation(L, 0, phi, psi, h, 3).signed_value;
        const double after =
            (s.K + s.C_phi) * operator_correlation(L, 0, s.phi_tilde.cwiseProduct(v), psi, h, 3).signed_value;
        worst = std::max(worst, std::abs(before - after));
    }
    return {members == 20 && worst <= 1e-10, fmt::format("members={}/20 max_corr_diff={:.3g}", members, worst)};
}

}  // namespace

int main(int argc, char** argv) {
    const std::string path = argc > 1 ? argv[1] : std::string(TOWERLAB_CONFIG_DIR) + "/default.cfg";
    Experiment e(load_config(path));

    const std::vector<Criterion> all = {
        {1, "partition exactness", 1, [] { return partition_exactness(); }},
        {2, "markov full branch", 30, [&] { return markov_full_branch(e); }},
        {3, "tail", 10, [&] { return tail_control(e); }},
        {4, "distortion", 60, [&] { return distortion(e); }},
        {5, "operator identities", 60, [&] { return operator_identities(e); }},
        {6, "equivariant density", 300, [&] { return density(e); }},
        {7, "fibrewise mixing", 300, [&] { return mixing(e); }},
        {8, "projective metrics", 60, [&] { return projective(e); }},
        {9, "cone invariance and contraction", 600, [&] { return cone_contraction(e); }},
        {10, "good times", 600, [&] { return good_times_density(e); }},
        {11, "correlation decay", 1200, [&] { return correlation_decay(e); }},
        {12, "cone shift", 60, [&] { return cone_shift_invariance(e); }},
    };
    int failed = 0;
    for (const Criterion& c : all) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.body();
        } catch (const std::exception& ex) {
            o = {false, std::string("exception: ") + ex.what()};
        }
        const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const bool pass = o.ok && sec < c.limit_s;
        failed += !pass;
        fmt::print("{} {:2d} {:<32} {:8.2f}s (limit {:g}s)  {}\n", pass ? "PASS" : "FAIL", c.id, c.name, sec,
                   c.limit_s, o.detail);
        std::fflush(stdout);
    }
    fmt::print("{}/{} criteria passed\n", all.size() - failed, all.size());
    return failed ? 1 : 0;
}
