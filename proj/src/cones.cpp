#include "towerlab/cones.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

namespace towerlab {

namespace {

constexpr double kEps = std::numeric_limits<double>::epsilon();

double m_int(const ConeGeometry& g, const Vec& psi) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < psi.size(); ++i) s += g.mw[i] * psi[i];
    return s;
}

double group_avg(const ConeGeometry& g, std::size_t A, const Vec& psi) {
    double s = 0.0;
    for (int i : g.groups[A]) s += g.mw[i] * psi[i];
    return s / g.mu_group[A];
}

// Every cone condition is l(chi) >= 0 for a linear functional l; calls
// visit(l(phi), l(psi)) for each one.
template <class F>
void for_each_functional(const Vec& phi, const Vec& psi, const ConeGeometry& g,
                         const ConeParams& p, F&& visit) {
    const double Iphi = m_int(g, phi), Ipsi = m_int(g, psi);
    for (Eigen::Index i = 0; i < phi.size(); ++i) visit(phi[i], psi[i]);
    for (std::size_t A = 0; A < g.groups.size(); ++A)
        visit(p.a * Iphi - group_avg(g, A, phi), p.a * Ipsi - group_avg(g, A, psi));
    for (const auto& pr : g.pairs) {
        const double dphi = (phi[pr.i] - phi[pr.j]) / pr.d;
        const double dpsi = (psi[pr.i] - psi[pr.j]) / pr.d;
        visit(p.b * Iphi - dphi, p.b * Ipsi - dpsi);
        visit(p.b * Iphi + dphi, p.b * Ipsi + dpsi);
    }
    for (int x : g.bad_cells) {
        visit(p.c * Iphi - phi[x], p.c * Ipsi - psi[x]);
        visit(p.c * Iphi + phi[x], p.c * Ipsi + psi[x]);
    }
}

ConeReport evaluate(const Vec& psi, const ConeGeometry& g, const ConeParams& p) {
    ConeReport r;
    const double I = m_int(g, psi);
    r.integral = I;
    if (!(I > 0.0)) return r;

    r.slack[kAverage] = p.a;
    for (std::size_t A = 0; A < g.groups.size(); ++A) {
        const double s = p.a - group_avg(g, A, psi) / I;
        if (s < r.slack[kAverage] || r.worst_cell[kAverage] < 0) {
            r.slack[kAverage] = s;
            r.worst_cell[kAverage] = g.groups[A].front();
        }
    }
    double lip = 0.0;
    for (const auto& pr : g.pairs) {
        const double v = std::abs(psi[pr.i] - psi[pr.j]) / pr.d;
        if (v > lip || r.worst_cell[kLipschitz] < 0) {
            lip = std::max(lip, v);
            r.worst_cell[kLipschitz] = pr.i;
        }
    }
    r.slack[kLipschitz] = p.b - lip / I;
    r.slack[kBadSup] = p.c;
    for (int x : g.bad_cells) {
        const double s = p.c - std::abs(psi[x]) / I;
        if (s < r.slack[kBadSup] || r.worst_cell[kBadSup] < 0) {
            r.slack[kBadSup] = s;
            r.worst_cell[kBadSup] = x;
        }
    }
    Eigen::Index imin = 0;
    const double mn = psi.minCoeff(&imin);
    r.slack[kNonneg] = mn / I;
    r.worst_cell[kNonneg] = static_cast<int>(imin);

    r.member = true;
    for (double s : r.slack) r.member = r.member && s >= 0.0;
    return r;
}

}  // namespace

std::vector<std::vector<int>> cell_codes(const TowerChain& c, long k, int steps) {
    const GridLayout& L = c.layout();
    std::vector<std::vector<int>> codes(L.size(), std::vector<int>(std::max(steps, 0), -1));
    for (int i = 0; i < L.size(); ++i) {
        std::optional<TowerPoint> z = c.cell_center(k, i);
        for (int t = 0; t < steps && z; ++t) {
            codes[i][t] = z->level * L.pieces + z->piece;
            z = c.tower_map(k + t, *z);
        }
    }
    return codes;
}

ConeGeometry cone_geometry(const TowerChain& c, long k, int horizon, int depth, int k_max,
                           const Vec& h) {
    const GridLayout& L = c.layout();
    const TowerGrid& G = c.grid(k);
    const double gamma = c.params().gamma;
    ConeGeometry g;
    g.fiber = k;
    g.horizon = horizon;
    g.depth = depth;
    g.k_max = k_max;
    g.mw.resize(L.size());
    for (int i = 0; i < L.size(); ++i) g.mw[i] = c.weight(L.level[i]) * G.lam[i];

    const BadSet B = bad_set(c, k, horizon, c.params().zeta);
    g.bad = B.bad;
    g.D2 = B.m_mass;
    g.D1 = good_diam(gamma, depth);
    for (int i = 0; i < L.size(); ++i)
        if (g.bad[i]) g.bad_cells.push_back(i);

    const auto codes = cell_codes(c, k, std::max(depth, k_max));
    std::map<std::vector<int>, int> index;
    for (int i = 0; i < L.size(); ++i) {
        if (g.bad[i]) continue;
        std::vector<int> key(codes[i].begin(), codes[i].begin() + depth);
        auto [it, fresh] = index.emplace(std::move(key), static_cast<int>(g.groups.size()));
        if (fresh) g.groups.emplace_back();
        g.groups[it->second].push_back(i);
    }
    for (const auto& A : g.groups) {
        double mu = 0.0, m = 0.0;
        for (int i : A) {
            mu += h[i] * G.lam[i];
            m += g.mw[i];
        }
        g.mu_group.push_back(mu);
        g.m_group.push_back(m);
        g.Dcal = std::max(g.Dcal, mu / m);
    }

    // Cells of one element are consecutive in the layout.
    const int K = L.cells_per_piece;
    for (int first = 0; first < L.size(); first += K) {
        for (int i = first; i < first + K; ++i) {
            for (int j = i + 1; j < first + K; ++j) {
                int t = 0;
                while (t < k_max && codes[i][t] == codes[j][t]) ++t;
                const int s = t >= k_max ? k_max : std::max(0, t - 1);
                g.pairs.push_back({i, j, std::pow(gamma, s)});
            }
        }
    }
    return g;
}

double sup_norm(const Vec& psi) { return psi.size() ? psi.cwiseAbs().maxCoeff() : 0.0; }

double lip_seminorm(const ConeGeometry& g, const Vec& psi) {
    double lip = 0.0;
    for (const auto& pr : g.pairs) lip = std::max(lip, std::abs(psi[pr.i] - psi[pr.j]) / pr.d);
    return lip;
}

ConeReport membership(const Vec& psi, const ConeGeometry& g, const ConeParams& p) {
    const ConeReport r = evaluate(psi, g, p);
    if (!(r.integral > 0.0)) throw std::domain_error("membership: m-integral must be positive");
    return r;
}

bool is_member(const Vec& psi, const ConeGeometry& g, const ConeParams& p) {
    return evaluate(psi, g, p).member;
}

double hilbert_plus(const Vec& phi, const Vec& psi) {
    if (phi.size() != psi.size() || phi.size() == 0)
        throw std::invalid_argument("hilbert_plus: size mismatch");
    double lo = INFINITY, hi = 0.0;
    for (Eigen::Index i = 0; i < phi.size(); ++i) {
        if (!(phi[i] > 0.0 && psi[i] > 0.0))
            throw std::domain_error("hilbert_plus: entries must be strictly positive");
        const double r = phi[i] / psi[i];
        lo = std::min(lo, r);
        hi = std::max(hi, r);
    }
    // Ratios equal up to the rounding of the scaled vector and the division are equal.
    if (hi - lo <= 4.0 * kEps * hi) return 0.0;
    return std::log(hi / lo);
}

HilbertResult hilbert_cone(const Vec& phi, const Vec& psi, const ConeGeometry& g,
                           const ConeParams& p) {
    if (!is_member(phi, g, p) || !is_member(psi, g, p))
        throw std::domain_error("hilbert_cone: arguments must lie in the cone");
    HilbertResult r;
    r.a_frak = 0.0;
    r.b_frak = INFINITY;
    bool unbounded = false;
    for_each_functional(phi, psi, g, p, [&](double lp, double lq) {
        if (lp > 0.0) {
            const double q = lq / lp;
            r.a_frak = std::max(r.a_frak, q);
            r.b_frak = std::min(r.b_frak, q);
        } else if (lq != 0.0) {
            unbounded = true;
        }
    });
    if (unbounded || !(r.b_frak > 0.0) || !std::isfinite(r.a_frak)) {
        r.finite = false;
        r.theta = INFINITY;
        return r;
    }
    r.theta = std::log(r.a_frak / r.b_frak);
    return r;
}

HilbertResult hilbert_cone_bisection(const Vec& phi, const Vec& psi, const ConeGeometry& g,
                                     const ConeParams& p) {
    HilbertResult r;
    auto upper_ok = [&](double rho) { return is_member(rho * phi - psi, g, p); };
    auto lower_ok = [&](double rho) { return is_member(psi - rho * phi, g, p); };
    auto bisect = [](double lo, double hi, auto&& good_at_hi) {
        for (int it = 0; it < 400 && hi - lo > 1e-15 * hi; ++it) {
            const double mid = 0.5 * (lo + hi);
            if (good_at_hi(mid)) hi = mid; else lo = mid;
        }
        return std::pair{lo, hi};
    };

    double hi = 1.0;
    for (int it = 0; it < 2000 && !upper_ok(hi); ++it) hi *= 2.0;
    double lo = hi;
    while (lo > 1e-300 && upper_ok(lo)) lo *= 0.5;
    r.a_frak = bisect(lo, hi, upper_ok).second;

    double blo = 0.0, bhi = 1.0;
    for (int it = 0; it < 2000 && lower_ok(bhi); ++it) bhi *= 2.0;
    const auto [b_lo, b_hi] = bisect(blo, bhi, [&](double rho) { return !lower_ok(rho); });
    (void)b_hi;
    r.b_frak = b_lo;
    if (!(r.b_frak > 0.0)) {
        r.finite = false;
        r.theta = INFINITY;
        return r;
    }
    r.theta = std::log(r.a_frak / r.b_frak);
    return r;
}

ConeParams default_params(const ConeInputs& in) {
    if (!(in.kappa > 0.0 && in.kappa < 1.0)) throw std::invalid_argument("cones: kappa must lie in (0,1)");
    if (!(in.eps > 0.0 && in.eps < in.kappa)) throw std::invalid_argument("cones: need 0 < eps < kappa");
    if (!(in.alpha > 0.0 && in.alpha < 1.0 && in.alpha_p > 1.0))
        throw std::invalid_argument("cones: need 0 < alpha < 1 < alpha'");
    ConeParams p;
    p.kappa = in.kappa;
    p.eps_ly = in.eps;
    p.alpha = in.alpha;
    p.alpha_p = in.alpha_p;
    p.C = in.C;
    p.D_F = in.D_F;
    p.Dcal = in.Dcal;
    p.D1 = in.D1;
    p.D2 = in.D2;

    p.a = 1.1 * (in.alpha_p + in.alpha / 2.0) / in.kappa;
    const double den = in.kappa - in.D_F * in.D2;
    if (!(den > 0.0)) throw ConeInfeasible("cones: D_F * D2 >= kappa");
    const double A0 = in.C * in.Dcal * p.a / den;
    const double B0 = in.C * in.D1 / den;
    const double G = in.D_F * in.C / (in.kappa - in.eps);
    const double x = 1.21 * B0 * G;
    if (!(x < 1.0)) throw ConeInfeasible("cones: b, c system infeasible (D1 too large)");
    p.c = 1.1 * A0 / (1.0 - x);
    p.b = 1.1 * G * p.c;
    return p;
}

bool smallness_ok(const ConeParams& p) {
    return p.alpha_p * p.D1 * p.b < p.alpha / 4.0 && p.alpha_p * p.c * p.D2 < p.alpha / 4.0 &&
           p.D_F * p.D2 < p.kappa;
}

bool header_inequalities_ok(const ConeParams& p) {
    const double den = p.kappa - p.D_F * p.D2;
    return den > 0.0 && p.a > (p.alpha_p + p.alpha / 2.0) / p.kappa &&
           p.c > p.C * (p.Dcal * p.a + p.D1 * p.b) / den &&
           p.b > p.D_F * p.C * p.c / (p.kappa - p.eps_ly);
}

double diameter_bound(double alpha, double alpha_p, double kappa) {
    if (!(alpha > 0.0 && alpha < 1.0 && alpha_p > 1.0))
        throw std::invalid_argument("diameter_bound: need 0 < alpha < 1 < alpha'");
    if (!(kappa > 0.0 && kappa < 1.0)) throw std::invalid_argument("diameter_bound: kappa outside (0,1)");
    const double d = std::max((4.0 * alpha_p + 2.0 * alpha) / alpha, (1.0 + kappa) / (1.0 - kappa));
    return std::log(d / std::min(d, 1.0 - kappa));
}

ContractionReport contraction_check(const Cocycle& L, long k0, int k,
                                    const std::vector<std::pair<Vec, Vec>>& pairs,
                                    const ConeGeometry& g0, const ConeGeometry& gk,
                                    const ConeParams& p) {
    ContractionReport rep;
    rep.D = diameter_bound(p.alpha, p.alpha_p, p.kappa);
    const double t = std::tanh(rep.D / 4.0);
    const ConeParams inner = p.scaled(p.kappa);
    for (const auto& [phi, psi] : pairs) {
        ContractionPair cp;
        const Vec Pphi = L.normalized_n(k0, k, phi);
        const Vec Ppsi = L.normalized_n(k0, k, psi);
        cp.report_phi = evaluate(Pphi, gk, inner);
        cp.report_psi = evaluate(Ppsi, gk, inner);
        cp.member = cp.report_phi.member && cp.report_psi.member;
        cp.theta_before = hilbert_cone(phi, psi, g0, p).theta;
        if (cp.member) {
            cp.theta_after = hilbert_cone(Pphi, Ppsi, gk, p).theta;
            cp.bound = t * cp.theta_before + 1e-10;
            cp.contracted = cp.theta_after <= cp.bound;
        }
        rep.ok = rep.ok && cp.member && cp.contracted;
        rep.pairs.push_back(cp);
    }
    return rep;
}

int ly_threshold(double theta_prime, double C, double D_F, double eps) {
    if (!(theta_prime > 0.0 && eps > 0.0)) throw std::invalid_argument("ly_threshold: bad arguments");
    const double m = std::max(1.0, C + D_F);
    return static_cast<int>(std::floor(2.0 * std::log(m / eps) / theta_prime)) + 1;
}

LYReport lasota_yorke_check(const Cocycle& L, long k0, int k, const Vec& psi,
                            const ConeGeometry& g0, const ConeGeometry& gk, double eps,
                            double D_F, double C, int N) {
    LYReport rep;
    rep.N = N;
    const GridLayout& lay = L.chain().layout();
    const double h = lip_seminorm(g0, psi);
    const double inf = sup_norm(psi);
    const Vec Ppsi = L.normalized_n(k0, k, psi);
    for (const auto& pr : gk.pairs) {
        const int l = lay.level[pr.i];
        const double diff = std::abs(Ppsi[pr.i] - Ppsi[pr.j]);
        int cs;
        double rhs;
        if (l >= k) {
            cs = 0;
            rhs = eps * h * pr.d;
        } else if (2 * l >= N) {
            cs = 1;
            rhs = eps * (h + inf) * pr.d;
        } else {
            cs = 2;
            rhs = (eps * h + D_F * C * inf) * pr.d;
        }
        const double ratio = rhs > 0.0 ? diff / rhs : (diff > 0.0 ? INFINITY : 0.0);
        rep.worst[cs] = std::max(rep.worst[cs], ratio);
        ++rep.pairs[cs];
    }
    for (double w : rep.worst) rep.ok = rep.ok && w <= 1.0;
    return rep;
}

}  // namespace towerlab
