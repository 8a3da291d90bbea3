#include "towerlab/correlate.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <random>
#include <stdexcept>

#include "towerlab/stats.hpp"

namespace towerlab {

Observable make_observable(const ConeGeometry& g, Vec values, bool lipschitz) {
    Observable o;
    o.sup = sup_norm(values);
    o.lip = lipschitz ? lip_seminorm(g, values) : 0.0;
    o.lipschitz = lipschitz;
    o.values = std::move(values);
    return o;
}

Vec sample_observable(const TowerChain& c, long k, const CellFunction& f) {
    const GridLayout& L = c.layout();
    Vec out(L.size());
    for (int i = 0; i < L.size(); ++i) {
        const TowerPoint z = c.cell_center(k, i);
        const TowerPartition& P = c.partition(k - z.level);
        out[i] = f(P.x_of(P.pieces[z.piece], z.u), z.level);
    }
    return out;
}

CellFunction named_observable(const std::string& name) {
    if (name == "inverse_level") return [](double, int l) { return 1.0 / (1.0 + l); };
    if (name == "base_indicator") return [](double, int l) { return l == 0 ? 1.0 : 0.0; };
    if (name == "cos_x") return [](double x, int) { return std::cos(4.0 * 3.141592653589793 * x); };
    if (name == "x") return [](double x, int) { return x; };
    throw std::invalid_argument("unknown observable '" + name + "'");
}

Vec random_lipschitz(const TowerChain& c, long k, std::uint64_t seed) {
    std::mt19937_64 rng(mix64(seed ^ mix64(static_cast<std::uint64_t>(k) + 0x9e37ULL)));
    std::uniform_real_distribution<double> U(-1.0, 1.0);
    double amp[3], ph[3], lev[6];
    for (int j = 0; j < 3; ++j) {
        amp[j] = U(rng);
        ph[j] = 3.141592653589793 * U(rng);
    }
    for (double& l : lev) l = 0.5 * U(rng);
    const TowerPartition& P = c.partition(k);
    const double lo = P.base_lo, len = P.base_length();
    return sample_observable(c, k, [&](double x, int level) {
        const double t = (x - lo) / len;
        double s = 0.0;
        for (int j = 0; j < 3; ++j) s += amp[j] * std::sin(6.283185307179586 * (j + 1) * t + ph[j]);
        return s + (level < 6 ? lev[level] : 0.0);
    });
}

Vec project_centers(const TowerChain& c, long k) {
    const GridLayout& L = c.layout();
    Vec out(L.size());
    for (int i = 0; i < L.size(); ++i) {
        const TowerPoint z = c.cell_center(k, i);
        const TowerPartition& P = c.partition(k - z.level);
        if (P.custom) throw std::invalid_argument("project_centers: no projection for custom towers");
        double x = P.x_of(P.pieces[z.piece], z.u);
        for (int j = 0; j < z.level; ++j)
            x = eval(FiberMap{P.family, c.param(k - z.level + j)}, x);
        out[i] = x;
    }
    return out;
}

ShiftResult cone_shift(const TowerChain& c, const ConeGeometry& g, const Vec& phi, const Vec& h,
                       const ConeParams& p) {
    const TowerGrid& G = c.grid(g.fiber);
    const Vec v = weights(c);
    const Vec hv = h.cwiseQuotient(v);
    const Vec pv = phi.cwiseQuotient(v);
    const double hv_lip = lip_seminorm(g, hv), pv_lip = lip_seminorm(g, pv);
    double hv_sup = 0.0, pv_sup = 0.0;
    for (int x : g.bad_cells) {
        hv_sup = std::max(hv_sup, std::abs(hv[x]));
        pv_sup = std::max(pv_sup, std::abs(pv[x]));
    }
    if (!(p.a > 1.0) || !(p.b > hv_lip) || !(p.c > hv_sup))
        throw std::domain_error("cone_shift: the density itself is not strictly inside the cone");

    ShiftResult r;
    r.K = lam_integral(G, phi);
    double C = 0.0;
    for (Eigen::Index i = 0; i < h.size(); ++i) {
        if (h[i] > 0.0) C = std::max(C, -phi[i] / h[i]);
        else if (phi[i] < 0.0) throw std::domain_error("cone_shift: density vanishes where phi < 0");
    }
    for (std::size_t A = 0; A < g.groups.size(); ++A) {
        double sp = 0.0, sh = 0.0;
        for (int i : g.groups[A]) {
            sp += phi[i] * G.lam[i];
            sh += h[i] * G.lam[i];
        }
        const double avg_h = sh / g.mu_group[A];
        C = std::max(C, (sp / g.mu_group[A] - p.a * r.K) / (p.a - avg_h));
    }
    C = std::max(C, (pv_lip - p.b * r.K) / (p.b - hv_lip));
    C = std::max(C, (pv_sup - p.c * r.K) / (p.c - hv_sup));
    if (C > 0.0) C *= 1.0 + 1e-6;
    if (!(r.K + C > 0.0)) C = std::max(C, -r.K) + 1e-12 * std::max(1.0, std::abs(r.K));

    // Rounding can leave a condition a few ulps short; enlarging C moves toward h.
    for (int attempt = 0; attempt < 40; ++attempt) {
        r.C_phi = C;
        r.phi_tilde = (phi + C * h).cwiseQuotient(v) / (r.K + C);
        r.report = membership(r.phi_tilde, g, p);
        if (r.report.member) return r;
        C = C > 0.0 ? 2.0 * C : 1e-12;
    }
    throw std::runtime_error("cone_shift: no admissible shift found");
}

double centered_mean(const Vec& psi, const Vec& w, const TowerGrid& g) {
    if (psi.size() == 0) return 0.0;
    const double ref = psi[0];
    double num = 0.0, den = 0.0;
    for (Eigen::Index i = 0; i < psi.size(); ++i) {
        num += (psi[i] - ref) * w[i] * g.lam[i];
        den += w[i] * g.lam[i];
    }
    if (!(den > 0.0)) throw std::domain_error("centered_mean: weight has no mass");
    return ref + num / den;
}

namespace {

CorrValue corr_from(const TowerGrid& G, const Vec& g, const Vec& hn, const Vec& psi, double K,
                    int n) {
    const double mean = centered_mean(psi, hn, G);
    double s = 0.0, l1 = 0.0, mass = 0.0;
    for (Eigen::Index i = 0; i < g.size(); ++i) {
        const double diff = g[i] - K * hn[i];
        s += (psi[i] - mean) * g[i] * G.lam[i];
        l1 += std::abs(diff) * G.lam[i];
        mass += diff * G.lam[i];
    }
    CorrValue r;
    r.n = n;
    r.signed_value = s;
    r.value = std::abs(s);
    r.bound = sup_norm(psi) * l1 + std::abs(mean) * std::abs(mass);
    r.bound *= 1.0 + 64.0 * std::numeric_limits<double>::epsilon();
    return r;
}

}  // namespace

CorrValue operator_correlation(const Cocycle& L, long k, const Vec& phi, const Vec& psi,
                               const Vec& h, int n) {
    if (n < 0) throw std::invalid_argument("operator_correlation: n must be >= 0");
    const TowerGrid& G0 = L.chain().grid(k);
    const double K = lam_integral(G0, phi);
    const double h0 = lam_integral(G0, h);
    const Vec g = L.push_n(k, n, phi);
    const Vec hn = L.push_n(k, n, h);
    CorrValue r = corr_from(L.chain().grid(k + n), g, hn, psi, K / h0, n);
    r.defect = 1.0 - lam_integral(L.chain().grid(k + n), hn) / h0;
    return r;
}

std::vector<CorrValue> operator_correlation_series(const Cocycle& L, long k, const Vec& phi,
                                                   const std::function<Vec(long)>& psi_at,
                                                   const Vec& h, int n_max) {
    const TowerGrid& G0 = L.chain().grid(k);
    const double K = lam_integral(G0, phi);
    const double h0 = lam_integral(G0, h);
    std::vector<CorrValue> out;
    Vec g = phi, hn = h;
    for (int n = 0; n <= n_max; ++n) {
        if (n > 0) {
            g = L.push(k + n - 1, g);
            hn = L.push(k + n - 1, hn);
        }
        const TowerGrid& Gn = L.chain().grid(k + n);
        CorrValue r = corr_from(Gn, g, hn, psi_at(k + n), K / h0, n);
        r.defect = 1.0 - lam_integral(Gn, hn) / h0;
        out.push_back(r);
    }
    return out;
}

std::vector<McValue> mc_correlation_series(const TowerChain& c, long k, const Vec& phi,
                                           const std::function<Vec(long)>& psi_at,
                                           const std::vector<Vec>& h_orbit, int n_max,
                                           long samples, std::uint64_t seed, int batches) {
    if (batches < 2) throw std::invalid_argument("mc_correlation: need at least 2 batches");
    if (samples < batches) throw std::invalid_argument("mc_correlation: fewer samples than batches");
    if (static_cast<int>(h_orbit.size()) <= n_max)
        throw std::invalid_argument("mc_correlation: density orbit shorter than n_max + 1");

    const GridLayout& L = c.layout();
    c.prepare(k, k + n_max + 1);
    const TowerGrid& G0 = c.grid(k);
    std::vector<double> cum(L.size());
    double total = 0.0;
    for (int i = 0; i < L.size(); ++i) cum[i] = (total += G0.lam[i]);

    std::vector<Vec> centered(n_max + 1);
    for (int n = 0; n <= n_max; ++n) {
        const Vec psi = psi_at(k + n);
        centered[n] = psi.array() - centered_mean(psi, h_orbit[n], c.grid(k + n));
    }

    std::vector<std::vector<double>> batch_mean(batches, std::vector<double>(n_max + 1, 0.0));
    std::exception_ptr err;
#pragma omp parallel for schedule(dynamic)
    for (int b = 0; b < batches; ++b) {
        try {
            const long lo = samples * b / batches, hi = samples * (b + 1) / batches;
            std::mt19937_64 rng(mix64(seed ^ mix64(0x5eedULL + static_cast<std::uint64_t>(b))));
            std::vector<double>& acc = batch_mean[b];
            for (long s = lo; s < hi; ++s) {
                const double r = total * unit_from_bits(rng());
                int i = static_cast<int>(std::upper_bound(cum.begin(), cum.end(), r) - cum.begin());
                i = std::min(i, L.size() - 1);
                const auto [ua, ub] = c.cell_u(k, i);
                std::optional<TowerPoint> z = TowerPoint{L.level[i], L.piece[i],
                                                         ua + (ub - ua) * unit_from_bits(rng())};
                const double w = phi[i] * total;
                for (int n = 0; n <= n_max && z; ++n) {
                    const int cell = c.cell_of(k + n, *z);
                    if (cell < 0) break;
                    acc[n] += centered[n][cell] * w;
                    if (n < n_max) z = c.tower_map(k + n, *z);
                }
            }
            for (double& a : acc) a /= static_cast<double>(hi - lo);
        } catch (...) {
#pragma omp critical(towerlab_mc_error)
            if (!err) err = std::current_exception();
        }
    }
    if (err) std::rethrow_exception(err);

    std::vector<McValue> out(n_max + 1);
    for (int n = 0; n <= n_max; ++n) {
        std::vector<double> m(batches);
        for (int b = 0; b < batches; ++b) m[b] = batch_mean[b][n];
        out[n].n = n;
        out[n].estimate = mean(m);
        out[n].stderr_ = stddev(m) / std::sqrt(static_cast<double>(batches));
    }
    return out;
}

DecayFit fit_decay(const std::vector<int>& n, const std::vector<double>& value, int lo, int hi,
                   double floor) {
    if (n.size() != value.size()) throw std::invalid_argument("fit_decay: size mismatch");
    std::vector<double> x, y;
    for (std::size_t i = 0; i < n.size(); ++i) {
        if (n[i] < lo || n[i] > hi || !(value[i] > floor)) continue;
        x.push_back(n[i]);
        y.push_back(std::log(value[i]));
    }
    if (x.size() < 5) throw std::domain_error("fit_decay: fewer than 5 points above the noise floor");
    const FitResult f = linear_fit(x, y);
    DecayFit d;
    d.beta = std::exp(f.slope);
    d.C = std::exp(f.intercept);
    d.r2 = f.r2;
    d.points = f.points;
    d.lo = lo;
    d.hi = hi;
    return d;
}

std::vector<int> mixing_partition(const TowerChain& c, long k, int blocks, int bands) {
    if (blocks < 1 || bands < 1) throw std::invalid_argument("mixing_partition: bad sizes");
    const GridLayout& L = c.layout();
    const TowerPartition& P = c.partition(k);
    std::vector<int> elem(L.size());
    for (int i = 0; i < L.size(); ++i) {
        if (L.level[i] == 0) {
            const TowerPoint z = c.cell_center(k, i);
            const double x = P.x_of(P.pieces[z.piece], z.u);
            const int b = static_cast<int>((x - P.base_lo) / P.base_length() * blocks);
            elem[i] = std::clamp(b, 0, blocks - 1);
        } else {
            elem[i] = blocks + std::min(L.level[i], bands) - 1;
        }
    }
    return elem;
}

double mixing_ratio(const Cocycle& L, long k0, const Vec& h, const std::vector<char>& A,
                    const std::vector<char>& Aprime, int k) {
    const TowerGrid& G0 = L.chain().grid(k0);
    const TowerGrid& Gk = L.chain().grid(k0 + k);
    Vec hA = h;
    for (Eigen::Index i = 0; i < h.size(); ++i)
        if (!A[i]) hA[i] = 0.0;
    const Vec g = L.push_n(k0, k, hA);
    const Vec hk = L.push_n(k0, k, h);
    double num = 0.0, muA = 0.0, muAp = 0.0, tot = 0.0;
    for (Eigen::Index i = 0; i < h.size(); ++i) {
        muA += hA[i] * G0.lam[i];
        tot += hk[i] * Gk.lam[i];
        if (Aprime[i]) {
            num += g[i] * Gk.lam[i];
            muAp += hk[i] * Gk.lam[i];
        }
    }
    return num * tot / (muA * muAp);
}

MixingSeries mixing_series(const Cocycle& L, long k0, const Vec& h, int blocks, int bands,
                           int k_max) {
    const std::vector<int> elem = mixing_partition(L.chain(), k0, blocks, bands);
    const int ne = blocks + bands;
    const TowerGrid& G0 = L.chain().grid(k0);
    const double h0 = lam_integral(G0, h);
    std::vector<Vec> parts(ne, Vec::Zero(h.size()));
    std::vector<double> muA(ne, 0.0);
    for (Eigen::Index i = 0; i < h.size(); ++i) {
        parts[elem[i]][i] = h[i] / h0;
        muA[elem[i]] += h[i] * G0.lam[i] / h0;
    }
    MixingSeries out;
    for (int k = 0; k <= k_max; ++k) {
        if (k > 0)
            for (auto& g : parts) g = L.push(k0 + k - 1, g);
        const TowerGrid& Gk = L.chain().grid(k0 + k);
        const std::vector<int> elem_k = mixing_partition(L.chain(), k0 + k, blocks, bands);
        // Masses per (A, A') and the image measure mu' = sum_A L^k(h 1_A).
        std::vector<std::vector<double>> M(ne, std::vector<double>(ne, 0.0));
        std::vector<double> muAp(ne, 0.0);
        for (int a = 0; a < ne; ++a)
            for (Eigen::Index i = 0; i < h.size(); ++i) M[a][elem_k[i]] += parts[a][i] * Gk.lam[i];
        double tot = 0.0;
        for (int a = 0; a < ne; ++a)
            for (int b = 0; b < ne; ++b) {
                muAp[b] += M[a][b];
                tot += M[a][b];
            }
        double dev = 0.0, lo = std::numeric_limits<double>::infinity(), hi = 0.0;
        for (int a = 0; a < ne; ++a) {
            if (!(muA[a] > 0.0)) continue;
            for (int b = 0; b < ne; ++b) {
                if (!(muAp[b] > 0.0)) continue;
                const double rho = M[a][b] * tot / (muA[a] * muAp[b]);
                dev = std::max(dev, std::abs(rho - 1.0));
                lo = std::min(lo, rho);
                hi = std::max(hi, rho);
            }
        }
        out.max_dev.push_back(dev);
        out.min_ratio.push_back(lo);
        out.max_ratio.push_back(hi);
    }
    return out;
}

CorrValue project_correlation(const Cocycle& L, long k, const std::function<double(double)>& phi_hat,
                              const std::function<double(double)>& psi_hat, const Vec& h, int n) {
    const Vec x0 = project_centers(L.chain(), k);
    const Vec xn = project_centers(L.chain(), k + n);
    Vec phi(x0.size()), psi(xn.size());
    for (Eigen::Index i = 0; i < x0.size(); ++i) phi[i] = phi_hat(x0[i]) * h[i];
    for (Eigen::Index i = 0; i < xn.size(); ++i) psi[i] = psi_hat(xn[i]);
    return operator_correlation(L, k, phi, psi, h, n);
}

}  // namespace towerlab
