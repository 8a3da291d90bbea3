#include "towerlab/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "towerlab/correlate.hpp"

namespace towerlab {

LocalGoodness::LocalGoodness(const Cocycle& L, long k0, Vec h0, ConeParams p, ScheduleParams s)
    : L_(L), k0_(k0), p_(p), s_(s) {
    h_.emplace(k0, std::move(h0));
}

const Vec& LocalGoodness::density(long k) {
    if (k < k0_) throw std::out_of_range("LocalGoodness: fiber before the start of the orbit");
    auto it = h_.find(k);
    if (it != h_.end()) return it->second;
    auto last = std::prev(h_.end());
    if (last->first > k)
        throw std::out_of_range("LocalGoodness: density of a released fiber");
    Vec h = last->second;
    for (long j = last->first; j < k; ++j) {
        h = L_.push(j, h);
        h_.emplace(j + 1, h);
    }
    return h_.at(k);
}

const ConeGeometry& LocalGoodness::geometry(long k) {
    auto it = geo_.find(k);
    if (it == geo_.end())
        it = geo_.emplace(k, std::make_shared<ConeGeometry>(cone_geometry(
                                 L_.chain(), k, p_.horizon, p_.depth, s_.k_max, density(k))))
                 .first;
    return *it->second;
}

const std::vector<int>& LocalGoodness::partition(long k) {
    auto it = part_.find(k);
    if (it == part_.end())
        it = part_.emplace(k, mixing_partition(L_.chain(), k, s_.blocks, s_.bands)).first;
    return it->second;
}

std::vector<Vec> LocalGoodness::probes(long k, int count) {
    std::vector<Vec> out;
    const Vec& h = density(k);
    const ConeGeometry& g = geometry(k);
    for (int j = 0; j < count; ++j) {
        const Vec phi = random_lipschitz(L_.chain(), k, s_.seed ^ mix64(static_cast<std::uint64_t>(j)));
        out.push_back(cone_shift(L_.chain(), g, phi, h, p_).phi_tilde);
    }
    return out;
}

Q1Result LocalGoodness::q1(long k, int cap, int stop_above) {
    if (cap < 1) throw std::invalid_argument("estimate_q1: cap must be >= 1");
    const int steps = cap + s_.window;
    const int ne = s_.blocks + s_.bands;
    const Vec& h = density(k);
    const TowerGrid& G0 = L_.chain().grid(k);
    const double h0 = lam_integral(G0, h);
    const std::vector<int>& elem0 = partition(k);

    std::vector<Vec> parts(ne, Vec::Zero(h.size()));
    std::vector<double> muA(ne, 0.0);
    for (Eigen::Index i = 0; i < h.size(); ++i) {
        parts[elem0[i]][i] = h[i] / h0;
        muA[elem0[i]] += h[i] * G0.lam[i] / h0;
    }
    std::vector<Vec> pr = probes(k, s_.probes);
    const ConeParams inner = p_.scaled(p_.kappa);
    const Vec v = weights(L_.chain());
    for (Vec& x : pr) x = x.cwiseProduct(v);  // lambda-view for pushing

    int last_mix = 0, last_probe = 0;
    for (int t = 1; t <= steps; ++t) {
        const long f = k + t;
        for (Vec& g : parts) g = L_.push(f - 1, g);
        for (Vec& x : pr) x = L_.push(f - 1, x);

        const TowerGrid& G = L_.chain().grid(f);
        const std::vector<int>& elem = partition(f);
        std::vector<std::vector<double>> M(ne, std::vector<double>(ne, 0.0));
        std::vector<double> muAp(ne, 0.0);
        double tot = 0.0;
        for (int a = 0; a < ne; ++a)
            for (Eigen::Index i = 0; i < h.size(); ++i) M[a][elem[i]] += parts[a][i] * G.lam[i];
        for (int a = 0; a < ne; ++a)
            for (int b = 0; b < ne; ++b) {
                muAp[b] += M[a][b];
                tot += M[a][b];
            }
        bool mix_ok = true;
        for (int a = 0; a < ne && mix_ok; ++a) {
            if (!(muA[a] > 0.0)) continue;
            for (int b = 0; b < ne; ++b) {
                if (!(muAp[b] > 0.0)) continue;
                const double rho = M[a][b] * tot / (muA[a] * muAp[b]);
                if (rho < p_.alpha || rho > p_.alpha_p) {
                    mix_ok = false;
                    break;
                }
            }
        }
        if (!mix_ok) last_mix = t;

        bool probe_ok = true;
        if (!pr.empty()) {
            const ConeGeometry& g = geometry(f);
            for (const Vec& x : pr)
                if (!is_member(x.cwiseQuotient(v), g, inner)) {
                    probe_ok = false;
                    break;
                }
        }
        if (!probe_ok) last_probe = t;
        if (stop_above >= 0 && (last_mix > stop_above || last_probe > stop_above)) break;
    }

    Q1Result r;
    r.q0 = last_mix + 1;
    r.q_probe = last_probe + 1;
    r.q1 = std::max(r.q0, r.q_probe);
    r.resolved = r.q1 <= cap;
    if (!r.resolved) r.q1 = cap + 1;
    return r;
}

void LocalGoodness::release_before(long k) {
    // Keep the density at the lowest retained fiber so forward propagation can resume.
    for (auto it = h_.begin(); it != h_.end() && it->first < k;) {
        if (std::next(it) == h_.end()) break;
        it = h_.erase(it);
    }
    geo_.erase(geo_.begin(), geo_.lower_bound(k));
    part_.erase(part_.begin(), part_.lower_bound(k));
    k0_ = std::max(k0_, std::min(k, h_.begin()->first));
}

int choose_M(const std::vector<int>& q1_samples, double eps) {
    if (q1_samples.size() < 100) throw std::invalid_argument("choose_M: need at least 100 samples");
    if (!(eps > 0.0 && eps < 1.0)) throw std::invalid_argument("choose_M: eps must be in (0,1)");
    std::vector<int> q = q1_samples;
    std::sort(q.begin(), q.end());
    const auto n = static_cast<long>(q.size());
    // Smallest index i with n - 1 - i <= eps n, i.e. at most eps n samples above q[i].
    long i = static_cast<long>(std::ceil((1.0 - eps) * static_cast<double>(n) - 1e-9)) - 1;
    i = std::clamp(i, 0L, n - 1);
    return std::max(1, q[i]);
}

GoodTimes good_times(const std::vector<char>& flag, int M, double eps, int q1_origin, double cushion) {
    if (M < 1) throw std::invalid_argument("good_times: M must be >= 1");
    if (!(eps > 0.0 && eps < 0.5)) throw std::invalid_argument("good_times: eps must be in (0, 1/2)");
    if (flag.empty()) throw std::invalid_argument("good_times: empty flag table");
    GoodTimes g;
    g.M = M;
    g.eps = eps;
    g.horizon = static_cast<long>(flag.size()) - 1;
    const long n = g.horizon;

    for (int r = 0; r < M; ++r) {
        long hits = 0, total = 0;
        for (long t = r; t <= n; t += M) {
            ++total;
            hits += flag[t] ? 1 : 0;
        }
        const double vf = total ? static_cast<double>(hits) / static_cast<double>(total) : 0.0;
        if (vf > g.visit) {
            g.visit = vf;
            g.r = r;
        }
    }
    if (g.r < 0) g.r = 0;
    g.resolved = g.visit >= 1.0 - eps;

    for (long t = g.r; t <= n; t += M)
        if (t >= std::max(q1_origin, 1) && flag[t]) g.times.push_back(t);

    long last_fail = 0;
    std::size_t s = 0;
    for (long m = 1; m <= n; ++m) {
        while (s < g.times.size() && g.times[s] <= m) ++s;
        const double sd = static_cast<double>(s);
        if (sd < static_cast<double>(m / M) * (1.0 - 2.0 * eps) ||
            sd * M / static_cast<double>(m) < 1.0 - 2.0 * eps - cushion)
            last_fail = m;
    }
    g.q3 = last_fail < n ? last_fail + 1 : -1;
    return g;
}

long count_times(const GoodTimes& g, long n) {
    return static_cast<long>(std::upper_bound(g.times.begin(), g.times.end(), n) - g.times.begin());
}

double contraction_exponent(long n, int M, double eps, double kappa) {
    if (n < 0 || M < 1) throw std::invalid_argument("contraction_exponent: need n >= 0, M >= 1");
    if (!(eps >= 0.0 && eps <= 0.5)) throw std::invalid_argument("contraction_exponent: eps out of range");
    if (!(kappa > 0.0 && kappa < 1.0)) throw std::invalid_argument("contraction_exponent: kappa must be in (0,1)");
    return std::pow(kappa, (1.0 - 2.0 * eps) * static_cast<double>(n) / M);
}

}  // namespace towerlab
