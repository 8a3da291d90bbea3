#include "towerlab/ulam.hpp"

#include <fmt/format.h>
#include <fmt/os.h>

#include <algorithm>
#include <cmath>
#include <exception>
#include <stdexcept>

namespace towerlab {

namespace {

struct RowEntries {
    std::vector<int> col;
    std::vector<double> val;
    double defect = 0.0;
};

// Preimage breakpoints of the level-0 target boundaries inside the image of the
// cell; consecutive differences telescope to the cell width.
RowEntries return_row(const TowerChain& c, long k, int i, const TowerGrid& dst) {
    const GridLayout& L = c.layout();
    const int l = L.level[i], p = L.piece[i];
    const TowerPartition& P = c.partition(k - l);
    const auto [a, b] = c.cell_u(k, i);
    const double width = b - a;
    const double ya = piece_forward(P, p, a), yb = piece_forward(P, p, b);
    const auto& xlo = dst.x_lo0;
    const auto& xhi = dst.x_hi0;
    const int n0 = static_cast<int>(xlo.size());

    RowEntries row;
    auto pull = [&](double y, double cur) {
        return y >= yb ? b : std::clamp(piece_inverse(P, p, y), cur, b);
    };
    int j = static_cast<int>(std::upper_bound(xhi.begin(), xhi.end(), ya) - xhi.begin());
    double cu = a, cy = ya;
    double lost = 0.0;
    while (cy < yb) {
        if (j >= n0 || cy < xlo[j]) {
            const double next = j < n0 ? std::min(yb, xlo[j]) : yb;
            const double un = pull(next, cu);
            lost += un - cu;
            cu = un;
            cy = next;
        } else {
            const double next = std::min(yb, xhi[j]);
            const double un = pull(next, cu);
            if (un > cu) {
                row.col.push_back(j);
                row.val.push_back((un - cu) / width);
            }
            cu = un;
            cy = next;
            ++j;
        }
    }
    if (cu < b) lost += b - cu;
    row.defect = lost / width;
    return row;
}

template <class F>
void parallel_for(long n, F&& body) {
    std::exception_ptr err;
#pragma omp parallel for schedule(dynamic, 16)
    for (long i = 0; i < n; ++i) {
        try {
            body(i);
        } catch (...) {
#pragma omp critical(towerlab_ulam_error)
            if (!err) err = std::current_exception();
        }
    }
    if (err) std::rethrow_exception(err);
}

std::pair<double, double> cell_x(const TowerChain& c, long k, int cell) {
    const GridLayout& L = c.layout();
    const TowerPartition& P = c.partition(k - L.level[cell]);
    const Piece& pc = P.pieces[L.piece[cell]];
    const auto [a, b] = c.cell_u(k, cell);
    return pc.side > 0 ? std::pair{P.origin + a, P.origin + b}
                       : std::pair{P.origin - b, P.origin - a};
}

}  // namespace

TransferMatrix build_operator(const TowerChain& c, long k) {
    const GridLayout& L = c.layout();
    (void)c.grid(k);
    const TowerGrid& dst = c.grid(k + 1);
    const int n = L.size();

    std::vector<RowEntries> rows(n);
    parallel_for(n, [&](long ii) {
        const int i = static_cast<int>(ii);
        const int l = L.level[i];
        RowEntries& r = rows[i];
        if (l + 1 < L.ret[i]) {
            if (l + 1 < L.levels) {
                r.col.push_back(L.index(l + 1, L.piece[i], L.sub[i]));
                r.val.push_back(1.0);
            } else {
                r.defect = 1.0;
            }
        } else {
            r = return_row(c, k, i, dst);
        }
    });

    TransferMatrix T;
    T.fiber = k;
    T.E.resize(n, n);
    std::vector<int> nnz(n);
    for (int i = 0; i < n; ++i) nnz[i] = static_cast<int>(rows[i].col.size());
    T.E.reserve(nnz);
    T.defect.resize(n);
    for (int i = 0; i < n; ++i) {
        for (std::size_t e = 0; e < rows[i].col.size(); ++e)
            T.E.insert(i, rows[i].col[e]) = rows[i].val[e];
        T.defect[i] = rows[i].defect;
        T.max_defect = std::max(T.max_defect, rows[i].defect);
    }
    T.E.makeCompressed();
    return T;
}

Cocycle::Cocycle(const TowerChain& c, double defect_budget) : c_(c), budget_(defect_budget) {
    if (!(defect_budget > 0.0)) throw std::invalid_argument("ulam.defect_budget must be > 0");
}

const TransferMatrix& Cocycle::op(long k) const {
    {
        std::lock_guard<std::mutex> g(mu_);
        auto it = ops_.find(k);
        if (it != ops_.end()) return *it->second;
    }
    auto T = std::make_shared<TransferMatrix>(build_operator(c_, k));
    std::lock_guard<std::mutex> g(mu_);
    return *ops_.emplace(k, std::move(T)).first->second;
}

void Cocycle::prepare(long lo, long hi) const {
    if (hi <= lo) return;
    c_.prepare(lo, hi + 1);
    for (long k = lo; k < hi; ++k) (void)op(k);
}

void Cocycle::evict(long lo, long hi) const {
    std::lock_guard<std::mutex> g(mu_);
    ops_.erase(ops_.lower_bound(lo), ops_.lower_bound(hi));
}

Vec Cocycle::push(long k, const Vec& rho) const {
    const TransferMatrix& T = op(k);
    const Vec mass = rho.cwiseProduct(Eigen::Map<const Vec>(c_.grid(k).lam.data(), T.rows()));
    Vec out = T.E.transpose() * mass;
    const auto& lam = c_.grid(k + 1).lam;
    for (Eigen::Index j = 0; j < out.size(); ++j) out[j] /= lam[j];
    return out;
}

Vec Cocycle::push_n(long k, int n, Vec rho) const {
    for (int j = 0; j < n; ++j) rho = push(k + j, rho);
    return rho;
}

Vec Cocycle::koopman(long k, const Vec& phi) const { return op(k).E * phi; }

Vec Cocycle::koopman_n(long k, int n, Vec phi) const {
    for (int j = n - 1; j >= 0; --j) phi = koopman(k + j, phi);
    return phi;
}

Vec Cocycle::normalized(long k, const Vec& psi) const {
    const Vec v = weights(c_);
    return push(k, psi.cwiseProduct(v)).cwiseQuotient(v);
}

Vec Cocycle::normalized_n(long k, int n, Vec psi) const {
    const Vec v = weights(c_);
    psi = psi.cwiseProduct(v);
    for (int j = 0; j < n; ++j) psi = push(k + j, psi);
    return psi.cwiseQuotient(v);
}

TransferMatrix Cocycle::compose(long k, int n) const {
    if (n < 0) throw std::invalid_argument("compose: n must be >= 0");
    TransferMatrix T;
    T.fiber = k;
    T.steps = n;
    const int size = c_.layout().size();
    if (n == 0) {
        T.E.resize(size, size);
        T.E.setIdentity();
        T.defect.assign(size, 0.0);
        return T;
    }
    const TransferMatrix& first = op(k);
    T.E = first.E;
    Vec d = Eigen::Map<const Vec>(first.defect.data(), size);
    for (int j = 1; j < n; ++j) {
        const TransferMatrix& next = op(k + j);
        d += T.E * Eigen::Map<const Vec>(next.defect.data(), size);
        T.E = (T.E * next.E).pruned();
    }
    T.defect.assign(d.data(), d.data() + size);
    T.max_defect = d.size() ? d.maxCoeff() : 0.0;
    if (T.max_defect > budget_)
        throw std::runtime_error(fmt::format("compose: defect {:.3g} exceeds budget {:.3g}",
                                             T.max_defect, budget_));
    return T;
}

double lam_integral(const TowerGrid& g, const Vec& rho) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < rho.size(); ++i) s += rho[i] * g.lam[i];
    return s;
}

double m_integral(const TowerChain& c, const TowerGrid& g, const Vec& psi) {
    const GridLayout& L = c.layout();
    double s = 0.0;
    for (Eigen::Index i = 0; i < psi.size(); ++i) s += psi[i] * c.weight(L.level[i]) * g.lam[i];
    return s;
}

double l1_distance(const TowerGrid& g, const Vec& a, const Vec& b) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]) * g.lam[i];
    return s;
}

Vec level0_uniform(const TowerGrid& g) {
    const int n0 = g.layout->level0_size();
    Vec u = Vec::Zero(g.layout->size());
    double mass = 0.0;
    for (int i = 0; i < n0; ++i) mass += g.lam[i];
    for (int i = 0; i < n0; ++i) u[i] = 1.0 / mass;
    return u;
}

Vec weights(const TowerChain& c) {
    const GridLayout& L = c.layout();
    Vec v(L.size());
    for (int i = 0; i < L.size(); ++i) v[i] = c.weight(L.level[i]);
    return v;
}

DensityResult equivariant_density(const Cocycle& L, long k, int n_back, double tol) {
    const TowerChain& c = L.chain();
    const int size = c.layout().size();
    auto pullback = [&](int n, double* defect) {
        const Vec one = Vec::Ones(size);
        const double m0 = lam_integral(c.grid(k - n), one);
        Vec h = L.push_n(k - n, n, one);
        const double m = lam_integral(c.grid(k), h);
        *defect = 1.0 - m / m0;
        return Vec(h / m);
    };
    constexpr int kStep = 5;
    DensityResult r;
    double d_prev = 0.0, d_next = 0.0;
    Vec prev = pullback(kStep, &d_prev);
    for (int n = kStep; n + kStep <= n_back; n += kStep) {
        Vec next = pullback(n + kStep, &d_next);
        r.gap = l1_distance(c.grid(k), prev, next);
        if (r.gap <= tol) {
            r.h = std::move(prev);
            r.n = n;
            r.defect = d_prev;
            r.converged = true;
            return r;
        }
        prev = std::move(next);
        d_prev = d_next;
    }
    throw std::runtime_error(fmt::format(
        "equivariant_density: no convergence within {} steps (gap {:.3g})", n_back, r.gap));
}

DensityResult cesaro_density(const Cocycle& L, long k, int n) {
    if (n < 1) throw std::invalid_argument("cesaro_density: n must be >= 1");
    const TowerChain& c = L.chain();
    const long first = k - n + 1;
    Vec S = level0_uniform(c.grid(first));
    constexpr long kChunk = 64;
    for (long f0 = first + 1; f0 <= k; f0 += kChunk) {
        const long f1 = std::min(k + 1, f0 + kChunk);
        // Operators for fibers f0-1 .. f1-2, built without caching.
        std::vector<TransferMatrix> ops(f1 - f0);
        c.prepare(f0 - 1, f1);
        for (long f = f0; f < f1; ++f) ops[f - f0] = build_operator(c, f - 1);
        for (long f = f0; f < f1; ++f) {
            const TransferMatrix& T = ops[f - f0];
            const Vec mass = S.cwiseProduct(
                Eigen::Map<const Vec>(c.grid(f - 1).lam.data(), T.rows()));
            Vec out = T.E.transpose() * mass;
            const auto& lam = c.grid(f).lam;
            for (Eigen::Index j = 0; j < out.size(); ++j) out[j] /= lam[j];
            S = level0_uniform(c.grid(f)) + out;
        }
    }
    DensityResult r;
    r.n = n;
    const double m = lam_integral(c.grid(k), S);
    r.defect = 1.0 - m / static_cast<double>(n);
    r.h = S / m;
    r.converged = true;
    return r;
}

std::vector<Vec> density_orbit(const Cocycle& L, long k, const Vec& h, int count) {
    std::vector<Vec> out;
    if (count <= 0) return out;
    out.push_back(h);
    for (int j = 1; j < count; ++j) out.push_back(L.push(k + j - 1, out.back()));
    return out;
}

DualityGap duality_check(const Cocycle& L, long k, const Vec& phi_next, const Vec& psi) {
    const TowerChain& c = L.chain();
    const Vec lhs_f = L.koopman(k, phi_next);
    const Vec Ppsi = L.normalized(k, psi);
    const double lhs = m_integral(c, c.grid(k), lhs_f.cwiseProduct(psi));
    const double rhs = m_integral(c, c.grid(k + 1), Ppsi.cwiseProduct(phi_next));
    const double scale = m_integral(c, c.grid(k), lhs_f.cwiseAbs().cwiseProduct(psi.cwiseAbs()));
    return {std::abs(lhs - rhs), scale};
}

void write_density_csv(const std::string& path, const TowerChain& c, long k, const Vec& h) {
    auto out = fmt::output_file(path);
    out.print("level,cell_lo,cell_hi,value\n");
    const GridLayout& L = c.layout();
    for (int i = 0; i < L.size(); ++i) {
        const auto [a, b] = cell_x(c, k, i);
        out.print("{},{:.17g},{:.17g},{:.17g}\n", L.level[i], a, b, h[i]);
    }
}

}  // namespace towerlab
