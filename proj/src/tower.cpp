#include "towerlab/tower.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <random>
#include <stdexcept>
#include <string>

namespace towerlab {

namespace {

constexpr double kBranchTol = 1e-8;
constexpr double kLocateTol = 1e-12;

double q_step(double v) { return 4.0 * v * (1.0 - v); }

double lorenz_dh(double alpha, double u) {
    return kLorenzMix * alpha * std::pow(u, alpha - 1.0) + (1.0 - kLorenzMix);
}

double lorenz_right_inverse(double alpha, double v) {
    return 0.5 * lorenz_h_inverse(alpha, std::clamp(v + 0.5, 0.0, 1.0));
}

double lorenz_left_inverse(double alpha, double v) {
    return -0.5 * lorenz_h_inverse(alpha, std::clamp(0.5 - v, 0.0, 1.0));
}

// Quadratic first return from local coordinate t = |x - c| in the base.
// State (x, 1 - x) keeps the outer iterates near 0 and 1 exact.
int quad_return_from_t(double alpha0, double t, int cap) {
    const double s = std::pow(t / quad::w, alpha0) / 4.0;
    double x = 1.0 - s, cx = s;
    auto in_base = [&] { return x <= 0.5 ? x >= quad::x0 : cx >= 1.0 - quad::right; };
    for (int n = 1; n <= cap; ++n) {
        if (in_base()) return n;
        const double nx = 4.0 * x * cx;
        const double ncx = (x - cx) * (x - cx);
        x = nx;
        cx = ncx;
    }
    return -1;
}

double piece_x_lo(const TowerPartition& P, const Piece& p) {
    return p.side > 0 ? P.origin + p.u_lo : P.origin - p.u_hi;
}

double piece_x_hi(const TowerPartition& P, const Piece& p) {
    return p.side > 0 ? P.origin + p.u_hi : P.origin - p.u_lo;
}

// Boundary j of K equal sub-intervals of [lo, hi]; the last one is hi exactly.
double split_point(double lo, double hi, int j, int K) {
    if (j <= 0) return lo;
    if (j >= K) return hi;
    return lo + (hi - lo) * static_cast<double>(j) / static_cast<double>(K);
}

void check_partition(const TowerPartition& P, const std::function<double(int)>& alpha_at,
                     int cap) {
    for (std::size_t i = 0; i < P.pieces.size(); ++i) {
        const Piece& pc = P.pieces[i];
        if (!(pc.u_lo < pc.u_hi))
            throw std::runtime_error("tower: empty return interval at depth " +
                                     std::to_string(pc.depth));
        const double err = full_branch_error(P, static_cast<int>(i));
        if (!(err <= kBranchTol))
            throw std::runtime_error("tower: non-full branch at depth " +
                                     std::to_string(pc.depth) + " (endpoint error " +
                                     std::to_string(err) + ")");
        for (double f : {0.25, 0.5, 0.75}) {
            const double u = pc.u_lo + f * pc.length();
            const int r = P.family == Family::quadratic
                              ? quad_return_from_t(P.alphas.at(0), u, cap)
                              : return_time(P.family, alpha_at, P.x_of(pc, u), cap);
            if (r != pc.ret)
                throw std::runtime_error("tower: return time " + std::to_string(r) +
                                         " by iteration differs from " +
                                         std::to_string(pc.ret) + " at depth " +
                                         std::to_string(pc.depth));
        }
    }
}

template <class F>
void parallel_for(long n, F&& body) {
    std::exception_ptr err;
#pragma omp parallel for schedule(dynamic)
    for (long i = 0; i < n; ++i) {
        try {
            body(i);
        } catch (...) {
#pragma omp critical(towerlab_parallel_error)
            if (!err) err = std::current_exception();
        }
    }
    if (err) std::rethrow_exception(err);
}

}  // namespace

double fiber_param(const FiberSetup& f, const DrivingSystem& d, Omega w) {
    if (f.family == Family::quadratic) return d.alpha(w);
    return f.lorenz_alpha * d.params().alpha_min / d.alpha(w);
}

QuadSequences quadratic_sequences(int count) {
    QuadSequences q;
    if (count <= 0) return q;
    q.x.resize(count);
    q.y.resize(count);
    q.s.resize(count);
    q.s[0] = 1.0 - quad::right;
    for (int n = 1; n < count; ++n) q.s[n] = quad_left_inverse(q.s[n - 1]);
    for (int n = 0; n < count; ++n) {
        // x_n and 1 - y_n coincide by the symmetry of 4x(1-x).
        q.x[n] = n == 0 ? quad::x0 : q.s[n];
        q.y[n] = 1.0 - q.s[n];
    }
    return q;
}

std::vector<double> quadratic_z_minus(double alpha, int count) {
    const QuadSequences q = quadratic_sequences(count);
    std::vector<double> z(count);
    for (int n = 0; n < count; ++n)
        z[n] = quad::c - quad::w * std::pow(4.0 * q.s[n], 1.0 / alpha);
    return z;
}

TowerPartition build_quadratic_partition(double alpha, int n_max) {
    if (n_max < 2) throw std::invalid_argument("tower: n_max must be >= 2");
    if (!(alpha > 1.0)) throw std::invalid_argument("tower: quadratic order must exceed 1");
    TowerPartition P;
    P.family = Family::quadratic;
    P.alphas = {alpha};
    P.base_lo = quad::x0;
    P.base_hi = quad::right;
    P.origin = quad::c;

    const QuadSequences q = quadratic_sequences(n_max + 2);
    std::vector<double> t(n_max + 2);
    for (int n = 0; n <= n_max + 1; ++n)
        t[n] = n == 0 ? quad::w : quad::w * std::pow(4.0 * q.s[n], 1.0 / alpha);

    auto piece = [&](int n, int side) {
        Piece p;
        p.depth = n;
        p.ret = n + 2;
        p.label = n == 0 ? 2 : n;
        p.side = side;
        p.u_lo = t[n + 1];
        p.u_hi = t[n];
        return p;
    };
    for (int n = 0; n <= n_max; ++n) P.pieces.push_back(piece(n, -1));
    for (int n = n_max; n >= 0; --n) P.pieces.push_back(piece(n, +1));
    P.tail_lo = quad::c - t[n_max + 1];
    P.tail_hi = quad::c + t[n_max + 1];
    P.tail_mass = 2.0 * t[n_max + 1];

    check_partition(P, [alpha](int) { return alpha; }, n_max + 4);
    return P;
}

TowerPartition build_lorenz_partition(const std::vector<double>& alphas, int n_max) {
    if (n_max < 2) throw std::invalid_argument("tower: n_max must be >= 2");
    if (alphas.size() < static_cast<std::size_t>(n_max + 1))
        throw std::invalid_argument("tower: lorenz partition needs n_max + 1 parameters");
    for (double a : alphas)
        if (!(a > 0.0 && a < 0.5)) throw std::invalid_argument("tower: lorenz exponent outside (0, 1/2)");
    TowerPartition P;
    P.family = Family::lorenz;
    P.alphas = alphas;
    P.base_lo = 0.0;
    P.base_hi = 0.5;
    P.origin = 0.0;

    // B_k = f_{R,a0}^{-1} f_{L,a1}^{-1} ... f_{L,a_{k-1}}^{-1}(0); R = k on (B_k, B_{k-1}].
    std::vector<double> B(n_max + 2);
    B[0] = 0.5;
    for (int k = 1; k <= n_max + 1; ++k) {
        double v = 0.0;
        for (int j = k - 1; j >= 1; --j) v = lorenz_left_inverse(alphas[j], v);
        B[k] = lorenz_right_inverse(alphas[0], v);
    }
    for (int k = n_max + 1; k >= 1; --k) {
        Piece p;
        p.depth = k - 1;
        p.ret = k;
        p.label = k;
        p.side = 1;
        p.u_lo = B[k];
        p.u_hi = B[k - 1];
        P.pieces.push_back(p);
    }
    P.tail_lo = 0.0;
    P.tail_hi = B[n_max + 1];
    P.tail_mass = B[n_max + 1];

    check_partition(
        P, [&alphas](int j) { return alphas.at(static_cast<std::size_t>(j)); }, n_max + 1);
    return P;
}

double piece_forward(const TowerPartition& P, int piece, double u) {
    const Piece& pc = P.pieces.at(static_cast<std::size_t>(piece));
    if (P.custom) return P.custom->forward(piece, u);
    if (P.family == Family::quadratic) {
        double v = std::pow(u / quad::w, P.alphas[0]) / 4.0;
        for (int j = 0; j < pc.ret - 1; ++j) v = q_step(v);
        return v;
    }
    double v = lorenz_h(P.alphas[0], 2.0 * u) - 0.5;
    for (int j = 1; j < pc.ret; ++j) {
        v = std::min(v, 0.0);
        v = 0.5 - lorenz_h(P.alphas[j], -2.0 * v);
    }
    return v;
}

double piece_inverse(const TowerPartition& P, int piece, double y) {
    const Piece& pc = P.pieces.at(static_cast<std::size_t>(piece));
    if (P.custom) return std::clamp(P.custom->inverse(piece, y), pc.u_lo, pc.u_hi);
    if (P.family == Family::quadratic) {
        double v = std::clamp(y, P.base_lo, P.base_hi);
        for (int j = 0; j < pc.ret - 1; ++j) v = quad_left_inverse(v);
        const double u = quad::w * std::pow(4.0 * v, 1.0 / P.alphas[0]);
        return std::clamp(u, pc.u_lo, pc.u_hi);
    }
    double v = std::clamp(y, 0.0, 0.5);
    for (int j = pc.ret - 1; j >= 1; --j) v = lorenz_left_inverse(P.alphas[j], v);
    return std::clamp(lorenz_right_inverse(P.alphas[0], v), pc.u_lo, pc.u_hi);
}

double piece_jacobian(const TowerPartition& P, int piece, double u) {
    const Piece& pc = P.pieces.at(static_cast<std::size_t>(piece));
    if (P.custom) return P.custom->jacobian(piece, u);
    if (P.family == Family::quadratic) {
        const double a = P.alphas[0];
        double v = std::pow(u / quad::w, a) / 4.0;
        double J = a * v / u;
        for (int j = 0; j < pc.ret - 1; ++j) {
            J *= std::abs(4.0 - 8.0 * v);
            v = q_step(v);
        }
        return J;
    }
    double J = 2.0 * lorenz_dh(P.alphas[0], 2.0 * u);
    double v = lorenz_h(P.alphas[0], 2.0 * u) - 0.5;
    for (int j = 1; j < pc.ret; ++j) {
        v = std::min(v, 0.0);
        J *= 2.0 * lorenz_dh(P.alphas[j], -2.0 * v);
        v = 0.5 - lorenz_h(P.alphas[j], -2.0 * v);
    }
    return J;
}

double full_branch_error(const TowerPartition& P, int piece) {
    const Piece& pc = P.pieces.at(static_cast<std::size_t>(piece));
    if (!P.custom && P.family == Family::lorenz) {
        // Forward images of the endpoints pass through the singularity; pull the base
        // endpoints back instead and compare in the piece's own scale.
        auto pull = [&](double y) {
            double v = y;
            for (int j = pc.ret - 1; j >= 1; --j) v = lorenz_left_inverse(P.alphas[j], v);
            return lorenz_right_inverse(P.alphas[0], v);
        };
        return std::max(std::abs(pull(P.base_lo) - pc.u_lo), std::abs(pull(P.base_hi) - pc.u_hi)) /
               pc.length();
    }
    const double a = piece_forward(P, piece, pc.u_lo);
    const double b = piece_forward(P, piece, pc.u_hi);
    return std::max(std::abs(a - P.base_lo), std::abs(b - P.base_hi));
}

int locate(const TowerPartition& P, double x, double* u) {
    if (!(x >= P.base_lo - kLocateTol && x <= P.base_hi + kLocateTol))
        throw std::out_of_range("tower: point " + std::to_string(x) + " outside the base");
    x = std::clamp(x, P.base_lo, P.base_hi);
    const auto& ps = P.pieces;
    const auto it = std::lower_bound(ps.begin(), ps.end(), x, [&](const Piece& p, double v) {
        return piece_x_hi(P, p) < v;
    });
    if (it == ps.end() || piece_x_lo(P, *it) > x) return -1;
    if (u) *u = std::clamp(it->side * (x - P.origin), it->u_lo, it->u_hi);
    return static_cast<int>(it - ps.begin());
}

int return_time(Family fam, const std::function<double(int)>& alpha_at, double x, int cap) {
    if (cap < 1) throw std::invalid_argument("return_time: cap must be >= 1");
    if (fam == Family::quadratic) {
        if (!(x >= quad::x0 && x <= quad::right))
            throw std::invalid_argument("return_time: x outside the base");
        return quad_return_from_t(alpha_at(0), std::abs(x - quad::c), cap);
    }
    if (!(x > 0.0 && x <= 0.5)) throw std::invalid_argument("return_time: x outside the base");
    double v = x;
    for (int n = 1; n <= cap; ++n) {
        const double a = alpha_at(n - 1);
        if (v > 0.0) v = lorenz_h(a, 2.0 * v) - 0.5;
        else if (v < 0.0) v = 0.5 - lorenz_h(a, -2.0 * v);
        else return -1;
        if (v > 0.0) return n;
    }
    return -1;
}

int return_time(const FiberSetup& f, const DrivingSystem& d, Omega w, double x, int cap) {
    return return_time(
        f.family, [&](int j) { return fiber_param(f, d, d.orbit(w, j)); }, x, cap);
}

double tail_mass(const TowerPartition& P, int n) {
    double m = P.tail_mass;
    for (const Piece& p : P.pieces)
        if (p.ret > n) m += p.length();
    return m;
}

TailFit fit_tail(const TowerPartition& P, int lo, int hi) {
    std::vector<double> ns, ms;
    for (int n = lo; n <= hi; ++n) {
        ns.push_back(n);
        ms.push_back(tail_mass(P, n));
    }
    const FitResult f = fit_log_linear(ns, ms);
    if (f.points < 4) throw std::invalid_argument("fit_tail: fewer than 4 points in window");
    return {-f.slope, std::exp(f.intercept), f.r2};
}

double good_diam(double gamma, int k) { return std::pow(gamma, k); }

// ---------------------------------------------------------------------------

TowerChain::TowerChain(DrivingSystem d, FiberSetup f, Omega origin, TowerParams p)
    : d_(std::move(d)), f_(f), w0_(origin), p_(p), theta_prime_(p.theta_prime) {
    if (p_.n_max < 2) throw std::invalid_argument("tower.n_max must be >= 2");
    if (p_.L_max < 1) throw std::invalid_argument("tower.L_max must be >= 1");
    if (p_.cells_per_interval < 1) throw std::invalid_argument("tower.cells_per_interval must be >= 1");
    if (!(p_.gamma > 0.0 && p_.gamma < 1.0)) throw std::invalid_argument("tower.gamma must lie in (0,1)");
    if (!(p_.zeta > 0.0 && p_.zeta < 1.0)) throw std::invalid_argument("tower.zeta must lie in (0,1)");
    if (!(p_.theta_prime >= 0.0)) throw std::invalid_argument("tower.theta_prime must be >= 0");
    if (p_.return_cap < 1) throw std::invalid_argument("tower.return_cap must be >= 1");
    init_layout();
}

TowerChain::TowerChain(PartitionMaker maker, TowerParams p)
    : d_(DrivingParams{}), w0_(), p_(p), maker_(std::move(maker)), theta_prime_(p.theta_prime) {
    if (p_.L_max < 1) throw std::invalid_argument("tower.L_max must be >= 1");
    if (p_.cells_per_interval < 1) throw std::invalid_argument("tower.cells_per_interval must be >= 1");
    if (!(p_.gamma > 0.0 && p_.gamma < 1.0)) throw std::invalid_argument("tower.gamma must lie in (0,1)");
    init_layout();
}

void TowerChain::init_layout() {
    const TowerPartition& P0 = partition(0);
    auto L = std::make_shared<GridLayout>();
    L->pieces = static_cast<int>(P0.pieces.size());
    L->cells_per_piece = p_.cells_per_interval;
    int max_ret = 0;
    for (const Piece& pc : P0.pieces) max_ret = std::max(max_ret, pc.ret);
    L->levels = std::min(p_.L_max + 1, max_ret);
    L->first.assign(L->levels, std::vector<int>(L->pieces, -1));
    for (int l = 0; l < L->levels; ++l) {
        L->level_begin.push_back(L->size());
        for (int j = 0; j < L->pieces; ++j) {
            const int r = P0.pieces[j].ret;
            if (r <= l) continue;
            L->first[l][j] = L->size();
            for (int s = 0; s < L->cells_per_piece; ++s) {
                L->level.push_back(l);
                L->piece.push_back(j);
                L->sub.push_back(s);
                L->ret.push_back(r);
            }
        }
    }
    L->level_begin.push_back(L->size());
    layout_ = std::move(L);
}

double TowerChain::param(long k) const { return fiber_param(f_, d_, omega(k)); }

std::shared_ptr<TowerPartition> TowerChain::make_partition(long k) const {
    std::shared_ptr<TowerPartition> P;
    if (maker_) {
        P = std::make_shared<TowerPartition>(maker_(k));
    } else if (f_.family == Family::quadratic) {
        P = std::make_shared<TowerPartition>(build_quadratic_partition(param(k), p_.n_max));
    } else {
        std::vector<double> a(p_.n_max + 1);
        for (int j = 0; j <= p_.n_max; ++j) a[j] = param(k + j);
        P = std::make_shared<TowerPartition>(build_lorenz_partition(a, p_.n_max));
    }
    if (layout_) {
        if (static_cast<int>(P->pieces.size()) != layout_->pieces)
            throw std::runtime_error("tower: piece count differs between fibers");
        for (int j = 0; j < layout_->pieces; ++j) {
            const int first = layout_->first[0][j];
            if (P->pieces[j].ret != layout_->ret[first])
                throw std::runtime_error("tower: return times differ between fibers");
        }
    }
    return P;
}

const TowerPartition& TowerChain::partition(long k) const {
    {
        std::lock_guard<std::mutex> g(mu_);
        auto it = parts_.find(k);
        if (it != parts_.end()) return *it->second;
    }
    auto P = make_partition(k);
    std::lock_guard<std::mutex> g(mu_);
    return *parts_.emplace(k, std::move(P)).first->second;
}

std::shared_ptr<TowerGrid> TowerChain::make_grid(long k) const {
    const GridLayout& L = *layout_;
    auto G = std::make_shared<TowerGrid>();
    G->fiber = k;
    G->layout = layout_;
    G->lam.resize(L.size());
    for (int i = 0; i < L.size(); ++i) {
        const auto [a, b] = cell_u(k, i);
        G->lam[i] = b - a;
    }
    const TowerPartition& P = partition(k);
    for (int i = 0; i < L.level0_size(); ++i) {
        const auto [a, b] = cell_u(k, i);
        const Piece& pc = P.pieces[L.piece[i]];
        G->x_lo0.push_back(pc.side > 0 ? P.origin + a : P.origin - b);
        G->x_hi0.push_back(pc.side > 0 ? P.origin + b : P.origin - a);
    }
    return G;
}

const TowerGrid& TowerChain::grid(long k) const {
    {
        std::lock_guard<std::mutex> g(mu_);
        auto it = grids_.find(k);
        if (it != grids_.end()) return *it->second;
    }
    auto G = make_grid(k);
    std::lock_guard<std::mutex> g(mu_);
    return *grids_.emplace(k, std::move(G)).first->second;
}

void TowerChain::prepare(long lo, long hi) const {
    if (hi <= lo) return;
    const long plo = lo - layout_->levels + 1;
    const long n = hi + 1 - plo;
    parallel_for(n, [&](long i) { (void)partition(plo + i); });
    parallel_for(hi - lo, [&](long i) { (void)grid(lo + i); });
}

void TowerChain::release_before(long k) const {
    std::lock_guard<std::mutex> g(mu_);
    grids_.erase(grids_.begin(), grids_.lower_bound(k));
    parts_.erase(parts_.begin(), parts_.lower_bound(k - layout_->levels));
}

void TowerChain::evict(long lo, long hi) const {
    std::lock_guard<std::mutex> g(mu_);
    grids_.erase(grids_.lower_bound(lo), grids_.lower_bound(hi));
}

double TowerChain::weight(int level) const {
    return std::exp(static_cast<double>(level) * theta_prime_);
}

std::pair<double, double> TowerChain::cell_u(long k, int cell) const {
    const GridLayout& L = *layout_;
    const int l = L.level.at(cell);
    const Piece& pc = partition(k - l).pieces[L.piece[cell]];
    const int K = L.cells_per_piece;
    const int j = pc.side > 0 ? L.sub[cell] : K - 1 - L.sub[cell];
    return {split_point(pc.u_lo, pc.u_hi, j, K), split_point(pc.u_lo, pc.u_hi, j + 1, K)};
}

TowerPoint TowerChain::cell_center(long k, int cell) const {
    const auto [a, b] = cell_u(k, cell);
    return {layout_->level[cell], layout_->piece[cell], 0.5 * (a + b)};
}

int TowerChain::cell_of(long k, const TowerPoint& z) const {
    const GridLayout& L = *layout_;
    if (z.level < 0 || z.level >= L.levels) return -1;
    if (L.first[z.level].at(z.piece) < 0)
        throw std::invalid_argument("tower: point above its column");
    const Piece& pc = partition(k - z.level).pieces[z.piece];
    const int K = L.cells_per_piece;
    int j = static_cast<int>((z.u - pc.u_lo) / pc.length() * K);
    j = std::clamp(j, 0, K - 1);
    while (j > 0 && z.u < split_point(pc.u_lo, pc.u_hi, j, K)) --j;
    while (j < K - 1 && z.u >= split_point(pc.u_lo, pc.u_hi, j + 1, K)) ++j;
    const int s = pc.side > 0 ? j : K - 1 - j;
    return L.index(z.level, z.piece, s);
}

std::optional<TowerPoint> TowerChain::tower_map(long k, const TowerPoint& z) const {
    const GridLayout& L = *layout_;
    if (z.piece < 0 || z.piece >= L.pieces || z.level < 0)
        throw std::invalid_argument("tower_map: invalid tower point");
    const int r = L.ret[L.first[0][z.piece]];
    if (z.level >= r) throw std::invalid_argument("tower_map: level above column height");
    if (z.level + 1 < r) {
        if (z.level + 1 >= L.levels) return std::nullopt;
        return TowerPoint{z.level + 1, z.piece, z.u};
    }
    const double y = piece_forward(partition(k - z.level), z.piece, z.u);
    double u = 0.0;
    const int p = locate(partition(k + 1), y, &u);
    if (p < 0) return std::nullopt;
    return TowerPoint{0, p, u};
}

int TowerChain::separation_time(long k, TowerPoint a, TowerPoint b, int cap) const {
    for (int n = 0; n < cap; ++n) {
        if (a.level != b.level || a.piece != b.piece) return n;
        const auto na = tower_map(k + n, a);
        const auto nb = tower_map(k + n, b);
        if (!na || !nb) return n + 1;
        a = *na;
        b = *nb;
    }
    return cap;
}

double TowerChain::metric(long k, const TowerPoint& a, const TowerPoint& b, int cap) const {
    const int s = separation_time(k, a, b, cap);
    return s >= cap ? 0.0 : std::pow(p_.gamma, s);
}

std::vector<int> TowerChain::return_counts(long k, const TowerPoint& z, int count) const {
    std::vector<int> out;
    long fib = k;
    TowerPoint cur = z;
    int total = 0;
    for (int j = 1; j <= count; ++j) {
        const int r1 = layout_->ret[layout_->first[0][cur.piece]] - cur.level;
        total += r1;
        out.push_back(total);
        if (j == count) break;
        const double y = piece_forward(partition(fib - cur.level), cur.piece, cur.u);
        fib += r1;
        double u = 0.0;
        const int p = locate(partition(fib), y, &u);
        if (p < 0) break;
        cur = {0, p, u};
    }
    return out;
}

double level_mass(const TowerChain& c, long k, int level) {
    const GridLayout& L = c.layout();
    const TowerGrid& G = c.grid(k);
    double m = 0.0;
    for (int i = L.level_begin.at(level); i < L.level_begin.at(level + 1); ++i) m += G.lam[i];
    return m;
}

BadSet bad_set(const TowerChain& c, long k, int n, double zeta) {
    const GridLayout& L = c.layout();
    const TowerGrid& G = c.grid(k);
    BadSet B;
    B.returns_needed = static_cast<int>(std::floor(zeta * n));
    B.bad.assign(L.size(), 0);
    const int m = B.returns_needed;
    for (int i = 0; i < L.size(); ++i) {
        bool bad;
        if (m == 0) {
            bad = L.ret[i] - L.level[i] > n;
        } else if (L.ret[i] > m) {
            bad = true;
        } else {
            const auto rc = c.return_counts(k, c.cell_center(k, i), m);
            bad = static_cast<int>(rc.size()) < m || rc[m - 1] > n;
        }
        B.bad[i] = bad;
        if (bad) B.m_mass += c.weight(L.level[i]) * G.lam[i];
    }
    return B;
}

DistortionReport verify_distortion(const TowerChain& c, long k, int depth, int samples,
                                   std::uint64_t seed) {
    const TowerPartition& P = c.partition(k);
    std::mt19937_64 rng(mix64(seed));
    const double gamma = c.params().gamma;
    DistortionReport rep;
    const int np = static_cast<int>(P.pieces.size());
    for (int i = 0; i < samples; ++i) {
        const int p = static_cast<int>(rng() % static_cast<std::uint64_t>(np));
        const Piece& pc = P.pieces[p];
        const double u1 = pc.u_lo + pc.length() * unit_from_bits(rng());
        const int scale = static_cast<int>(rng() % 24);
        const double du = pc.length() * std::ldexp(unit_from_bits(rng()), -scale);
        const double u2 = std::clamp(u1 + du, pc.u_lo, pc.u_hi);
        const double J1 = piece_jacobian(P, p, u1), J2 = piece_jacobian(P, p, u2);
        if (!std::isfinite(J1) || !std::isfinite(J2)) {
            rep.D_hat = INFINITY;
            continue;
        }
        const long kr = k + pc.ret;
        double v1 = 0.0, v2 = 0.0;
        const int q1 = locate(c.partition(kr), piece_forward(P, p, u1), &v1);
        const int q2 = locate(c.partition(kr), piece_forward(P, p, u2), &v2);
        if (q1 < 0 || q2 < 0) continue;
        const int s = c.separation_time(kr, {0, q1, v1}, {0, q2, v2}, depth);
        const double g = std::pow(gamma, s);
        if (g == 0.0) {
            rep.D_hat = INFINITY;
            continue;
        }
        rep.D_hat = std::max(rep.D_hat, std::abs(J1 / J2 - 1.0) / g);
        ++rep.pairs;
    }
    return rep;
}

double distortion_constant(const TowerChain& c, long k) {
    const TowerPartition& P = c.partition(k);
    double D = 1.0;
    constexpr int kProbe = 64;
    for (int p = 0; p < static_cast<int>(P.pieces.size()); ++p) {
        const Piece& pc = P.pieces[p];
        for (int i = 0; i <= kProbe; ++i) {
            const double u = split_point(pc.u_lo, pc.u_hi, i, kProbe);
            const double v = pc.length() * piece_jacobian(P, p, u) / P.base_length();
            if (!(v > 0.0) || !std::isfinite(v)) return INFINITY;
            D = std::max({D, v, 1.0 / v});
        }
    }
    return D;
}

}  // namespace towerlab
