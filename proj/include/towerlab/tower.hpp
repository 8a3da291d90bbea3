#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <vector>

#include "towerlab/driving.hpp"
#include "towerlab/fibers.hpp"
#include "towerlab/stats.hpp"

namespace towerlab {

struct FiberSetup {
    Family family = Family::quadratic;
    double lorenz_alpha = 0.3;
};

/// Fiber parameter at omega: the quadratic critical order alpha(omega), or for the
/// Lorenz family lorenz_alpha * alpha_min / alpha(omega), which stays in (0, lorenz_alpha].
double fiber_param(const FiberSetup& f, const DrivingSystem& d, Omega w);

struct TowerParams {
    int n_max = 22;
    int L_max = 40;
    int cells_per_interval = 4;
    double gamma = 0.5;
    double theta_prime = 0.0;  ///< 0 selects half the fitted tail rate
    double zeta = 0.25;
    int return_cap = 200;
};

/// One return interval. Positions inside are held in a local coordinate u
/// (x = origin + side * u) so that intervals accumulating at the critical
/// point keep full relative precision.
struct Piece {
    int depth = 0;   ///< index in the accumulation sequence
    int ret = 0;     ///< return time, by direct iteration
    int label = 0;   ///< the classical label for the same interval (quadratic only)
    int side = 1;
    double u_lo = 0.0, u_hi = 0.0;
    double length() const { return u_hi - u_lo; }
};

/// Caller-supplied return branches in local coordinates (toy towers); when set
/// they replace the family formulas.
struct CustomBranches {
    std::function<double(int, double)> forward, inverse, jacobian;
};

struct TowerPartition {
    Family family = Family::quadratic;
    std::shared_ptr<const CustomBranches> custom;
    std::vector<double> alphas;  ///< fiber parameters along sigma^j omega, j = 0, 1, ...
    double base_lo = 0.0, base_hi = 0.0, origin = 0.0;
    std::vector<Piece> pieces;  ///< sorted by position in x
    double tail_lo = 0.0, tail_hi = 0.0;  ///< unresolved region (x)
    double tail_mass = 0.0;

    double base_length() const { return base_hi - base_lo; }
    double x_of(const Piece& p, double u) const { return origin + p.side * u; }
};

/// x_n, y_n and s_n = 1 - y_n for n = 0..count-1 (x_0 = 1/4, y_0 = 3/4).
struct QuadSequences {
    std::vector<double> x, y, s;
};
QuadSequences quadratic_sequences(int count);

/// z_n^-(alpha) for n = 0..count-1 (z_0^- = x0).
std::vector<double> quadratic_z_minus(double alpha, int count);

TowerPartition build_quadratic_partition(double alpha, int n_max);
TowerPartition build_lorenz_partition(const std::vector<double>& alphas, int n_max);

/// f^R on a piece, in x; increasing in u for both families.
double piece_forward(const TowerPartition& P, int piece, double u);
/// Local coordinate of the point of `piece` mapped to y by f^R.
double piece_inverse(const TowerPartition& P, int piece, double y);
/// |d f^R / dx| at local coordinate u.
double piece_jacobian(const TowerPartition& P, int piece, double u);
/// Full-branch check: endpoint error of f^R(piece) against the base. Lorenz pieces
/// report the relative mismatch of the pulled-back base endpoints instead.
double full_branch_error(const TowerPartition& P, int piece);

/// Piece containing x, or -1 inside the unresolved tail. Throws outside the base.
int locate(const TowerPartition& P, double x, double* u);

/// First n >= 1 with f^n(x) back in the base, iterating f_{sigma^j omega} directly
/// (alpha_at(j) gives the parameter at step j). Returns -1 past the cap.
int return_time(Family fam, const std::function<double(int)>& alpha_at, double x, int cap);
int return_time(const FiberSetup& f, const DrivingSystem& d, Omega w, double x, int cap);

/// Lebesgue mass of {R > n} plus the unresolved tail.
double tail_mass(const TowerPartition& P, int n);

struct TailFit {
    double theta = 0.0, C = 0.0, r2 = 0.0;
};
/// Fit mass(n) ~ C e^{-theta n} for n in [lo, hi]; needs at least 4 points.
TailFit fit_tail(const TowerPartition& P, int lo, int hi);

// ---------------------------------------------------------------------------
// Tower grids

/// Index structure shared by all fibers: cell i sits at (level, piece, sub).
struct GridLayout {
    int levels = 0, cells_per_piece = 0, pieces = 0;
    std::vector<int> level, piece, sub, ret;
    std::vector<int> level_begin;          ///< size levels + 1
    std::vector<std::vector<int>> first;   ///< first[l][p], -1 when the column is shorter
    int size() const { return static_cast<int>(level.size()); }
    int index(int l, int p, int s) const { return first[l][p] + s; }
    int level0_size() const { return level_begin[1]; }
};

struct TowerGrid {
    long fiber = 0;
    std::shared_ptr<const GridLayout> layout;
    std::vector<double> lam;             ///< Lebesgue mass per cell
    std::vector<double> x_lo0, x_hi0;    ///< level-0 cells in x (sorted)
};

struct TowerPoint {
    int level = 0;
    int piece = 0;
    double u = 0.0;
};

/// Towers over the orbit sigma^k omega_0, built on demand and cached.
/// Level l of fiber k is made of pieces of partition(k - l).
class TowerChain {
public:
    using PartitionMaker = std::function<TowerPartition(long)>;

    TowerChain(DrivingSystem d, FiberSetup f, Omega origin, TowerParams p);
    /// Chain over arbitrary partitions (fiber index -> partition), e.g. toy towers.
    TowerChain(PartitionMaker maker, TowerParams p);

    const DrivingSystem& driving() const { return d_; }
    const FiberSetup& setup() const { return f_; }
    const TowerParams& params() const { return p_; }
    Omega origin() const { return w0_; }
    Omega omega(long k) const { return d_.orbit(w0_, k); }
    double param(long k) const;

    const TowerPartition& partition(long k) const;
    const TowerGrid& grid(long k) const;
    const GridLayout& layout() const { return *layout_; }
    /// Materialize partitions and grids for fibers [lo, hi) (parallel).
    void prepare(long lo, long hi) const;
    void release_before(long k) const;
    /// Drop cached grids of fibers [lo, hi).
    void evict(long lo, long hi) const;

    double theta_prime() const { return theta_prime_; }
    void set_theta_prime(double t) { theta_prime_ = t; }
    double weight(int level) const;

    /// Cell u-range inside its piece.
    std::pair<double, double> cell_u(long k, int cell) const;
    /// Center of a cell as a tower point.
    TowerPoint cell_center(long k, int cell) const;
    /// Cell containing a tower point of fiber k (-1 when unresolved).
    int cell_of(long k, const TowerPoint& z) const;

    /// F_omega: climb, or return to the base of fiber k+1. Empty when the
    /// point lands in the unresolved tail or above the truncation height.
    std::optional<TowerPoint> tower_map(long k, const TowerPoint& z) const;

    /// Joint iteration until partition elements differ; returns cap if they never do.
    int separation_time(long k, TowerPoint a, TowerPoint b, int cap) const;
    /// gamma^s, or 0 when the cap is reached.
    double metric(long k, const TowerPoint& a, const TowerPoint& b, int cap) const;

    /// Return-time sequence R_1..R_count of z via R_j = R_1(after R_{j-1}) + R_{j-1}.
    /// Stops early (shorter vector) if the orbit escapes into the tail.
    std::vector<int> return_counts(long k, const TowerPoint& z, int count) const;

private:
    std::shared_ptr<TowerPartition> make_partition(long k) const;
    std::shared_ptr<TowerGrid> make_grid(long k) const;
    void init_layout();

    DrivingSystem d_;
    FiberSetup f_;
    Omega w0_;
    TowerParams p_;
    PartitionMaker maker_;
    double theta_prime_ = 0.0;
    std::shared_ptr<GridLayout> layout_;
    mutable std::mutex mu_;
    mutable std::map<long, std::shared_ptr<TowerPartition>> parts_;
    mutable std::map<long, std::shared_ptr<TowerGrid>> grids_;
};

/// Lebesgue mass of level l of fiber k.
double level_mass(const TowerChain& c, long k, int level);

/// Bad set at horizon n: cells in columns taller than floor(zeta n), or whose
/// floor(zeta n)-th return happens after n (centers followed along the orbit).
struct BadSet {
    std::vector<char> bad;
    double m_mass = 0.0;  ///< D2 = m(G^c)
    int returns_needed = 0;
};
BadSet bad_set(const TowerChain& c, long k, int n, double zeta);

/// Symbolic diameter of depth-k cylinders.
double good_diam(double gamma, int k);

struct DistortionReport {
    double D_hat = 0.0;
    int pairs = 0;
};
/// max |JF^R(x)/JF^R(y) - 1| / gamma^{s(F^R x, F^R y)} over random same-piece pairs.
DistortionReport verify_distortion(const TowerChain& c, long k, int depth, int samples,
                                   std::uint64_t seed);

/// Per-piece bound D_F with 1/D_F <= lam(J) JF^R / lam(base) <= D_F.
double distortion_constant(const TowerChain& c, long k);

}  // namespace towerlab
