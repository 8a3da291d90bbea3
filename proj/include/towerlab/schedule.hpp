#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <vector>

#include "towerlab/cones.hpp"
#include "towerlab/ulam.hpp"

namespace towerlab {

struct ScheduleParams {
    int cap = 200;
    int probes = 16;
    double eps = 0.1;
    int blocks = 8;       ///< level-0 blocks of the mixing partition
    int bands = 3;        ///< levels 1..bands-1 separate, the rest lumped
    int window = 10;      ///< extra steps a threshold must keep holding
    int k_max = 16;       ///< separation cap for cone pair distances
    std::uint64_t seed = 1;
};

struct Q1Result {
    int q0 = -1;        ///< mixing threshold
    int q_probe = -1;   ///< cone-probe threshold
    int q1 = -1;        ///< max of the two; cap + 1 when unresolved
    bool resolved = false;
};

/// Local goodness along one orbit, starting from an equivariant density at fiber k0.
/// Densities are propagated forward; geometries and partitions are memoized.
class LocalGoodness {
public:
    LocalGoodness(const Cocycle& L, long k0, Vec h0, ConeParams p, ScheduleParams s);

    const Vec& density(long k);
    const ConeGeometry& geometry(long k);
    const std::vector<int>& partition(long k);
    const ConeParams& params() const { return p_; }
    const ScheduleParams& schedule() const { return s_; }

    /// Cone-shifted random probes at fiber k (m-views in C(a,b,c)).
    std::vector<Vec> probes(long k, int count);

    /// A threshold q is the step after the last failure within [0, cap + window]:
    /// mixing ratios in [alpha, alpha'] for q0, all probes in C(ka,kb,kc) for q_probe.
    /// With stop_above, evaluation ends at the first failure beyond it.
    Q1Result q1(long k, int cap, int stop_above = -1);

    /// Drop cached data for fibers below k.
    void release_before(long k);

private:
    const Cocycle& L_;
    long k0_;
    ConeParams p_;
    ScheduleParams s_;
    std::map<long, Vec> h_;
    std::map<long, std::shared_ptr<ConeGeometry>> geo_;
    std::map<long, std::vector<int>> part_;
};

/// Smallest M with #{q > M} <= eps * count (q values as integers). Needs >= 100 samples.
int choose_M(const std::vector<int>& q1_samples, double eps);

struct GoodTimes {
    int M = 0;
    double eps = 0.0;
    int r = -1;
    double visit = 0.0;       ///< stride-M visit fraction of the chosen residue
    long horizon = 0;
    std::vector<long> times;
    long q3 = -1;             ///< onset of the density bounds, -1 if they fail at the horizon
    bool resolved = false;
};

/// flag[k] for k = 0..n. q1_origin is q1 at the starting fiber. q3 is the first m
/// from which both s(n) >= floor(n/M)(1 - 2 eps) and s(n) M / n >= 1 - 2 eps - cushion
/// hold for every n up to the horizon.
GoodTimes good_times(const std::vector<char>& flag, int M, double eps, int q1_origin,
                     double cushion = 0.05);

/// Number of times t_i <= n.
long count_times(const GoodTimes& g, long n);

double contraction_exponent(long n, int M, double eps, double kappa);

}  // namespace towerlab
