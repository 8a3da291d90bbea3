#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "towerlab/pipeline.hpp"
#include "towerlab/schedule.hpp"

using namespace towerlab;

namespace {

// Smallest M with #{q > M} <= eps * count, by scanning.
int brute_M(const std::vector<int>& q, double eps) {
    for (int M = 1;; ++M) {
        const auto above = std::count_if(q.begin(), q.end(), [M](int v) { return v > M; });
        if (static_cast<double>(above) <= eps * static_cast<double>(q.size()) + 1e-9) return M;
    }
}

// First m such that both density bounds hold for every n in [m, horizon].
long brute_q3(const std::vector<long>& times, int M, double eps, double cushion, long horizon) {
    auto ok = [&](long n) {
        const double s = static_cast<double>(std::count_if(times.begin(), times.end(), [n](long t) { return t <= n; }));
        return s >= static_cast<double>(n / M) * (1.0 - 2.0 * eps) && s * M / n >= 1.0 - 2.0 * eps - cushion;
    };
    long last = 0;
    for (long n = 1; n <= horizon; ++n)
        if (!ok(n)) last = n;
    return last < horizon ? last + 1 : -1;
}

TowerChain doubling_chain() {
    auto maker = [](long) {
        TowerPartition P;
        P.custom = std::make_shared<CustomBranches>(CustomBranches{
            [](int p, double u) { return 2.0 * u - p; }, [](int p, double y) { return 0.5 * (y + p); },
            [](int, double) { return 2.0; }});
        P.base_lo = 0.0;
        P.base_hi = 1.0;
        P.pieces = {Piece{0, 1, 1, 1, 0.0, 0.5}, Piece{0, 1, 1, 1, 0.5, 1.0}};
        return P;
    };
    TowerParams p;
    p.cells_per_interval = 16;
    p.theta_prime = 0.5;
    return TowerChain(maker, p);
}

}  // namespace

TEST_CASE("choose_M against a scan") {
    std::mt19937_64 rng(4);
    for (double eps : {0.05, 0.1, 0.25}) {
        for (int t = 0; t < 20; ++t) {
            std::geometric_distribution<int> G(0.2);
            std::vector<int> q(100 + t * 7);
            for (int& v : q) v = 1 + G(rng);
            CHECK(choose_M(q, eps) == brute_M(q, eps));
        }
    }
    CHECK(choose_M(std::vector<int>(100, 7), 0.1) == 7);
    CHECK_THROWS(choose_M(std::vector<int>(99, 3), 0.1));
    CHECK_THROWS(choose_M(std::vector<int>(100, 3), 0.0));
}

TEST_CASE("good times on synthetic flags") {
    std::mt19937_64 rng(12);
    std::bernoulli_distribution B(0.97);
    for (int M : {1, 3, 7, 20}) {
        std::vector<char> flag(100 * M + 1);
        for (auto& f : flag) f = B(rng);
        const GoodTimes g = good_times(flag, M, 0.1, 2);
        CHECK(g.horizon == 100L * M);
        REQUIRE(g.r >= 0);
        CHECK(g.r < M);
        // the chosen residue class has the largest visit fraction
        for (int r = 0; r < M; ++r) {
            long hits = 0, total = 0;
            for (long t = r; t <= g.horizon; t += M) {
                ++total;
                hits += flag[t];
            }
            CHECK(static_cast<double>(hits) / total <= g.visit + 1e-15);
        }
        long prev = -1;
        for (long t : g.times) {
            CHECK(t % M == g.r);
            CHECK(flag[t]);
            CHECK(t >= 2);
            CHECK(t > prev);
            if (prev >= 0) CHECK((t - prev) % M == 0);
            prev = t;
        }
        CHECK(g.q3 == brute_q3(g.times, M, 0.1, 0.05, g.horizon));
        CHECK(count_times(g, g.horizon) == static_cast<long>(g.times.size()));
        CHECK(count_times(g, 0) == 0);
        CHECK(g.resolved == (g.visit >= 0.9));
    }
}

TEST_CASE("good times edge cases") {
    const GoodTimes all = good_times(std::vector<char>(201, 1), 4, 0.1, 0);
    CHECK(all.visit == 1.0);
    CHECK(all.r == 0);
    CHECK(all.times.front() == 4);
    CHECK(all.resolved);
    const GoodTimes none = good_times(std::vector<char>(201, 0), 4, 0.1, 0);
    CHECK(none.times.empty());
    CHECK(none.q3 == -1);
    CHECK_FALSE(none.resolved);
    CHECK_THROWS(good_times({}, 4, 0.1, 0));
    CHECK_THROWS(good_times(std::vector<char>(10, 1), 0, 0.1, 0));
    CHECK_THROWS(good_times(std::vector<char>(10, 1), 2, 0.5, 0));
}

TEST_CASE("contraction exponent") {
    CHECK(contraction_exponent(0, 5, 0.1, 0.5) == 1.0);
    CHECK(contraction_exponent(7, 7, 0.0, 0.3) == doctest::Approx(0.3).epsilon(1e-15));
    CHECK(contraction_exponent(50, 5, 0.1, 0.5) == doctest::Approx(std::pow(0.5, 8.0)));
    CHECK(contraction_exponent(100, 5, 0.1, 0.5) < contraction_exponent(50, 5, 0.1, 0.5));
    CHECK_THROWS(contraction_exponent(-1, 5, 0.1, 0.5));
    CHECK_THROWS(contraction_exponent(10, 5, 0.1, 1.0));
}

TEST_CASE("doubling baseline has a short threshold") {
    const TowerChain c = doubling_chain();
    const Cocycle L(c);
    const DensityResult h = equivariant_density(L, 0, 100, 1e-12);
    for (int i = 0; i < c.layout().size(); ++i) CHECK(h.h[i] == doctest::Approx(1.0));
    ConeInputs in;
    in.kappa = 0.5;
    in.eps = 0.25;
    const ConeParams p0 = default_params(in);
    ConeParams p = p0;
    p.depth = 4;
    p.horizon = 10;
    ScheduleParams s;
    s.cap = 40;
    LocalGoodness lg(L, 0, h.h, p, s);
    const Q1Result q = lg.q1(0, s.cap);
    CHECK(q.resolved);
    CHECK(q.q1 <= 10);
}

TEST_CASE("local goodness on the default family") {
    Experiment e(parse_config("run.fibers = 4\n"));
    const Calibration& cal = e.calibration();
    REQUIRE(cal.feasible);
    ScheduleParams s = e.config().schedule.params;
    LocalGoodness lg(e.cocycle(), 0, e.density(0).h, cal.params, s);
    const Q1Result full = lg.q1(0, s.cap);
    CHECK(full.resolved);
    CHECK(full.q1 == std::max(full.q0, full.q_probe));
    CHECK(full.q1 <= 20);
    // stopping early reproduces the full evaluation below the stop point
    LocalGoodness lg2(e.cocycle(), 0, e.density(0).h, cal.params, s);
    const Q1Result cut = lg2.q1(0, 20, 20);
    CHECK(cut.q1 == full.q1);
    // forward-propagated density matches the pullback density
    CHECK(l1_distance(e.chain().grid(3), lg.density(3), e.density(3).h) <= 1e-8);
    for (const Vec& v : lg.probes(0, 4)) CHECK(is_member(v, lg.geometry(0), cal.params));
}
