#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <omp.h>

#include <cmath>
#include <set>

#include "towerlab/correlate.hpp"

using namespace towerlab;

namespace {

struct Fixture {
    TowerChain c;
    Cocycle L;
    DensityResult h;
    Fixture() : c(make()), L(c), h(equivariant_density(L, 0, 300, 1e-10)) {}

    static TowerChain make() {
        const DrivingSystem d{DrivingParams{}};
        TowerParams p;
        p.theta_prime = 0.4;
        return TowerChain(d, FiberSetup{}, d.origin(), p);
    }
};

Fixture& fx() {
    static Fixture f;
    return f;
}

}  // namespace

TEST_CASE("named observables") {
    CHECK(named_observable("inverse_level")(0.3, 3) == 0.25);
    CHECK(named_observable("base_indicator")(0.3, 0) == 1.0);
    CHECK(named_observable("base_indicator")(0.3, 2) == 0.0);
    CHECK(named_observable("cos_x")(0.5, 1) == doctest::Approx(1.0));
    CHECK(named_observable("x")(0.37, 4) == 0.37);
    CHECK_THROWS_AS(named_observable("nope"), std::invalid_argument);

    const TowerChain& c = fx().c;
    const Vec lv = sample_observable(c, 0, named_observable("inverse_level"));
    for (int i = 0; i < c.layout().size(); ++i) CHECK(lv[i] == 1.0 / (1.0 + c.layout().level[i]));
    CHECK(random_lipschitz(c, 0, 5) == random_lipschitz(c, 0, 5));
    CHECK(random_lipschitz(c, 0, 5) != random_lipschitz(c, 0, 6));
    // projected centers lie in the unit interval
    const Vec pc = project_centers(c, 0);
    CHECK(pc.minCoeff() >= 0.0);
    CHECK(pc.maxCoeff() <= 1.0);
}

TEST_CASE("operator correlation against a direct sum") {
    Fixture& f = fx();
    const TowerGrid& G = f.c.grid(0);
    const Vec phi = random_lipschitz(f.c, 0, 1).cwiseProduct(f.h.h);
    const Vec psi = random_lipschitz(f.c, 0, 2);
    // n = 0: int (psi - mean_mu psi) phi dlam
    double mean = 0.0, mu = 0.0;
    for (int i = 0; i < psi.size(); ++i) {
        mean += psi[i] * f.h.h[i] * G.lam[i];
        mu += f.h.h[i] * G.lam[i];
    }
    mean /= mu;
    double direct = 0.0;
    for (int i = 0; i < psi.size(); ++i) direct += (psi[i] - mean) * phi[i] * G.lam[i];
    const CorrValue r0 = operator_correlation(f.L, 0, phi, psi, f.h.h, 0);
    CHECK(r0.signed_value == doctest::Approx(direct).epsilon(1e-10));
    CHECK(r0.value <= r0.bound);

    const auto psi_at = [&](long k) { return random_lipschitz(f.c, k, 2); };
    const auto series = operator_correlation_series(f.L, 0, phi, psi_at, f.h.h, 8);
    REQUIRE(series.size() == 9);
    for (int n = 0; n <= 8; ++n) {
        const CorrValue r = operator_correlation(f.L, 0, phi, psi_at(n), f.h.h, n);
        CHECK(series[n].signed_value == doctest::Approx(r.signed_value).epsilon(1e-10));
        CHECK(series[n].value <= series[n].bound);
        CHECK(series[n].defect >= 0.0);
    }
    CHECK_THROWS(operator_correlation(f.L, 0, phi, psi, f.h.h, -1));
}

TEST_CASE("constant psi decorrelates exactly") {
    Fixture& f = fx();
    const Vec phi = random_lipschitz(f.c, 0, 9).cwiseProduct(f.h.h);
    const Vec one = Vec::Constant(phi.size(), 3.25);
    CHECK(centered_mean(one, f.h.h, f.c.grid(0)) == 3.25);
    for (int n : {0, 1, 7}) CHECK(operator_correlation(f.L, 0, phi, one, f.h.h, n).value == 0.0);
    const CorrValue p = project_correlation(f.L, 0, [](double x) { return x; }, [](double) { return 2.0; }, f.h.h, 4);
    CHECK(p.value == 0.0);
}

TEST_CASE("monte carlo agrees with the operator and ignores thread count") {
    Fixture& f = fx();
    const Vec phi = sample_observable(f.c, 0, named_observable("inverse_level")).cwiseProduct(f.h.h);
    const auto psi_at = [&](long k) { return sample_observable(f.c, k, named_observable("base_indicator")); };
    const auto orbit = density_orbit(f.L, 0, f.h.h, 7);
    omp_set_num_threads(1);
    const auto a = mc_correlation_series(f.c, 0, phi, psi_at, orbit, 6, 200000, 11, 16);
    omp_set_num_threads(3);
    const auto b = mc_correlation_series(f.c, 0, phi, psi_at, orbit, 6, 200000, 11, 16);
    REQUIRE(a.size() == 7);
    const auto op = operator_correlation_series(f.L, 0, phi, psi_at, f.h.h, 6);
    for (int n = 0; n <= 6; ++n) {
        CHECK(a[n].estimate == b[n].estimate);
        CHECK(a[n].stderr_ == b[n].stderr_);
        CHECK(a[n].stderr_ > 0.0);
        CHECK(std::abs(a[n].estimate - op[n].signed_value) <= 4.5 * a[n].stderr_ + 1e-6);
    }
    // doubling the batch split keeps the estimates within two standard errors
    const auto c = mc_correlation_series(f.c, 0, phi, psi_at, orbit, 6, 200000, 11, 32);
    for (int n = 0; n <= 6; ++n) CHECK(std::abs(c[n].estimate - a[n].estimate) <= 2.0 * a[n].stderr_);
    // constant psi gives zero
    const auto flat = mc_correlation_series(f.c, 0, phi, [&](long) { return Vec(Vec::Constant(phi.size(), 2.0)); },
                                            orbit, 3, 50000, 3, 16);
    for (const McValue& v : flat) CHECK(std::abs(v.estimate) <= 1e-12);
}

TEST_CASE("decay fit") {
    std::vector<int> n;
    std::vector<double> v;
    for (int j = 0; j <= 40; ++j) {
        n.push_back(j);
        v.push_back(j < 30 ? 2.0 * std::pow(0.6, j) : 1e-12);
    }
    const DecayFit d = fit_decay(n, v, 5, 40, 1e-10);
    CHECK(d.beta == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(d.C == doctest::Approx(2.0).epsilon(1e-10));
    CHECK(d.points == 25);
    CHECK(d.r2 == doctest::Approx(1.0));
    CHECK_THROWS(fit_decay(n, v, 36, 40, 1e-10));
    CHECK_THROWS(fit_decay(n, std::vector<double>(3, 1.0), 0, 5, 0.0));
}

TEST_CASE("mixing partition and ratios") {
    Fixture& f = fx();
    const std::vector<int> elem = mixing_partition(f.c, 0, 8, 3);
    std::set<int> seen(elem.begin(), elem.end());
    CHECK(seen.size() == 11);
    CHECK(*seen.begin() == 0);
    CHECK(*seen.rbegin() == 10);
    const int n = f.c.layout().size();
    const std::vector<char> all(n, 1);
    // A = A' = everything leaves only the pushed-out defect
    const double lost = 1.0 - lam_integral(f.c.grid(5), f.L.push_n(0, 5, f.h.h)) / lam_integral(f.c.grid(0), f.h.h);
    CHECK(mixing_ratio(f.L, 0, f.h.h, all, all, 5) == doctest::Approx(1.0 - lost).epsilon(1e-12));
    std::vector<char> A(n, 0);
    for (int i = 0; i < n; ++i) A[i] = elem[i] == 2;
    CHECK(mixing_ratio(f.L, 0, f.h.h, A, all, 3) == doctest::Approx(1.0).epsilon(1e-3));
    const MixingSeries s = mixing_series(f.L, 0, f.h.h, 8, 3, 12);
    REQUIRE(s.max_dev.size() == 13);
    CHECK(s.max_dev.back() < s.max_dev.front());
    for (int k = 0; k <= 12; ++k) CHECK(s.min_ratio[k] <= s.max_ratio[k]);
}

TEST_CASE("bilinearity and bound dominance") {
    Fixture& f = fx();
    const Vec p1 = random_lipschitz(f.c, 0, 21).cwiseProduct(f.h.h);
    const Vec p2 = random_lipschitz(f.c, 0, 22).cwiseProduct(f.h.h);
    const Vec q1 = random_lipschitz(f.c, 6, 23);
    const Vec q2 = random_lipschitz(f.c, 6, 24);
    auto corr = [&](const Vec& phi, const Vec& psi) { return operator_correlation(f.L, 0, phi, psi, f.h.h, 6); };
    const double a = 0.7, b = -2.3;
    const double c11 = corr(p1, q1).signed_value, c21 = corr(p2, q1).signed_value;
    const double c12 = corr(p1, q2).signed_value;
    CHECK(corr(a * p1 + b * p2, q1).signed_value == doctest::Approx(a * c11 + b * c21).epsilon(1e-10));
    CHECK(corr(p1, a * q1 + b * q2).signed_value == doctest::Approx(a * c11 + b * c12).epsilon(1e-10));
    for (const CorrValue& v : {corr(p1, q1), corr(p2, q2), corr(a * p1 + b * p2, q1 - q2)})
        CHECK(v.value <= v.bound + 1e-12);
}

TEST_CASE("projected correlations") {
    Fixture& f = fx();
    const TowerChain& c = f.c;
    const TowerGrid& G = c.grid(0);
    // n = 0 with the identity coordinate: the variance of x under the pushed-forward measure
    std::vector<double> x(c.layout().size());
    for (int i = 0; i < c.layout().size(); ++i) {
        const TowerPoint z = c.cell_center(0, i);
        const TowerPartition& P = c.partition(-z.level);
        double y = P.x_of(P.pieces[z.piece], z.u);
        for (int j = -z.level; j < 0; ++j) y = eval(FiberMap{Family::quadratic, c.param(j)}, y);
        x[i] = y;
    }
    double mass = 0.0, mean = 0.0;
    for (int i = 0; i < G.lam.size(); ++i) {
        mass += f.h.h[i] * G.lam[i];
        mean += x[i] * f.h.h[i] * G.lam[i];
    }
    mean /= mass;
    double var = 0.0;
    for (int i = 0; i < G.lam.size(); ++i) var += (x[i] - mean) * (x[i] - mean) * f.h.h[i] * G.lam[i];
    const auto id = [](double y) { return y; };
    CHECK(project_correlation(f.L, 0, id, id, f.h.h, 0).signed_value == doctest::Approx(var).epsilon(1e-10));

    // the projected series decays at the tower-level rate
    const Vec phi = sample_observable(c, 0, named_observable("inverse_level")).cwiseProduct(f.h.h);
    const auto psi_at = [&](long k) { return sample_observable(c, k, named_observable("base_indicator")); };
    const auto tower = operator_correlation_series(f.L, 0, phi, psi_at, f.h.h, 40);
    std::vector<int> n;
    std::vector<double> tv, pv;
    double defect = 0.0;
    for (int k = 0; k <= 40; ++k) {
        n.push_back(k);
        tv.push_back(tower[k].value);
        defect = std::max(defect, std::abs(tower[k].defect));
        pv.push_back(project_correlation(f.L, 0, id, id, f.h.h, k).value);
    }
    const DecayFit ft = fit_decay(n, tv, 5, 40, 10.0 * defect);
    const DecayFit fp = fit_decay(n, pv, 5, 40, 10.0 * defect);
    CHECK(std::abs(ft.beta - fp.beta) <= 0.05);
}

TEST_CASE("batched monte carlo resolves a decay rate below one") {
    Fixture& f = fx();
    const Vec phi = sample_observable(f.c, 0, named_observable("inverse_level")).cwiseProduct(f.h.h);
    const auto psi_at = [&](long k) { return sample_observable(f.c, k, named_observable("base_indicator")); };
    const auto orbit = density_orbit(f.L, 0, f.h.h, 7);
    const auto mc = mc_correlation_series(f.c, 0, phi, psi_at, orbit, 6, 200000, 5, 16);
    // one-sided 95% bounds: |C(6)| is below |C(1)| with the errors of both taken against it
    const double z = 1.645;
    CHECK(std::abs(mc[6].estimate) + z * mc[6].stderr_ < std::abs(mc[1].estimate) - z * mc[1].stderr_);
}
