#pragma once

#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "towerlab/config.hpp"
#include "towerlab/correlate.hpp"
#include "towerlab/schedule.hpp"

namespace towerlab {

inline constexpr const char* kVersion = "0.1.0";

struct TailSummary {
    double theta_hat = 0.0;         ///< min over sampled fibers
    double r2_min = 1.0;
    std::vector<double> theta;      ///< per sampled fiber
    std::vector<double> mass;       ///< fiber 0: mass(n), n = 0..tail_depth
};

struct Calibration {
    double theta_hat = 0.0, theta_prime = 0.0;
    double D_F = 0.0, C = 0.0, Dcal = 0.0, D1 = 0.0, D2 = 0.0;
    double kappa = 0.0, eps = 0.0;
    ConeParams params;
    bool feasible = false;
    bool small_ok = false;
    std::string infeasible_reason;
};

struct ScheduleResult {
    std::vector<int> q1_samples;
    Q1Result origin;
    int M = 0;
    std::vector<char> flags;
    GoodTimes good;
};

struct CorrelationResult {
    std::vector<CorrValue> op;
    std::vector<McValue> mc;
    double floor = 0.0;
    std::optional<DecayFit> fit;
    std::string fit_error;
    double max_abs_z = 0.0;
};

/// Shared state of one experiment: orbit, towers, operators and the calibrated
/// constants, each computed on first use.
class Experiment {
public:
    explicit Experiment(Config cfg);

    const Config& config() const { return cfg_; }
    const DrivingSystem& driving() const { return d_; }
    /// Orbit points used for sup estimates: k = j * run.fiber_stride.
    std::vector<long> sample_fibers() const;

    /// Partition of fiber k resolved to run.tail_depth (independent of the grid depth).
    TowerPartition tail_partition(long k) const;
    /// Throws ConfigError if a configured theta' is not below theta_hat.
    const TailSummary& tail();

    TowerChain& chain();
    Cocycle& cocycle();
    const DensityResult& density(long k);
    const Calibration& calibration();

    const ScheduleResult& schedule();
    const CorrelationResult& correlations();

    /// Fitted tail rate halved, or the configured tower.theta_prime.
    double theta_prime();
    /// Configured observables at the cell centers: phi on fiber 0, psi on fiber k.
    Vec phi();
    Vec psi(long k);

private:
    Config cfg_;
    DrivingSystem d_;
    std::optional<TailSummary> tail_;
    std::unique_ptr<TowerChain> chain_;
    std::unique_ptr<Cocycle> L_;
    std::map<long, DensityResult> dens_;
    std::optional<Calibration> cal_;
    std::optional<ScheduleResult> sched_;
    std::optional<CorrelationResult> corr_;
};

struct CheckResult {
    std::string name;
    std::string status;  ///< pass, fail or skip
    std::string detail;
    double seconds = 0.0;
};

std::vector<std::string> check_names();
/// Runs one named check; exceptions are reported as failures, never propagated.
CheckResult run_check(Experiment& e, const std::string& name);

std::string output_root(const Config& c);  ///< $TOWERLAB_OUT or run.out
std::string run_id(const Config& c);       ///< config hash + seed

/// Exit codes: 0 pass, 1 check failure, 2 configuration error, 3 internal abort.
int run_experiment(const Config& c, std::ostream& log, std::string* dir = nullptr);

int verify_suite(const Config& c, const std::string& only, std::ostream& report);
int sweep(const Config& c, const std::string& key, const std::vector<std::string>& values,
          std::ostream& log);

}  // namespace towerlab
