#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "towerlab/driving.hpp"
#include "towerlab/schedule.hpp"
#include "towerlab/tower.hpp"

namespace towerlab {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct UlamConfig {
    double defect_budget = 1e-3;
    int pullback_max = 300;
    double density_tol = 1e-10;
    int cesaro_length = 4000;
};

struct ConeConfig {
    double alpha = 0.5, alpha_prime = 1.5;
    double kappa = 0.0;  ///< 0: min(1/2, 0.9 e^{-theta'})
    int depth = 16;
    int horizon = 80;
    int k_max = 16;
    int c_horizon = 60;  ///< n range for sup |P^n 1|
};

struct ScheduleConfig {
    ScheduleParams params;
    int q1_samples = 100;
    int sample_stride = 3;
    int horizon_factor = 100;
};

struct CorrelateConfig {
    int n_max = 40;
    long mc_samples = 1000000;
    int mc_batches = 32;
    int fit_lo = 5, fit_hi = 40;
    std::string phi = "inverse_level";
    std::string psi = "base_indicator";
};

struct RunConfig {
    std::uint64_t seed = 1;
    int fibers = 20;  ///< sampled orbit points for sup estimates
    int fiber_stride = 7;
    int workers = 1;
    int tail_depth = 32;
    std::string out = "runs";
};

struct Config {
    DrivingParams driver;
    FiberSetup fiber;
    TowerParams tower;
    UlamConfig ulam;
    ConeConfig cones;
    ScheduleConfig schedule;
    CorrelateConfig correlate;
    RunConfig run;
};

/// Parses the flat key = value format. Unknown keys and malformed values throw ConfigError.
Config parse_config(const std::string& text);
Config load_config(const std::string& path);

/// Sets a single dotted key; throws ConfigError for unknown keys.
void set_config_value(Config& c, const std::string& key, const std::string& value);

/// Every key with its effective value, sorted by key.
std::vector<std::pair<std::string, std::string>> config_entries(const Config& c);
std::string canonical_text(const Config& c);

/// Range checks that do not need any computation.
void validate_config(const Config& c);

/// FNV-1a 64.
std::uint64_t fnv1a64(const std::string& s);

}  // namespace towerlab
