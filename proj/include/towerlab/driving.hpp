#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>

namespace towerlab {

enum class DriverKind { rotation, bernoulli_shift };

/// A point of the driving space. Rotation states use `phase` (a 64-bit
/// fixed-point angle), shift states use `pos` (index into the symbol stream).
struct Omega {
    std::uint64_t phase = 0;
    std::int64_t pos = 0;
    bool operator==(const Omega&) const = default;
};

struct DrivingParams {
    DriverKind kind = DriverKind::rotation;
    double angle = 0.6180339887498949;
    std::uint64_t seed = 1;
    double alpha_min = 1.2;
    double alpha_max = 1.6;
    std::int64_t back_window = 65536;
};

/// Raised when a shift orbit walks further back than the stored window allows.
struct WindowExhausted : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Invertible ergodic base map sigma with parameter map omega -> alpha(omega).
/// Immutable; every query is a pure function of (params, omega, k).
class DrivingSystem {
public:
    explicit DrivingSystem(const DrivingParams& p);

    const DrivingParams& params() const { return p_; }

    /// Rotation state at coordinate x in [0,1); for the shift, position 0.
    Omega from_coord(double x) const;
    Omega origin() const { return from_coord(0.0); }

    /// sigma^k omega, k of either sign.
    Omega orbit(Omega w, std::int64_t k) const;

    /// Rotation coordinate, or the uniformized current symbol for the shift.
    double coord(Omega w) const;

    double alpha(Omega w) const;

    /// (1/n) sum_{k<n} flag(sigma^{M k + r} omega).
    double visit_fraction(Omega w, const std::function<bool(Omega)>& flag,
                          std::int64_t n, std::int64_t stride, std::int64_t offset) const;

private:
    DrivingParams p_;
    std::uint64_t step_ = 0;
};

/// Uniform double in [0,1) from the top 53 bits.
double unit_from_bits(std::uint64_t bits);

/// SplitMix64 finalizer; also used to derive independent RNG stream seeds.
std::uint64_t mix64(std::uint64_t x);

}  // namespace towerlab
