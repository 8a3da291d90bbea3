#include "towerlab/driving.hpp"

#include <cmath>
#include <string>

namespace towerlab {

double unit_from_bits(std::uint64_t bits) {
    return std::ldexp(static_cast<double>(bits >> 11), -53);
}

std::uint64_t mix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

DrivingSystem::DrivingSystem(const DrivingParams& p) : p_(p) {
    if (!(p.alpha_min > 1.0) || !(p.alpha_max >= p.alpha_min))
        throw std::invalid_argument("driver: need 1 < alpha_min <= alpha_max");
    if (p.kind == DriverKind::rotation) {
        if (!(p.angle > 0.0 && p.angle < 1.0))
            throw std::invalid_argument("driver: angle must lie in (0,1)");
        // Exact for any double in [2^-11, 1): those carry at most 64 fractional bits.
        step_ = static_cast<std::uint64_t>(std::ldexp(p.angle, 64));
    } else if (p.back_window < 0) {
        throw std::invalid_argument("driver: back_window must be >= 0");
    }
}

Omega DrivingSystem::from_coord(double x) const {
    Omega w;
    if (p_.kind == DriverKind::rotation) {
        if (!(x >= 0.0 && x < 1.0)) throw std::invalid_argument("driver: coordinate outside [0,1)");
        w.phase = static_cast<std::uint64_t>(std::ldexp(x, 64));
    }
    return w;
}

Omega DrivingSystem::orbit(Omega w, std::int64_t k) const {
    if (p_.kind == DriverKind::rotation) {
        // Wrapping unsigned arithmetic is the rotation mod 1, exactly invertible.
        w.phase += static_cast<std::uint64_t>(k) * step_;
        return w;
    }
    const std::int64_t target = w.pos + k;
    if (target < -p_.back_window)
        throw WindowExhausted("driver: backward orbit exceeds window of " +
                              std::to_string(p_.back_window) + " symbols");
    w.pos = target;
    return w;
}

double DrivingSystem::coord(Omega w) const {
    if (p_.kind == DriverKind::rotation) return unit_from_bits(w.phase);
    return unit_from_bits(mix64(p_.seed ^ mix64(static_cast<std::uint64_t>(w.pos))));
}

double DrivingSystem::alpha(Omega w) const {
    return p_.alpha_min + (p_.alpha_max - p_.alpha_min) * coord(w);
}

double DrivingSystem::visit_fraction(Omega w, const std::function<bool(Omega)>& flag,
                                     std::int64_t n, std::int64_t stride,
                                     std::int64_t offset) const {
    if (n < 1 || stride < 1 || offset < 0 || offset > stride)
        throw std::invalid_argument("visit_fraction: need n >= 1, M >= 1, 0 <= r <= M");
    std::int64_t hits = 0;
    for (std::int64_t k = 0; k < n; ++k)
        if (flag(orbit(w, stride * k + offset))) ++hits;
    return static_cast<double>(hits) / static_cast<double>(n);
}

}  // namespace towerlab
