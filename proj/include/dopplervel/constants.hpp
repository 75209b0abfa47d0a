#pragma once

namespace dopplervel {

// CODATA 2018, SI units.
inline constexpr double hbar = 1.054571817e-34;               // J s
inline constexpr double atomic_mass_unit = 1.66053906660e-27; // kg
inline constexpr double be9_mass_amu = 9.0121831;             // 9Be+ (electron mass neglected)

inline constexpr double pi = 3.14159265358979323846;
inline constexpr double two_pi = 2.0 * pi;

inline constexpr double yoctonewton = 1e-24; // N

} // namespace dopplervel
