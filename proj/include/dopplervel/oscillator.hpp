#pragma once

#include <span>
#include <vector>

namespace dopplervel {

/// One motional mode of the crystal. `weight` is the fraction of the drive force
/// coupled into this mode (two-mode superpositions split the force between modes).
struct ModeParams {
  double omega_z = 0.0; // resonant angular frequency [rad/s]
  double mass = 0.0;    // [kg]
  double weight = 1.0;  // dimensionless, in [0, 1]
};

/// Pulsed drive F_d·sin(omega_d·t + psi) applied for duration t_d.
struct DriveConfig {
  double force = 0.0;   // F_d [N]
  double omega_d = 0.0; // [rad/s]
  double psi = 0.0;     // drive phase [rad]
  double t_d = 0.0;     // drive duration [s]
};

/// Steady-state velocity response at the end of the drive pulse:
/// zdot(t) = amplitude · sin(omega_z·t + phase) for t past t_d.
struct VelocityResponse {
  double amplitude = 0.0;      // |v| [m/s]
  double phase = 0.0;          // [rad]
  bool within_validity = true; // |omega_d - omega_z| <= 5% of omega_z
};

struct LambDickeInputs {
  double mass = 0.0;       // [kg]
  double omega_z = 0.0;    // [rad/s]
  double wavevector = 0.0; // k of the composite two-color field [rad/m]
  double half_angle = 0.0; // beam half-crossing angle theta [rad]
  double nbar = 0.0;       // mean thermal phonon occupation, >= 0
};

struct TrajectorySample {
  double t = 0.0;        // [s]
  double position = 0.0; // [m]
  double velocity = 0.0; // [m/s]
};

void validate(const ModeParams& mode);
void validate(const DriveConfig& drive);

/// sin(x)/x with a series fallback near zero; exact 1 at x = 0.
double sinc(double x);

/// True when the near-resonance expansion is trustworthy (5% fractional detuning).
bool detuning_within_validity(const ModeParams& mode, const DriveConfig& drive);

/// Signed steady-state velocity amplitude. The sign alternates with sidelobe parity
/// and is what coherent multi-mode sums must use; it is positive on the central lobe
/// and continuous through resonance, where it equals weight·F_d·t_d/(2m).
double signed_velocity_amplitude(const ModeParams& mode, const DriveConfig& drive);

/// Magnitude of the steady-state velocity amplitude [m/s].
double velocity_amplitude(const ModeParams& mode, const DriveConfig& drive);

/// Oscillation phase accumulated over the drive: (omega_d - omega_z)·t_d/2 [rad].
double oscillation_phase(const ModeParams& mode, const DriveConfig& drive);

/// Amplitude, phase and validity flag in one call.
VelocityResponse velocity_response(const ModeParams& mode, const DriveConfig& drive);

/// Closed-form position during the drive (zero initial conditions), valid near
/// resonance. t is measured from drive start, 0 <= t <= t_d.
double trajectory(const ModeParams& mode, const DriveConfig& drive, double t);

/// Largest integration step ode_oracle accepts: 2π/(50·max(omega_z, omega_d)).
double max_oracle_step(const ModeParams& mode, const DriveConfig& drive);

/// Integration step giving ~1e-9 relative accuracy over millisecond drives.
double default_oracle_step(const ModeParams& mode, const DriveConfig& drive);

/// Brute-force RK4 integration of m(z̈ + omega_z²·z) = weight·F_d·sin(omega_d·t + psi)
/// from z(0) = ż(0) = 0. Independent check of the closed forms above.
std::vector<TrajectorySample> ode_oracle(const ModeParams& mode, const DriveConfig& drive,
                                         double t_end, double dt);

/// Coherent velocity of a mode superposition during detection. t = 0 is detection
/// start; the drive ran over [-t_d - t_offset, -t_offset], so each mode arrives with
/// accumulated phase omega_z,i·(t_d + t_offset) + phi_i (+ psi).
double multimode_velocity(std::span<const ModeParams> modes, const DriveConfig& drive,
                          double t, double t_offset = 0.0);

/// Lamb-Dicke parameter sqrt(ħ/(2·m·omega_z)) · 2k·sin(theta) · sqrt(nbar + 1).
double lamb_dicke(const LambDickeInputs& in);

} // namespace dopplervel
