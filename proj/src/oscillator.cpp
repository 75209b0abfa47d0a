#include "dopplervel/oscillator.hpp"

#include <cmath>
#include <stdexcept>

#include "dopplervel/constants.hpp"

namespace dopplervel {

namespace {

void require_finite(double x, const char* name) {
  if (!std::isfinite(x)) throw std::invalid_argument(std::string(name) + " must be finite");
}

} // namespace

void validate(const ModeParams& mode) {
  require_finite(mode.omega_z, "mode.omega_z");
  require_finite(mode.mass, "mode.mass");
  require_finite(mode.weight, "mode.weight");
  if (mode.omega_z <= 0.0) throw std::invalid_argument("mode.omega_z must be > 0");
  if (mode.mass <= 0.0) throw std::invalid_argument("mode.mass must be > 0");
  if (mode.weight < 0.0 || mode.weight > 1.0)
    throw std::invalid_argument("mode.weight must be in [0, 1]");
}

void validate(const DriveConfig& drive) {
  require_finite(drive.force, "drive.force");
  require_finite(drive.omega_d, "drive.omega_d");
  require_finite(drive.psi, "drive.psi");
  require_finite(drive.t_d, "drive.t_d");
  if (drive.force < 0.0) throw std::invalid_argument("drive.force must be >= 0");
  if (drive.omega_d <= 0.0) throw std::invalid_argument("drive.omega_d must be > 0");
  if (drive.t_d <= 0.0) throw std::invalid_argument("drive.t_d must be > 0");
}

double sinc(double x) {
  if (std::abs(x) < 1e-8) return 1.0 - x * x / 6.0;
  return std::sin(x) / x;
}

bool detuning_within_validity(const ModeParams& mode, const DriveConfig& drive) {
  return std::abs(drive.omega_d - mode.omega_z) <= 0.05 * mode.omega_z;
}

// v = w · 2 F ω_d / (m (ω_z² − ω_d²)) · sin((ω_z − ω_d) t_d / 2), written with the
// singular factor pulled into a sinc so the expression is exact through resonance:
// v = w · 2 F ω_d / (m (ω_z + ω_d)) · (t_d/2) · sinc(δ t_d / 2),  δ = ω_z − ω_d.
double signed_velocity_amplitude(const ModeParams& mode, const DriveConfig& drive) {
  validate(mode);
  validate(drive);
  const double delta = mode.omega_z - drive.omega_d;
  const double x = 0.5 * delta * drive.t_d;
  return mode.weight * (2.0 * drive.force * drive.omega_d) /
         (mode.mass * (mode.omega_z + drive.omega_d)) * (0.5 * drive.t_d) * sinc(x);
}

double velocity_amplitude(const ModeParams& mode, const DriveConfig& drive) {
  return std::abs(signed_velocity_amplitude(mode, drive));
}

double oscillation_phase(const ModeParams& mode, const DriveConfig& drive) {
  validate(mode);
  validate(drive);
  return 0.5 * (drive.omega_d - mode.omega_z) * drive.t_d;
}

VelocityResponse velocity_response(const ModeParams& mode, const DriveConfig& drive) {
  VelocityResponse r;
  r.amplitude = velocity_amplitude(mode, drive);
  r.phase = oscillation_phase(mode, drive);
  r.within_validity = detuning_within_validity(mode, drive);
  return r;
}

// z(t) = 2F/(m(ω_z²−ω_d²)) · sin(½(ω_d−ω_z)t) · cos(ω_z t + ½(ω_d−ω_z)t + ψ), scaled
// by the mode weight. Same sinc rewrite as above; the approximation drops terms of
// relative order (ω_z−ω_d)/ω_z.
double trajectory(const ModeParams& mode, const DriveConfig& drive, double t) {
  validate(mode);
  validate(drive);
  require_finite(t, "t");
  if (t < 0.0) throw std::invalid_argument("t must be >= 0");
  const double delta = mode.omega_z - drive.omega_d;
  const double x = 0.5 * delta * t;
  const double envelope = -mode.weight * (2.0 * drive.force) /
                          (mode.mass * (mode.omega_z + drive.omega_d)) * (0.5 * t) * sinc(x);
  return envelope * std::cos(mode.omega_z * t - x + drive.psi);
}

double max_oracle_step(const ModeParams& mode, const DriveConfig& drive) {
  return two_pi / (50.0 * std::max(mode.omega_z, drive.omega_d));
}

double default_oracle_step(const ModeParams& mode, const DriveConfig& drive) {
  return two_pi / (2500.0 * std::max(mode.omega_z, drive.omega_d));
}

std::vector<TrajectorySample> ode_oracle(const ModeParams& mode, const DriveConfig& drive,
                                         double t_end, double dt) {
  validate(mode);
  validate(drive);
  require_finite(t_end, "t_end");
  require_finite(dt, "dt");
  if (t_end <= 0.0) throw std::invalid_argument("t_end must be > 0");
  if (dt <= 0.0) throw std::invalid_argument("dt must be > 0");
  if (dt > max_oracle_step(mode, drive))
    throw std::invalid_argument("dt too large to resolve the oscillation (need <= 2*pi/(50*max(omega_z, omega_d)))");

  const double w2 = mode.omega_z * mode.omega_z;
  const double f_over_m = mode.weight * drive.force / mode.mass;
  auto accel = [&](double t, double z) {
    return f_over_m * std::sin(drive.omega_d * t + drive.psi) - w2 * z;
  };

  const auto n_steps = static_cast<std::size_t>(std::ceil(t_end / dt - 1e-12));
  std::vector<TrajectorySample> out;
  out.reserve(n_steps + 1);
  double t = 0.0, z = 0.0, v = 0.0;
  out.push_back({t, z, v});
  for (std::size_t i = 0; i < n_steps; ++i) {
    const double h = std::min(dt, t_end - t);
    const double k1z = v;
    const double k1v = accel(t, z);
    const double k2z = v + 0.5 * h * k1v;
    const double k2v = accel(t + 0.5 * h, z + 0.5 * h * k1z);
    const double k3z = v + 0.5 * h * k2v;
    const double k3v = accel(t + 0.5 * h, z + 0.5 * h * k2z);
    const double k4z = v + h * k3v;
    const double k4v = accel(t + h, z + h * k3z);
    z += h / 6.0 * (k1z + 2.0 * k2z + 2.0 * k3z + k4z);
    v += h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
    t = (i + 1 == n_steps) ? t_end : t + h;
    out.push_back({t, z, v});
  }
  return out;
}

double multimode_velocity(std::span<const ModeParams> modes, const DriveConfig& drive,
                          double t, double t_offset) {
  if (modes.empty()) throw std::invalid_argument("modes must be nonempty");
  require_finite(t, "t");
  require_finite(t_offset, "t_offset");
  if (t < 0.0) throw std::invalid_argument("t must be >= 0");
  if (t_offset < 0.0) throw std::invalid_argument("t_offset must be >= 0");
  double sum = 0.0;
  for (const ModeParams& mode : modes) {
    const double v = signed_velocity_amplitude(mode, drive);
    const double phi = oscillation_phase(mode, drive);
    sum += v * std::sin(mode.omega_z * (t + t_offset + drive.t_d) + phi + drive.psi);
  }
  return sum;
}

double lamb_dicke(const LambDickeInputs& in) {
  require_finite(in.mass, "mass");
  require_finite(in.omega_z, "omega_z");
  require_finite(in.wavevector, "wavevector");
  require_finite(in.half_angle, "half_angle");
  require_finite(in.nbar, "nbar");
  if (in.mass <= 0.0) throw std::invalid_argument("mass must be > 0");
  if (in.omega_z <= 0.0) throw std::invalid_argument("omega_z must be > 0");
  if (in.wavevector <= 0.0) throw std::invalid_argument("wavevector must be > 0");
  if (in.half_angle < 0.0) throw std::invalid_argument("half_angle must be >= 0");
  if (in.nbar < 0.0) throw std::invalid_argument("nbar must be >= 0");
  return std::sqrt(hbar / (2.0 * in.mass * in.omega_z)) * 2.0 * in.wavevector *
         std::sin(in.half_angle) * std::sqrt(in.nbar + 1.0);
}

} // namespace dopplervel
