#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "dopplervel/detection.hpp"
#include "dopplervel/oscillator.hpp"

namespace dopplervel {

/// Coherent and incoherent spectra over a drive-frequency grid.
struct SpectrumResult {
  std::vector<double> freq_grid;       // [rad/s]
  std::vector<double> rms_velocity;    // [m/s]
  std::vector<double> absorbed_energy; // Σ m_i v_i²/2 [J]
  std::vector<double> phase_trace_t0;  // arg of the coherent sum at detection start [rad]
  double window = 0.0;                 // RMS integration window T_det [s]
  double t_offset = 0.0;               // drive-end to detection-start delay [s]
};

struct PeakOptions {
  double min_prominence_frac = 0.01; // of the global maximum
  double min_height_frac = 0.0;      // of the global maximum
};

/// Two-mode discrimination criterion. The height floor keeps sinc sidelobe-
/// interference bumps (4–10% prominence) out of the main-peak count; the zig-zag
/// threshold is the minimum drive-frame slope magnitude, as a fraction of the
/// single-mode baseline t_d/2 + t_offset, for an interval to count as directed.
struct ResolvabilityCriterion {
  double min_prominence_frac = 0.01;
  double min_height_frac = 0.20;
  double zigzag_slope_tol = 0.10;
  int null_exclusion_steps = 2;
};

struct ResolvabilityReport {
  double mode_spacing = 0.0; // Delta [rad/s]
  int peak_count_coherent = 0;
  int peak_count_incoherent = 0;
  double trough_depth_coherent = 0.0;   // 1 - min-between-peaks / mean-peak, in [0, 1]
  double trough_depth_incoherent = 0.0;
  bool distinguishable = false;
  std::string criterion; // human-readable statement of the rule applied
};

/// Resonance-fit output of extract_force. Covariance entries are
/// {var(F), var(omega_z), cov(F, omega_z)} from the chi² curvature at the optimum.
struct ForceFit {
  double force = 0.0;   // [N]
  double omega_z = 0.0; // [rad/s]
  double chi2 = 0.0;
  bool converged = false;
  std::array<double, 3> covariance{0.0, 0.0, 0.0};
  int rows_used = 0;
  std::vector<double> row_velocity; // per-row |v| estimate [m/s] (diagnostic)
  std::vector<double> row_phase;    // per-row demodulated band phase [rad] (diagnostic)
};

/// Time-averaged RMS of the coherent velocity sum over [0, T_det] per grid frequency,
/// in the closed form Σ v_i²/2 + Σ_{i<j} v_i v_j cos(Δω T/2 + Δθ) sinc(Δω T/2); the
/// terms oscillating at optical-mode frequencies (down by ~1/(ω T)) are averaged out.
SpectrumResult rms_spectrum(std::span<const ModeParams> modes, const DriveConfig& drive_template,
                            std::span<const double> freq_grid, double window, double t_offset = 0.0);

/// Phase-discarding energy absorption Σ m_i v_i²/2 per grid frequency [J].
std::vector<double> energy_spectrum(std::span<const ModeParams> modes,
                                    const DriveConfig& drive_template,
                                    std::span<const double> freq_grid);

/// rms_spectrum per drive-end-to-detection offset.
std::vector<SpectrumResult> offset_scan(std::span<const ModeParams> modes,
                                        const DriveConfig& drive_template,
                                        std::span<const double> offsets,
                                        std::span<const double> freq_grid, double window);

/// Can a pair of modes be told apart from a single resonance? Counts main peaks of
/// both spectra and falls back to drive-frame phase zig-zag detection.
ResolvabilityReport resolvability(std::span<const ModeParams> modes,
                                  const DriveConfig& drive_template,
                                  std::span<const double> freq_grid, double window,
                                  const ResolvabilityCriterion& criterion = {});

/// Recover the drive force (and resonance frequency) from Monte Carlo sweep data by
/// demodulating each residual row at the mode frequency and fitting the driven-
/// oscillator response in the quadrature plane, using the predicted per-row phase.
ForceFit extract_force(const ResidualGrid& grid, const ModeParams& mode_guess,
                       const DriveConfig& drive_template);

/// Same fit against a noise-free spectrum (amplitude = rms·sqrt(2)).
ForceFit extract_force(const SpectrumResult& spectrum, const ModeParams& mode_guess,
                       const DriveConfig& drive_template);

/// Drive detunings where the excitation closes on itself: omega_z ± 2πn/t_d,
/// n = 1..n_max, sorted ascending.
std::vector<double> sidelobe_nulls(const ModeParams& mode, const DriveConfig& drive_template,
                                   int n_max);

/// FWHM of the velocity-amplitude resonance |v(omega_d)| [rad/s].
double amplitude_fwhm(const ModeParams& mode, const DriveConfig& drive_template);

/// Local maxima (plateau: leftmost index) passing prominence and height floors.
std::vector<std::size_t> find_peaks(std::span<const double> values, const PeakOptions& opts = {});

/// Cumulative 2π-unwrap.
std::vector<double> unwrap_phase(std::span<const double> wrapped);

/// Drive-frame zig-zag test on a raw phase trace: after removing the drive's
/// accumulated phase ramp omega_d·(t_d + t_offset), a single mode evolves strictly
/// monotonically; at least two sign changes of the discrete derivative (outside
/// sidelobe-null neighborhoods) flag interfering modes.
bool phase_zigzag(std::span<const double> freq_grid, std::span<const double> phase_trace,
                  std::span<const ModeParams> modes, const DriveConfig& drive_template,
                  double t_offset = 0.0, const ResolvabilityCriterion& criterion = {});

} // namespace dopplervel
