#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "dopplervel/oscillator.hpp"

namespace dopplervel {

enum class Lineshape {
  lorentzian, // R0·(Γ/2)²/((δ − k·v)² + (Γ/2)²)
  linearized, // R(0)·(1 + s·k·v), s = 2δ/(δ² + (Γ/2)²); analytic cross-checks only
};

/// Doppler-velocimetry detection parameters. All rates are detected rates into the
/// collection solid angle; delta < 0 means the probe is red of the atomic line.
struct DetectionConfig {
  double base_rate = 0.0;  // R0, detected scatter rate at line center [photons/s]
  double detuning = 0.0;   // delta, laser minus atomic frequency [rad/s]
  double linewidth = 0.0;  // Gamma, atomic FWHM [rad/s]
  double k_detect = 0.0;   // detection-beam wavevector along the motion axis [rad/m]
  double gamma_damp = 0.0; // radiation-pressure decay of the velocity amplitude [1/s]
  double dead_time = 0.0;  // TAC arrival times below this are discarded [s]
  double window = 0.0;     // detection window T_det [s]
  double bin_width = 0.0;  // histogram bin [s]
  Lineshape lineshape = Lineshape::lorentzian;
};

struct ArrivalRecord {
  double arrival_time = 0.0;     // stop minus accepted start [s]
  std::int64_t repetition = 0;
};

/// Left-closed bins of width bin_width starting at `start`; values outside are dropped
/// before histogramming.
struct Histogram {
  double start = 0.0;
  double bin_width = 0.0;
  std::vector<double> counts;
  double center(std::size_t i) const { return start + (static_cast<double>(i) + 0.5) * bin_width; }
};

struct ExponentialFit {
  double amplitude = 0.0; // A in A·exp(-t/tau)
  double tau = 0.0;       // [s]
  std::vector<double> residuals; // counts - fit, per bin
};

/// Per-row background fit bookkeeping inside a ResidualGrid.
struct RowFit {
  double amplitude = 0.0;
  double tau = 0.0;
  bool ok = false;
};

/// Background-subtracted photon-arrival statistics over (drive frequency, TAC time bin).
struct ResidualGrid {
  std::vector<double> drive_frequencies; // [rad/s]
  std::vector<double> time_bins;         // bin centers [s]
  std::vector<double> residuals;         // row-major, rows × bins; NaN on flagged rows
  std::vector<double> counts;            // row-major raw histogram
  std::vector<RowFit> fit_params;
  DetectionConfig detection;
  int reps = 0;
  std::uint64_t seed = 0;

  std::size_t n_rows() const { return drive_frequencies.size(); }
  std::size_t n_bins() const { return time_bins.size(); }
  double residual_at(std::size_t row, std::size_t bin) const { return residuals[row * n_bins() + bin]; }
  double count_at(std::size_t row, std::size_t bin) const { return counts[row * n_bins() + bin]; }
};

void validate(const DetectionConfig& det);

/// Doppler-modulated fluorescence rate for a given instantaneous velocity [photons/s].
double scatter_rate(double velocity, const DetectionConfig& det);

/// First event of the inhomogeneous Poisson process with rate
/// λ(t) = scatter_rate(velocity_fn(t)·exp(-gamma_damp·t)), sampled by thinning against
/// sup λ = R0. Returns nothing when no photon lands inside [0, window]. Two engine
/// draws per candidate, so streams are bit-reproducible for a fixed seed.
std::optional<double> sample_first_photon(const std::function<double(double)>& velocity_fn,
                                          const DetectionConfig& det, std::mt19937_64& eng);
std::optional<double> sample_first_photon(const std::function<double(double)>& velocity_fn,
                                          const DetectionConfig& det, std::uint64_t seed);

/// TAC start/stop delay: photon_time minus the last start pulse at or before drive_end,
/// with start pulses at integer multiples of beat_period from the drive's phase origin.
double tac_gate(double beat_period, double drive_end, double photon_time);

Histogram make_histogram(std::span<const double> values, double start, double bin_width,
                         std::size_t n_bins);

/// Fit A·exp(-t/tau) to a histogram. Seeded by count-weighted least squares on
/// log-counts (empty bins skipped), then iteratively reweighted to the Poisson ML
/// solution, at which point the residuals sum to zero per the score equations.
/// Throws fit_error on all-zero input, fewer than 5 nonempty bins, or no convergence.
ExponentialFit fit_exponential_background(const Histogram& hist);

/// Monte Carlo sweep over drive frequencies: `reps` drive-synchronized first-photon
/// experiments per row, TAC-gated, dead-time cut, histogrammed and background-
/// subtracted. Row r uses engine seed mix_seed(seed, r); rows may run on `jobs`
/// threads with output identical to the serial order. Per-row fit failures flag the
/// row instead of aborting the sweep.
ResidualGrid run_sweep(std::span<const ModeParams> modes, const DriveConfig& drive_template,
                       const DetectionConfig& det, std::span<const double> freq_grid, int reps,
                       std::uint64_t seed, int jobs = 1);

} // namespace dopplervel
