#include "dopplervel/detection.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <thread>

#include "dopplervel/constants.hpp"
#include "dopplervel/errors.hpp"
#include "dopplervel/rng.hpp"

namespace dopplervel {

void validate(const DetectionConfig& det) {
  auto finite = [](double x, const char* name) {
    if (!std::isfinite(x)) throw std::invalid_argument(std::string(name) + " must be finite");
  };
  finite(det.base_rate, "detection.base_rate");
  finite(det.detuning, "detection.detuning");
  finite(det.linewidth, "detection.linewidth");
  finite(det.k_detect, "detection.k_detect");
  finite(det.gamma_damp, "detection.gamma_damp");
  finite(det.dead_time, "detection.dead_time");
  finite(det.window, "detection.window");
  finite(det.bin_width, "detection.bin_width");
  if (det.base_rate <= 0.0) throw std::invalid_argument("detection.base_rate must be > 0");
  if (det.linewidth <= 0.0) throw std::invalid_argument("detection.linewidth must be > 0");
  if (det.gamma_damp < 0.0) throw std::invalid_argument("detection.gamma_damp must be >= 0");
  if (det.dead_time < 0.0) throw std::invalid_argument("detection.dead_time must be >= 0");
  if (det.window <= 0.0) throw std::invalid_argument("detection.window must be > 0");
  if (det.bin_width <= 0.0) throw std::invalid_argument("detection.bin_width must be > 0");
  if (det.bin_width >= det.window)
    throw std::invalid_argument("detection.bin_width must be < detection.window");
}

double scatter_rate(double velocity, const DetectionConfig& det) {
  const double half = 0.5 * det.linewidth;
  const double q0 = det.detuning * det.detuning + half * half;
  if (det.lineshape == Lineshape::linearized) {
    const double r0 = det.base_rate * half * half / q0;
    const double slope = 2.0 * det.detuning / q0; // d(ln R)/d(k v) at v = 0
    const double r = r0 * (1.0 + slope * det.k_detect * velocity);
    return std::clamp(r, 0.0, det.base_rate);
  }
  const double q = det.detuning - det.k_detect * velocity;
  return det.base_rate * half * half / (q * q + half * half);
}

std::optional<double> sample_first_photon(const std::function<double(double)>& velocity_fn,
                                          const DetectionConfig& det, std::mt19937_64& eng) {
  validate(det);
  double t = 0.0;
  for (;;) {
    t += exponential_sample(eng, det.base_rate);
    if (t > det.window) return std::nullopt;
    const double v = velocity_fn(t) * std::exp(-det.gamma_damp * t);
    const double accept = scatter_rate(v, det) / det.base_rate;
    if (uniform_open(eng) <= accept) return t;
  }
}

std::optional<double> sample_first_photon(const std::function<double(double)>& velocity_fn,
                                          const DetectionConfig& det, std::uint64_t seed) {
  std::mt19937_64 eng(seed);
  return sample_first_photon(velocity_fn, det, eng);
}

double tac_gate(double beat_period, double drive_end, double photon_time) {
  if (!std::isfinite(beat_period) || beat_period <= 0.0)
    throw std::invalid_argument("beat_period must be > 0");
  if (!std::isfinite(drive_end) || drive_end < 0.0)
    throw std::invalid_argument("drive_end must be >= 0");
  if (!std::isfinite(photon_time) || photon_time <= drive_end)
    throw std::invalid_argument("photon_time must be later than drive_end");
  double last_start = std::floor(drive_end / beat_period) * beat_period;
  if (last_start > drive_end) last_start -= beat_period; // rounding guard
  return photon_time - last_start;
}

Histogram make_histogram(std::span<const double> values, double start, double bin_width,
                         std::size_t n_bins) {
  if (bin_width <= 0.0) throw std::invalid_argument("bin_width must be > 0");
  if (n_bins == 0) throw std::invalid_argument("n_bins must be > 0");
  Histogram h{start, bin_width, std::vector<double>(n_bins, 0.0)};
  for (double v : values) {
    if (v < start) continue;
    const auto idx = static_cast<std::size_t>((v - start) / bin_width);
    if (idx < n_bins) h.counts[idx] += 1.0;
  }
  return h;
}

ExponentialFit fit_exponential_background(const Histogram& hist) {
  const std::size_t n = hist.counts.size();
  std::size_t nonempty = 0;
  double total = 0.0;
  for (double c : hist.counts) {
    if (c > 0.0) ++nonempty;
    total += c;
  }
  if (total <= 0.0) throw fit_error("exponential fit: histogram is empty");
  if (nonempty < 5) throw fit_error("exponential fit: fewer than 5 nonempty bins");

  // Scale time to O(1) for conditioning: model log f = b0 + b1*u, u = (t - t0)/s.
  const double t0 = hist.center(0);
  const double scale = std::max(hist.center(n - 1) - t0, hist.bin_width);
  auto u_of = [&](std::size_t i) { return (hist.center(i) - t0) / scale; };

  // Initializer: least squares on log-counts, weights = counts, empty bins skipped.
  double s00 = 0, s01 = 0, s11 = 0, r0 = 0, r1 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double c = hist.counts[i];
    if (c <= 0.0) continue;
    const double u = u_of(i), y = std::log(c);
    s00 += c;
    s01 += c * u;
    s11 += c * u * u;
    r0 += c * y;
    r1 += c * u * y;
  }
  double det2 = s00 * s11 - s01 * s01;
  if (std::abs(det2) < 1e-300) throw fit_error("exponential fit: degenerate design");
  double b0 = (s11 * r0 - s01 * r1) / det2;
  double b1 = (s00 * r1 - s01 * r0) / det2;

  // Fisher scoring to the Poisson ML solution (IRLS with weights = fitted counts).
  bool converged = false;
  for (int iter = 0; iter < 60; ++iter) {
    s00 = s01 = s11 = r0 = r1 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double u = u_of(i);
      const double eta = b0 + b1 * u;
      if (eta > 700.0) throw fit_error("exponential fit: diverged");
      const double f = std::exp(eta);
      const double z = eta + (hist.counts[i] - f) / f;
      s00 += f;
      s01 += f * u;
      s11 += f * u * u;
      r0 += f * z;
      r1 += f * u * z;
    }
    det2 = s00 * s11 - s01 * s01;
    if (std::abs(det2) < 1e-300) throw fit_error("exponential fit: degenerate design");
    const double nb0 = (s11 * r0 - s01 * r1) / det2;
    const double nb1 = (s00 * r1 - s01 * r0) / det2;
    const double step = std::max(std::abs(nb0 - b0), std::abs(nb1 - b1));
    b0 = nb0;
    b1 = nb1;
    if (step < 1e-12) {
      converged = true;
      break;
    }
  }
  if (!converged) throw fit_error("exponential fit: no convergence after 60 iterations");

  ExponentialFit fit;
  fit.tau = -scale / b1;
  fit.amplitude = std::exp(b0 - b1 * t0 / scale);
  fit.residuals.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    fit.residuals[i] = hist.counts[i] - std::exp(b0 + b1 * u_of(i));
  return fit;
}

namespace {

void sweep_row(std::span<const ModeParams> modes, DriveConfig drive, const DetectionConfig& det,
               double omega_d, int reps, std::uint64_t row_seed, std::size_t n_bins,
               ResidualGrid& grid, std::size_t row) {
  drive.omega_d = omega_d;
  const double beat_period = two_pi / omega_d;
  auto velocity_fn = [&](double t) { return multimode_velocity(modes, drive, t, 0.0); };

  std::mt19937_64 eng(row_seed);
  std::vector<double> arrivals;
  arrivals.reserve(static_cast<std::size_t>(reps));
  for (int rep = 0; rep < reps; ++rep) {
    const auto t_det = sample_first_photon(velocity_fn, det, eng);
    if (!t_det) continue;
    // Photon absolute time counts from drive start; detection begins at drive end.
    arrivals.push_back(tac_gate(beat_period, drive.t_d, drive.t_d + *t_det));
  }

  Histogram hist = make_histogram(arrivals, det.dead_time, det.bin_width, n_bins);
  double* res_row = grid.residuals.data() + row * n_bins;
  double* cnt_row = grid.counts.data() + row * n_bins;
  std::copy(hist.counts.begin(), hist.counts.end(), cnt_row);
  try {
    ExponentialFit fit = fit_exponential_background(hist);
    std::copy(fit.residuals.begin(), fit.residuals.end(), res_row);
    grid.fit_params[row] = {fit.amplitude, fit.tau, true};
  } catch (const fit_error&) {
    std::fill(res_row, res_row + n_bins, std::numeric_limits<double>::quiet_NaN());
    grid.fit_params[row] = {0.0, 0.0, false};
  }
}

} // namespace

ResidualGrid run_sweep(std::span<const ModeParams> modes, const DriveConfig& drive_template,
                       const DetectionConfig& det, std::span<const double> freq_grid, int reps,
                       std::uint64_t seed, int jobs) {
  if (modes.empty()) throw std::invalid_argument("modes must be nonempty");
  for (const auto& m : modes) validate(m);
  validate(drive_template);
  validate(det);
  if (freq_grid.empty()) throw std::invalid_argument("freq_grid must be nonempty");
  if (reps < 1) throw std::invalid_argument("reps must be >= 1");
  if (jobs < 1) throw std::invalid_argument("jobs must be >= 1");
  if (det.dead_time >= det.window)
    throw std::invalid_argument("detection.dead_time must be < detection.window");

  const auto n_bins = static_cast<std::size_t>(std::floor((det.window - det.dead_time) / det.bin_width));
  if (n_bins == 0) throw std::invalid_argument("detection window leaves no histogram bins");

  ResidualGrid grid;
  grid.drive_frequencies.assign(freq_grid.begin(), freq_grid.end());
  grid.time_bins.resize(n_bins);
  for (std::size_t b = 0; b < n_bins; ++b)
    grid.time_bins[b] = det.dead_time + (static_cast<double>(b) + 0.5) * det.bin_width;
  grid.residuals.assign(freq_grid.size() * n_bins, 0.0);
  grid.counts.assign(freq_grid.size() * n_bins, 0.0);
  grid.fit_params.resize(freq_grid.size());
  grid.detection = det;
  grid.reps = reps;
  grid.seed = seed;

  const std::size_t n_rows = freq_grid.size();
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t r = begin; r < end; ++r)
      sweep_row(modes, drive_template, det, freq_grid[r], reps, mix_seed(seed, r), n_bins, grid, r);
  };

  const auto n_threads = std::min<std::size_t>(static_cast<std::size_t>(jobs), n_rows);
  if (n_threads <= 1) {
    work(0, n_rows);
  } else {
    std::vector<std::thread> pool;
    pool.reserve(n_threads);
    const std::size_t chunk = (n_rows + n_threads - 1) / n_threads;
    for (std::size_t k = 0; k < n_threads; ++k) {
      const std::size_t begin = k * chunk;
      const std::size_t end = std::min(begin + chunk, n_rows);
      if (begin < end) pool.emplace_back(work, begin, end);
    }
    for (auto& th : pool) th.join();
  }
  return grid;
}

} // namespace dopplervel
