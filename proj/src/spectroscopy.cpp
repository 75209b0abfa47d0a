#include "dopplervel/spectroscopy.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <stdexcept>

#include "dopplervel/constants.hpp"
#include "dopplervel/errors.hpp"

namespace dopplervel {

namespace {

struct ModeTerm {
  double omega = 0.0;
  double v = 0.0;     // signed amplitude
  double theta = 0.0; // total phase at detection start
};

std::vector<ModeTerm> mode_terms(std::span<const ModeParams> modes, const DriveConfig& drive,
                                 double t_offset) {
  std::vector<ModeTerm> terms(modes.size());
  for (std::size_t i = 0; i < modes.size(); ++i) {
    terms[i].omega = modes[i].omega_z;
    terms[i].v = signed_velocity_amplitude(modes[i], drive);
    terms[i].theta = modes[i].omega_z * (t_offset + drive.t_d) +
                     oscillation_phase(modes[i], drive) + drive.psi;
  }
  return terms;
}

double mean_square_velocity(const std::vector<ModeTerm>& terms, double window) {
  double ms = 0.0;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    ms += 0.5 * terms[i].v * terms[i].v;
    for (std::size_t j = i + 1; j < terms.size(); ++j) {
      const double dw = terms[i].omega - terms[j].omega;
      const double dth = terms[i].theta - terms[j].theta;
      ms += terms[i].v * terms[j].v * std::cos(0.5 * dw * window + dth) * sinc(0.5 * dw * window);
    }
  }
  return ms;
}

void check_spectrum_args(std::span<const ModeParams> modes, const DriveConfig& drive,
                         std::span<const double> freq_grid, double window) {
  if (modes.empty()) throw std::invalid_argument("modes must be nonempty");
  for (const auto& m : modes) validate(m);
  validate(drive);
  if (freq_grid.empty()) throw std::invalid_argument("freq_grid must be nonempty");
  if (!(window > 0.0)) throw std::invalid_argument("window must be > 0");
}

} // namespace

SpectrumResult rms_spectrum(std::span<const ModeParams> modes, const DriveConfig& drive_template,
                            std::span<const double> freq_grid, double window, double t_offset) {
  check_spectrum_args(modes, drive_template, freq_grid, window);
  if (t_offset < 0.0) throw std::invalid_argument("t_offset must be >= 0");

  SpectrumResult out;
  out.freq_grid.assign(freq_grid.begin(), freq_grid.end());
  out.window = window;
  out.t_offset = t_offset;
  out.rms_velocity.reserve(freq_grid.size());
  out.absorbed_energy.reserve(freq_grid.size());
  out.phase_trace_t0.reserve(freq_grid.size());

  DriveConfig drive = drive_template;
  for (double omega_d : freq_grid) {
    drive.omega_d = omega_d;
    const auto terms = mode_terms(modes, drive, t_offset);
    out.rms_velocity.push_back(std::sqrt(std::max(mean_square_velocity(terms, window), 0.0)));
    double energy = 0.0;
    std::complex<double> z{0.0, 0.0};
    for (std::size_t i = 0; i < terms.size(); ++i) {
      energy += 0.5 * modes[i].mass * terms[i].v * terms[i].v;
      z += terms[i].v * std::exp(std::complex<double>(0.0, terms[i].theta));
    }
    out.absorbed_energy.push_back(energy);
    out.phase_trace_t0.push_back(std::arg(z));
  }
  return out;
}

std::vector<double> energy_spectrum(std::span<const ModeParams> modes,
                                    const DriveConfig& drive_template,
                                    std::span<const double> freq_grid) {
  if (modes.empty()) throw std::invalid_argument("modes must be nonempty");
  for (const auto& m : modes) validate(m);
  validate(drive_template);
  if (freq_grid.empty()) throw std::invalid_argument("freq_grid must be nonempty");

  std::vector<double> energy;
  energy.reserve(freq_grid.size());
  DriveConfig drive = drive_template;
  for (double omega_d : freq_grid) {
    drive.omega_d = omega_d;
    double e = 0.0;
    for (const auto& mode : modes) {
      const double v = signed_velocity_amplitude(mode, drive);
      e += 0.5 * mode.mass * v * v;
    }
    energy.push_back(e);
  }
  return energy;
}

std::vector<SpectrumResult> offset_scan(std::span<const ModeParams> modes,
                                        const DriveConfig& drive_template,
                                        std::span<const double> offsets,
                                        std::span<const double> freq_grid, double window) {
  if (offsets.empty()) throw std::invalid_argument("offsets must be nonempty");
  std::vector<SpectrumResult> out;
  out.reserve(offsets.size());
  for (double off : offsets)
    out.push_back(rms_spectrum(modes, drive_template, freq_grid, window, off));
  return out;
}

std::vector<std::size_t> find_peaks(std::span<const double> values, const PeakOptions& opts) {
  const std::size_t n = values.size();
  std::vector<std::size_t> peaks;
  if (n < 3) return peaks;
  const double vmax = *std::max_element(values.begin(), values.end());

  // Candidate local maxima; a plateau counts once, at its leftmost index.
  std::vector<std::size_t> candidates;
  std::size_t i = 1;
  while (i + 1 <= n - 1) {
    if (values[i] > values[i - 1]) {
      std::size_t j = i;
      while (j + 1 < n && values[j + 1] == values[i]) ++j;
      if (j + 1 < n && values[j + 1] < values[i]) candidates.push_back(i);
      i = j + 1;
    } else {
      ++i;
    }
  }

  for (std::size_t p : candidates) {
    // Topographic prominence: drop to the highest saddle toward higher ground.
    auto saddle = [&](bool left) -> std::optional<double> {
      double lowest = values[p];
      if (left) {
        for (std::size_t k = p; k-- > 0;) {
          lowest = std::min(lowest, values[k]);
          if (values[k] > values[p]) return lowest;
        }
      } else {
        for (std::size_t k = p + 1; k < n; ++k) {
          lowest = std::min(lowest, values[k]);
          if (values[k] > values[p]) return lowest;
        }
      }
      return std::nullopt;
    };
    const auto sl = saddle(true), sr = saddle(false);
    double prom;
    if (!sl && !sr)
      prom = values[p] - *std::min_element(values.begin(), values.end());
    else if (!sl)
      prom = values[p] - *sr;
    else if (!sr)
      prom = values[p] - *sl;
    else
      prom = values[p] - std::max(*sl, *sr);

    if (prom >= opts.min_prominence_frac * vmax && values[p] >= opts.min_height_frac * vmax)
      peaks.push_back(p);
  }
  return peaks;
}

std::vector<double> unwrap_phase(std::span<const double> wrapped) {
  std::vector<double> out(wrapped.begin(), wrapped.end());
  for (std::size_t i = 1; i < out.size(); ++i) {
    double d = out[i] - out[i - 1];
    while (d > pi) {
      out[i] -= two_pi;
      d = out[i] - out[i - 1];
    }
    while (d < -pi) {
      out[i] += two_pi;
      d = out[i] - out[i - 1];
    }
  }
  return out;
}

bool phase_zigzag(std::span<const double> freq_grid, std::span<const double> phase_trace,
                  std::span<const ModeParams> modes, const DriveConfig& drive_template,
                  double t_offset, const ResolvabilityCriterion& criterion) {
  if (freq_grid.size() != phase_trace.size())
    throw std::invalid_argument("freq_grid and phase_trace must have equal length");
  if (freq_grid.size() < 4 || modes.empty()) return false;

  const double t_d = drive_template.t_d;
  const std::vector<double> ph = unwrap_phase(phase_trace);
  const double baseline = 0.5 * t_d + t_offset; // |drive-frame slope| of a lone mode
  const double step = freq_grid[1] - freq_grid[0];

  // Null neighborhoods of each constituent mode are excluded; the raw trace carries
  // a ±π flip there even for a single resonance.
  const double span = freq_grid.back() - freq_grid.front();
  const int n_nulls = static_cast<int>(std::ceil(span / (two_pi / t_d))) + 1;
  auto near_null = [&](double w) {
    for (const auto& m : modes)
      for (int k = 1; k <= n_nulls; ++k)
        for (double s : {-1.0, 1.0})
          if (std::abs(w - (m.omega_z + s * k * two_pi / t_d)) <
              criterion.null_exclusion_steps * std::abs(step))
            return true;
    return false;
  };

  int sign_changes = 0;
  int prev_sign = 0;
  for (std::size_t i = 0; i + 1 < ph.size(); ++i) {
    const double mid = 0.5 * (freq_grid[i] + freq_grid[i + 1]);
    if (near_null(mid)) continue;
    const double slope = (ph[i + 1] - ph[i]) / (freq_grid[i + 1] - freq_grid[i]);
    const double rel = slope - (t_d + t_offset); // remove the drive's phase ramp
    if (std::abs(rel) < criterion.zigzag_slope_tol * baseline) continue;
    const int sgn = rel > 0.0 ? 1 : -1;
    if (prev_sign != 0 && sgn != prev_sign) ++sign_changes;
    prev_sign = sgn;
  }
  return sign_changes >= 2;
}

namespace {

struct TroughResult {
  int peak_count = 0;
  double depth = 0.0;
};

TroughResult trough_depth(std::span<const double> values, const PeakOptions& opts) {
  const auto peaks = find_peaks(values, opts);
  TroughResult r;
  r.peak_count = static_cast<int>(peaks.size());
  if (peaks.size() < 2) return r;
  const double lo = *std::min_element(values.begin() + static_cast<std::ptrdiff_t>(peaks.front()),
                                      values.begin() + static_cast<std::ptrdiff_t>(peaks.back()) + 1);
  double mean_peak = 0.0;
  for (std::size_t p : peaks) mean_peak += values[p];
  mean_peak /= static_cast<double>(peaks.size());
  r.depth = 1.0 - lo / mean_peak;
  return r;
}

} // namespace

ResolvabilityReport resolvability(std::span<const ModeParams> modes,
                                  const DriveConfig& drive_template,
                                  std::span<const double> freq_grid, double window,
                                  const ResolvabilityCriterion& criterion) {
  if (modes.size() != 2) throw std::invalid_argument("resolvability requires exactly two modes");
  check_spectrum_args(modes, drive_template, freq_grid, window);

  const SpectrumResult spec = rms_spectrum(modes, drive_template, freq_grid, window, 0.0);
  const PeakOptions popts{criterion.min_prominence_frac, criterion.min_height_frac};
  const auto coh = trough_depth(spec.rms_velocity, popts);
  const auto inc = trough_depth(spec.absorbed_energy, popts);
  const bool zig = phase_zigzag(freq_grid, spec.phase_trace_t0, modes, drive_template, 0.0, criterion);

  ResolvabilityReport rep;
  rep.mode_spacing = std::abs(modes[1].omega_z - modes[0].omega_z);
  rep.peak_count_coherent = coh.peak_count;
  rep.peak_count_incoherent = inc.peak_count;
  rep.trough_depth_coherent = coh.depth;
  rep.trough_depth_incoherent = inc.depth;
  rep.distinguishable = coh.peak_count == 2 || inc.peak_count == 2 || zig;
  rep.criterion =
      "two main peaks (prominence >= " + std::to_string(criterion.min_prominence_frac) +
      ", height >= " + std::to_string(criterion.min_height_frac) +
      " of max) in either spectrum, or >= 2 drive-frame phase-slope sign changes outside nulls";
  return rep;
}

std::vector<double> sidelobe_nulls(const ModeParams& mode, const DriveConfig& drive_template,
                                   int n_max) {
  validate(mode);
  validate(drive_template);
  if (n_max < 1) throw std::invalid_argument("n_max must be >= 1");
  std::vector<double> nulls;
  nulls.reserve(2 * static_cast<std::size_t>(n_max));
  for (int n = n_max; n >= 1; --n) nulls.push_back(mode.omega_z - n * two_pi / drive_template.t_d);
  for (int n = 1; n <= n_max; ++n) nulls.push_back(mode.omega_z + n * two_pi / drive_template.t_d);
  return nulls;
}

double amplitude_fwhm(const ModeParams& mode, const DriveConfig& drive_template) {
  validate(mode);
  validate(drive_template);
  DriveConfig d = drive_template;
  d.omega_d = mode.omega_z;
  const double peak = velocity_amplitude(mode, d);
  auto half_crossing = [&](double sign) {
    double lo = mode.omega_z, hi = mode.omega_z + sign * two_pi / d.t_d;
    for (int it = 0; it < 200; ++it) {
      const double mid = 0.5 * (lo + hi);
      d.omega_d = mid;
      if (velocity_amplitude(mode, d) > 0.5 * peak)
        lo = mid;
      else
        hi = mid;
    }
    return 0.5 * (lo + hi);
  };
  return half_crossing(+1.0) - half_crossing(-1.0);
}

// ---------------------------------------------------------------------------
// Force extraction
// ---------------------------------------------------------------------------

namespace {

// Exact DC (A0) and fundamental (B1) Fourier coefficients of the Lorentzian rate
// ratio R(δ - k·v·sin u)/R0 over one oscillation, via 1/((q-ia)(q+ia)) partial
// fractions and the classic circle integrals; B1/A0 is the modulation depth the
// demodulation measures for a velocity envelope v.
double modulation_depth(double v, const DetectionConfig& det) {
  const double a = 0.5 * det.linewidth;
  const double lin_slope = 2.0 * det.detuning / (det.detuning * det.detuning + a * a);
  if (det.lineshape == Lineshape::linearized) return lin_slope * det.k_detect * v;
  const std::complex<double> c{det.detuning, -a};
  const double m = det.k_detect * v;
  if (std::abs(m) < 1e-6 * std::abs(c)) return lin_slope * m;
  const std::complex<double> s = -std::sqrt(c * c - m * m);
  const double a0 = a * std::imag(1.0 / s);
  const double b1 = (2.0 * a / m) * std::imag(c / s);
  return b1 / a0;
}

double modulation_depth_slope(double v, const DetectionConfig& det, double v_scale) {
  const double h = 1e-6 * v_scale;
  return (modulation_depth(v + h, det) - modulation_depth(v - h, det)) / (2.0 * h);
}

// d(depth)/dv at v = 0, analytic.
double linear_depth_slope(const DetectionConfig& det) {
  const double a = 0.5 * det.linewidth;
  return 2.0 * det.detuning / (det.detuning * det.detuning + a * a) * det.k_detect;
}

struct RowDemod {
  double zx = 0.0, zy = 0.0;          // demodulated quadratures of counts/fit - 1
  double m00 = 0.0, m01 = 0.0, m11 = 0.0; // normal matrix = inverse covariance
  bool ok = false;
};

// Project a residual row onto decaying sine/cosine bases at probe frequency omega.
// The bases carry the three systematic factors of the first-photon density:
// histogram bin averaging (sinc), radiation-pressure decay of the envelope, and the
// first-order survival term with coefficient equal to the fitted background rate.
RowDemod demod_row(const ResidualGrid& grid, std::size_t row, double omega, double psi,
                   double t_d) {
  RowDemod out;
  const RowFit& rf = grid.fit_params[row];
  if (!rf.ok || rf.tau == 0.0) return out;
  const double bg_rate = 1.0 / rf.tau;
  const double gamma = grid.detection.gamma_damp;
  const double omega_d = grid.drive_frequencies[row];
  const double beat = two_pi / omega_d;
  const double offset0 = t_d - std::floor(t_d / beat) * beat; // TAC start-to-drive-end lag
  const double attn = sinc(0.5 * omega * grid.detection.bin_width);
  const double den = gamma * gamma + omega * omega;
  const double ph0 = omega * t_d + psi;

  for (std::size_t b = 0; b < grid.n_bins(); ++b) {
    const double cnt = grid.count_at(row, b);
    const double fit = cnt - grid.residual_at(row, b);
    if (!(fit > 0.0) || !std::isfinite(fit)) continue;
    const double rho = cnt / fit - 1.0;
    const double t_det = grid.time_bins[b] - offset0;
    const double ph = omega * (t_det + t_d) + psi;
    const double e = std::exp(-gamma * t_det);
    const double is = ((gamma * std::sin(ph0) + omega * std::cos(ph0)) -
                       e * (gamma * std::sin(ph) + omega * std::cos(ph))) / den;
    const double ic = ((gamma * std::cos(ph0) - omega * std::sin(ph0)) -
                       e * (gamma * std::cos(ph) - omega * std::sin(ph))) / den;
    const double b1 = attn * e * std::sin(ph) - bg_rate * is;
    const double b2 = attn * e * std::cos(ph) - bg_rate * ic;
    const double w = fit; // var(rho) ~ 1/fit
    out.m00 += w * b1 * b1;
    out.m01 += w * b1 * b2;
    out.m11 += w * b2 * b2;
    out.zx += w * b1 * rho;
    out.zy += w * b2 * rho;
  }
  const double det2 = out.m00 * out.m11 - out.m01 * out.m01;
  if (det2 <= 0.0) return out;
  const double zx = (out.m11 * out.zx - out.m01 * out.zy) / det2;
  const double zy = (out.m00 * out.zy - out.m01 * out.zx) / det2;
  out.zx = zx;
  out.zy = zy;
  out.ok = true;
  return out;
}

struct GridFitContext {
  const ResidualGrid* grid = nullptr;
  ModeParams mode;
  DriveConfig drive;
};

// chi² over all rows in the quadrature plane for a trial omega_z, with the force
// optimized by Gauss-Newton (the model is nearly linear in F).
double grid_chi2(const GridFitContext& ctx, double omega_z, double& force_out, bool& conv_out) {
  const ResidualGrid& grid = *ctx.grid;
  ModeParams mode = ctx.mode;
  mode.omega_z = omega_z;
  DriveConfig drive = ctx.drive;

  struct Row {
    RowDemod d;
    double g = 0.0;          // signed velocity per unit force
    double ux = 0.0, uy = 0.0; // quadrature direction from the Eq. 5 phase
  };
  std::vector<Row> rows;
  rows.reserve(grid.n_rows());
  double gmax = 0.0;
  for (std::size_t r = 0; r < grid.n_rows(); ++r) {
    Row row;
    row.d = demod_row(grid, r, omega_z, drive.psi, drive.t_d);
    if (!row.d.ok) continue;
    drive.omega_d = grid.drive_frequencies[r];
    drive.force = 1.0;
    row.g = signed_velocity_amplitude(mode, drive);
    const double phi = oscillation_phase(mode, drive);
    row.ux = std::cos(phi);
    row.uy = std::sin(phi);
    gmax = std::max(gmax, std::abs(row.g));
    rows.push_back(row);
  }
  conv_out = false;
  if (rows.size() < 3 || gmax == 0.0) {
    force_out = 0.0;
    return std::numeric_limits<double>::infinity();
  }

  // Linear-response initial force estimate.
  const double lin = linear_depth_slope(grid.detection);
  double num = 0.0, den = 0.0;
  for (const Row& row : rows) {
    const double hx = lin * row.g * row.ux, hy = lin * row.g * row.uy;
    num += hx * (row.d.m00 * row.d.zx + row.d.m01 * row.d.zy) +
           hy * (row.d.m01 * row.d.zx + row.d.m11 * row.d.zy);
    den += hx * (row.d.m00 * hx + row.d.m01 * hy) + hy * (row.d.m01 * hx + row.d.m11 * hy);
  }
  double force = den > 0.0 ? num / den : 0.0;

  for (int iter = 0; iter < 50; ++iter) {
    double jj = 0.0, jr = 0.0;
    for (const Row& row : rows) {
      const double v = force * row.g;
      const double depth = modulation_depth(v, grid.detection);
      const double dd = row.g * modulation_depth_slope(v, grid.detection, gmax * std::abs(force) + 1e-30);
      const double rx = row.d.zx - depth * row.ux;
      const double ry = row.d.zy - depth * row.uy;
      const double jx = dd * row.ux, jy = dd * row.uy;
      jj += jx * (row.d.m00 * jx + row.d.m01 * jy) + jy * (row.d.m01 * jx + row.d.m11 * jy);
      jr += jx * (row.d.m00 * rx + row.d.m01 * ry) + jy * (row.d.m01 * rx + row.d.m11 * ry);
    }
    if (jj <= 0.0) break;
    const double step = jr / jj;
    force += step;
    if (std::abs(step) <= 1e-10 * std::abs(force) + 1e-40) {
      conv_out = true;
      break;
    }
  }

  double chi2 = 0.0;
  for (const Row& row : rows) {
    const double depth = modulation_depth(force * row.g, grid.detection);
    const double rx = row.d.zx - depth * row.ux;
    const double ry = row.d.zy - depth * row.uy;
    chi2 += rx * (row.d.m00 * rx + row.d.m01 * ry) + ry * (row.d.m01 * rx + row.d.m11 * ry);
  }
  force_out = force;
  return chi2;
}

} // namespace

ForceFit extract_force(const ResidualGrid& grid, const ModeParams& mode_guess,
                       const DriveConfig& drive_template) {
  validate(mode_guess);
  validate(drive_template);
  if (grid.n_rows() < 10)
    throw std::invalid_argument("extract_force needs >= 10 frequency rows spanning the resonance");

  GridFitContext ctx{&grid, mode_guess, drive_template};
  const double wlo = *std::min_element(grid.drive_frequencies.begin(), grid.drive_frequencies.end());
  const double whi = *std::max_element(grid.drive_frequencies.begin(), grid.drive_frequencies.end());

  // Multi-start profile over omega_z (the Eq. 4 landscape has sidelobes), then a
  // golden-section refinement of the best bracket.
  const int n_scan = 61;
  double best_w = mode_guess.omega_z, best_chi = std::numeric_limits<double>::infinity();
  double best_f = 0.0;
  bool best_conv = false;
  for (int i = 0; i < n_scan; ++i) {
    const double w = wlo + (whi - wlo) * i / (n_scan - 1);
    double f = 0.0;
    bool conv = false;
    const double chi = grid_chi2(ctx, w, f, conv);
    if (chi < best_chi) {
      best_chi = chi;
      best_w = w;
      best_f = f;
      best_conv = conv;
    }
  }
  double bracket = (whi - wlo) / (n_scan - 1);
  for (int it = 0; it < 60; ++it) {
    bool improved = false;
    for (double w : {best_w - bracket, best_w + bracket}) {
      if (w < wlo || w > whi) continue;
      double f = 0.0;
      bool conv = false;
      const double chi = grid_chi2(ctx, w, f, conv);
      if (chi < best_chi) {
        best_chi = chi;
        best_w = w;
        best_f = f;
        best_conv = conv;
        improved = true;
      }
    }
    if (!improved) bracket *= 0.5;
    if (bracket < 1e-9 * best_w) break;
  }
  if (!best_conv) throw fit_error("extract_force: force refinement did not converge; best chi2 = " +
                                  std::to_string(best_chi));

  ForceFit fit;
  fit.force = std::abs(best_f);
  fit.omega_z = best_w;
  fit.chi2 = best_chi;
  fit.converged = true;

  // Curvature-based covariance at the optimum.
  auto chi_fixed = [&](double force, double omega_z) {
    ModeParams mode = ctx.mode;
    mode.omega_z = omega_z;
    DriveConfig drive = ctx.drive;
    double chi = 0.0;
    for (std::size_t r = 0; r < grid.n_rows(); ++r) {
      const RowDemod d = demod_row(grid, r, omega_z, drive.psi, drive.t_d);
      if (!d.ok) continue;
      drive.omega_d = grid.drive_frequencies[r];
      drive.force = 1.0;
      const double g = signed_velocity_amplitude(mode, drive);
      const double phi = oscillation_phase(mode, drive);
      const double depth = modulation_depth(force * g, grid.detection);
      const double rx = d.zx - depth * std::cos(phi);
      const double ry = d.zy - depth * std::sin(phi);
      chi += rx * (d.m00 * rx + d.m01 * ry) + ry * (d.m01 * rx + d.m11 * ry);
    }
    return chi;
  };
  const double hf = std::max(1e-4 * std::abs(best_f), 1e-30);
  const double hw = std::max(1e-8 * best_w, 1e-6);
  const double d2f = (chi_fixed(best_f + hf, best_w) - 2.0 * best_chi + chi_fixed(best_f - hf, best_w)) / (hf * hf);
  const double d2w = (chi_fixed(best_f, best_w + hw) - 2.0 * best_chi + chi_fixed(best_f, best_w - hw)) / (hw * hw);
  fit.covariance = {d2f > 0.0 ? 2.0 / d2f : 0.0, d2w > 0.0 ? 2.0 / d2w : 0.0, 0.0};

  // Per-row diagnostics at the fitted frequency. The depth inversion runs over the
  // monotone low-velocity branch; plenty for m/s-scale ion motion.
  for (std::size_t r = 0; r < grid.n_rows(); ++r) {
    const RowDemod d = demod_row(grid, r, best_w, drive_template.psi, drive_template.t_d);
    fit.row_phase.push_back(d.ok ? std::atan2(d.zy, d.zx) : std::numeric_limits<double>::quiet_NaN());
    double vel = std::numeric_limits<double>::quiet_NaN();
    if (d.ok) {
      const double depth = std::hypot(d.zx, d.zy);
      double lo = 0.0, hi = 10.0;
      for (int it = 0; it < 80; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (std::abs(modulation_depth(mid, grid.detection)) < depth)
          lo = mid;
        else
          hi = mid;
      }
      vel = 0.5 * (lo + hi);
      fit.rows_used += 1;
    }
    fit.row_velocity.push_back(vel);
  }
  return fit;
}

ForceFit extract_force(const SpectrumResult& spectrum, const ModeParams& mode_guess,
                       const DriveConfig& drive_template) {
  validate(mode_guess);
  validate(drive_template);
  if (spectrum.freq_grid.size() < 10)
    throw std::invalid_argument("extract_force needs >= 10 frequency points spanning the resonance");

  // Amplitude data: rms of a sinusoid is v/sqrt(2).
  std::vector<double> vhat(spectrum.rms_velocity.size());
  for (std::size_t i = 0; i < vhat.size(); ++i) vhat[i] = spectrum.rms_velocity[i] * std::sqrt(2.0);

  ModeParams mode = mode_guess;
  DriveConfig drive = drive_template;
  auto chi2_at = [&](double omega_z, double& force_out) {
    mode.omega_z = omega_z;
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < vhat.size(); ++i) {
      drive.omega_d = spectrum.freq_grid[i];
      drive.force = 1.0;
      const double g = std::abs(signed_velocity_amplitude(mode, drive));
      num += g * vhat[i];
      den += g * g;
    }
    const double force = den > 0.0 ? num / den : 0.0;
    double chi = 0.0;
    for (std::size_t i = 0; i < vhat.size(); ++i) {
      drive.omega_d = spectrum.freq_grid[i];
      drive.force = 1.0;
      const double r = vhat[i] - force * std::abs(signed_velocity_amplitude(mode, drive));
      chi += r * r;
    }
    force_out = force;
    return chi;
  };

  const double wlo = *std::min_element(spectrum.freq_grid.begin(), spectrum.freq_grid.end());
  const double whi = *std::max_element(spectrum.freq_grid.begin(), spectrum.freq_grid.end());
  double best_w = mode_guess.omega_z, best_chi = std::numeric_limits<double>::infinity(), best_f = 0.0;
  for (int i = 0; i < 121; ++i) {
    const double w = wlo + (whi - wlo) * i / 120.0;
    double f = 0.0;
    const double chi = chi2_at(w, f);
    if (chi < best_chi) {
      best_chi = chi;
      best_w = w;
      best_f = f;
    }
  }
  double bracket = (whi - wlo) / 120.0;
  for (int it = 0; it < 80 && bracket > 1e-12 * best_w; ++it) {
    bool improved = false;
    for (double w : {best_w - bracket, best_w + bracket}) {
      if (w < wlo || w > whi) continue;
      double f = 0.0;
      const double chi = chi2_at(w, f);
      if (chi < best_chi) {
        best_chi = chi;
        best_w = w;
        best_f = f;
        improved = true;
      }
    }
    if (!improved) bracket *= 0.5;
  }

  ForceFit fit;
  fit.force = best_f;
  fit.omega_z = best_w;
  fit.chi2 = best_chi;
  fit.converged = true;
  fit.rows_used = static_cast<int>(vhat.size());
  fit.row_velocity = std::move(vhat);
  return fit;
}

} // namespace dopplervel
