#include "toptrap/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "toptrap/log.hpp"

namespace toptrap::cal {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double lorentzian(double f, double center, double fwhm) {
    const double u = 2.0 * (f - center) / fwhm;
    return 1.0 / (1.0 + u * u);
}

} // namespace

RfPulseTrain RfPulseTrain::for_trap(const field::TrapConfig &cfg, double delay) {
    RfPulseTrain t;
    t.period = cfg.period();
    t.delay = delay;
    t.validate();
    return t;
}

void RfPulseTrain::validate() const {
    if (!(pulse_duration > 0.0) || !(period > 0.0) || !(pulse_duration < period)) {
        throw InputError("RfPulseTrain: need 0 < pulse_duration < period");
    }
    if (n_pulses < 1) {
        throw InputError("RfPulseTrain: n_pulses must be at least 1");
    }
    if (!(delay >= 0.0 && delay < period)) {
        throw InputError("RfPulseTrain: delay must lie in [0, period)");
    }
}

void SpectrumDataset::validate() const {
    for (std::size_t i = 0; i < points.size(); ++i) {
        const auto &p = points[i];
        if (!std::isfinite(p.freq) || !(p.survival >= 0.0 && p.survival <= 1.0)) {
            throw InputError("SpectrumDataset: survival must lie in [0, 1]");
        }
        if (p.sigma < 0.0) {
            throw InputError("SpectrumDataset: sigma must be nonnegative");
        }
        if (i > 0 && !(p.freq > points[i - 1].freq)) {
            throw InputError("SpectrumDataset: frequencies must increase strictly");
        }
    }
}

std::vector<double> rf_grid(double center, double half_span, double step) {
    if (!(half_span > 0.0) || !(step > 0.0) || step > half_span) {
        throw InputError("rf_grid: need 0 < step <= half_span");
    }
    const int n = static_cast<int>(std::round(half_span / step));
    std::vector<double> grid;
    for (int i = -n; i <= n; ++i) {
        grid.push_back(center + i * step);
    }
    return grid;
}

SpectrumDataset synth_strobe_spectrum(double B, const RfPulseTrain &train,
                                      std::span<const double> grid, double rabi,
                                      const field::PhysicalConstants &constants) {
    fit::NoiseSource unused(0);
    return synth_strobe_spectrum(B, train, grid, rabi, SpectrumNoise{}, unused, constants);
}

SpectrumDataset synth_strobe_spectrum(double B, const RfPulseTrain &train,
                                      std::span<const double> grid, double rabi,
                                      const SpectrumNoise &noise, fit::NoiseSource &rng,
                                      const field::PhysicalConstants &constants) {
    train.validate();
    if (grid.empty()) {
        throw InputError("synth_strobe_spectrum: empty RF grid");
    }
    if (!(rabi >= 0.0 && rabi <= 1.0)) {
        throw InputError("synth_strobe_spectrum: single-pulse transfer must lie in [0, 1]");
    }
    if (noise.field_sigma < 0.0 || noise.survival_sigma < 0.0) {
        throw InputError("synth_strobe_spectrum: noise levels must be nonnegative");
    }
    const double b = noise.field_sigma > 0.0 ? B + rng.normal(0.0, noise.field_sigma) : B;
    const double center = field::zeeman_frequency(std::max(b, 0.0), constants);
    const double fwhm = train.fwhm();
    SpectrumDataset ds;
    ds.points.reserve(grid.size());
    for (double f : grid) {
        double s = std::exp(-train.n_pulses * rabi * lorentzian(f, center, fwhm));
        if (noise.survival_sigma > 0.0) {
            s = std::clamp(s + rng.normal(0.0, noise.survival_sigma), 0.0, 1.0);
        }
        ds.points.push_back({f, s, noise.survival_sigma});
    }
    ds.validate();
    return ds;
}

PeakFit fit_spectrum_peak(const SpectrumDataset &ds) {
    ds.validate();
    const auto &pts = ds.points;
    if (pts.size() < 5) {
        throw InputError("fit_spectrum_peak: need at least 5 points");
    }
    const auto [lo, hi] = std::minmax_element(pts.begin(), pts.end(), [](const auto &a, const auto &b) {
        return a.survival < b.survival;
    });
    const double dip = hi->survival - lo->survival;
    if (dip < kMinimumDip) {
        throw FlatSpectrum("fit_spectrum_peak: no dip above the minimum contrast");
    }
    const bool weighted = std::all_of(pts.begin(), pts.end(), [](const auto &p) { return p.sigma > 0.0; });

    // Work in normalised frequency to keep the parameters of order one.
    const double f_ref = 0.5 * (pts.front().freq + pts.back().freq);
    const double scale = 0.5 * (pts.back().freq - pts.front().freq);
    std::vector<fit::DataPoint> data;
    for (const auto &p : pts) {
        data.push_back({(p.freq - f_ref) / scale, p.survival, weighted ? p.sigma : 1.0});
    }
    // Half-depth crossings for the initial width.
    const double half = hi->survival - 0.5 * dip;
    const auto imin = static_cast<std::size_t>(lo - pts.begin());
    std::size_t left = imin, right = imin;
    while (left > 0 && pts[left].survival < half) --left;
    while (right + 1 < pts.size() && pts[right].survival < half) ++right;
    const double width0 = std::max((pts[right].freq - pts[left].freq) / scale, 2.0 / pts.size());

    fit::Vector p0(4);
    p0 << hi->survival, dip, (lo->freq - f_ref) / scale, width0;
    const fit::ScalarModel model = [](const fit::Vector &p, double x) {
        const double u = 2.0 * (x - p(2)) / p(3);
        return p(0) - p(1) / (1.0 + u * u);
    };
    fit::LmOptions opts;
    opts.scale_covariance = !weighted;
    const auto r = fit::nonlinear_least_squares(model, data, p0, opts);

    PeakFit out;
    out.baseline = r.params(0);
    out.depth = r.params(1);
    out.center = f_ref + scale * r.params(2);
    out.width = scale * std::abs(r.params(3));
    out.uncertainty = scale * r.sigma(2);
    out.reduced_chi2 = r.reduced_chi2();
    return out;
}

Eigen::Matrix<double, 5, 1> OscillationFit::amplitudes() const {
    Eigen::Matrix<double, 5, 1> a;
    a << a0, a_s1, a_c1, a_s2, a_c2;
    return a;
}

double OscillationFit::sigma(int i) const { return std::sqrt(covariance(i, i)); }

double rms_variation_mG(double a_s1, double a_c1, double a_s2, double a_c2,
                        const field::PhysicalConstants &constants) {
    const double rms_hz = std::sqrt(0.5 * (a_s1 * a_s1 + a_c1 * a_c1 + a_s2 * a_s2 + a_c2 * a_c2));
    return 1e3 * rms_hz / field::zeeman_slope(constants);
}

OscillationFit fit_field_oscillation(std::span<const OscillationSample> samples, double Omega1,
                                     const field::PhysicalConstants &constants) {
    if (samples.size() < 6) {
        throw InputError("fit_field_oscillation: need at least 6 samples");
    }
    if (!(Omega1 > 0.0)) {
        throw InputError("fit_field_oscillation: Omega1 must be positive");
    }
    const auto n_weighted = std::count_if(samples.begin(), samples.end(),
                                          [](const auto &s) { return s.sigma > 0.0; });
    if (n_weighted != 0 && n_weighted != static_cast<long>(samples.size())) {
        throw InputError("fit_field_oscillation: sigmas must be all positive or all zero");
    }
    const bool weighted = n_weighted != 0;
    const auto n = static_cast<Eigen::Index>(samples.size());
    fit::Matrix A(n, 5);
    fit::Vector y(n), sigma(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto &s = samples[static_cast<std::size_t>(i)];
        const double p = Omega1 * s.delay;
        A.row(i) << 1.0, std::sin(p), std::cos(p), std::sin(2 * p), std::cos(2 * p);
        y(i) = s.center;
        sigma(i) = weighted ? s.sigma : 1.0;
    }
    fit::FitResult r;
    try {
        r = fit::weighted_linear_least_squares(A, y, sigma, kPhaseCoverageConditionLimit);
    } catch (const IllConditioned &) {
        throw InsufficientPhaseCoverage(
            "fit_field_oscillation: delays do not cover the rotation phase");
    }
    OscillationFit f;
    f.a0 = r.params(0);
    f.a_s1 = r.params(1);
    f.a_c1 = r.params(2);
    f.a_s2 = r.params(3);
    f.a_c2 = r.params(4);
    f.covariance = r.covariance;
    if (!weighted && r.dof > 0) {
        f.covariance *= r.chi2 / r.dof;
    }
    f.covariance = 0.5 * (f.covariance + f.covariance.transpose()).eval();
    f.chi2 = r.chi2;
    f.dof = r.dof;
    f.rms_variation_mG = rms_variation_mG(f.a_s1, f.a_c1, f.a_s2, f.a_c2, constants);
    return f;
}

Eigen::Matrix<double, 5, 1> predicted_amplitudes(const field::TrapConfig &cfg,
                                                 const field::NonIdealities &ni, double z0) {
    const auto h = field::center_field_harmonics(cfg, ni, z0);
    const double k = field::zeeman_slope(cfg.constants);
    Eigen::Matrix<double, 5, 1> a;
    a << h.c0, h.s1, h.c1, h.s2, h.c2;
    return k * a;
}

Adjustment compensation_step(const OscillationFit &fit, const field::TrapConfig &cfg,
                             const field::NonIdealities &current, HeightModel height, double z0) {
    cfg.validate();
    const double k = field::zeeman_slope(cfg.constants);
    const double B0 = cfg.B0;
    Adjustment adj;
    adj.dBEx = -fit.a_s1 / k;
    adj.dBEz = -fit.a_c1 / k;
    // s2 = -(2/3) B0 (Delta + xi - psi)
    adj.dDelta = 1.5 * (fit.a_s2 / k) / B0;
    // c2 = (1/2) B0 (q z0 - 2 xi' - 2 psi'); q z0 is moved through B1'.
    double dqz0_dB1p = 0.0;
    if (height == HeightModel::Fixed) {
        dqz0_dB1p = z0 / B0;
    } else {
        const double h = 1e-4 * cfg.B1p;
        field::TrapConfig up = cfg, down = cfg;
        up.B1p += h;
        down.B1p -= h;
        dqz0_dB1p = (up.q() * field::equilibrium_height(up, current) -
                     down.q() * field::equilibrium_height(down, current)) /
                    (2 * h);
    }
    if (dqz0_dB1p == 0.0) {
        log::warn("compensation_step: the cos 2W t channel cannot be moved with z0 = 0");
    } else {
        adj.dB1p = -2.0 * (fit.a_c2 / k) / (B0 * dqz0_dB1p);
    }
    return adj;
}

void apply_adjustment(const Adjustment &adj, field::TrapConfig &cfg, field::NonIdealities &ni) {
    ni.BE.x() += adj.dBEx;
    ni.BE.z() += adj.dBEz;
    ni.Delta += adj.dDelta;
    cfg.B1p += adj.dB1p;
}

double measurement_height(const field::TrapConfig &cfg, const field::NonIdealities &ni,
                          const MeasurementOptions &options) {
    return options.height == HeightModel::Fixed ? options.z0 : field::equilibrium_height(cfg, ni);
}

namespace {

std::vector<double> delays(const field::TrapConfig &cfg, int n) {
    std::vector<double> t;
    for (int i = 0; i < n; ++i) {
        t.push_back(cfg.period() * i / n);
    }
    return t;
}

} // namespace

std::vector<OscillationSample> measure_field_oscillation(const field::TrapConfig &cfg,
                                                         const field::NonIdealities &ni,
                                                         const MeasurementOptions &options,
                                                         fit::NoiseSource &rng) {
    if (options.n_delays < 6) {
        throw InputError("measure_field_oscillation: need at least 6 delays");
    }
    const double z0 = measurement_height(cfg, ni, options);
    const auto t = delays(cfg, options.n_delays);
    const auto series = field::center_field_series(cfg, ni, z0, t, options.mode);
    const double k = field::zeeman_slope(cfg.constants);
    const auto coarse = rf_grid(field::zeeman_frequency(cfg.B0, cfg.constants),
                                options.coarse_half_span, options.coarse_step);
    std::vector<OscillationSample> out;
    for (std::size_t i = 0; i < t.size(); ++i) {
        RfPulseTrain train = options.train;
        train.period = cfg.period();
        train.delay = t[i];
        const auto scan = synth_strobe_spectrum(series[i].magnitude, train, coarse, options.rabi,
                                                options.noise, rng, cfg.constants);
        const auto deepest = std::min_element(
            scan.points.begin(), scan.points.end(),
            [](const auto &a, const auto &b) { return a.survival < b.survival; });
        const auto grid = rf_grid(deepest->freq, options.half_span, options.step);
        const auto ds = synth_strobe_spectrum(series[i].magnitude, train, grid, options.rabi,
                                              options.noise, rng, cfg.constants);
        const auto peak = fit_spectrum_peak(ds);
        const double sigma = std::hypot(peak.uncertainty, k * options.noise.field_sigma);
        out.push_back({t[i], peak.center, sigma});
    }
    // A noiseless run gives zero sigmas except for rounding; treat all as unknown then.
    if (std::any_of(out.begin(), out.end(), [](const auto &s) { return !(s.sigma > 0.0); })) {
        for (auto &s : out) {
            s.sigma = 0.0;
        }
    }
    return out;
}

double true_rms_variation_mG(const field::TrapConfig &cfg, const field::NonIdealities &ni,
                             const MeasurementOptions &options, int samples) {
    const double z0 = measurement_height(cfg, ni, options);
    const auto series = field::center_field_series(cfg, ni, z0, delays(cfg, samples), options.mode);
    double mean = 0.0;
    for (const auto &p : series) {
        mean += p.magnitude;
    }
    mean /= series.size();
    double var = 0.0;
    for (const auto &p : series) {
        var += (p.magnitude - mean) * (p.magnitude - mean);
    }
    return 1e3 * std::sqrt(var / series.size());
}

ClosedLoopResult closed_loop(const field::TrapConfig &cfg, const field::NonIdealities &ni,
                             const MeasurementOptions &options, int iterations,
                             fit::NoiseSource &rng) {
    if (iterations < 1) {
        throw InputError("closed_loop: need at least one iteration");
    }
    ClosedLoopResult res{{}, cfg, ni, 0.0};
    for (int it = 0; it < iterations; ++it) {
        LoopIteration step;
        step.rms_before_mG = true_rms_variation_mG(res.cfg, res.ni, options);
        const auto samples = measure_field_oscillation(res.cfg, res.ni, options, rng);
        step.fit = fit_field_oscillation(samples, res.cfg.Omega1, res.cfg.constants);
        step.adjustment = compensation_step(step.fit, res.cfg, res.ni, options.height,
                                            measurement_height(res.cfg, res.ni, options));
        apply_adjustment(step.adjustment, res.cfg, res.ni);
        step.rms_after_mG = true_rms_variation_mG(res.cfg, res.ni, options);
        res.iterations.push_back(step);
    }
    res.final_rms_mG = res.iterations.back().rms_after_mG;
    return res;
}

double ybias_position(double BQp, double B2p, double BEy) {
    const double d = BQp * BQp + 2.0 * B2p * B2p;
    if (!(d > 0.0)) {
        throw DegenerateConfinement("ybias_position: no confinement along y (BQ' = B2' = 0)");
    }
    return BEy * BQp / d;
}

void PositionDataset::validate() const {
    for (const auto &p : points) {
        if (!std::isfinite(p.BQp) || !std::isfinite(p.y0) || !(p.sigma >= 0.0)) {
            throw InputError("PositionDataset: entries must be finite with sigma >= 0");
        }
    }
}

YbiasFit fit_ybias(const PositionDataset &ds, double B2p, bool fit_offset) {
    ds.validate();
    std::vector<double> g;
    for (const auto &p : ds.points) {
        g.push_back(p.BQp);
    }
    std::sort(g.begin(), g.end());
    if (std::unique(g.begin(), g.end()) - g.begin() < 4) {
        throw InputError("fit_ybias: need at least 4 distinct gradients");
    }
    const bool weighted = std::all_of(ds.points.begin(), ds.points.end(),
                                      [](const auto &p) { return p.sigma > 0.0; });
    const auto n = static_cast<Eigen::Index>(ds.points.size());
    const int np = fit_offset ? 2 : 1;
    fit::Matrix A(n, np);
    fit::Vector y(n), sigma(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto &p = ds.points[static_cast<std::size_t>(i)];
        A(i, 0) = ybias_position(p.BQp, B2p, 1.0);
        if (fit_offset) {
            A(i, 1) = 1.0;
        }
        y(i) = p.y0;
        sigma(i) = weighted ? p.sigma : 1.0;
    }
    const auto r = fit::weighted_linear_least_squares(A, y, sigma);
    fit::Matrix cov = r.covariance;
    if (!weighted && r.dof > 0) {
        cov *= r.chi2 / r.dof;
    }
    YbiasFit f;
    f.BEy = r.params(0);
    f.sigma = std::sqrt(cov(0, 0));
    f.with_offset = fit_offset;
    if (fit_offset) {
        f.offset = r.params(1);
        f.offset_sigma = std::sqrt(cov(1, 1));
    }
    f.reduced_chi2 = r.reduced_chi2();
    return f;
}

PositionDataset synth_positions(std::span<const double> BQp, double B2p, double BEy,
                                double noise, fit::NoiseSource &rng, double offset) {
    if (noise < 0.0) {
        throw InputError("synth_positions: noise must be nonnegative");
    }
    PositionDataset ds;
    for (double g : BQp) {
        const double y = ybias_position(g, B2p, BEy) + offset + (noise > 0.0 ? rng.normal(0.0, noise) : 0.0);
        ds.points.push_back({g, y, noise});
    }
    return ds;
}

} // namespace toptrap::cal
