// Acceptance runner: one PASS/FAIL line per criterion. Exit status is 0 only
// when every selected criterion passes. Usage: acceptance [criterion ...]

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <numbers>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "toptrap/blochsim.hpp"
#include "toptrap/calibration.hpp"
#include "toptrap/fieldmodel.hpp"
#include "toptrap/polarization.hpp"

using namespace toptrap;

namespace {

constexpr double kPi = std::numbers::pi;

struct Verdict {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char *f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

bool in(double x, double lo, double hi) { return x >= lo && x <= hi; }

field::NonIdealities random_ni(fit::NoiseSource &rng, double size, double be) {
    field::NonIdealities ni;
    ni.Delta = rng.uniform(-size, size);
    ni.psi1 = rng.uniform(-size, size);
    ni.psi2 = rng.uniform(-size, size);
    ni.xi1 = rng.uniform(-size, size);
    ni.xi2 = rng.uniform(-size, size);
    ni.BE = field::Vec3(rng.uniform(-be, be), rng.uniform(-be, be), rng.uniform(-be, be));
    return ni;
}

double r_squared(const std::vector<double> &x, const std::vector<double> &y) {
    const auto n = static_cast<double>(x.size());
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i] / n;
        my += y[i] / n;
    }
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    return sxy * sxy / (sxx * syy);
}

// ---------------------------------------------------------------------------

Verdict criterion1() {
    field::TrapConfig cfg;
    cfg.B0 = 24.0;
    cfg.B1p = 30.7;
    cfg.B2p = 2.5;
    const auto w = field::trap_frequencies(cfg);
    const double fx = w.wx / (2 * kPi), fy = w.wy / (2 * kPi), fz = w.wz / (2 * kPi);
    const bool ok = in(fx, 4.80, 5.00) && in(fz, 2.85, 2.95) && in(fy, 0.90, 1.05);
    return {ok, fmt("fx=%.3f Hz [4.80,5.00] fz=%.3f Hz [2.85,2.95] fy=%.3f Hz [0.90,1.05]", fx, fz, fy)};
}

Verdict criterion2() {
    const field::TrapConfig cfg;
    fit::NoiseSource rng(2);
    const int n = 200;
    double worst = 0.0;
    for (int i = 0; i < n; ++i) {
        // |ni| <= 0.01 for every dimensionless parameter, including |B_E|/B0
        const auto ni = random_ni(rng, 0.01, 0.01 * cfg.B0 / std::sqrt(3.0));
        const field::Vec3 dir = field::Vec3(rng.normal(), rng.normal(), rng.normal()).normalized();
        const field::Vec3 r = dir * rng.uniform(0.0, 10e-4);
        const double a = field::time_avg_magnitude_analytic(cfg, ni, r);
        const double b = field::time_avg_magnitude_numeric(cfg, ni, r);
        worst = std::max(worst, std::abs(a / b - 1.0));
    }
    return {worst <= 1e-3, fmt("%d configurations, worst relative deviation %.2e (limit 1e-3)", n, worst)};
}

Verdict criterion3() {
    const field::TrapConfig cfg;
    const int trials = 200;
    int first_order_ok = 0, exact_ok = 0;
    for (auto mode : {field::CenterFieldMode::FirstOrder, field::CenterFieldMode::StrobeAveraged}) {
        cal::MeasurementOptions o;
        o.noise.field_sigma = 5e-3;
        o.n_delays = 16;
        o.mode = mode;
        fit::NoiseSource rng(3);
        int ok = 0;
        for (int t = 0; t < trials; ++t) {
            const auto ni = random_ni(rng, 0.01, 0.3);
            const auto f = cal::fit_field_oscillation(cal::measure_field_oscillation(cfg, ni, o, rng),
                                                      cfg.Omega1);
            const auto truth = cal::predicted_amplitudes(cfg, ni, cal::measurement_height(cfg, ni, o));
            bool all = true;
            for (int i = 0; i < 5; ++i) {
                all = all && std::abs(f.amplitudes()(i) - truth(i)) <= 3.0 * f.sigma(i);
            }
            ok += all;
        }
        (mode == field::CenterFieldMode::FirstOrder ? first_order_ok : exact_ok) = ok;
    }

    cal::MeasurementOptions o;
    o.noise.field_sigma = 5e-3;
    fit::NoiseSource rng(33);
    const int loops = 10;
    double worst_final = 0.0;
    for (int t = 0; t < loops; ++t) {
        const auto ni = random_ni(rng, 0.01, 0.3);
        const auto res = cal::closed_loop(cfg, ni, o, 3, rng);
        double best = res.iterations.front().rms_before_mG;
        for (const auto &it : res.iterations) {
            best = std::min(best, it.rms_after_mG);
        }
        worst_final = std::max(worst_final, best);
    }
    const double frac = static_cast<double>(first_order_ok) / trials;
    const bool ok = frac >= 0.95 && worst_final <= 10.0;
    return {ok, fmt("round trip %d/%d within 3 sigma (>= 95%%; exact-field forward model %d/%d); "
                    "closed loop worst rms after <= 3 iterations %.2f mG over %d traps (limit 10 mG)",
                    first_order_ok, trials, exact_ok, trials, worst_final, loops)};
}

Verdict criterion4() {
    const double B2p = 2.5, BEy = 0.56, noise = 5e-4; // cm
    std::vector<double> grads;
    for (int g = 0; g <= 12; ++g) {
        grads.push_back(g);
    }
    fit::NoiseSource rng(4);
    const int trials = 400;
    double mean_sigma = 0.0, mean_est = 0.0;
    int covered = 0;
    for (int t = 0; t < trials; ++t) {
        const auto f = cal::fit_ybias(cal::synth_positions(grads, B2p, BEy, noise, rng), B2p);
        mean_sigma += f.sigma / trials;
        mean_est += f.BEy / trials;
        covered += std::abs(f.BEy - BEy) <= 3.0 * f.sigma;
    }
    const double target = 0.02;
    const bool ok = in(mean_sigma, target / 1.5, target * 1.5) && std::abs(mean_est - BEy) <= 0.02 &&
                    covered >= 0.95 * trials;
    return {ok, fmt("BEy=%.4f G, sigma=%.4f G (band [%.4f, %.4f]), %d/%d within 3 sigma; "
                    "13 gradients 0-12 G/cm, 5 um noise",
                    mean_est, mean_sigma, target / 1.5, target * 1.5, covered, trials)};
}

Verdict criterion5() {
    const double w = 2 * kPi * 12.8e3, tau = 120e-9;
    const double formula = w * w * tau * tau / 48.0;
    const double brute = 1.0 - pol::pulse_avg_fidelity_numeric(w, tau);
    const bool value_ok = std::abs(formula / 1.9e-6 - 1.0) <= 0.05;
    const bool brute_ok = std::abs(brute / formula - 1.0) <= 0.01;
    return {value_ok && brute_ok,
            fmt("W^2 tau^2/48 = %.3e (1.9e-6 +- 5%%: %s); brute-force average %.3e, ratio %.4f "
                "(within 1%%: %s)",
                formula, value_ok ? "yes" : "no", brute, brute / formula, brute_ok ? "yes" : "no")};
}

Verdict criterion6() {
    fit::NoiseSource rng(6);
    const int n = 1000;
    int fails = 0;
    double worst_order = 0.0;
    for (int i = 0; i < n; ++i) {
        const double a = rng.uniform(-kPi, kPi);
        const double d1 = rng.uniform(-kPi, kPi), d2 = rng.uniform(-kPi, kPi);
        const pol::Mat3 m = pol::mueller_retarder(a, d1);
        bool ok = (pol::mueller_retarder(a, 0.0) - pol::Mat3::Identity()).cwiseAbs().maxCoeff() <= 1e-15;
        ok = ok && (m.transpose() * m - pol::Mat3::Identity()).cwiseAbs().maxCoeff() <= 1e-12;
        ok = ok && std::abs(m.determinant() - 1.0) <= 1e-12;
        ok = ok && (m * pol::mueller_retarder(a, d2) - pol::mueller_retarder(a, d1 + d2))
                           .cwiseAbs()
                           .maxCoeff() <= 1e-12;

        const pol::StokesVector S(rng.normal(), rng.normal(), rng.normal());
        const pol::BeamGeometry g{rng.uniform(0.0, kPi), rng.uniform(-kPi, kPi)};
        const auto p = pol::projections(S, g);
        ok = ok && std::abs(p.pi + p.minus + p.plus - 1.0) <= 1e-12;

        // weak-birefringence residual scales as delta^4
        const double d = rng.uniform(0.01, 0.1) * (rng.uniform(0, 1) < 0.5 ? -1 : 1);
        const auto residual = [&](double delta) {
            const std::vector<pol::RetarderElement> el{pol::RetarderElement(a, delta)};
            const double exact = pol::fidelity(pol::apply_chain(el, S), S);
            return std::abs(exact - pol::weak_biref_fidelity(S, a, delta));
        };
        const double r1 = residual(d);
        ok = ok && r1 <= std::pow(d, 4) / 24.0 + 1e-15;
        if (r1 > 1e-12) {
            const double order = std::log2(r1 / residual(d / 2));
            worst_order = std::max(worst_order, std::abs(order - 4.0));
            ok = ok && std::abs(order - 4.0) <= 0.1;
        }
        fails += !ok;
    }
    return {fails == 0, fmt("%d/%d samples pass identity, orthogonality, det=+1, composition, "
                            "completeness, delta^4 residual (worst order deviation %.3f)",
                            n - fails, n, worst_order)};
}

Verdict criterion7() {
    using namespace bloch;
    const auto sys = build_level_system(24.0, 0.0);
    const int stretched = sys.index(Manifold::Ground2, 2);

    PulseSpec pure;
    pure.intensity = 100.0;
    const double eps_dark = simulate_pulse(sys, pure, DensityMatrix::pure(stretched)).epsilon;
    const bool dark_ok = std::abs(eps_dark) <= 1e-9;

    double worst_r2 = 1.0;
    for (auto kind : {Polarization::Pi, Polarization::SigmaMinus}) {
        std::vector<double> x, y;
        for (double imp : {1e-5, 3e-5, 1e-4, 3e-4, 6e-4, 1e-3}) {
            x.push_back(imp);
            y.push_back(loss_at_intensity(sys, kind, imp, 100.0, 1280).epsilon);
        }
        worst_r2 = std::min(worst_r2, r_squared(x, y));
    }
    const bool linear_ok = worst_r2 >= 0.999;

    std::vector<double> grid;
    for (int i = 0; i <= 24; ++i) {
        grid.push_back(std::pow(10.0, i / 6.0)); // 1 .. 1e4 I_S
    }
    const auto max_pi = find_loss_maximum(sys, Polarization::Pi, 1e-4, grid);
    const auto max_minus = find_loss_maximum(sys, Polarization::SigmaMinus, 1e-4, grid);
    const bool peak_ok = max_pi.interior && in(max_pi.intensity, 50.0, 200.0);

    const auto k = calibrate_kappa(sys, 100.0);
    const bool order_ok = k.kappa_minus > k.kappa_pi;

    return {dark_ok && linear_ok && peak_ok && order_ok,
            fmt("dark eps=%.1e (<=1e-9: %s); min R^2=%.6f (>=0.999: %s); pi-impurity peak at "
                "%.1f I_S (interior %s, [50,200]: %s), sigma- peak at %.1f I_S; kappa_-=%.2f > "
                "kappa_pi=%.2f: %s",
                eps_dark, dark_ok ? "yes" : "no", worst_r2, linear_ok ? "yes" : "no", max_pi.intensity,
                max_pi.interior ? "yes" : "no", peak_ok ? "yes" : "no", max_minus.intensity,
                k.kappa_minus, k.kappa_pi, order_ok ? "yes" : "no")};
}

Verdict criterion8() {
    using namespace bloch;
    const auto k = calibrate_kappa(build_level_system(24.0, 0.0), 100.0);
    const bool pi_ok = in(k.kappa_pi, 6.0, 13.0);
    const bool minus_ok = in(k.kappa_minus, 12.0, 26.0);

    fit::NoiseSource rng(8);
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
        const double kappa = rng.uniform(1.0, 30.0);
        const double imp = std::pow(10.0, rng.uniform(-7.0, -3.0));
        const int N = static_cast<int>(rng.uniform(1.0, 4000.0));
        const double eps = kappa * imp;
        const double back = infer_impurity(survival(eps, N), N, kappa);
        worst = std::max(worst, std::abs(back * kappa / eps - 1.0));
    }
    const bool inv_ok = worst <= 1e-12;
    return {pi_ok && minus_ok && inv_ok,
            fmt("kappa_pi=%.2f ([6,13]: %s), kappa_-=%.2f ([12,26]: %s); inversion worst relative "
                "error %.1e (<=1e-12: %s)",
                k.kappa_pi, pi_ok ? "yes" : "no", k.kappa_minus, minus_ok ? "yes" : "no", worst,
                inv_ok ? "yes" : "no")};
}

Verdict criterion9() {
    const double P = bloch::survival(9.5 * 1.5e-4, 1280);
    const bool p_ok = std::abs(P - 0.161) <= 5e-4;
    std::vector<double> t;
    for (int i = -10; i <= 10; ++i) {
        t.push_back(i * 0.05e-6);
    }
    const auto scan = bloch::alignment_scan(pol::StokesVector(0, 0, 1), t);
    const bool c_ok = std::abs(scan.curvature - 0.5) <= 0.02;
    return {p_ok && c_ok, fmt("P=%.4f (0.161: %s); alignment coefficient %.4f (0.50 +- 0.02: %s)", P,
                              p_ok ? "yes" : "no", scan.curvature, c_ok ? "yes" : "no")};
}

struct Criterion {
    int id;
    double limit_s; // runtime limit, 0 when none
    std::function<Verdict()> run;
};

} // namespace

int main(int argc, char **argv) {
    const std::vector<Criterion> all = {
        {1, 1.0, criterion1},   {2, 30.0, criterion2}, {3, 120.0, criterion3},
        {4, 10.0, criterion4},  {5, 0.0, criterion5},  {6, 0.0, criterion6},
        {7, 300.0, criterion7}, {8, 0.0, criterion8},  {9, 0.0, criterion9},
    };
    std::set<int> selected;
    for (int i = 1; i < argc; ++i) {
        selected.insert(std::atoi(argv[i]));
    }
    int failed = 0;
    for (const auto &c : all) {
        if (!selected.empty() && !selected.count(c.id)) {
            continue;
        }
        const auto t0 = std::chrono::steady_clock::now();
        Verdict v;
        try {
            v = c.run();
        } catch (const std::exception &e) {
            v = {false, std::string("exception: ") + e.what()};
        }
        const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const bool time_ok = c.limit_s <= 0.0 || dt < c.limit_s;
        const bool pass = v.pass && time_ok;
        failed += !pass;
        std::string timing = fmt("%.2f s", dt);
        if (c.limit_s > 0.0) {
            timing += fmt(" (limit %.0f s%s)", c.limit_s, time_ok ? "" : ", EXCEEDED");
        }
        std::printf("criterion %d: %s  %s  [%s]\n", c.id, pass ? "PASS" : "FAIL", v.detail.c_str(),
                    timing.c_str());
        std::fflush(stdout);
    }
    return failed == 0 ? 0 : 1;
}
