#include <doctest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "toptrap/fieldmodel.hpp"
#include "toptrap/fitcore.hpp"

using namespace toptrap;
using namespace toptrap::field;

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kUm = 1e-4; // cm

TrapConfig nominal_config() { return TrapConfig{}; }

// First-order expansion of the two-coil bias field, written out independently.
Vec3 bias_first_order(const TrapConfig &cfg, const NonIdealities &ni, double t) {
    const double s = std::sin(cfg.Omega1 * t), c = std::cos(cfg.Omega1 * t);
    const double a = ni.xi_prime() + ni.psi_prime();
    const double b = ni.Delta - ni.xi() + ni.psi();
    const double d = ni.Delta + ni.xi() - ni.psi();
    return cfg.B0 * Vec3((1.0 + a) * s - b * c, 0.0, (1.0 - a) * c - d * s);
}

NonIdealities bias_only(const NonIdealities &ni) {
    NonIdealities out = ni;
    out.BE.setZero();
    return out;
}

// Golden-section minimisation of f on [lo, hi].
template <class F> double argmin(F f, double lo, double hi) {
    const double g = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = lo, b = hi;
    double c = b - g * (b - a), d = a + g * (b - a);
    double fc = f(c), fd = f(d);
    for (int i = 0; i < 120; ++i) {
        if (fc < fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    return 0.5 * (a + b);
}

NonIdealities random_ni(fit::NoiseSource &rng, double scale, double field_scale) {
    NonIdealities ni;
    ni.Delta = rng.uniform(-scale, scale);
    ni.psi1 = rng.uniform(-scale, scale);
    ni.psi2 = rng.uniform(-scale, scale);
    ni.xi1 = rng.uniform(-scale, scale);
    ni.xi2 = rng.uniform(-scale, scale);
    ni.BE = Vec3(rng.uniform(-field_scale, field_scale), rng.uniform(-field_scale, field_scale),
                 rng.uniform(-field_scale, field_scale));
    return ni;
}

} // namespace

TEST_CASE("instantaneous_field of the ideal bias") {
    TrapConfig cfg = nominal_config();
    const NonIdealities ideal;
    const auto at0 = instantaneous_field(cfg, ideal, Vec3::Zero(), 0.0);
    CHECK(at0.B.x() == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(at0.B.y() == 0.0);
    CHECK(at0.B.z() == doctest::Approx(24.0).epsilon(1e-12));
    const auto quarter = instantaneous_field(cfg, ideal, Vec3::Zero(), kPi / (2.0 * cfg.Omega1));
    CHECK(quarter.B.x() == doctest::Approx(24.0).epsilon(1e-12));
    CHECK(std::abs(quarter.B.z()) < 1e-12);
}

TEST_CASE("instantaneous_field exact coil model versus its first-order expansion") {
    TrapConfig cfg = nominal_config();
    auto residual = [&](double scale) {
        NonIdealities ni;
        ni.Delta = 2.0 * scale;
        ni.psi1 = 0.7 * scale;
        ni.psi2 = -1.3 * scale;
        ni.xi1 = 1.1 * scale;
        ni.xi2 = 0.4 * scale;
        double worst = 0.0;
        for (int i = 0; i < 64; ++i) {
            const double t = cfg.period() * i / 64.0;
            const Vec3 exact = instantaneous_field(cfg, ni, Vec3::Zero(), t).B;
            worst = std::max(worst, (exact - bias_first_order(cfg, ni, t)).norm());
        }
        return worst / cfg.B0;
    };
    SUBCASE("Delta = 0.01 alone at t = 0") {
        NonIdealities ni;
        ni.Delta = 0.01;
        const Vec3 exact = instantaneous_field(cfg, ni, Vec3::Zero(), 0.0).B;
        const Vec3 approx = bias_first_order(cfg, ni, 0.0);
        CHECK(exact.x() == doctest::Approx(-0.24).epsilon(1e-9));
        CHECK(exact.z() == doctest::Approx(24.0).epsilon(1e-9));
        CHECK((exact - approx).norm() <= 24.0 * 0.01 * 0.01);
    }
    SUBCASE("residual is quadratic in the non-idealities") {
        const double r1 = residual(0.004), r2 = residual(0.002);
        CHECK(r1 < 3.0 * 0.004 * 0.004 * 10);
        CHECK(r1 / r2 == doctest::Approx(4.0).epsilon(0.05));
    }
}

TEST_CASE("field magnitude is the Euclidean norm of the vector") {
    fit::NoiseSource rng(5);
    const TrapConfig cfg = nominal_config();
    for (int i = 0; i < 200; ++i) {
        const auto ni = random_ni(rng, 0.05, 0.5);
        const Vec3 r(rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1));
        const auto s = instantaneous_field(cfg, ni, r, rng.uniform(0.0, 1e-3), rng.uniform(0, 5));
        CHECK(std::abs(s.magnitude - s.B.norm()) <= 1e-12 * s.magnitude);
    }
}

TEST_CASE("time_avg_magnitude_numeric: ideal trap at the origin gives B0") {
    const TrapConfig cfg = nominal_config();
    CHECK(time_avg_magnitude_numeric(cfg, {}, Vec3::Zero()) ==
          doctest::Approx(24.0).epsilon(1e-13));
}

TEST_CASE("numeric x-curvature against the expansion coefficients") {
    const TrapConfig cfg = nominal_config();
    // Least-squares fit of c0 + c2 x^2 to numeric averages on |x| <= 20 um.
    fit::Matrix a(9, 3);
    fit::Vector y(9);
    for (int i = 0; i < 9; ++i) {
        const double x = (-20.0 + 5.0 * i) * kUm;
        a.row(i) << 1.0, x, x * x;
        y(i) = time_avg_magnitude_numeric(cfg, {}, Vec3(x, 0, 0));
    }
    const auto fitted = fit::weighted_linear_least_squares(a, y, fit::Vector::Ones(9), 1e20);
    const double numeric_c2 = fitted.params(2);
    const double independent = ideal_curvatures(cfg, QuadrupoleAveraging::IndependentPhases).x;
    const double conventional = ideal_curvatures(cfg, QuadrupoleAveraging::Conventional).x;
    CHECK(std::abs(numeric_c2 / independent - 1.0) < 1e-3);
    // The conventional B2 contribution is twice the independent-phase value; the
    // gap is exactly B2'^2 / (8 B0).
    CHECK(conventional - independent == doctest::Approx(cfg.B2p * cfg.B2p / (8 * cfg.B0)));
    CHECK(std::abs(numeric_c2 / conventional - 1.0) > 1e-3);

    SUBCASE("without B2 both forms agree with the numeric curvature to 0.1%") {
        TrapConfig no_b2 = cfg;
        no_b2.B2p = 0.0;
        for (int i = 0; i < 9; ++i) {
            y(i) = time_avg_magnitude_numeric(no_b2, {}, Vec3(a(i, 1), 0, 0));
        }
        const auto f2 = fit::weighted_linear_least_squares(a, y, fit::Vector::Ones(9), 1e20);
        CHECK(std::abs(f2.params(2) / ideal_curvatures(no_b2).x - 1.0) < 1e-3);
    }
}

TEST_CASE("numeric slope along x matches the first-order tilt coefficient") {
    const TrapConfig cfg = nominal_config();
    auto relative_error = [&](double delta) {
        NonIdealities ni;
        ni.Delta = delta;
        const double h = 1.0 * kUm;
        const double slope = (time_avg_magnitude_numeric(cfg, ni, Vec3(h, 0, 0)) -
                              time_avg_magnitude_numeric(cfg, ni, Vec3(-h, 0, 0))) /
                             (2.0 * h);
        const double expected = 0.25 * delta * cfg.q() * cfg.B0;
        return std::abs(slope / expected - 1.0);
    };
    const double e1 = relative_error(0.005);
    CHECK(e1 < 0.02);
    CHECK(relative_error(0.0025) < e1);
}

TEST_CASE("time_avg_magnitude_analytic") {
    const TrapConfig cfg = nominal_config();
    CHECK(time_avg_magnitude_analytic(cfg, {}, Vec3::Zero()) == 24.0);

    SUBCASE("ideal-trap form term by term") {
        const Vec3 r(3e-3, -2e-3, 1e-3);
        const double b1 = cfg.B1p, b2 = cfg.B2p, B0 = cfg.B0;
        const double expected = B0 + 0.5 * b1 * r.z() +
                                (3 * b1 * b1 / (16 * B0) + b2 * b2 / (4 * B0)) * r.x() * r.x() +
                                b2 * b2 / B0 * r.y() * r.y() +
                                (b1 * b1 / (16 * B0) + b2 * b2 / (4 * B0)) * r.z() * r.z();
        CHECK(time_avg_magnitude_analytic(cfg, {}, r) == doctest::Approx(expected).epsilon(1e-15));
    }

    SUBCASE("agrees with the numeric average within 10 um") {
        fit::NoiseSource rng(99);
        for (int i = 0; i < 40; ++i) {
            const auto ni = (i % 4 == 0) ? NonIdealities{} : random_ni(rng, 0.01, 0.24);
            const Vec3 dir = Vec3(rng.normal(), rng.normal(), rng.normal()).normalized();
            const Vec3 r = dir * rng.uniform(0.0, 10.0 * kUm);
            const double numeric = time_avg_magnitude_numeric(cfg, ni, r);
            const double analytic = time_avg_magnitude_analytic(cfg, ni, r);
            CHECK(std::abs(analytic / numeric - 1.0) <= 1e-3);
        }
    }

    SUBCASE("validity radius of the ideal expansion") {
        for (double radius : {0.5 * kTaylorValidityRadius, kTaylorValidityRadius}) {
            for (const Vec3 &dir : {Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(0, 0, 1), Vec3(0, 0, -1)}) {
                const Vec3 r = dir * radius;
                const double rel = std::abs(time_avg_magnitude_analytic(cfg, {}, r) /
                                                time_avg_magnitude_numeric(cfg, {}, r) -
                                            1.0);
                CHECK(rel <= 1e-3);
            }
        }
    }
}

TEST_CASE("trap_frequencies at the nominal operating point") {
    const TrapConfig cfg = nominal_config();
    const auto w = trap_frequencies(cfg);
    CHECK(w.wx / (2 * kPi) == doctest::Approx(4.9).epsilon(0.01));
    CHECK(w.wz / (2 * kPi) == doctest::Approx(2.87).epsilon(0.01));
    CHECK(w.wy / (2 * kPi) == doctest::Approx(0.92).epsilon(0.01));

    TrapConfig no_b2 = cfg;
    no_b2.B2p = 0.0;
    const auto w0 = trap_frequencies(no_b2);
    CHECK(w0.wy == 0.0);
    CHECK(w0.wx / w0.wz == doctest::Approx(std::sqrt(3.0)).epsilon(1e-12));
}

TEST_CASE("gravity_compensating_gradient") {
    PhysicalConstants k;
    const double g1 = gravity_compensating_gradient(k);
    CHECK(g1 == doctest::Approx(30.5).epsilon(0.005));
    PhysicalConstants doubled = k;
    doubled.mu *= 2.0;
    CHECK(gravity_compensating_gradient(doubled) == doctest::Approx(g1 / 2.0).epsilon(1e-14));
    PhysicalConstants weightless = k;
    weightless.g = 0.0;
    CHECK(gravity_compensating_gradient(weightless) == 0.0);
}

TEST_CASE("trap_center_x against the numeric minimum of the averaged field") {
    const TrapConfig cfg = nominal_config();
    const double q = cfg.q();
    CHECK(trap_center_x({}, q) == 0.0);

    auto numeric_minimum = [&](const NonIdealities &ni) {
        QuadratureOptions fast;
        fast.rel_tol = 1e-13;
        return argmin([&](double x) { return time_avg_magnitude_numeric(cfg, ni, Vec3(x, 0, 0), {}, fast); },
                      -500 * kUm, 500 * kUm);
    };

    NonIdealities delta;
    delta.Delta = 0.003;
    const double x0 = trap_center_x(delta, q);
    CHECK(x0 / kUm == doctest::Approx(-15.6).epsilon(0.01));
    CHECK(std::abs(numeric_minimum(delta) / x0 - 1.0) < 0.02);

    NonIdealities phase;
    phase.xi1 = phase.xi2 = 0.003;
    const double xp = trap_center_x(phase, q);
    CHECK(xp == doctest::Approx(4.0 * 0.003 / (3.0 * q)).epsilon(1e-14));
    CHECK(xp > 0.0);
    CHECK(std::abs(numeric_minimum(phase) / xp - 1.0) < 0.02);

    SUBCASE("random non-idealities up to 0.01") {
        fit::NoiseSource rng(17);
        for (int i = 0; i < 6; ++i) {
            NonIdealities ni = random_ni(rng, 0.01, 0.0);
            const double analytic = trap_center_x(ni, q);
            // first-order formula: the residual is bounded by the second-order shift ~ ni^2 / q
            const double m = ni.largest(cfg.B0);
            CHECK(std::abs(numeric_minimum(ni) - analytic) <= 0.02 * std::abs(analytic) + 2.0 * m * m / q);
        }
    }
    CHECK_THROWS_AS(trap_center_x({}, 0.0), InputError);
}

TEST_CASE("center_field_series") {
    TrapConfig cfg = nominal_config();
    std::vector<double> times;
    for (int i = 0; i < 40; ++i) {
        times.push_back(cfg.period() * i / 40.0);
    }

    SUBCASE("ideal trap is constant") {
        for (auto mode : {CenterFieldMode::FirstOrder, CenterFieldMode::Exact,
                          CenterFieldMode::StrobeAveraged}) {
            for (const auto &p : center_field_series(cfg, {}, 0.0, times, mode)) {
                CHECK(p.magnitude == doctest::Approx(24.0).epsilon(1e-13));
            }
        }
    }

    SUBCASE("B_Ex alone gives a pure sin ripple") {
        NonIdealities ni;
        ni.BE = Vec3(0.12, 0.0, 0.0);
        for (const auto &p : center_field_series(cfg, ni, 0.0, times)) {
            CHECK(p.magnitude - 24.0 ==
                  doctest::Approx(0.12 * std::sin(cfg.Omega1 * p.t)).epsilon(1e-12));
        }
    }

    SUBCASE("exact centre field differs from the first-order series at second order") {
        TrapConfig no_b2 = cfg;
        no_b2.B2p = 0.0;
        auto worst = [&](double scale) {
            NonIdealities ni;
            ni.Delta = scale;
            ni.xi1 = scale;
            ni.xi2 = -scale; // xi' = scale
            const auto approx = center_field_series(no_b2, ni, 0.0, times);
            const auto exact = center_field_series(no_b2, ni, 0.0, times, CenterFieldMode::Exact);
            double w = 0.0;
            for (std::size_t i = 0; i < times.size(); ++i) {
                w = std::max(w, std::abs(approx[i].magnitude - exact[i].magnitude));
            }
            return w / no_b2.B0;
        };
        const double w1 = worst(0.005), w2 = worst(0.0025);
        CHECK(w1 <= 5.0 * 0.005 * 0.005);
        CHECK(w1 / w2 == doctest::Approx(4.0).epsilon(0.1));
    }

    SUBCASE("balanced non-idealities make the rotation uniform to first order") {
        TrapConfig no_b2 = cfg;
        no_b2.B2p = 0.0;
        auto ripple = [&](double scale) {
            NonIdealities ni;
            ni.psi1 = 0.8 * scale;
            ni.psi2 = -0.4 * scale; // psi = 0.2 s, psi' = 0.6 s
            ni.xi1 = 0.5 * scale;
            ni.xi2 = -0.1 * scale;  // xi = 0.2 s, xi' = 0.3 s
            ni.Delta = ni.psi() - ni.xi();
            ni.BE = Vec3(0.0, 0.3 * scale * no_b2.B0, 0.0);
            const double z0 = 2.0 * (ni.xi_prime() + ni.psi_prime()) / no_b2.q();
            const auto h = center_field_harmonics(no_b2, ni, z0);
            CHECK(std::abs(h.s1) + std::abs(h.c1) + std::abs(h.s2) + std::abs(h.c2) < 1e-14);
            const auto exact = center_field_series(no_b2, ni, z0, times, CenterFieldMode::Exact);
            double lo = 1e300, hi = -1e300;
            for (const auto &p : exact) {
                lo = std::min(lo, p.magnitude);
                hi = std::max(hi, p.magnitude);
            }
            return (hi - lo) / no_b2.B0;
        };
        const double r1 = ripple(0.01), r2 = ripple(0.005);
        CHECK(r1 < 10.0 * 0.01 * 0.01);
        CHECK(r1 / r2 == doctest::Approx(4.0).epsilon(0.15));
    }

    SUBCASE("strobe averaging removes the first-order B2 ripple") {
        NonIdealities ni;
        ni.Delta = 0.004;
        const double z0 = 0.02;
        const auto exact = center_field_series(cfg, ni, z0, times, CenterFieldMode::Exact);
        const auto strobe = center_field_series(cfg, ni, z0, times, CenterFieldMode::StrobeAveraged);
        const auto first = center_field_series(cfg, ni, z0, times);
        double dev_exact = 0.0, dev_strobe = 0.0;
        for (std::size_t i = 0; i < times.size(); ++i) {
            dev_exact = std::max(dev_exact, std::abs(exact[i].magnitude - first[i].magnitude));
            dev_strobe = std::max(dev_strobe, std::abs(strobe[i].magnitude - first[i].magnitude));
        }
        CHECK(dev_strobe < 0.2 * dev_exact);
    }
}

TEST_CASE("equilibrium_height balances gravity against the averaged field") {
    const TrapConfig cfg = nominal_config();
    const double z0 = equilibrium_height(cfg, {});
    CHECK(z0 < 0.0);
    // Numeric oracle: minimise <|B|> - (m g / mu) z along z.
    const double weight = gravity_compensating_gradient(cfg.constants) / 2.0;
    const double numeric = argmin(
        [&](double z) { return time_avg_magnitude_numeric(cfg, {}, Vec3(0, 0, z)) - weight * z; },
        -0.1, 0.1);
    // B2 is absent from the first-order vertical model: it stiffens z by ~1.3%.
    CHECK(std::abs(numeric / z0 - 1.0) < 0.03);
}

TEST_CASE("zeeman_frequency") {
    const PhysicalConstants k;
    CHECK(zeeman_frequency(24.0, k) / 1e6 == doctest::Approx(16.8).epsilon(0.002));
    CHECK(zeeman_frequency(1.0, k) / 1e6 == doctest::Approx(0.70).epsilon(0.002));
    CHECK(zeeman_frequency(0.0, k) == 0.0);
    CHECK_THROWS_AS(zeeman_frequency(-1.0, k), InputError);
}

TEST_CASE("configuration validation and quadrature failure") {
    TrapConfig bad;
    bad.Omega2 = bad.Omega1;
    CHECK_THROWS_AS(bad.validate(), InputError);
    bad = TrapConfig{};
    bad.B0 = 0.0;
    CHECK_THROWS_AS(bad.validate(), InputError);
    bad = TrapConfig{};
    bad.constants.mass = -1.0;
    CHECK_THROWS_AS(bad.validate(), InputError);

    QuadratureOptions impossible;
    impossible.rel_tol = 0.0;
    impossible.max_refinements = 1;
    NonIdealities ni;
    ni.Delta = 0.01;
    CHECK_THROWS_AS(time_avg_magnitude_numeric(TrapConfig{}, ni, Vec3(1e-3, 2e-3, 3e-3), {}, impossible),
                    QuadratureNotConverged);
}
