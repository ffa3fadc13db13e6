#include "cli.hpp"

#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <numbers>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "toptrap/blochsim.hpp"
#include "toptrap/calibration.hpp"
#include "toptrap/fieldmodel.hpp"
#include "toptrap/io.hpp"
#include "toptrap/log.hpp"
#include "toptrap/polarization.hpp"

#ifndef TOPTRAP_VERSION
#define TOPTRAP_VERSION "0.0.0"
#endif

namespace toptrap::cli {

namespace fs = std::filesystem;
using io::json;
using io::Table;

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Flags shared by every leaf command.
struct Common {
    std::string config;
    std::string in;
    std::string out = ".";
    std::uint64_t seed = 1;
    std::string format = "csv";
};

// Everything a command produces, written only after it has succeeded.
class Run {
  public:
    Run(std::string command, const Common &common, bool seeded)
        : command_(std::move(command)), common_(common), seeded_(seeded) {}

    void add(const std::string &name, std::string content) {
        files_.emplace_back(name, std::move(content));
    }
    void add_json(const std::string &name, const json &doc) { add(name + ".json", doc.dump(2) + "\n"); }
    void add_table(const std::string &name, const Table &t) {
        if (common_.format == "json")
            add_json(name, io::table_to_json(t));
        else
            add(name + ".csv", io::format_csv(t));
    }

    void commit() const {
        const fs::path dir(common_.out);
        std::error_code ec;
        fs::create_directories(dir, ec);
        if (ec)
            throw InputError("cannot create output directory '" + dir.string() + "'");
        for (const auto &[name, content] : files_)
            io::write_file_atomic(dir / name, content);
        io::write_file_atomic(dir / "manifest.json", manifest().dump(2) + "\n");
    }

    json manifest() const {
        json inputs = json::array();
        if (!common_.in.empty())
            inputs.push_back(common_.in);
        json outputs = json::array();
        for (const auto &f : files_)
            outputs.push_back(f.first);
        const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
        std::tm tm{};
        gmtime_r(&now, &tm);
        char stamp[32];
        std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", &tm);
        return json{{"command", command_},
                    {"config_path", common_.config.empty() ? json(nullptr) : json(common_.config)},
                    {"input_paths", inputs},
                    {"output_dir", common_.out},
                    {"seed", seeded_ ? json(common_.seed) : json(nullptr)},
                    {"format", common_.format},
                    {"tool_version", TOPTRAP_VERSION},
                    {"outputs", outputs},
                    {"created_utc", stamp}};
    }

    const std::string &command() const { return command_; }
    const Common &common() const { return common_; }

  private:
    std::string command_;
    Common common_;
    bool seeded_;
    std::vector<std::pair<std::string, std::string>> files_;
};

io::Config config_of(const Common &c) {
    return c.config.empty() ? io::Config{} : io::load_config(c.config);
}

const std::string &require_in(const Common &c) {
    if (c.in.empty())
        throw InputError("--in is required");
    return c.in;
}

pol::StokesVector stokes_of(const std::vector<double> &v) {
    if (v.size() != 3)
        throw InputError("--stokes takes three components");
    return pol::StokesVector(v[0], v[1], v[2]);
}

json stokes_json(const pol::StokesVector &s) { return json::array({s.S1(), s.S2(), s.S3()}); }

std::string fmt(double x, int precision = 6) {
    std::ostringstream ss;
    ss << std::setprecision(precision) << x;
    return ss.str();
}

// ---------------------------------------------------------------------------
// field

struct FieldArgs {
    std::vector<double> position{0.0, 0.0, 0.0}; // cm
    double t0 = 0.0;
    std::optional<double> duration;
    int samples = 256;
    std::optional<double> dc_quad;
    std::string mode = "conventional";
};

void field_simulate(Run &run, const FieldArgs &a, std::ostream &) {
    const auto cfg = config_of(run.common());
    if (a.samples < 2)
        throw InputError("--samples must be at least 2");
    const double span = a.duration.value_or(cfg.trap.period());
    if (!(span > 0.0))
        throw InputError("--duration must be positive");
    const field::Vec3 r(a.position[0], a.position[1], a.position[2]);
    Table t;
    t.columns = {"t_s", "Bx_G", "By_G", "Bz_G", "Bmag_G"};
    for (int i = 0; i < a.samples; ++i) {
        const double time = a.t0 + span * i / (a.samples - 1);
        const auto s = field::instantaneous_field(cfg.trap, cfg.ni, r, time, a.dc_quad);
        t.rows.push_back({time, s.B.x(), s.B.y(), s.B.z(), s.magnitude});
    }
    run.add_table("field_series", t);
}

void field_timeavg(Run &run, const FieldArgs &a, std::ostream &out) {
    const auto cfg = config_of(run.common());
    const field::Vec3 r(a.position[0], a.position[1], a.position[2]);
    const auto mode = field::QuadrupoleAveraging::IndependentPhases;
    const auto analytic = [&](const field::Vec3 &p) {
        return field::time_avg_magnitude_analytic(cfg.trap, cfg.ni, p, mode);
    };
    const auto numeric = [&](const field::Vec3 &p) {
        return field::time_avg_magnitude_numeric(cfg.trap, cfg.ni, p);
    };
    const double h = 1e-2; // cm
    json rows = json::object();
    const auto add = [&](const std::string &name, double an, double nu) {
        const double scale = std::max(std::abs(nu), 1e-300);
        rows[name] = {{"analytic", an}, {"numeric", nu}, {"rel_diff", (an - nu) / scale}};
    };
    add("Bavg_G", analytic(r), numeric(r));
    static const char *axes[] = {"x", "y", "z"};
    for (int k = 0; k < 3; ++k) {
        field::Vec3 e = field::Vec3::Zero();
        e(k) = h;
        const double ap = analytic(r + e), am = analytic(r - e), a0 = analytic(r);
        const double np = numeric(r + e), nm = numeric(r - e), n0 = numeric(r);
        add(std::string("gradient_") + axes[k] + "_Gpcm", (ap - am) / (2 * h), (np - nm) / (2 * h));
        add(std::string("curvature_") + axes[k] + "_Gpcm2", (ap - 2 * a0 + am) / (2 * h * h),
            (np - 2 * n0 + nm) / (2 * h * h));
    }
    const auto c = field::ideal_curvatures(cfg.trap, field::QuadrupoleAveraging::Conventional);
    json doc{{"position_cm", json::array({r.x(), r.y(), r.z()})},
             {"step_cm", h},
             {"quantities", rows},
             {"ideal_curvatures_conventional_Gpcm2", {{"x", c.x}, {"y", c.y}, {"z", c.z}}}};
    run.add_json("timeavg", doc);
    out << "<|B|> analytic " << fmt(rows["Bavg_G"]["analytic"].get<double>(), 10) << " G, numeric "
        << fmt(rows["Bavg_G"]["numeric"].get<double>(), 10) << " G\n";
}

void field_frequencies(Run &run, const FieldArgs &a, std::ostream &out) {
    const auto cfg = config_of(run.common());
    field::QuadrupoleAveraging mode;
    if (a.mode == "conventional")
        mode = field::QuadrupoleAveraging::Conventional;
    else if (a.mode == "independent")
        mode = field::QuadrupoleAveraging::IndependentPhases;
    else
        throw InputError("--mode must be 'conventional' or 'independent'");
    const auto w = field::trap_frequencies(cfg.trap, mode);
    const double fx = w.wx / kTwoPi, fy = w.wy / kTwoPi, fz = w.wz / kTwoPi;
    Table t;
    t.columns = {"fx_Hz", "fy_Hz", "fz_Hz"};
    t.rows.push_back({fx, fy, fz});
    run.add_table("frequencies", t);
    out << "axis  f (Hz)\n"
        << "x     " << fmt(fx, 4) << "\n"
        << "y     " << fmt(fy, 4) << "\n"
        << "z     " << fmt(fz, 4) << "\n";
}

// ---------------------------------------------------------------------------
// calibrate

struct CalArgs {
    double delay = 0.0;
    double field_noise_mG = 0.0;
    double survival_noise = 0.01;
    double pulse_duration = 10e-6;
    int n_pulses = 250;
    double rabi = 0.004;
    double half_span = 150e3;
    double step = 5e3;
    int n_delays = 16;
    std::string height = "sag";
    double z0 = 0.0;
    double BEy = 0.56;
    double noise_um = 5.0;
    std::vector<double> gradients{0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12};
    bool fit_offset = false;
};

cal::HeightModel height_of(const CalArgs &a) {
    if (a.height == "sag")
        return cal::HeightModel::GravitySag;
    if (a.height == "fixed")
        return cal::HeightModel::Fixed;
    throw InputError("--height must be 'sag' or 'fixed'");
}

cal::RfPulseTrain train_of(const CalArgs &a, const field::TrapConfig &trap) {
    auto train = cal::RfPulseTrain::for_trap(trap, a.delay);
    train.pulse_duration = a.pulse_duration;
    train.n_pulses = a.n_pulses;
    train.validate();
    return train;
}

void cal_synth_spectrum(Run &run, const CalArgs &a, std::ostream &out) {
    const auto cfg = config_of(run.common());
    const auto train = train_of(a, cfg.trap);
    const double z0 = height_of(a) == cal::HeightModel::Fixed
                          ? a.z0
                          : field::equilibrium_height(cfg.trap, cfg.ni);
    const std::vector<double> t{a.delay};
    const double B = field::center_field_series(cfg.trap, cfg.ni, z0, t,
                                                field::CenterFieldMode::StrobeAveraged)[0]
                         .magnitude;
    const double f0 = field::zeeman_frequency(B, cfg.trap.constants);
    if (!(a.step > 0.0))
        throw InputError("--step must be positive");
    const auto grid = cal::rf_grid(std::round(f0 / a.step) * a.step, a.half_span, a.step);
    fit::NoiseSource rng(run.common().seed);
    cal::SpectrumNoise noise{a.field_noise_mG * 1e-3, a.survival_noise};
    const auto ds = cal::synth_strobe_spectrum(B, train, grid, a.rabi, noise, rng, cfg.trap.constants);
    run.add_table("spectrum", io::spectrum_table(ds));
    run.add_json("truth", json{{"delay_s", a.delay},
                               {"B_G", B},
                               {"center_Hz", f0},
                               {"fwhm_Hz", train.fwhm()},
                               {"z0_cm", z0}});
    out << "line centre " << fmt(f0, 12) << " Hz\n";
}

void cal_fit_spectrum(Run &run, const CalArgs &, std::ostream &out) {
    const auto ds = io::read_spectrum(require_in(run.common()));
    const auto fit = cal::fit_spectrum_peak(ds);
    run.add_json("peak_fit", io::to_json(fit));
    Table t;
    t.columns = {"freq_Hz", "survival", "model"};
    for (const auto &p : ds.points) {
        const double u = 2.0 * (p.freq - fit.center) / fit.width;
        t.rows.push_back({p.freq, p.survival, fit.baseline - fit.depth / (1.0 + u * u)});
    }
    run.add_table("spectrum_fit", t);
    out << "centre " << fmt(fit.center, 12) << " +- " << fmt(fit.uncertainty, 3) << " Hz, FWHM "
        << fmt(fit.width, 4) << " Hz\n";
}

void cal_synth_oscillation(Run &run, const CalArgs &a, std::ostream &out) {
    const auto cfg = config_of(run.common());
    cal::MeasurementOptions m;
    m.train = train_of(a, cfg.trap);
    m.rabi = a.rabi;
    m.half_span = a.half_span;
    m.step = a.step;
    m.n_delays = a.n_delays;
    m.noise = {a.field_noise_mG * 1e-3, a.survival_noise};
    m.height = height_of(a);
    m.z0 = a.z0;
    fit::NoiseSource rng(run.common().seed);
    const auto samples = cal::measure_field_oscillation(cfg.trap, cfg.ni, m, rng);
    run.add_table("oscillation", io::oscillation_table(samples));
    const double z0 = cal::measurement_height(cfg.trap, cfg.ni, m);
    const auto pred = cal::predicted_amplitudes(cfg.trap, cfg.ni, z0);
    run.add_json("truth", json{{"z0_cm", z0},
                               {"first_order_amplitudes_Hz",
                                {{"a0_Hz", pred(0)}, {"a_s1_Hz", pred(1)}, {"a_c1_Hz", pred(2)},
                                 {"a_s2_Hz", pred(3)}, {"a_c2_Hz", pred(4)}}},
                               {"rms_variation_mG", cal::true_rms_variation_mG(cfg.trap, cfg.ni, m)}});
    out << samples.size() << " delays written\n";
}

void cal_fit_oscillation(Run &run, const CalArgs &, std::ostream &out) {
    const auto cfg = config_of(run.common());
    const auto samples = io::read_oscillation(require_in(run.common()));
    const auto fit = cal::fit_field_oscillation(samples, cfg.trap.Omega1, cfg.trap.constants);
    run.add_json("oscillation_fit", io::to_json(fit));
    Table t;
    t.columns = {"delay_s", "center_Hz", "model_Hz"};
    const double W = cfg.trap.Omega1;
    for (const auto &s : samples) {
        const double m = fit.a0 + fit.a_s1 * std::sin(W * s.delay) + fit.a_c1 * std::cos(W * s.delay) +
                         fit.a_s2 * std::sin(2 * W * s.delay) + fit.a_c2 * std::cos(2 * W * s.delay);
        t.rows.push_back({s.delay, s.center, m});
    }
    run.add_table("oscillation_model", t);
    out << "a_s1 " << fmt(fit.a_s1, 4) << " a_c1 " << fmt(fit.a_c1, 4) << " a_s2 " << fmt(fit.a_s2, 4)
        << " a_c2 " << fmt(fit.a_c2, 4) << " Hz, rms " << fmt(fit.rms_variation_mG, 4) << " mG\n";
}

void cal_suggest(Run &run, const CalArgs &a, std::ostream &out) {
    auto cfg = config_of(run.common());
    json doc;
    try {
        doc = json::parse(io::read_text(require_in(run.common())));
    } catch (const json::parse_error &e) {
        throw ConfigParseError(std::string("fit document is not valid JSON: ") + e.what());
    }
    const auto fit = io::oscillation_fit_from_json(doc);
    const auto adj = cal::compensation_step(fit, cfg.trap, cfg.ni, height_of(a), a.z0);
    cal::apply_adjustment(adj, cfg.trap, cfg.ni);
    run.add_json("adjustment", io::to_json(adj));
    run.add_json("adjusted_config", io::config_to_json(cfg));
    out << "dBEx " << fmt(adj.dBEx) << " G, dBEz " << fmt(adj.dBEz) << " G, dDelta "
        << fmt(adj.dDelta) << ", dB1p " << fmt(adj.dB1p) << " G/cm\n";
}

void cal_synth_positions(Run &run, const CalArgs &a, std::ostream &) {
    const auto cfg = config_of(run.common());
    fit::NoiseSource rng(run.common().seed);
    const auto ds = cal::synth_positions(a.gradients, cfg.trap.B2p, a.BEy, a.noise_um * 1e-4, rng);
    run.add_table("positions", io::positions_table(ds));
}

void cal_ybias_fit(Run &run, const CalArgs &a, std::ostream &out) {
    const auto cfg = config_of(run.common());
    const auto ds = io::read_positions(require_in(run.common()));
    const auto fit = cal::fit_ybias(ds, cfg.trap.B2p, a.fit_offset);
    run.add_json("ybias_fit", io::to_json(fit));
    Table t;
    t.columns = {"BQp_Gpcm", "y0_cm", "model_cm"};
    for (const auto &p : ds.points)
        t.rows.push_back({p.BQp, p.y0, cal::ybias_position(p.BQp, cfg.trap.B2p, fit.BEy) + fit.offset});
    run.add_table("ybias_model", t);
    out << "BEy " << fmt(fit.BEy, 5) << " +- " << fmt(fit.sigma, 3) << " G\n";
}

// ---------------------------------------------------------------------------
// pol

struct PolArgs {
    std::vector<double> stokes{1.0, 0.0, 0.0};
    std::vector<double> reference{0.0, 0.0, 1.0};
    double theta_max = std::numbers::pi;
    int n_theta = 181;
    double phi = 0.0;
    double s1_err = 0.0;
    double s2_err = 0.0;
    int newton_steps = 1;
    double rhomb_error = 0.0;
    double tau = 120e-9;
    std::optional<double> f1;
    double offset = 0.0;
};

std::vector<pol::RetarderElement> chain_of(const Common &c) {
    return c.in.empty() ? std::vector<pol::RetarderElement>{} : io::read_chain(c.in);
}

void pol_chain(Run &run, const PolArgs &a, std::ostream &out) {
    const auto chain = chain_of(run.common());
    auto s = stokes_of(a.stokes);
    Table t;
    t.columns = {"element", "S1", "S2", "S3"};
    t.rows.push_back({0.0, s.S1(), s.S2(), s.S3()});
    for (std::size_t i = 0; i < chain.size(); ++i) {
        s = pol::apply_chain(std::span(chain).subspan(i, 1), s);
        t.rows.push_back({static_cast<double>(i + 1), s.S1(), s.S2(), s.S3()});
    }
    run.add_table("chain_states", t);
    run.add_json("chain_result", json{{"input", stokes_json(stokes_of(a.stokes))},
                                      {"output", stokes_json(s)},
                                      {"elements", io::chain_to_json(chain)}});
    out << "S = (" << fmt(s.S1()) << ", " << fmt(s.S2()) << ", " << fmt(s.S3()) << ")\n";
}

void pol_fidelity(Run &run, const PolArgs &a, std::ostream &out) {
    const auto chain = chain_of(run.common());
    const auto in = stokes_of(a.stokes);
    const auto ref = stokes_of(a.reference);
    const auto s = pol::apply_chain(chain, in);
    const double F = pol::fidelity(s, ref);
    json doc{{"output", stokes_json(s)}, {"reference", stokes_json(ref)}, {"fidelity", F},
             {"infidelity", 1.0 - F}};
    if (chain.size() == 1)
        doc["weak_biref_fidelity"] = pol::weak_biref_fidelity(in, chain[0].alpha, chain[0].delta);
    run.add_json("fidelity", doc);
    out << "F = " << fmt(F, 12) << "\n";
}

void pol_projections(Run &run, const PolArgs &a, std::ostream &) {
    const auto s = stokes_of(a.stokes);
    if (a.n_theta < 2)
        throw InputError("--n-theta must be at least 2");
    Table t;
    t.columns = {"theta_rad", "phi_rad", "Epi2", "Eminus2", "Eplus2"};
    for (int i = 0; i < a.n_theta; ++i) {
        const pol::BeamGeometry g{a.theta_max * i / (a.n_theta - 1), a.phi};
        const auto p = pol::projections(s, g);
        t.rows.push_back({g.theta, g.phi, p.pi, p.minus, p.plus});
    }
    run.add_table("projections", t);
}

void pol_compensate(Run &run, const PolArgs &a, std::ostream &out) {
    pol::CompensationOptions o;
    o.newton_steps = a.newton_steps;
    o.rhomb_error = a.rhomb_error;
    const auto angles = pol::solve_compensation(a.s1_err, a.s2_err, o);
    const std::vector<pol::RetarderElement> downstream{pol::disturbance_element(a.s1_err, a.s2_err)};
    const auto chain = pol::preparation_chain(angles.alpha1, angles.alpha2, downstream, a.rhomb_error);
    const auto s = pol::apply_chain(chain, pol::polarizer_output());
    const auto fresh = pol::preparation_chain(0.0, 0.0, downstream, a.rhomb_error);
    const auto before = pol::apply_chain(fresh, pol::polarizer_output());
    run.add_json("compensation", json{{"alpha1_rad", angles.alpha1},
                                      {"alpha2_rad", angles.alpha2},
                                      {"before", stokes_json(before)},
                                      {"after", stokes_json(s)},
                                      {"residual_S1", s.S1()},
                                      {"residual_S2", s.S2()},
                                      {"fidelity", pol::fidelity(s, pol::StokesVector(0, 0, 1))},
                                      {"chain", io::chain_to_json(chain)}});
    out << "alpha1 " << fmt(angles.alpha1) << " rad, alpha2 " << fmt(angles.alpha2)
        << " rad, residual (" << fmt(s.S1(), 3) << ", " << fmt(s.S2(), 3) << ")\n";
}

void pol_pulse_average(Run &run, const PolArgs &a, std::ostream &out) {
    double omega1 = kTwoPi * 12.8e3;
    if (!run.common().config.empty())
        omega1 = config_of(run.common()).trap.Omega1;
    if (a.f1)
        omega1 = kTwoPi * *a.f1;
    const double exact = 1.0 - pol::pulse_avg_fidelity(omega1, a.tau, a.offset);
    const double leading = pol::pulse_avg_infidelity_leading(omega1, a.tau, a.offset);
    const double numeric = 1.0 - pol::pulse_avg_fidelity_numeric(omega1, a.tau, a.offset);
    run.add_json("pulse_average", json{{"Omega1_radps", omega1},
                                       {"tau_s", a.tau},
                                       {"t_offset_s", a.offset},
                                       {"infidelity", exact},
                                       {"infidelity_leading", leading},
                                       {"infidelity_numeric", numeric}});
    out << "1 - F = " << fmt(exact, 6) << "\n";
}

// ---------------------------------------------------------------------------
// bloch

struct BlochArgs {
    double B = 24.0;        // G
    double detuning = 0.0;  // Hz
    std::string normalization = "isotropic";
    std::string kind = "pi";
    double impurity = 1e-4;
    double i_min = 1.0;
    double i_max = 1e4;
    int n_points = 25;
    bool find_max = false;
    int n_pulses = 1280;
    double tau = 120e-9;
    double intensity = 100.0;
    std::optional<double> P;
    double kappa = 9.5;
    double kappa_minus = 18.0;
    double t_step = 0.05e-6;
    int n_side = 10;
    double residual = 0.0;
    std::vector<double> stokes{0.0, 0.0, 1.0};
    bool simulate = false;
};

bloch::LevelSystem system_of(const BlochArgs &a) {
    bloch::DipoleNormalization n;
    if (a.normalization == "isotropic")
        n = bloch::DipoleNormalization::Isotropic;
    else if (a.normalization == "cg")
        n = bloch::DipoleNormalization::ClebschGordan;
    else
        throw InputError("--normalization must be 'isotropic' or 'cg'");
    return bloch::build_level_system(a.B, kTwoPi * a.detuning, {}, n);
}

void bloch_levels(Run &run, const BlochArgs &a, std::ostream &) {
    run.add_json("level_system", io::level_system_to_json(system_of(a)));
}

void bloch_scan(Run &run, const BlochArgs &a, std::ostream &out) {
    const auto sys = system_of(a);
    bloch::Polarization kind;
    if (a.kind == "pi")
        kind = bloch::Polarization::Pi;
    else if (a.kind == "minus")
        kind = bloch::Polarization::SigmaMinus;
    else
        throw InputError("--kind must be 'pi' or 'minus'");
    if (a.n_points < 2 || !(a.i_min > 0.0) || !(a.i_max > a.i_min))
        throw InputError("need --n-points >= 2 and 0 < --i-min < --i-max");
    std::vector<double> I;
    for (int i = 0; i < a.n_points; ++i)
        I.push_back(a.i_min * std::pow(a.i_max / a.i_min, static_cast<double>(i) / (a.n_points - 1)));
    const auto pts = bloch::loss_vs_intensity(sys, kind, a.impurity, I, a.n_pulses, a.tau);
    Table t;
    t.columns = {"I_over_Isat", "epsilon", "survival_N"};
    Table ref;
    ref.columns = {"I_over_Isat", "epsilon", "survival_N"};
    std::size_t imax = 0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        t.rows.push_back({pts[i].intensity, pts[i].epsilon, pts[i].survival});
        ref.rows.push_back({pts[i].intensity, pts[i].epsilon_reference, pts[i].survival_reference});
        if (pts[i].epsilon > pts[imax].epsilon)
            imax = i;
    }
    run.add_table("scan", t);
    run.add_table("scan_reference", ref);
    json summary{{"impurity_kind", a.kind},
                 {"impurity", a.impurity},
                 {"n_pulses", a.n_pulses},
                 {"tau_s", a.tau},
                 {"grid_max_I_over_Isat", pts[imax].intensity},
                 {"grid_max_epsilon", pts[imax].epsilon}};
    if (a.find_max) {
        const auto m = bloch::find_loss_maximum(sys, kind, a.impurity, I, a.tau);
        summary["max_I_over_Isat"] = m.intensity;
        summary["max_epsilon"] = m.epsilon;
        summary["max_interior"] = m.interior;
    }
    run.add_json("scan_summary", summary);
    out << "largest loss on grid at I/I_S = " << fmt(pts[imax].intensity, 4) << "\n";
}

void bloch_kappa(Run &run, const BlochArgs &a, std::ostream &out) {
    const auto k = bloch::calibrate_kappa(system_of(a), a.intensity, a.tau);
    run.add_json("kappa", io::to_json(k));
    out << "kappa_pi " << fmt(k.kappa_pi, 4) << ", kappa_minus " << fmt(k.kappa_minus, 4) << "\n";
}

void bloch_infer(Run &run, const BlochArgs &a, std::ostream &out) {
    if (!a.P)
        throw InputError("--P is required");
    const double e = bloch::infer_impurity(*a.P, a.n_pulses, a.kappa);
    run.add_json("infer", json{{"P", *a.P}, {"N", a.n_pulses}, {"kappa", a.kappa}, {"impurity", e}});
    out << "impurity " << fmt(e, 6) << "\n";
}

void bloch_alignment(Run &run, const BlochArgs &a, std::ostream &out) {
    if (a.n_side < 1 || !(a.t_step > 0.0))
        throw InputError("need --n-side >= 1 and --t-step > 0");
    std::vector<double> t;
    for (int i = -a.n_side; i <= a.n_side; ++i)
        t.push_back(i * a.t_step);
    const auto s = stokes_of(a.stokes);
    double omega1 = kTwoPi * 12.8e3;
    if (!run.common().config.empty())
        omega1 = config_of(run.common()).trap.Omega1;
    bloch::AlignmentScan scan;
    if (a.simulate) {
        bloch::PulseSpec p;
        p.duration = a.tau;
        p.intensity = a.intensity;
        p.n_pulses = a.n_pulses;
        scan = bloch::alignment_scan(system_of(a), p, s, t, omega1, a.residual);
    } else {
        bloch::AlignmentOptions o;
        o.omega1 = omega1;
        o.residual_pi = a.residual;
        o.kappa_pi = a.kappa;
        o.kappa_minus = a.kappa_minus;
        o.n_pulses = a.n_pulses;
        scan = bloch::alignment_scan(s, t, o);
    }
    Table tab;
    tab.columns = {"t_s", "theta_rad", "Epi2", "Eminus2", "survival_N", "inferred_Epi2"};
    for (const auto &p : scan.points)
        tab.rows.push_back({p.t, p.theta, p.pi_fraction, p.minus_fraction, p.survival, p.inferred_pi});
    run.add_table("alignment", tab);
    run.add_json("alignment_fit", json{{"curvature", scan.curvature},
                                       {"curvature_sigma", scan.curvature_sigma},
                                       {"floor", scan.floor},
                                       {"simulated_kappa", a.simulate}});
    out << "curvature " << fmt(scan.curvature, 4) << " +- " << fmt(scan.curvature_sigma, 2) << "\n";
}

// ---------------------------------------------------------------------------

void add_common(CLI::App *sub, Common &c, bool config, bool in) {
    if (config)
        sub->add_option("--config", c.config, "JSON configuration document");
    if (in)
        sub->add_option("--in", c.in, "input dataset");
    sub->add_option("--out", c.out, "output directory")->capture_default_str();
    sub->add_option("--seed", c.seed, "noise seed")->capture_default_str();
    sub->add_option("--format", c.format, "table format")
        ->check(CLI::IsMember({"csv", "json"}))
        ->capture_default_str();
}

void write_diagnostic(const Common &c, const std::string &command, const char *kind,
                      const std::exception &e) {
    try {
        std::error_code ec;
        fs::create_directories(c.out, ec);
        const json doc{{"command", command}, {"error", kind}, {"message", e.what()}};
        io::write_file_atomic(fs::path(c.out) / "error.json", doc.dump(2) + "\n");
    } catch (...) {
    }
}

} // namespace

int run(int argc, const char *const *argv, std::ostream &out, std::ostream &err) {
    CLI::App app{"TOP-trap field, calibration, polarization and Bloch-equation toolkit", "toptrap"};
    app.set_version_flag("--version", TOPTRAP_VERSION);
    app.require_subcommand(1);

    Common common;
    FieldArgs fa;
    CalArgs ca;
    PolArgs pa;
    BlochArgs ba;

    std::string command;
    std::function<void(Run &, std::ostream &)> action;
    bool seeded = false;

    const auto leaf = [&](CLI::App *group, const std::string &name, const std::string &help,
                          bool config, bool in, bool uses_seed, auto fn, auto &args) {
        auto *sub = group->add_subcommand(name, help);
        add_common(sub, common, config, in);
        sub->callback([&, name, group, uses_seed, fn] {
            command = group->get_name() + " " + name;
            seeded = uses_seed;
            action = [fn, &args](Run &r, std::ostream &o) { fn(r, args, o); };
        });
        return sub;
    };

    // field
    auto *field = app.add_subcommand("field", "trap field model")->require_subcommand(1);
    auto *fs_ = leaf(field, "simulate", "B(t) at a point", true, false, false, field_simulate, fa);
    fs_->add_option("--position", fa.position, "x y z in cm")->expected(3);
    fs_->add_option("--t0", fa.t0, "start time, s");
    fs_->add_option("--duration", fa.duration, "span, s (default one rotation period)");
    fs_->add_option("--samples", fa.samples)->capture_default_str();
    fs_->add_option("--dc-quad", fa.dc_quad, "static spherical quadrupole B_Q', G/cm");
    auto *ft = leaf(field, "timeavg", "time-averaged |B|, analytic and numeric", true, false, false,
                    field_timeavg, fa);
    ft->add_option("--position", fa.position, "x y z in cm")->expected(3);
    auto *ff = leaf(field, "frequencies", "trap frequencies", true, false, false, field_frequencies, fa);
    ff->add_option("--mode", fa.mode, "conventional | independent")->capture_default_str();

    // calibrate
    auto *calg = app.add_subcommand("calibrate", "field calibration")->require_subcommand(1);
    const auto spectrum_opts = [&](CLI::App *s) {
        s->add_option("--pulse-duration", ca.pulse_duration, "s")->capture_default_str();
        s->add_option("--n-pulses", ca.n_pulses)->capture_default_str();
        s->add_option("--rabi", ca.rabi, "single-pulse transfer at line centre")->capture_default_str();
        s->add_option("--half-span", ca.half_span, "Hz")->capture_default_str();
        s->add_option("--step", ca.step, "Hz")->capture_default_str();
        s->add_option("--field-noise-mG", ca.field_noise_mG)->capture_default_str();
        s->add_option("--survival-noise", ca.survival_noise)->capture_default_str();
        s->add_option("--height", ca.height, "sag | fixed")->capture_default_str();
        s->add_option("--z0", ca.z0, "cm, with --height fixed");
    };
    auto *css = leaf(calg, "synth-spectrum", "synthetic strobed spectrum", true, false, true,
                     cal_synth_spectrum, ca);
    spectrum_opts(css);
    css->add_option("--delay", ca.delay, "s after the zero phase");
    leaf(calg, "fit-spectrum", "Lorentzian peak fit", false, true, false, cal_fit_spectrum, ca);
    auto *cso = leaf(calg, "synth-oscillation", "synthetic centre-frequency samples", true, false, true,
                     cal_synth_oscillation, ca);
    spectrum_opts(cso);
    cso->add_option("--n-delays", ca.n_delays)->capture_default_str();
    leaf(calg, "fit-oscillation", "harmonic fit of centre frequencies", true, true, false,
         cal_fit_oscillation, ca);
    auto *csu = leaf(calg, "suggest", "compensation from an oscillation fit", true, true, false,
                     cal_suggest, ca);
    csu->add_option("--height", ca.height, "sag | fixed")->capture_default_str();
    csu->add_option("--z0", ca.z0, "cm, with --height fixed");
    auto *csp = leaf(calg, "synth-positions", "synthetic trap positions vs dc quadrupole", true, false,
                     true, cal_synth_positions, ca);
    csp->add_option("--BEy", ca.BEy, "G")->capture_default_str();
    csp->add_option("--noise-um", ca.noise_um)->capture_default_str();
    csp->add_option("--gradients", ca.gradients, "B_Q' values, G/cm");
    auto *cyb = leaf(calg, "ybias-fit", "out-of-plane field from positions", true, true, false,
                     cal_ybias_fit, ca);
    cyb->add_flag("--fit-offset", ca.fit_offset, "fit a constant position offset");

    // pol
    auto *polg = app.add_subcommand("pol", "polarization")->require_subcommand(1);
    auto *pc = leaf(polg, "chain", "propagate a Stokes vector", false, true, false, pol_chain, pa);
    pc->add_option("--stokes", pa.stokes, "input S1 S2 S3")->expected(3);
    auto *pf = leaf(polg, "fidelity", "fidelity after a chain", false, true, false, pol_fidelity, pa);
    pf->add_option("--stokes", pa.stokes, "input S1 S2 S3")->expected(3);
    pf->add_option("--ref", pa.reference, "reference S1 S2 S3")->expected(3);
    auto *pp = leaf(polg, "projections", "spherical components vs beam angle", false, false, false,
                    pol_projections, pa);
    pp->add_option("--stokes", pa.stokes, "S1 S2 S3")->expected(3);
    pp->add_option("--theta-max", pa.theta_max)->capture_default_str();
    pp->add_option("--n-theta", pa.n_theta)->capture_default_str();
    pp->add_option("--phi", pa.phi)->capture_default_str();
    auto *pco = leaf(polg, "compensate", "waveplate angles cancelling a downstream error", false, false,
                     false, pol_compensate, pa);
    pco->add_option("--s1-err", pa.s1_err);
    pco->add_option("--s2-err", pa.s2_err);
    pco->add_option("--newton-steps", pa.newton_steps)->capture_default_str();
    pco->add_option("--rhomb-error", pa.rhomb_error, "rad");
    auto *ppa = leaf(polg, "pulse-average", "infidelity averaged over a pulse", true, false, false,
                     pol_pulse_average, pa);
    ppa->add_option("--tau", pa.tau, "pulse duration, s")->capture_default_str();
    ppa->add_option("--f1", pa.f1, "rotation frequency, Hz");
    ppa->add_option("--offset", pa.offset, "pulse-centre offset, s");

    // bloch
    auto *blg = app.add_subcommand("bloch", "13-state Bloch equations")->require_subcommand(1);
    const auto system_opts = [&](CLI::App *s) {
        s->add_option("--B", ba.B, "field, G")->capture_default_str();
        s->add_option("--detuning", ba.detuning, "Hz from the (2,2)-(2',2) resonance");
        s->add_option("--normalization", ba.normalization, "isotropic | cg")->capture_default_str();
    };
    system_opts(leaf(blg, "levels", "level-system dump", false, false, false, bloch_levels, ba));
    auto *bs = leaf(blg, "scan-intensity", "loss vs intensity", false, false, false, bloch_scan, ba);
    system_opts(bs);
    bs->add_option("--kind", ba.kind, "pi | minus")->capture_default_str();
    bs->add_option("--impurity", ba.impurity)->capture_default_str();
    bs->add_option("--i-min", ba.i_min)->capture_default_str();
    bs->add_option("--i-max", ba.i_max)->capture_default_str();
    bs->add_option("--n-points", ba.n_points)->capture_default_str();
    bs->add_option("--N", ba.n_pulses)->capture_default_str();
    bs->add_option("--tau", ba.tau)->capture_default_str();
    bs->add_flag("--find-max", ba.find_max, "refine the loss maximum");
    auto *bk = leaf(blg, "kappa", "loss-per-impurity slopes", false, false, false, bloch_kappa, ba);
    system_opts(bk);
    bk->add_option("--intensity", ba.intensity, "I / I_S")->capture_default_str();
    bk->add_option("--tau", ba.tau)->capture_default_str();
    auto *bi = leaf(blg, "infer", "impurity from survival", false, false, false, bloch_infer, ba);
    bi->add_option("--P", ba.P, "survival");
    bi->add_option("--N", ba.n_pulses)->capture_default_str();
    bi->add_option("--kappa", ba.kappa)->capture_default_str();
    auto *ba_ = leaf(blg, "alignment-scan", "pulse-timing scan", true, false, false, bloch_alignment, ba);
    system_opts(ba_);
    ba_->add_option("--t-step", ba.t_step, "s")->capture_default_str();
    ba_->add_option("--n-side", ba.n_side, "points each side of zero")->capture_default_str();
    ba_->add_option("--kappa-pi", ba.kappa)->capture_default_str();
    ba_->add_option("--kappa-minus", ba.kappa_minus)->capture_default_str();
    ba_->add_option("--N", ba.n_pulses)->capture_default_str();
    ba_->add_option("--residual", ba.residual, "|E_pi|^2 at perfect alignment");
    ba_->add_option("--stokes", ba.stokes, "S1 S2 S3")->expected(3);
    ba_->add_flag("--simulate", ba.simulate, "calibrate kappa with the Bloch model");
    ba_->add_option("--intensity", ba.intensity, "I / I_S, with --simulate")->capture_default_str();
    ba_->add_option("--tau", ba.tau)->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        // help and version requests exit 0, everything else is bad input
        return app.exit(e, out, err) == 0 ? kExitOk : kExitBadInput;
    }

    if (!action) {
        err << "error: no command\n";
        return kExitBadInput;
    }
    try {
        Run r(command, common, seeded);
        action(r, out);
        r.commit();
        return kExitOk;
    } catch (const InputError &e) {
        err << "error: " << e.what() << "\n";
        return kExitBadInput;
    } catch (const NumericalError &e) {
        err << "numerical failure: " << e.what() << "\n";
        write_diagnostic(common, command, "numerical", e);
        return kExitNumerical;
    } catch (const std::exception &e) {
        err << "failure: " << e.what() << "\n";
        write_diagnostic(common, command, "internal", e);
        return kExitNumerical;
    }
}

} // namespace toptrap::cli
