#include "toptrap/io.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

namespace toptrap::io {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double number_field(const json &doc, const std::string &key) {
    const auto &v = doc.at(key);
    if (!v.is_number())
        throw SchemaError("config key '" + key + "' must be a number");
    const double x = v.get<double>();
    if (!std::isfinite(x))
        throw SchemaError("config key '" + key + "' is not finite");
    return x;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t'))
        s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
        s.remove_suffix(1);
    return s;
}

std::vector<std::string_view> split(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(',', start);
        out.push_back(trim(line.substr(start, pos == std::string_view::npos ? pos : pos - start)));
        if (pos == std::string_view::npos)
            break;
        start = pos + 1;
    }
    return out;
}

std::string format_double(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

double require_number(const json &doc, const char *key) {
    if (!doc.contains(key) || !doc.at(key).is_number())
        throw SchemaError(std::string("missing numeric field '") + key + "'");
    return doc.at(key).get<double>();
}

} // namespace

// ---------------------------------------------------------------------------

Config parse_config(std::string_view text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error &e) {
        throw ConfigParseError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!doc.is_object())
        throw SchemaError("config must be a JSON object");
    if (!doc.contains("schema_version"))
        throw SchemaError("config lacks 'schema_version'");
    if (!doc["schema_version"].is_number_integer() || doc["schema_version"].get<int>() != kSchemaVersion)
        throw SchemaError("unsupported schema_version (expected " + std::to_string(kSchemaVersion) + ")");

    Config cfg;
    auto &t = cfg.trap;
    auto &ni = cfg.ni;
    for (const auto &[key, value] : doc.items()) {
        if (key == "schema_version")
            continue;
        const double x = number_field(doc, key);
        if (key == "B0_G") t.B0 = x;
        else if (key == "B1p_Gpcm") t.B1p = x;
        else if (key == "B2p_Gpcm") t.B2p = x;
        else if (key == "f1_Hz") t.Omega1 = kTwoPi * x;
        else if (key == "f2_Hz") t.Omega2 = kTwoPi * x;
        else if (key == "Delta") ni.Delta = x;
        else if (key == "psi1_rad") ni.psi1 = x;
        else if (key == "psi2_rad") ni.psi2 = x;
        else if (key == "xi1_rad") ni.xi1 = x;
        else if (key == "xi2_rad") ni.xi2 = x;
        else if (key == "BEx_G") ni.BE.x() = x;
        else if (key == "BEy_G") ni.BE.y() = x;
        else if (key == "BEz_G") ni.BE.z() = x;
        else throw SchemaError("unknown config key '" + key + "'");
    }
    try {
        t.validate();
    } catch (const InputError &e) {
        throw SchemaError(std::string("invalid trap parameters: ") + e.what());
    }
    ni.warn_if_large(t.B0);
    return cfg;
}

Config load_config(const std::filesystem::path &path) { return parse_config(read_text(path)); }

json config_to_json(const Config &cfg) {
    const auto &t = cfg.trap;
    const auto &ni = cfg.ni;
    return json{{"schema_version", kSchemaVersion},
                {"B0_G", t.B0},
                {"B1p_Gpcm", t.B1p},
                {"B2p_Gpcm", t.B2p},
                {"f1_Hz", t.Omega1 / kTwoPi},
                {"f2_Hz", t.Omega2 / kTwoPi},
                {"Delta", ni.Delta},
                {"psi1_rad", ni.psi1},
                {"psi2_rad", ni.psi2},
                {"xi1_rad", ni.xi1},
                {"xi2_rad", ni.xi2},
                {"BEx_G", ni.BE.x()},
                {"BEy_G", ni.BE.y()},
                {"BEz_G", ni.BE.z()}};
}

// ---------------------------------------------------------------------------

int Table::column(std::string_view name) const {
    for (std::size_t i = 0; i < columns.size(); ++i)
        if (columns[i] == name)
            return static_cast<int>(i);
    return -1;
}

Table parse_csv(std::string_view text, const std::vector<std::string> &required,
                const std::vector<std::string> &optional) {
    Table table;
    std::size_t line_no = 0;
    bool have_header = false;
    std::size_t start = 0;
    while (start <= text.size()) {
        auto end = text.find('\n', start);
        if (end == std::string_view::npos)
            end = text.size();
        const auto line = trim(text.substr(start, end - start));
        start = end + 1;
        ++line_no;
        if (line.empty() || line.front() == '#')
            continue;
        const auto cells = split(line);
        if (!have_header) {
            for (const auto c : cells)
                table.columns.emplace_back(c);
            if (table.columns.size() < required.size())
                throw SchemaError("CSV header has too few columns");
            for (std::size_t i = 0; i < table.columns.size(); ++i) {
                const std::string *want = i < required.size() ? &required[i]
                                          : i - required.size() < optional.size()
                                              ? &optional[i - required.size()]
                                              : nullptr;
                if (want == nullptr || table.columns[i] != *want)
                    throw SchemaError("unexpected CSV column '" + table.columns[i] + "' at position " +
                                      std::to_string(i + 1));
            }
            have_header = true;
            continue;
        }
        if (cells.size() != table.columns.size())
            throw SchemaError("CSV line " + std::to_string(line_no) + " has " +
                              std::to_string(cells.size()) + " fields, expected " +
                              std::to_string(table.columns.size()));
        std::vector<double> row;
        row.reserve(cells.size());
        for (const auto c : cells) {
            double x = 0.0;
            const auto [ptr, ec] = std::from_chars(c.data(), c.data() + c.size(), x);
            if (ec != std::errc() || ptr != c.data() + c.size() || !std::isfinite(x))
                throw SchemaError("CSV line " + std::to_string(line_no) + ": '" + std::string(c) +
                                  "' is not a finite number");
            row.push_back(x);
        }
        table.rows.push_back(std::move(row));
    }
    if (!have_header)
        throw SchemaError("CSV is empty");
    return table;
}

Table read_csv(const std::filesystem::path &path, const std::vector<std::string> &required,
               const std::vector<std::string> &optional) {
    try {
        return parse_csv(read_text(path), required, optional);
    } catch (const SchemaError &e) {
        throw SchemaError(path.string() + ": " + e.what());
    }
}

std::string format_csv(const Table &table) {
    std::string out;
    for (std::size_t i = 0; i < table.columns.size(); ++i) {
        if (i) out += ',';
        out += table.columns[i];
    }
    out += '\n';
    for (const auto &row : table.rows) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (i) out += ',';
            out += format_double(row[i]);
        }
        out += '\n';
    }
    return out;
}

json table_to_json(const Table &table) {
    json arr = json::array();
    for (const auto &row : table.rows) {
        json obj = json::object();
        for (std::size_t i = 0; i < row.size(); ++i)
            obj[table.columns[i]] = row[i];
        arr.push_back(std::move(obj));
    }
    return arr;
}

std::string read_text(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw InputError("cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file_atomic(const std::filesystem::path &path, std::string_view content) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out)
            throw InputError("cannot write '" + tmp.string() + "'");
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out)
            throw InputError("write to '" + tmp.string() + "' failed");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp, ec);
        throw InputError("cannot rename onto '" + path.string() + "'");
    }
}

// ---------------------------------------------------------------------------

cal::SpectrumDataset spectrum_from_table(const Table &table) {
    cal::SpectrumDataset ds;
    const bool has_sigma = table.column("sigma") >= 0;
    for (const auto &r : table.rows)
        ds.points.push_back({r[0], r[1], has_sigma ? r[2] : 0.0});
    try {
        ds.validate();
    } catch (const InputError &e) {
        throw SchemaError(e.what());
    }
    return ds;
}

Table spectrum_table(const cal::SpectrumDataset &ds) {
    bool has_sigma = false;
    for (const auto &p : ds.points)
        has_sigma = has_sigma || p.sigma > 0.0;
    Table t;
    t.columns = {"freq_Hz", "survival"};
    if (has_sigma)
        t.columns.push_back("sigma");
    for (const auto &p : ds.points) {
        t.rows.push_back({p.freq, p.survival});
        if (has_sigma)
            t.rows.back().push_back(p.sigma);
    }
    return t;
}

cal::SpectrumDataset read_spectrum(const std::filesystem::path &path) {
    return spectrum_from_table(read_csv(path, {"freq_Hz", "survival"}, {"sigma"}));
}

std::vector<cal::OscillationSample> oscillation_from_table(const Table &table) {
    std::vector<cal::OscillationSample> out;
    for (const auto &r : table.rows) {
        if (r[2] < 0.0)
            throw SchemaError("sigma_Hz must be non-negative");
        out.push_back({r[0], r[1], r[2]});
    }
    return out;
}

Table oscillation_table(std::span<const cal::OscillationSample> samples) {
    Table t;
    t.columns = {"delay_s", "center_Hz", "sigma_Hz"};
    for (const auto &s : samples)
        t.rows.push_back({s.delay, s.center, s.sigma});
    return t;
}

std::vector<cal::OscillationSample> read_oscillation(const std::filesystem::path &path) {
    return oscillation_from_table(read_csv(path, {"delay_s", "center_Hz", "sigma_Hz"}));
}

cal::PositionDataset positions_from_table(const Table &table) {
    cal::PositionDataset ds;
    const bool has_sigma = table.column("sigma_cm") >= 0;
    for (const auto &r : table.rows)
        ds.points.push_back({r[0], r[1], has_sigma ? r[2] : 0.0});
    try {
        ds.validate();
    } catch (const InputError &e) {
        throw SchemaError(e.what());
    }
    return ds;
}

Table positions_table(const cal::PositionDataset &ds) {
    bool has_sigma = false;
    for (const auto &p : ds.points)
        has_sigma = has_sigma || p.sigma > 0.0;
    Table t;
    t.columns = {"BQp_Gpcm", "y0_cm"};
    if (has_sigma)
        t.columns.push_back("sigma_cm");
    for (const auto &p : ds.points) {
        t.rows.push_back({p.BQp, p.y0});
        if (has_sigma)
            t.rows.back().push_back(p.sigma);
    }
    return t;
}

cal::PositionDataset read_positions(const std::filesystem::path &path) {
    return positions_from_table(read_csv(path, {"BQp_Gpcm", "y0_cm"}, {"sigma_cm"}));
}

std::vector<pol::RetarderElement> parse_chain(std::string_view text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error &e) {
        throw ConfigParseError(std::string("chain is not valid JSON: ") + e.what());
    }
    if (!doc.is_array())
        throw SchemaError("chain must be a JSON array");
    std::vector<pol::RetarderElement> chain;
    for (const auto &el : doc) {
        if (!el.is_object())
            throw SchemaError("chain entries must be objects");
        for (const auto &[key, value] : el.items())
            if (key != "label" && key != "alpha_rad" && key != "delta_rad")
                throw SchemaError("unknown chain key '" + key + "'");
        std::string label;
        if (el.contains("label")) {
            if (!el["label"].is_string())
                throw SchemaError("chain 'label' must be a string");
            label = el["label"].get<std::string>();
        }
        chain.emplace_back(require_number(el, "alpha_rad"), require_number(el, "delta_rad"), label);
    }
    return chain;
}

std::vector<pol::RetarderElement> read_chain(const std::filesystem::path &path) {
    return parse_chain(read_text(path));
}

json chain_to_json(std::span<const pol::RetarderElement> chain) {
    json arr = json::array();
    for (const auto &e : chain)
        arr.push_back({{"label", e.label}, {"alpha_rad", e.alpha}, {"delta_rad", e.delta}});
    return arr;
}

// ---------------------------------------------------------------------------

json to_json(const cal::PeakFit &fit) {
    return json{{"center_Hz", fit.center},       {"center_sigma_Hz", fit.uncertainty},
                {"fwhm_Hz", fit.width},          {"depth", fit.depth},
                {"baseline", fit.baseline},      {"reduced_chi2", fit.reduced_chi2}};
}

json to_json(const cal::OscillationFit &fit) {
    static const char *names[] = {"a0_Hz", "a_s1_Hz", "a_c1_Hz", "a_s2_Hz", "a_c2_Hz"};
    json params = json::object();
    json sigmas = json::object();
    json cov = json::array();
    for (int i = 0; i < 5; ++i) {
        params[names[i]] = fit.amplitudes()(i);
        sigmas[names[i]] = fit.sigma(i);
        json row = json::array();
        for (int j = 0; j < 5; ++j)
            row.push_back(fit.covariance(i, j));
        cov.push_back(std::move(row));
    }
    return json{{"params", params},
                {"sigma", sigmas},
                {"covariance_Hz2", cov},
                {"chi2", fit.chi2},
                {"dof", fit.dof},
                {"rms_variation_mG", fit.rms_variation_mG}};
}

cal::OscillationFit oscillation_fit_from_json(const json &doc) {
    static const char *names[] = {"a0_Hz", "a_s1_Hz", "a_c1_Hz", "a_s2_Hz", "a_c2_Hz"};
    if (!doc.is_object() || !doc.contains("params") || !doc["params"].is_object())
        throw SchemaError("oscillation fit document lacks 'params'");
    cal::OscillationFit fit;
    double *slots[] = {&fit.a0, &fit.a_s1, &fit.a_c1, &fit.a_s2, &fit.a_c2};
    for (int i = 0; i < 5; ++i)
        *slots[i] = require_number(doc["params"], names[i]);
    if (doc.contains("covariance_Hz2")) {
        const auto &cov = doc["covariance_Hz2"];
        if (!cov.is_array() || cov.size() != 5)
            throw SchemaError("covariance_Hz2 must be 5x5");
        for (int i = 0; i < 5; ++i) {
            if (!cov[i].is_array() || cov[i].size() != 5)
                throw SchemaError("covariance_Hz2 must be 5x5");
            for (int j = 0; j < 5; ++j) {
                if (!cov[i][j].is_number())
                    throw SchemaError("covariance_Hz2 entries must be numbers");
                fit.covariance(i, j) = cov[i][j].get<double>();
            }
        }
    }
    if (doc.contains("chi2") && doc["chi2"].is_number())
        fit.chi2 = doc["chi2"].get<double>();
    if (doc.contains("dof") && doc["dof"].is_number_integer())
        fit.dof = doc["dof"].get<int>();
    fit.rms_variation_mG = cal::rms_variation_mG(fit.a_s1, fit.a_c1, fit.a_s2, fit.a_c2);
    return fit;
}

json to_json(const cal::YbiasFit &fit) {
    json doc{{"BEy_G", fit.BEy}, {"BEy_sigma_G", fit.sigma}, {"with_offset", fit.with_offset}};
    if (fit.with_offset) {
        doc["offset_cm"] = fit.offset;
        doc["offset_sigma_cm"] = fit.offset_sigma;
    }
    doc["reduced_chi2"] = fit.reduced_chi2;
    return doc;
}

json to_json(const cal::Adjustment &adj) {
    return json{{"dBEx_G", adj.dBEx}, {"dBEz_G", adj.dBEz}, {"dDelta", adj.dDelta},
                {"dB1p_Gpcm", adj.dB1p}};
}

json to_json(const bloch::KappaResult &k) {
    return json{{"I_over_Isat", k.intensity},
                {"kappa_pi", k.kappa_pi},
                {"kappa_minus", k.kappa_minus},
                {"nonlinearity_pi", k.nonlinearity_pi},
                {"nonlinearity_minus", k.nonlinearity_minus}};
}

json level_system_to_json(const bloch::LevelSystem &sys) {
    json levels = json::array();
    for (int i = 0; i < bloch::kNumStates; ++i) {
        const auto &l = sys.levels[static_cast<std::size_t>(i)];
        levels.push_back({{"index", i},
                          {"label", l.label()},
                          {"F", l.F},
                          {"m", l.m},
                          {"excited", l.excited()},
                          {"energy_radps", sys.energies(i)}});
    }
    json couplings = json::object();
    static const char *qnames[] = {"sigma_minus", "pi", "sigma_plus"};
    for (int q = 0; q < 3; ++q) {
        json list = json::array();
        const auto &c = sys.couplings[static_cast<std::size_t>(q)];
        for (int e = 0; e < bloch::kNumStates; ++e)
            for (int g = 0; g < bloch::kNumStates; ++g)
                if (c(e, g) != 0.0)
                    list.push_back({{"excited", e}, {"ground", g}, {"value", c(e, g)}});
        couplings[qnames[q]] = std::move(list);
    }
    json branching = json::array();
    for (int e = 0; e < bloch::kNumStates; ++e)
        for (int g = 0; g < bloch::kNumStates; ++g)
            if (sys.branching(e, g) != 0.0)
                branching.push_back({{"excited", e}, {"ground", g}, {"ratio", sys.branching(e, g)}});
    return json{{"B_G", sys.B},
                {"detuning_radps", sys.detuning},
                {"gamma_per_s", sys.gamma},
                {"normalization", sys.normalization == bloch::DipoleNormalization::Isotropic
                                      ? "isotropic"
                                      : "clebsch_gordan"},
                {"levels", levels},
                {"couplings", couplings},
                {"branching", branching}};
}

} // namespace toptrap::io
