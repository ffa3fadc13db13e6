#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "toptrap/blochsim.hpp"
#include "toptrap/calibration.hpp"
#include "toptrap/errors.hpp"
#include "toptrap/fieldmodel.hpp"
#include "toptrap/polarization.hpp"

/// Configuration documents, CSV datasets and JSON result documents.
/// Column names and units are listed in FORMATS.md.
namespace toptrap::io {

using json = nlohmann::ordered_json;

inline constexpr int kSchemaVersion = 1;

struct Config {
    field::TrapConfig trap{};
    field::NonIdealities ni{};
};

/// Flat JSON object; `schema_version` is required, every other key optional.
/// Throws ConfigParseError (malformed text) and SchemaError (unknown key,
/// wrong type, unsupported version, invalid values).
Config parse_config(std::string_view text);
Config load_config(const std::filesystem::path &path);
json config_to_json(const Config &cfg);

// ---------------------------------------------------------------------------
// CSV

struct Table {
    std::vector<std::string> columns;
    std::vector<std::vector<double>> rows;

    /// Index of `name`, or -1.
    int column(std::string_view name) const;
};

/// Parses a numeric CSV with a header line. The header must start with
/// `required` and may continue with a prefix of `optional`.
/// Throws SchemaError.
Table parse_csv(std::string_view text, const std::vector<std::string> &required,
                const std::vector<std::string> &optional = {});
Table read_csv(const std::filesystem::path &path, const std::vector<std::string> &required,
               const std::vector<std::string> &optional = {});

/// Round-trip precision (17 significant digits).
std::string format_csv(const Table &table);
/// Same rows as a JSON array of objects keyed by column name.
json table_to_json(const Table &table);

/// Whole-file read; throws InputError.
std::string read_text(const std::filesystem::path &path);
/// Writes to a sibling temporary file and renames it over `path`.
void write_file_atomic(const std::filesystem::path &path, std::string_view content);

// ---------------------------------------------------------------------------
// Datasets

cal::SpectrumDataset spectrum_from_table(const Table &table);
Table spectrum_table(const cal::SpectrumDataset &ds);
cal::SpectrumDataset read_spectrum(const std::filesystem::path &path);

std::vector<cal::OscillationSample> oscillation_from_table(const Table &table);
Table oscillation_table(std::span<const cal::OscillationSample> samples);
std::vector<cal::OscillationSample> read_oscillation(const std::filesystem::path &path);

cal::PositionDataset positions_from_table(const Table &table);
Table positions_table(const cal::PositionDataset &ds);
cal::PositionDataset read_positions(const std::filesystem::path &path);

/// JSON list of {label, alpha_rad, delta_rad}.
std::vector<pol::RetarderElement> parse_chain(std::string_view text);
std::vector<pol::RetarderElement> read_chain(const std::filesystem::path &path);
json chain_to_json(std::span<const pol::RetarderElement> chain);

// ---------------------------------------------------------------------------
// Result documents

json to_json(const cal::PeakFit &fit);
json to_json(const cal::OscillationFit &fit);
json to_json(const cal::YbiasFit &fit);
json to_json(const cal::Adjustment &adj);
json to_json(const bloch::KappaResult &k);

/// Inverse of to_json(OscillationFit); throws SchemaError.
cal::OscillationFit oscillation_fit_from_json(const json &doc);

/// Levels, energies, nonzero couplings and branching ratios.
json level_system_to_json(const bloch::LevelSystem &sys);

} // namespace toptrap::io
