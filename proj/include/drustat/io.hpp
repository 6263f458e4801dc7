#pragma once

// Numeric CSV input for the estimate and plm commands.

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "drustat/core.hpp"
#include "drustat/plm.hpp"

namespace drustat {

/// A header row and numeric data rows. Blank lines are skipped; fields are
/// trimmed. `line_of[r]` is the 1-based file line of data row r.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
  std::vector<std::size_t> line_of;

  /// Column index by name, if present.
  std::optional<std::size_t> column(const std::string& name) const;
};

/// Throws IO_ERROR on an empty stream and INVALID_INPUT on ragged rows,
/// duplicate columns or unparsable numbers (naming the line).
CsvTable read_csv(std::istream& in);
CsvTable read_csv_file(const std::string& path);

/// Indices of the covariate columns x1..xd in order; they must be contiguous
/// from x1. Throws INVALID_INPUT otherwise.
std::vector<std::size_t> covariate_columns(const CsvTable& table);

/// Columns y, a, x1..xd and optionally (omega_hat, mu_hat) or (pi_hat,
/// mu_hat); omega_hat = 1 / pi_hat. Other column names are rejected.
struct EstimateInput {
  Dataset data;
  std::optional<NuisanceValues> nuisance;
};

EstimateInput parse_estimate_table(const CsvTable& table, const Bounds& bounds = {});

/// Columns y, a, x1..xd and optionally (v_hat, m_hat).
struct PlmInput {
  PlmSample sample;
  std::optional<PlmNuisance> nuisance;
};

PlmInput parse_plm_table(const CsvTable& table);

}  // namespace drustat
