#include "drustat/io.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <istream>
#include <map>
#include <set>
#include <string_view>

#include "drustat/error.hpp"

namespace drustat {
namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    fields.push_back(trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return fields;
}

double parse_number(std::string_view field, std::size_t line) {
  double value = 0.0;
  const char* end = field.data() + field.size();
  const auto [ptr, ec] = std::from_chars(field.data(), end, value);
  if (field.empty() || ec != std::errc() || ptr != end) {
    throw Error(Errc::invalid_input, "line " + std::to_string(line) + ": cannot parse '" + std::string(field) + "'");
  }
  return value;
}

std::size_t require(const CsvTable& table, const std::string& name) {
  const auto c = table.column(name);
  if (!c) throw Error(Errc::invalid_input, "missing required column '" + name + "'");
  return *c;
}

// Rejects names outside `allowed` and the x1..xd covariates.
void check_known(const CsvTable& table, const std::set<std::string>& allowed) {
  for (const auto& name : table.header) {
    if (allowed.count(name)) continue;
    if (name.size() > 1 && name[0] == 'x') continue;  // validated by covariate_columns
    throw Error(Errc::invalid_input, "unknown column '" + name + "'");
  }
}

// Either both columns or neither.
std::optional<std::pair<std::size_t, std::size_t>> column_pair(const CsvTable& table, const std::string& first,
                                                               const std::string& second) {
  const auto a = table.column(first);
  const auto b = table.column(second);
  if (a && b) return std::make_pair(*a, *b);
  if (a || b) {
    throw Error(Errc::invalid_input, "columns '" + first + "' and '" + second + "' must be given together");
  }
  return std::nullopt;
}

}  // namespace

std::optional<std::size_t> CsvTable::column(const std::string& name) const {
  const auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) return std::nullopt;
  return static_cast<std::size_t>(it - header.begin());
}

CsvTable read_csv(std::istream& in) {
  CsvTable table;
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split(line);
    if (!have_header) {
      std::set<std::string> seen;
      for (auto f : fields) {
        std::string name(f);
        if (name.empty()) throw Error(Errc::invalid_input, "line " + std::to_string(line_no) + ": empty column name");
        if (!seen.insert(name).second) throw Error(Errc::invalid_input, "duplicate column '" + name + "'");
        table.header.push_back(std::move(name));
      }
      have_header = true;
      continue;
    }
    if (fields.size() != table.header.size()) {
      throw Error(Errc::invalid_input, "line " + std::to_string(line_no) + ": expected " +
                                           std::to_string(table.header.size()) + " fields, got " +
                                           std::to_string(fields.size()));
    }
    std::vector<double> row;
    row.reserve(fields.size());
    for (auto f : fields) row.push_back(parse_number(f, line_no));
    table.rows.push_back(std::move(row));
    table.line_of.push_back(line_no);
  }
  if (!have_header) throw Error(Errc::io_error, "input has no header row");
  return table;
}

CsvTable read_csv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::io_error, "cannot open '" + path + "'");
  return read_csv(in);
}

std::vector<std::size_t> covariate_columns(const CsvTable& table) {
  std::map<int, std::size_t> by_index;
  for (std::size_t c = 0; c < table.header.size(); ++c) {
    const auto& name = table.header[c];
    if (name.size() < 2 || name[0] != 'x') continue;
    int k = 0;
    const auto [ptr, ec] = std::from_chars(name.data() + 1, name.data() + name.size(), k);
    if (ec != std::errc() || ptr != name.data() + name.size() || k < 1) {
      throw Error(Errc::invalid_input, "unknown column '" + name + "'");
    }
    by_index[k] = c;
  }
  std::vector<std::size_t> cols;
  int expected = 1;
  for (const auto& [k, c] : by_index) {
    if (k != expected) throw Error(Errc::invalid_input, "covariate columns must be x1..xd without gaps");
    cols.push_back(c);
    ++expected;
  }
  return cols;
}

EstimateInput parse_estimate_table(const CsvTable& table, const Bounds& bounds) {
  check_known(table, {"y", "a", "omega_hat", "mu_hat", "pi_hat"});
  const std::size_t yc = require(table, "y");
  const std::size_t ac = require(table, "a");
  const auto xc = covariate_columns(table);
  if (table.column("omega_hat") && table.column("pi_hat")) {
    throw Error(Errc::invalid_input, "give either omega_hat or pi_hat, not both");
  }
  const bool from_pi = table.column("pi_hat").has_value();
  const auto supplied = column_pair(table, from_pi ? "pi_hat" : "omega_hat", "mu_hat");

  std::vector<Observation> obs;
  obs.reserve(table.rows.size());
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    Observation o;
    o.y = row[yc];
    if (row[ac] != 0.0 && row[ac] != 1.0) {
      throw Error(Errc::invalid_input, "treatment must be 0 or 1 at observation " + std::to_string(r), r);
    }
    o.a = static_cast<int>(row[ac]);
    for (std::size_t c : xc) o.x.push_back(row[c]);
    obs.push_back(std::move(o));
  }
  EstimateInput input{Dataset(std::move(obs), bounds), std::nullopt};
  if (supplied) {
    NuisanceValues nuis;
    for (const auto& row : table.rows) {
      const double first = row[supplied->first];
      nuis.omega_hat.push_back(from_pi ? 1.0 / first : first);
      nuis.mu_hat.push_back(row[supplied->second]);
    }
    input.nuisance = std::move(nuis);
  }
  return input;
}

PlmInput parse_plm_table(const CsvTable& table) {
  check_known(table, {"y", "a", "v_hat", "m_hat"});
  const std::size_t yc = require(table, "y");
  const std::size_t ac = require(table, "a");
  const auto xc = covariate_columns(table);
  const auto supplied = column_pair(table, "v_hat", "m_hat");
  const std::size_t n = table.rows.size();
  PlmInput input;
  input.sample.y.resize(n);
  input.sample.a.resize(n);
  input.sample.x.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(xc.size()));
  if (supplied) input.nuisance.emplace();
  for (std::size_t r = 0; r < n; ++r) {
    const auto& row = table.rows[r];
    input.sample.y[r] = row[yc];
    input.sample.a[r] = row[ac];
    for (std::size_t k = 0; k < xc.size(); ++k) {
      input.sample.x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) = row[xc[k]];
    }
    if (supplied) {
      input.nuisance->v_hat.push_back(row[supplied->first]);
      input.nuisance->m_hat.push_back(row[supplied->second]);
    }
  }
  return input;
}

}  // namespace drustat
