#pragma once

// Dataset CSVs, flat key=value configuration files and ground-truth files.

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "nifm/copula.hpp"
#include "nifm/garch.hpp"
#include "nifm/types.hpp"

namespace nifm::io {

struct Table {
  std::vector<std::string> header;
  Matrix data;
};

/// Header plus rows of raw fields; every row must match the header width.
struct Records {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  /// Index of a header name; IoError when absent.
  std::size_t column(const std::string& name) const;
};
Records read_records(const std::string& path);

/// Comma-separated, '.' decimal, one header row. Throws IoError on missing
/// files, ragged rows or unparsable numbers (with the line number).
Table read_csv(const std::string& path);
void write_csv(const std::string& path, const std::vector<std::string>& header, const Matrix& data);

/// Dataset files use the header y1..yD.
Matrix read_dataset(const std::string& path);
void write_dataset(const std::string& path, const Matrix& y);
std::vector<std::string> dataset_header(int D);

using KeyValues = std::map<std::string, std::string>;

/// key=value lines; '#' starts a comment. Keys outside `allowed` raise ConfigError.
KeyValues parse_config(const std::string& text, const std::set<std::string>& allowed, const std::string& origin = "config");
KeyValues read_config(const std::string& path, const std::set<std::string>& allowed);

/// Typed lookups that name the field on failure.
long long get_int(const KeyValues& kv, const std::string& key, long long fallback);
double get_double(const KeyValues& kv, const std::string& key, double fallback);
std::string get_string(const KeyValues& kv, const std::string& key, const std::string& fallback);

/// Parameters that generated a dataset.
struct Truth {
  std::vector<garch::GarchParams> marginals;
  std::optional<copula::CopulaParams> copula;  // absent for independent series
};

void write_truth(const std::string& path, const Truth& t);
Truth read_truth(const std::string& path);

}  // namespace nifm::io
