#include "nifm/io.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "nifm/errors.hpp"

namespace nifm::io {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(line);
  while (std::getline(is, cur, sep)) out.push_back(trim(cur));
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

bool parse_double(const std::string& s, double& v) {
  const char* b = s.data();
  const char* e = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(b, e, v);
  return ec == std::errc() && ptr == e;
}

std::string slurp(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace

std::size_t Records::column(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return i;
  throw IoError("csv: no column named '" + name + "'");
}

namespace {

// Calls row(fields, lineno) for every non-empty line after the header.
template <class F>
std::vector<std::string> scan_csv(const std::string& path, F&& row) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path);
  std::vector<std::string> header;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    auto fields = split(line, ',');
    if (header.empty()) {
      header = std::move(fields);
      continue;
    }
    if (fields.size() != header.size())
      throw IoError(path + ":" + std::to_string(lineno) + ": expected " + std::to_string(header.size()) +
                    " fields, got " + std::to_string(fields.size()));
    row(fields, lineno);
  }
  if (header.empty()) throw IoError(path + ": empty file");
  return header;
}

}  // namespace

Records read_records(const std::string& path) {
  Records r;
  r.header = scan_csv(path, [&](std::vector<std::string>& fields, std::size_t) { r.rows.push_back(std::move(fields)); });
  return r;
}

Table read_csv(const std::string& path) {
  Table t;
  std::vector<double> values;
  std::size_t rows = 0;
  t.header = scan_csv(path, [&](const std::vector<std::string>& fields, std::size_t lineno) {
    for (const auto& s : fields) {
      double v;
      if (!parse_double(s, v)) throw IoError(path + ":" + std::to_string(lineno) + ": not a number: '" + s + "'");
      values.push_back(v);
    }
    ++rows;
  });
  t.data = Eigen::Map<Matrix>(values.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(t.header.size()));
  return t;
}

void write_csv(const std::string& path, const std::vector<std::string>& header, const Matrix& data) {
  if (header.size() != static_cast<std::size_t>(data.cols()))
    throw ShapeError("csv: " + std::to_string(header.size()) + " header names for " + std::to_string(data.cols()) +
                     " columns");
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path);
  f.precision(17);
  for (std::size_t i = 0; i < header.size(); ++i) f << (i ? "," : "") << header[i];
  f << '\n';
  for (Eigen::Index r = 0; r < data.rows(); ++r) {
    for (Eigen::Index c = 0; c < data.cols(); ++c) f << (c ? "," : "") << data(r, c);
    f << '\n';
  }
  if (!f) throw IoError("write failed: " + path);
}

std::vector<std::string> dataset_header(int D) {
  std::vector<std::string> h;
  for (int d = 1; d <= D; ++d) h.push_back("y" + std::to_string(d));
  return h;
}

Matrix read_dataset(const std::string& path) {
  auto t = read_csv(path);
  if (t.header != dataset_header(static_cast<int>(t.header.size())))
    throw IoError(path + ": dataset header must be y1..yD");
  if (t.data.rows() == 0) throw IoError(path + ": no data rows");
  return std::move(t.data);
}

void write_dataset(const std::string& path, const Matrix& y) { write_csv(path, dataset_header(static_cast<int>(y.cols())), y); }

KeyValues parse_config(const std::string& text, const std::set<std::string>& allowed, const std::string& origin) {
  KeyValues kv;
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto h = line.find('#'); h != std::string::npos) line.erase(h);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key=value, got '" + line + "'");
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (!allowed.empty() && !allowed.count(key))
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": unknown key '" + key + "'");
    kv[key] = value;
  }
  return kv;
}

KeyValues read_config(const std::string& path, const std::set<std::string>& allowed) {
  std::string text;
  try {
    text = slurp(path);
  } catch (const IoError&) {
    throw ConfigError("cannot open config file " + path);
  }
  return parse_config(text, allowed, path);
}

long long get_int(const KeyValues& kv, const std::string& key, long long fallback) {
  const auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  long long v = 0;
  const auto& s = it->second;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw ConfigError(key + ": not an integer: '" + s + "'");
  return v;
}

double get_double(const KeyValues& kv, const std::string& key, double fallback) {
  const auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  double v;
  if (!parse_double(it->second, v)) throw ConfigError(key + ": not a number: '" + it->second + "'");
  return v;
}

std::string get_string(const KeyValues& kv, const std::string& key, const std::string& fallback) {
  const auto it = kv.find(key);
  return it == kv.end() ? fallback : it->second;
}

void write_truth(const std::string& path, const Truth& t) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path);
  f.precision(17);
  f << "D=" << t.marginals.size() << '\n';
  if (!t.marginals.empty()) f << "marginal_kind=" << garch::to_string(t.marginals.front().error_kind) << '\n';
  for (std::size_t d = 0; d < t.marginals.size(); ++d) {
    const auto& p = t.marginals[d];
    const std::string pre = "y" + std::to_string(d + 1) + ".";
    f << pre << "alpha1=" << p.alpha1 << '\n' << pre << "alpha2=" << p.alpha2 << '\n' << pre << "gamma=" << p.gamma << '\n';
    if (p.nu_tilde) f << pre << "nu_tilde=" << *p.nu_tilde << '\n';
  }
  if (t.copula) {
    const auto& c = *t.copula;
    f << "copula_family=" << copula::to_string(c.family) << '\n' << "k=" << c.loadings.n_factors << '\n';
    for (std::size_t i = 0; i < c.loadings.values.size(); ++i) f << "copula.g" << i << '=' << c.loadings.values[i] << '\n';
    if (c.nu) f << "copula.nu=" << *c.nu << '\n';
  } else {
    f << "k=0\n";
  }
  if (!f) throw IoError("write failed: " + path);
}

Truth read_truth(const std::string& path) {
  const auto kv = parse_config(slurp(path), {}, path);
  Truth t;
  const int D = static_cast<int>(get_int(kv, "D", 0));
  if (D < 1) throw IoError(path + ": missing D");
  const auto kind = garch::error_kind_from_string(get_string(kv, "marginal_kind", "gaussian"));
  auto need = [&](const std::string& key) {
    if (!kv.count(key)) throw IoError(path + ": missing " + key);
    return get_double(kv, key, 0.0);
  };
  for (int d = 0; d < D; ++d) {
    const std::string pre = "y" + std::to_string(d + 1) + ".";
    garch::GarchParams p;
    p.error_kind = kind;
    p.alpha1 = need(pre + "alpha1");
    p.alpha2 = need(pre + "alpha2");
    p.gamma = need(pre + "gamma");
    if (kind == garch::ErrorKind::StudentT) p.nu_tilde = need(pre + "nu_tilde");
    p.validate();
    t.marginals.push_back(p);
  }
  const int k = static_cast<int>(get_int(kv, "k", 0));
  if (k > 0) {
    copula::CopulaParams c;
    c.family = copula::family_from_string(get_string(kv, "copula_family", "gaussian"));
    c.loadings.dim = D;
    c.loadings.n_factors = k;
    const std::size_t n = copula::FactorLoadings::free_count(D, k);
    for (std::size_t i = 0; i < n; ++i) c.loadings.values.push_back(need("copula.g" + std::to_string(i)));
    if (c.family == copula::Family::StudentT) c.nu = need("copula.nu");
    c.validate();
    t.copula = c;
  }
  return t;
}

}  // namespace nifm::io
