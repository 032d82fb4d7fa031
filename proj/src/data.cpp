#include "cpcp/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace cpcp {

SyntheticSpec synthetic_preset(const std::string& name) {
  SyntheticSpec spec;
  if (name == "default") return spec;
  if (name == "homoscedastic") {
    spec.sigma0 = 1.0;
    spec.sigma1 = 0.0;
    return spec;
  }
  if (name == "laplace") {
    spec.base = BaseNoise::laplace;
    return spec;
  }
  throw std::invalid_argument("unknown synthetic preset: " + name);
}

double SyntheticOracle::location(const Vec& x) const {
  return spec_.loc_coef * x[spec_.loc_index];
}

double SyntheticOracle::scale(const Vec& x) const {
  return spec_.sigma0 + spec_.sigma1 * x[spec_.sigma_index];
}

double SyntheticOracle::base_cdf(double z) const {
  return spec_.base == BaseNoise::normal ? normal_cdf(z) : laplace_cdf(z);
}

double SyntheticOracle::base_pdf(double z) const {
  return spec_.base == BaseNoise::normal ? normal_pdf(z) : laplace_pdf(z);
}

double SyntheticOracle::base_quantile(double p) const {
  return spec_.base == BaseNoise::normal ? normal_quantile(p) : laplace_quantile(p);
}

double SyntheticOracle::true_quantile(const Vec& x, double tau) const {
  return location(x) + scale(x) * base_quantile(tau);
}

double SyntheticOracle::true_density_weight(const Vec& x, double tau) const {
  return base_pdf(base_quantile(tau)) / scale(x);
}

double SyntheticOracle::score_quantile(const Vec& x, double tau) const {
  const double d = static_cast<double>(spec_.label_dim);
  const double per_dim = std::pow(tau, 1.0 / d);
  return scale(x) * base_quantile(0.5 * (1.0 + per_dim));
}

double SyntheticOracle::box_coverage(const Vec& x, const Vec& lower, const Vec& upper) const {
  const double nu = location(x);
  const double sg = scale(x);
  double cov = 1.0;
  for (std::size_t j = 0; j < lower.size(); ++j) {
    if (lower[j] > upper[j]) return 0.0;
    cov *= base_cdf((upper[j] - nu) / sg) - base_cdf((lower[j] - nu) / sg);
  }
  return cov;
}

Dataset generate_synthetic(const SyntheticSpec& spec, std::size_t n, RngStream& rng) {
  if (n == 0) throw std::invalid_argument("generate_synthetic: n must be >= 1");
  if (spec.feature_dim == 0 || spec.label_dim == 0 ||
      spec.loc_index >= spec.feature_dim || spec.sigma_index >= spec.feature_dim) {
    throw std::invalid_argument("generate_synthetic: invalid spec dimensions");
  }
  // sigma must stay positive on the unit-cube support.
  const double sig_lo = std::min(spec.sigma0, spec.sigma0 + spec.sigma1);
  if (!(sig_lo > 0.0)) {
    throw std::invalid_argument("generate_synthetic: sigma not positive on support");
  }

  Dataset ds;
  ds.x = Matrix(n, spec.feature_dim);
  ds.y = Matrix(n, spec.label_dim);
  SyntheticOracle oracle(spec);
  for (std::size_t i = 0; i < n; ++i) {
    double* xi = ds.x.row(i);
    for (std::size_t j = 0; j < spec.feature_dim; ++j) xi[j] = rng.next_uniform();
    const Vec xv = ds.x.row_vec(i);
    const double nu = oracle.location(xv);
    const double sg = oracle.scale(xv);
    for (std::size_t j = 0; j < spec.label_dim; ++j) {
      const double xi_draw =
          spec.base == BaseNoise::normal ? rng.next_normal() : rng.next_laplace();
      ds.y(i, j) = nu + sg * xi_draw;
    }
  }
  ds.oracle = oracle;
  return ds;
}

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      cells.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  cells.push_back(cur);
  return cells;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

}  // namespace

Dataset load_csv(const std::string& path, const std::vector<std::string>& feature_cols,
                 const std::vector<std::string>& label_cols) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_csv: cannot open " + path);

  std::string header;
  if (!std::getline(in, header)) throw std::runtime_error("load_csv: empty file " + path);
  const std::vector<std::string> names = split_line(header);

  auto col_index = [&](const std::string& name) {
    for (std::size_t i = 0; i < names.size(); ++i) {
      if (trim(names[i]) == name) return i;
    }
    throw std::runtime_error("load_csv: column '" + name + "' not found in " + path);
  };
  std::vector<std::size_t> fidx, lidx;
  for (const auto& c : feature_cols) fidx.push_back(col_index(c));
  for (const auto& c : label_cols) lidx.push_back(col_index(c));

  std::vector<Vec> xrows, yrows;
  std::string line;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const std::vector<std::string> cells = split_line(line);
    if (cells.size() != names.size()) {
      throw std::runtime_error("load_csv: row " + std::to_string(lineno) + " has " +
                               std::to_string(cells.size()) + " cells, expected " +
                               std::to_string(names.size()));
    }
    auto parse_cell = [&](std::size_t ci) {
      const std::string cell = trim(cells[ci]);
      std::size_t consumed = 0;
      double v = 0.0;
      try {
        v = std::stod(cell, &consumed);
      } catch (const std::exception&) {
        throw std::runtime_error("load_csv: non-numeric cell at row " + std::to_string(lineno) +
                                 ", column '" + trim(names[ci]) + "'");
      }
      if (consumed != cell.size() || !std::isfinite(v)) {
        throw std::runtime_error("load_csv: invalid value at row " + std::to_string(lineno) +
                                 ", column '" + trim(names[ci]) + "'");
      }
      return v;
    };
    Vec xr(fidx.size()), yr(lidx.size());
    for (std::size_t k = 0; k < fidx.size(); ++k) xr[k] = parse_cell(fidx[k]);
    for (std::size_t k = 0; k < lidx.size(); ++k) yr[k] = parse_cell(lidx[k]);
    xrows.push_back(std::move(xr));
    yrows.push_back(std::move(yr));
  }
  if (xrows.empty()) throw std::runtime_error("load_csv: no data rows in " + path);

  Dataset ds;
  ds.x = Matrix(xrows.size(), fidx.size());
  ds.y = Matrix(yrows.size(), lidx.size());
  for (std::size_t i = 0; i < xrows.size(); ++i) {
    std::copy(xrows[i].begin(), xrows[i].end(), ds.x.row(i));
    std::copy(yrows[i].begin(), yrows[i].end(), ds.y.row(i));
  }
  return ds;
}

void write_csv(const std::string& path, const Dataset& data,
               const std::vector<std::string>& feature_cols,
               const std::vector<std::string>& label_cols) {
  if (feature_cols.size() != data.x.cols || label_cols.size() != data.y.cols) {
    throw std::invalid_argument("write_csv: column name count mismatch");
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_csv: cannot open " + path);
  out.precision(17);
  for (std::size_t j = 0; j < feature_cols.size(); ++j) {
    if (j) out << ',';
    out << feature_cols[j];
  }
  for (std::size_t j = 0; j < label_cols.size(); ++j) out << ',' << label_cols[j];
  out << '\n';
  for (std::size_t i = 0; i < data.x.rows; ++i) {
    for (std::size_t j = 0; j < data.x.cols; ++j) {
      if (j) out << ',';
      out << data.x(i, j);
    }
    for (std::size_t j = 0; j < data.y.cols; ++j) out << ',' << data.y(i, j);
    out << '\n';
  }
}

Standardizer Standardizer::fit(const Matrix& x, const std::vector<std::size_t>& rows) {
  if (rows.empty()) throw std::invalid_argument("Standardizer::fit: empty row set");
  Standardizer st;
  st.mean.assign(x.cols, 0.0);
  st.std.assign(x.cols, 1.0);
  const double n = static_cast<double>(rows.size());
  for (std::size_t j = 0; j < x.cols; ++j) {
    double sum = 0.0;
    for (std::size_t r : rows) sum += x(r, j);
    const double mu = sum / n;
    double sq = 0.0;
    for (std::size_t r : rows) sq += (x(r, j) - mu) * (x(r, j) - mu);
    const double sd = std::sqrt(sq / n);
    if (sd > 1e-12) {
      st.mean[j] = mu;
      st.std[j] = sd;
    }
    // else: constant column passes through unchanged (mean 0, std 1)
  }
  return st;
}

Matrix Standardizer::apply(const Matrix& x) const {
  Matrix out = x;
  for (std::size_t i = 0; i < out.rows; ++i) {
    double* r = out.row(i);
    for (std::size_t j = 0; j < out.cols; ++j) r[j] = (r[j] - mean[j]) / std[j];
  }
  return out;
}

Vec Standardizer::apply(const Vec& x) const {
  Vec out = x;
  for (std::size_t j = 0; j < out.size(); ++j) out[j] = (out[j] - mean[j]) / std[j];
  return out;
}

Matrix Standardizer::invert(const Matrix& x) const {
  Matrix out = x;
  for (std::size_t i = 0; i < out.rows; ++i) {
    double* r = out.row(i);
    for (std::size_t j = 0; j < out.cols; ++j) r[j] = r[j] * std[j] + mean[j];
  }
  return out;
}

DataSplit split_622(std::size_t n, RngStream& rng) {
  if (n < 10) throw std::invalid_argument("split_622: need n >= 10, got " + std::to_string(n));
  const std::vector<std::size_t> perm = rng.permutation(n);
  const std::size_t n_train = (6 * n) / 10;
  const std::size_t n_cal = (2 * n) / 10;
  DataSplit split;
  split.train.assign(perm.begin(), perm.begin() + n_train);
  split.cal.assign(perm.begin() + n_train, perm.begin() + n_train + n_cal);
  split.test.assign(perm.begin() + n_train + n_cal, perm.end());
  return split;
}

}  // namespace cpcp
