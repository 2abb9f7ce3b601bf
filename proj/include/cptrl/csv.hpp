#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include "cptrl/envs.hpp"
#include "cptrl/errors.hpp"
#include "cptrl/oracle.hpp"
#include "cptrl/train.hpp"

// CSV writers for the experiment outputs, plus the price-series reader.
// Numbers are written with std::to_chars (shortest round-trip form), so the
// files are locale-independent and byte-stable across runs.

namespace cptrl {

inline std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc())
    throw ArgumentError("format_double: value does not fit");
  return std::string(buf, ptr);
}

namespace detail_csv {

inline std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);  // binary: no \r\n translation
  if (!out) throw IngestError("cannot open '" + path + "' for writing");
  return out;
}

inline void finish(std::ofstream& out, const std::string& path) {
  out.flush();
  if (!out) throw IngestError("failed while writing '" + path + "'");
}

inline std::string trim(std::string s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ' || s.back() == '\t'))
    s.pop_back();
  std::size_t i = 0;
  while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
  return s.substr(i);
}

inline double parse_double(const std::string& s, const std::string& what) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw IngestError(what + ": not a number: '" + s + "'");
  return v;
}

inline long long parse_int(const std::string& s, const std::string& what) {
  long long v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw IngestError(what + ": not an integer: '" + s + "'");
  return v;
}

}  // namespace detail_csv

// ---------------------------------------------------------------------------
// Writers
// ---------------------------------------------------------------------------

// One row per training iteration. `budget` is the cumulative number of
// sampled trajectories after the iteration, which puts first-order and
// zeroth-order runs on a common x-axis.
struct CurvePoint {
  long long iter = 0;
  long long budget = 0;
  double cpt_estimate = 0.0;
  double grad_norm = 0.0;
};

inline void write_curve_csv(const std::string& path,
                            const std::vector<CurvePoint>& rows) {
  auto out = detail_csv::open_out(path);
  out << "iter,budget,cpt_estimate,grad_norm\n";
  for (const CurvePoint& r : rows)
    out << r.iter << ',' << r.budget << ',' << format_double(r.cpt_estimate)
        << ',' << format_double(r.grad_norm) << '\n';
  detail_csv::finish(out, path);
}

// Evenly spaced per-iteration curve from a training result.
inline std::vector<CurvePoint> curve_points(const TrainResult& res) {
  std::vector<CurvePoint> rows;
  const std::size_t n = res.cpt_curve.size();
  const long long per_iter =
      n == 0 ? 0 : res.trajectory_count / static_cast<long long>(n);
  rows.reserve(n);
  for (std::size_t k = 0; k < n; ++k)
    rows.push_back({static_cast<long long>(k),
                    per_iter * static_cast<long long>(k + 1), res.cpt_curve[k],
                    res.grad_norms[k]});
  return rows;
}

inline void write_histogram_csv(const std::string& path,
                                const std::vector<HistogramBin>& bins) {
  auto out = detail_csv::open_out(path);
  out << "bin_lo,bin_hi,count\n";
  for (const HistogramBin& b : bins)
    out << format_double(b.lo) << ',' << format_double(b.hi) << ',' << b.count
        << '\n';
  detail_csv::finish(out, path);
}

// Grid tables: one probability column per free parameter, then the value.
inline void write_grid_csv(const std::string& path,
                           const GridSearchResult& grid) {
  if (grid.table.empty()) throw ArgumentError("grid csv: empty table");
  auto out = detail_csv::open_out(path);
  const std::size_t n_axes = grid.table.front().first.size();
  for (std::size_t i = 0; i < n_axes; ++i) out << 'p' << i << ',';
  out << "cpt_value\n";
  for (const auto& [params, value] : grid.table) {
    for (double p : params) out << format_double(p) << ',';
    out << format_double(value) << '\n';
  }
  detail_csv::finish(out, path);
}

struct BatchBiasRow {
  int batch = 0;
  double median_p = 0.0;
  double q25 = 0.0;
  double q75 = 0.0;
};

inline void write_batch_bias_csv(const std::string& path,
                                 const std::vector<BatchBiasRow>& rows) {
  auto out = detail_csv::open_out(path);
  out << "batch,median_p,q25,q75\n";
  for (const BatchBiasRow& r : rows)
    out << r.batch << ',' << format_double(r.median_p) << ','
        << format_double(r.q25) << ',' << format_double(r.q75) << '\n';
  detail_csv::finish(out, path);
}

// ---------------------------------------------------------------------------
// Price-series ingestion: header `slot,price`, then twelve rows `k,price`
// with k = 0..11 in order.
// ---------------------------------------------------------------------------

inline PriceSeries ingest_prices(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestError("cannot open price csv '" + path + "'");
  std::string line;
  if (!std::getline(in, line))
    throw IngestError("price csv '" + path + "': empty file");
  if (detail_csv::trim(line) != "slot,price")
    throw IngestError("price csv '" + path + "': expected header 'slot,price', got '" +
                      detail_csv::trim(line) + "'");
  PriceSeries ps;
  int row = 0;
  while (std::getline(in, line)) {
    line = detail_csv::trim(line);
    if (line.empty()) continue;
    const std::string what = "price csv '" + path + "' row " + std::to_string(row + 1);
    auto comma = line.find(',');
    if (comma == std::string::npos || line.find(',', comma + 1) != std::string::npos)
      throw IngestError(what + ": expected two fields");
    long long slot = detail_csv::parse_int(line.substr(0, comma), what);
    if (slot != row)
      throw IngestError(what + ": expected slot " + std::to_string(row) + ", got " +
                        std::to_string(slot));
    double price = detail_csv::parse_double(line.substr(comma + 1), what);
    if (!(price >= 0.0))
      throw IngestError(what + ": price must be >= 0, got " + format_double(price));
    ps.sell.push_back(price);
    ++row;
  }
  if (row != 12)
    throw IngestError("price csv '" + path + "': expected 12 data rows, got " +
                      std::to_string(row));
  ps.validate();
  return ps;
}

}  // namespace cptrl
