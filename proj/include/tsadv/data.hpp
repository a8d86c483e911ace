#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "tsadv/error.hpp"
#include "tsadv/rng.hpp"

namespace tsadv {

/// A labeled univariate time series.
struct Series {
  std::vector<double> values;
  int label = 0;
};

struct Dataset {
  std::vector<Series> train;
  std::vector<Series> test;
  int num_classes = 0;
  std::size_t length = 0;
};

/// Per-series standardization to mean 0, population std 1. A constant
/// series (std below 1e-12) maps to all zeros.
inline Series z_normalize(const Series& s) {
  const std::size_t d = s.values.size();
  if (d == 0) throw DataError("z_normalize: empty series");
  double mean = 0.0;
  for (double v : s.values) mean += v;
  mean /= static_cast<double>(d);
  double var = 0.0;
  for (double v : s.values) var += (v - mean) * (v - mean);
  var /= static_cast<double>(d);
  double std_dev = std::sqrt(var);
  Series out;
  out.label = s.label;
  out.values.resize(d);
  if (std_dev < 1e-12) {
    std::fill(out.values.begin(), out.values.end(), 0.0);
  } else {
    for (std::size_t i = 0; i < d; ++i) out.values[i] = (s.values[i] - mean) / std_dev;
  }
  return out;
}

inline Dataset z_normalize(const Dataset& ds) {
  Dataset out = ds;
  for (auto& s : out.train) s = z_normalize(s);
  for (auto& s : out.test) s = z_normalize(s);
  return out;
}

namespace detail {

struct RawRow {
  double label;
  std::vector<double> values;
};

inline double parse_cell(const std::string& cell, std::size_t row, std::size_t col) {
  double v = 0.0;
  const char* first = cell.data();
  const char* last = cell.data() + cell.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last)
    throw DataError("row " + std::to_string(row) + ", column " + std::to_string(col) +
                    ": '" + cell + "' is not numeric");
  return v;
}

inline std::vector<RawRow> parse_rows(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset file: " + path);
  std::vector<RawRow> rows;
  std::string line;
  char delim = '\0';
  std::size_t expected_cols = 0;
  std::size_t row_no = 0;
  while (std::getline(in, line)) {
    ++row_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (delim == '\0') {
      // auto-detect from the first non-empty line
      if (line.find('\t') != std::string::npos)
        delim = '\t';
      else if (line.find(',') != std::string::npos)
        delim = ',';
      else
        throw DataError("row " + std::to_string(row_no) +
                        ": cannot detect delimiter (expected tab or comma)");
    }
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, delim)) cells.push_back(cell);
    if (cells.size() < 2)
      throw DataError("row " + std::to_string(row_no) +
                      ": expected a label followed by at least one value");
    if (expected_cols == 0) expected_cols = cells.size();
    if (cells.size() != expected_cols)
      throw DataError("ragged row " + std::to_string(row_no) + ": has " +
                      std::to_string(cells.size()) + " columns, expected " +
                      std::to_string(expected_cols));
    RawRow r;
    r.label = parse_cell(cells[0], row_no, 1);
    r.values.reserve(cells.size() - 1);
    for (std::size_t c = 1; c < cells.size(); ++c)
      r.values.push_back(parse_cell(cells[c], row_no, c + 1));
    rows.push_back(std::move(r));
  }
  if (rows.empty()) throw DataError("empty dataset file: " + path);
  return rows;
}

inline std::vector<Series> remap(const std::vector<RawRow>& rows,
                                 const std::map<double, int>& label_map) {
  std::vector<Series> out;
  out.reserve(rows.size());
  for (const auto& r : rows) {
    Series s;
    s.label = label_map.at(r.label);
    s.values = r.values;
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace detail

/// Loads one UCR-style split: each row is a label followed by d values,
/// tab- or comma-delimited (auto-detected). Labels are remapped to
/// 0..k-1 preserving their sorted original order; row order is kept.
inline std::vector<Series> load_tsv(const std::string& path) {
  auto rows = detail::parse_rows(path);
  std::map<double, int> label_map;
  for (const auto& r : rows) label_map.emplace(r.label, 0);
  int next = 0;
  for (auto& [k, v] : label_map) v = next++;
  return detail::remap(rows, label_map);
}

/// Loads a train/test pair with one label remap over the union of both
/// files, so class ids agree across splits.
inline Dataset load_dataset(const std::string& train_path, const std::string& test_path) {
  auto train_rows = detail::parse_rows(train_path);
  auto test_rows = detail::parse_rows(test_path);
  std::map<double, int> label_map;
  for (const auto& r : train_rows) label_map.emplace(r.label, 0);
  for (const auto& r : test_rows) label_map.emplace(r.label, 0);
  int next = 0;
  for (auto& [k, v] : label_map) v = next++;

  Dataset ds;
  ds.train = detail::remap(train_rows, label_map);
  ds.test = detail::remap(test_rows, label_map);
  ds.num_classes = next;
  ds.length = ds.train.front().values.size();
  for (const auto& s : ds.test)
    if (s.values.size() != ds.length)
      throw DataError("train/test series length mismatch: " +
                      std::to_string(ds.length) + " vs " +
                      std::to_string(s.values.size()));
  return ds;
}

/// Writes one split; values carry 17 significant digits so a reload is
/// bit-exact. Labels are written as integers.
inline void save_tsv(const std::string& path, const std::vector<Series>& rows,
                     char delim = '\t') {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open for writing: " + path);
  char buf[64];
  for (const auto& s : rows) {
    out << s.label;
    for (double v : s.values) {
      std::snprintf(buf, sizeof(buf), "%.17g", v);
      out << delim << buf;
    }
    out << '\n';
  }
  if (!out) throw DataError("write failed: " + path);
}

struct SyntheticSpec {
  int n_per_class = 200;
  std::size_t length = 64;
  std::size_t bump_width = 8;
  double noise_std = 0.1;
  std::uint64_t seed = 0;
};

/// First sample index of the class-1 bump window (centered).
inline std::size_t bump_start(std::size_t length, std::size_t bump_width) {
  return length / 2 - bump_width / 2;
}

/// Two-class benchmark: class 0 is sin(2*pi*t/d) plus gaussian noise,
/// class 1 adds a half-cosine bump of amplitude 1.5 over a fixed window.
/// At noise 0 the window is the only discriminative region. 80/20
/// stratified split, deterministic under seed.
inline Dataset gen_synthetic(const SyntheticSpec& spec) {
  if (spec.length < 1) throw ConfigError("gen_synthetic: length must be >= 1");
  if (spec.bump_width >= spec.length)
    throw ConfigError("gen_synthetic: bump_width must be < length");
  if (spec.bump_width < 1) throw ConfigError("gen_synthetic: bump_width must be >= 1");
  if (spec.noise_std < 0) throw ConfigError("gen_synthetic: noise_std must be >= 0");
  if (spec.n_per_class < 2)
    throw ConfigError("gen_synthetic: need at least 2 samples per class");

  const std::size_t d = spec.length;
  const std::size_t w = spec.bump_width;
  const std::size_t start = bump_start(d, w);
  Rng rng(spec.seed);

  auto make_sample = [&](int label) {
    Series s;
    s.label = label;
    s.values.resize(d);
    for (std::size_t t = 0; t < d; ++t) {
      double v = std::sin(2.0 * std::numbers::pi * static_cast<double>(t) /
                          static_cast<double>(d));
      if (label == 1 && t >= start && t < start + w) {
        double u = (static_cast<double>(t - start) + 0.5) / static_cast<double>(w);
        v += 1.5 * std::sin(std::numbers::pi * u);
      }
      if (spec.noise_std > 0) v += rng.gaussian(0.0, spec.noise_std);
      s.values[t] = v;
    }
    return s;
  };

  Dataset ds;
  ds.num_classes = 2;
  ds.length = d;
  const int n_train = static_cast<int>(0.8 * spec.n_per_class);
  for (int label = 0; label < 2; ++label) {
    std::vector<Series> samples;
    samples.reserve(spec.n_per_class);
    for (int i = 0; i < spec.n_per_class; ++i) samples.push_back(make_sample(label));
    for (int i = 0; i < spec.n_per_class; ++i) {
      if (i < n_train)
        ds.train.push_back(std::move(samples[i]));
      else
        ds.test.push_back(std::move(samples[i]));
    }
  }
  return ds;
}

}  // namespace tsadv
