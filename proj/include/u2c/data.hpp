#ifndef U2C_DATA_HPP
#define U2C_DATA_HPP

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "u2c/common.hpp"
#include "u2c/linalg.hpp"

namespace u2c {

enum class Split { train_val, test_in, covariate_shift, out_domain };

inline std::string to_string(Split s) {
  switch (s) {
    case Split::train_val: return "train-val";
    case Split::test_in: return "test-in";
    case Split::covariate_shift: return "covariate-shift";
    case Split::out_domain: return "out-domain";
  }
  throw InputError("unknown split");
}

inline Split split_from_string(std::string_view s) {
  if (s == "train-val") return Split::train_val;
  if (s == "test-in") return Split::test_in;
  if (s == "covariate-shift") return Split::covariate_shift;
  if (s == "out-domain") return Split::out_domain;
  throw InputError("unknown split name: " + std::string(s));
}

/// One example: a label over {1,..,c+1}, a c-dimensional logit vector, and
/// optionally a feature vector and/or a precomputed epistemic score.
struct Record {
  std::string id;
  int label = 0;  // 1-based; c+1 means out-domain
  std::vector<double> logits;
  std::optional<std::vector<double>> features;
  std::optional<double> u_score;
};

/// Immutable after construction; safe for concurrent readers.
struct Dataset {
  int c = 0;
  std::optional<int> d_feat;
  Split split = Split::test_in;
  std::vector<Record> records;

  std::size_t size() const { return records.size(); }
};

/// Classifier head mapping features to logits: logits = W phi + b.
struct LinearHead {
  Matrix weights;             // c x d'
  std::vector<double> bias;   // c

  std::vector<double> apply(std::span<const double> features) const {
    if (features.size() != weights.cols())
      throw InputError("LinearHead: feature dimension mismatch");
    std::vector<double> out(weights.rows());
    for (std::size_t j = 0; j < weights.rows(); ++j)
      out[j] = dot(weights.row(j), features) + bias[j];
    return out;
  }
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

// Locale-independent double parse; rejects trailing garbage and non-finite text.
inline double parse_double(std::string_view s, std::size_t row, const std::string& col) {
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc{} || ptr != last)
    throw DataError("row " + std::to_string(row) + ", column " + col + ": cannot parse '" +
                    std::string(s) + "' as a number");
  if (!std::isfinite(v))
    throw DataError("row " + std::to_string(row) + ", column " + col + ": non-finite value");
  return v;
}

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

/// Loads a CSV dataset. Header columns: id,label,logit_0..logit_{c-1}
/// [,feat_0..feat_{d'-1}][,u]. Out-domain files may omit the label column,
/// in which case every record is assigned label c+1.
inline Dataset load_dataset(const std::string& path, Split split) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset file: " + path);

  std::string line;
  if (!std::getline(in, line)) throw SchemaError(path + ": empty file, header required");
  const auto header = detail::split_csv_line(line);

  std::size_t pos = 0;
  if (pos >= header.size() || header[pos] != "id")
    throw SchemaError(path + ": first header column must be 'id'");
  ++pos;
  bool has_label = pos < header.size() && header[pos] == "label";
  if (has_label) ++pos;
  if (!has_label && split != Split::out_domain)
    throw SchemaError(path + ": label column required for split " + to_string(split));

  int c = 0;
  while (pos < header.size() && header[pos] == "logit_" + std::to_string(c)) {
    ++c;
    ++pos;
  }
  if (c == 0) throw SchemaError(path + ": no logit_0 column found");

  int d_feat = 0;
  while (pos < header.size() && header[pos] == "feat_" + std::to_string(d_feat)) {
    ++d_feat;
    ++pos;
  }
  bool has_u = pos < header.size() && header[pos] == "u";
  if (has_u) ++pos;
  if (pos != header.size())
    throw SchemaError(path + ": unexpected header column '" + header[pos] + "'");

  Dataset ds;
  ds.c = c;
  ds.split = split;
  if (d_feat > 0) ds.d_feat = d_feat;

  const std::size_t expected = 1 + (has_label ? 1 : 0) + static_cast<std::size_t>(c) +
                               static_cast<std::size_t>(d_feat) + (has_u ? 1 : 0);
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != expected)
      throw SchemaError(path + ": row " + std::to_string(row) + " has " +
                        std::to_string(cells.size()) + " cells, expected " +
                        std::to_string(expected));
    Record r;
    std::size_t k = 0;
    r.id = cells[k++];
    if (has_label) {
      const double lab = detail::parse_double(cells[k++], row, "label");
      r.label = static_cast<int>(lab);
      if (static_cast<double>(r.label) != lab || r.label < 1 || r.label > c + 1)
        throw DataError(path + ": row " + std::to_string(row) + ": label out of range 1.." +
                        std::to_string(c + 1));
      if (split != Split::out_domain && r.label == c + 1)
        throw DataError(path + ": row " + std::to_string(row) +
                        ": in-domain split carries out-domain label");
      if (split == Split::out_domain && r.label != c + 1)
        throw DataError(path + ": row " + std::to_string(row) +
                        ": out-domain split requires label " + std::to_string(c + 1));
    } else {
      r.label = c + 1;
    }
    r.logits.resize(c);
    for (int j = 0; j < c; ++j)
      r.logits[j] = detail::parse_double(cells[k++], row, "logit_" + std::to_string(j));
    if (d_feat > 0) {
      std::vector<double> feats(d_feat);
      for (int j = 0; j < d_feat; ++j)
        feats[j] = detail::parse_double(cells[k++], row, "feat_" + std::to_string(j));
      r.features = std::move(feats);
    }
    if (has_u) r.u_score = detail::parse_double(cells[k++], row, "u");
    ds.records.push_back(std::move(r));
  }
  return ds;
}

/// Writes the CSV form; 17 significant digits so a reload is bit-exact.
inline void save_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open for writing: " + path);
  out << "id,label";
  for (int j = 0; j < ds.c; ++j) out << ",logit_" << j;
  const int d = ds.d_feat.value_or(0);
  for (int j = 0; j < d; ++j) out << ",feat_" << j;
  const bool has_u = !ds.records.empty() && ds.records.front().u_score.has_value();
  if (has_u) out << ",u";
  out << "\n";
  for (const auto& r : ds.records) {
    out << r.id << "," << r.label;
    for (double v : r.logits) out << "," << detail::format_double(v);
    if (r.features)
      for (double v : *r.features) out << "," << detail::format_double(v);
    if (has_u) out << "," << detail::format_double(r.u_score.value());
    out << "\n";
  }
}

}  // namespace u2c

#endif
