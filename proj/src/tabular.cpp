#include "xai/tabular.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

namespace xai::tabular {

using nlohmann::json;

int FeatureSchema::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < columns.size(); ++i)
    if (columns[i].name == name) return static_cast<int>(i);
  return -1;
}

void FeatureSchema::validate() const {
  std::set<std::string> seen;
  for (const auto& c : columns) {
    if (!seen.insert(c.name).second)
      throw IngestionError("duplicate column name: " + c.name);
    if (c.kind == FeatureKind::categorical && c.categories.size() < 2)
      throw IngestionError("categorical column '" + c.name +
                           "' must list at least 2 categories");
  }
}

void Dataset::validate() const {
  schema.validate();
  if (X.cols() != schema.size())
    throw IngestionError("X column count does not match schema");
  if (X.rows() != y.size())
    throw IngestionError("X row count does not match label count");
  if (protected_index && (*protected_index < 0 || *protected_index >= d()))
    throw IngestionError("protected_index out of range");
  for (int j = 0; j < d(); ++j) {
    if (schema.columns[j].kind != FeatureKind::categorical) continue;
    const auto n_cat = static_cast<double>(schema.columns[j].categories.size());
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
      const double v = X(i, j);
      if (v < 0.0 || v >= n_cat || v != std::floor(v))
        throw IngestionError("invalid category code in column '" +
                             schema.columns[j].name + "', row " +
                             std::to_string(i));
    }
  }
}

std::string ScalingStats::to_json() const {
  json j = json::object();
  for (std::size_t i = 0; i < column_names.size(); ++i)
    j[column_names[i]] = {{"mean", means[i]}, {"std", stds[i]}};
  j["__dropped__"] = dropped_columns;
  return j.dump(2);
}

ScalingStats ScalingStats::from_json(const std::string& text) {
  json j = json::parse(text);
  ScalingStats s;
  for (auto& [key, val] : j.items()) {
    if (key == "__dropped__") {
      s.dropped_columns = val.get<std::vector<std::string>>();
      continue;
    }
    s.column_names.push_back(key);
    s.means.push_back(val.at("mean").get<double>());
    s.stds.push_back(val.at("std").get<double>());
  }
  return s;
}

// ---------------------------------------------------------------------------
// CSV ingestion
// ---------------------------------------------------------------------------

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

Dataset load_csv_dataset(const std::string& path, const FeatureSchema& schema,
                         const std::string& label_column,
                         const std::string& positive_label) {
  schema.validate();
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot open file: " + path);

  std::string header_line;
  if (!std::getline(in, header_line))
    throw IngestionError("empty CSV file: " + path);
  const auto header = split_csv_line(header_line);

  std::map<std::string, int> col_pos;
  for (std::size_t i = 0; i < header.size(); ++i)
    col_pos[header[i]] = static_cast<int>(i);

  for (const auto& c : schema.columns)
    if (!col_pos.count(c.name))
      throw IngestionError("CSV is missing declared column '" + c.name + "'");
  if (!col_pos.count(label_column))
    throw IngestionError("CSV is missing label column '" + label_column + "'");
  const int label_pos = col_pos[label_column];

  std::vector<std::vector<double>> rows;
  std::vector<std::string> raw_labels;
  std::string line;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size())
      throw IngestionError("row " + std::to_string(line_no) + ": expected " +
                           std::to_string(header.size()) + " cells, got " +
                           std::to_string(cells.size()));
    std::vector<double> row(schema.columns.size());
    for (std::size_t j = 0; j < schema.columns.size(); ++j) {
      const Column& col = schema.columns[j];
      const std::string& cell = cells[col_pos[col.name]];
      if (col.kind == FeatureKind::numerical) {
        try {
          std::size_t used = 0;
          row[j] = std::stod(cell, &used);
          if (used != cell.size()) throw std::invalid_argument(cell);
        } catch (const std::exception&) {
          throw IngestionError("row " + std::to_string(line_no) + ", column '" +
                               col.name + "': unparseable numeric value '" +
                               cell + "'");
        }
      } else {
        const auto it =
            std::find(col.categories.begin(), col.categories.end(), cell);
        if (it == col.categories.end())
          throw IngestionError("row " + std::to_string(line_no) + ", column '" +
                               col.name + "': unknown category '" + cell + "'");
        row[j] = static_cast<double>(it - col.categories.begin());
      }
    }
    rows.push_back(std::move(row));
    raw_labels.push_back(cells[label_pos]);
  }
  if (rows.empty()) throw IngestionError("CSV has no data rows: " + path);

  std::set<std::string> label_values(raw_labels.begin(), raw_labels.end());
  if (label_values.size() > 2)
    throw IngestionError("label column '" + label_column + "' is not binary (" +
                         std::to_string(label_values.size()) + " values)");
  if (!label_values.count(positive_label))
    throw IngestionError("positive label '" + positive_label +
                         "' never occurs in column '" + label_column + "'");

  Dataset ds;
  ds.schema = schema;
  ds.X.resize(static_cast<Eigen::Index>(rows.size()), schema.size());
  ds.y.resize(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (int j = 0; j < schema.size(); ++j)
      ds.X(static_cast<Eigen::Index>(i), j) = rows[i][j];
    ds.y[static_cast<Eigen::Index>(i)] = raw_labels[i] == positive_label ? 1 : 0;
  }
  ds.validate();
  return ds;
}

// ---------------------------------------------------------------------------
// Preprocessing
// ---------------------------------------------------------------------------

PreprocessResult preprocess(const Dataset& ds, double corr_threshold,
                            const ScalingStats* fit_stats) {
  if (ds.n_rows() == 0) throw IngestionError("preprocess: empty dataset");
  if (corr_threshold <= 0.0 || corr_threshold > 1.0)
    throw IngestionError("preprocess: corr_threshold must be in (0,1]");

  const int d = ds.d();
  PreprocessResult out;

  std::vector<int> numerical_cols;
  for (int j = 0; j < d; ++j)
    if (ds.schema.columns[j].kind == FeatureKind::numerical)
      numerical_cols.push_back(j);

  // scaling stats: fit on ds, or replay
  std::vector<double> mean(d, 0.0), stdev(d, 1.0);
  if (fit_stats) {
    for (int j : numerical_cols) {
      const std::string& name = ds.schema.columns[j].name;
      const auto it = std::find(fit_stats->column_names.begin(),
                                fit_stats->column_names.end(), name);
      if (it == fit_stats->column_names.end())
        throw IngestionError("preprocess: fitted stats lack column '" + name + "'");
      const auto k = it - fit_stats->column_names.begin();
      mean[j] = fit_stats->means[k];
      stdev[j] = fit_stats->stds[k];
    }
  } else {
    const double n = static_cast<double>(ds.n_rows());
    for (int j : numerical_cols) {
      mean[j] = ds.X.col(j).mean();
      stdev[j] = std::sqrt((ds.X.col(j).array() - mean[j]).square().sum() / n);
      if (stdev[j] == 0.0)
        out.warnings.push_back("zero-variance column '" +
                               ds.schema.columns[j].name +
                               "' scaled to all zeros");
    }
  }

  // correlation pruning among numerical columns (the earlier column of a
  // violating pair survives; the protected feature always survives)
  std::set<int> dropped;
  if (fit_stats) {
    for (const auto& name : fit_stats->dropped_columns) {
      const int j = ds.schema.index_of(name);
      if (j >= 0) dropped.insert(j);
    }
  } else {
    const double n = static_cast<double>(ds.n_rows());
    for (std::size_t a = 0; a < numerical_cols.size(); ++a) {
      const int ja = numerical_cols[a];
      if (dropped.count(ja)) continue;
      for (std::size_t b = a + 1; b < numerical_cols.size(); ++b) {
        const int jb = numerical_cols[b];
        if (dropped.count(jb)) continue;
        if (ds.protected_index && *ds.protected_index == jb) continue;
        if (stdev[ja] == 0.0 || stdev[jb] == 0.0) continue;
        const double cov = ((ds.X.col(ja).array() - mean[ja]) *
                            (ds.X.col(jb).array() - mean[jb]))
                               .sum() / n;
        const double r = cov / (stdev[ja] * stdev[jb]);
        if (std::abs(r) > corr_threshold) dropped.insert(jb);
      }
    }
  }

  // assemble surviving schema + matrix
  Dataset res;
  std::vector<int> kept;
  for (int j = 0; j < d; ++j)
    if (!dropped.count(j)) kept.push_back(j);
  res.schema.columns.reserve(kept.size());
  res.X.resize(ds.n_rows(), static_cast<Eigen::Index>(kept.size()));
  for (std::size_t k = 0; k < kept.size(); ++k) {
    const int j = kept[k];
    res.schema.columns.push_back(ds.schema.columns[j]);
    if (ds.schema.columns[j].kind == FeatureKind::numerical) {
      const double s = stdev[j] == 0.0 ? 1.0 : stdev[j];
      res.X.col(static_cast<Eigen::Index>(k)) =
          (ds.X.col(j).array() - mean[j]) / s;
      if (stdev[j] == 0.0) res.X.col(static_cast<Eigen::Index>(k)).setZero();
    } else {
      res.X.col(static_cast<Eigen::Index>(k)) = ds.X.col(j);
    }
  }
  res.y = ds.y;
  if (ds.protected_index) {
    const auto it = std::find(kept.begin(), kept.end(), *ds.protected_index);
    res.protected_index = static_cast<int>(it - kept.begin());
  }

  out.stats.column_names.clear();
  for (int j : numerical_cols) {
    out.stats.column_names.push_back(ds.schema.columns[j].name);
    out.stats.means.push_back(mean[j]);
    out.stats.stds.push_back(stdev[j]);
  }
  for (int j : dropped)
    out.dropped_columns.push_back(ds.schema.columns[j].name);
  out.stats.dropped_columns = out.dropped_columns;
  out.data = std::move(res);
  return out;
}

// ---------------------------------------------------------------------------
// Splitting
// ---------------------------------------------------------------------------

namespace {

Dataset take_rows(const Dataset& ds, const std::vector<Eigen::Index>& rows) {
  Dataset out;
  out.schema = ds.schema;
  out.protected_index = ds.protected_index;
  out.X.resize(static_cast<Eigen::Index>(rows.size()), ds.d());
  out.y.resize(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.X.row(static_cast<Eigen::Index>(i)) = ds.X.row(rows[i]);
    out.y[static_cast<Eigen::Index>(i)] = ds.y[rows[i]];
  }
  return out;
}

}  // namespace

SplitPair split(const Dataset& ds, double test_fraction, std::uint64_t seed) {
  if (test_fraction <= 0.0 || test_fraction >= 1.0)
    throw IngestionError("split: test_fraction must be in (0,1)");
  std::vector<Eigen::Index> pos, neg;
  for (Eigen::Index i = 0; i < ds.n_rows(); ++i)
    (ds.y[i] == 1 ? pos : neg).push_back(i);
  if (pos.size() < 2 || neg.size() < 2)
    throw IngestionError("split: need at least 2 rows per class");

  Rng rng = Rng::derive(seed, "split");
  rng.shuffle(pos);
  rng.shuffle(neg);

  std::vector<Eigen::Index> test_rows, train_rows;
  auto cut = [&](std::vector<Eigen::Index>& cls) {
    const auto n_test = static_cast<std::size_t>(
        std::llround(test_fraction * static_cast<double>(cls.size())));
    for (std::size_t i = 0; i < cls.size(); ++i)
      (i < n_test ? test_rows : train_rows).push_back(cls[i]);
  };
  cut(pos);
  cut(neg);
  std::sort(test_rows.begin(), test_rows.end());
  std::sort(train_rows.begin(), train_rows.end());
  return {take_rows(ds, train_rows), take_rows(ds, test_rows)};
}

// ---------------------------------------------------------------------------
// Synthetic biased generator
// ---------------------------------------------------------------------------

Dataset generate_synthetic_biased(int n_rows, int d_numerical,
                                  double bias_strength, std::uint64_t seed) {
  if (n_rows < 20)
    throw IngestionError("generate_synthetic_biased: n_rows must be >= 20");
  if (d_numerical < 2)
    throw IngestionError("generate_synthetic_biased: d_numerical must be >= 2");
  if (bias_strength < 0.0 || bias_strength > 1.0)
    throw IngestionError("generate_synthetic_biased: bias_strength in [0,1]");

  Rng rng = Rng::derive(seed, "synthetic");
  Dataset ds;
  for (int j = 0; j < d_numerical; ++j)
    ds.schema.columns.push_back({"num_" + std::to_string(j),
                                 FeatureKind::numerical, {}});
  ds.schema.columns.push_back(
      {"protected", FeatureKind::categorical, {"0", "1"}});
  ds.protected_index = d_numerical;

  ds.X.resize(n_rows, d_numerical + 1);
  ds.y.resize(n_rows);
  const double p_agree = 0.5 + 0.5 * bias_strength;
  for (int i = 0; i < n_rows; ++i) {
    const int label = rng.bernoulli(0.5) ? 1 : 0;
    ds.y[i] = label;
    // informative features share a 2-D latent factor, so rows live near a
    // low-dimensional manifold (feature correlations are what off-manifold
    // probes and their detectors key on); separation decays with j
    const double u1 = rng.normal(label == 1 ? 0.5 : -0.5, 1.0);
    const double u2 = rng.normal();
    for (int j = 0; j < d_numerical; ++j) {
      const double sep = 1.5 / (1.0 + 0.5 * j);
      const double load2 = (j % 2 == 0 ? 0.8 : -0.8);
      ds.X(i, j) = sep * u1 + load2 * u2 + 0.1 * rng.normal();
    }
    const int prot = rng.bernoulli(p_agree) ? label : 1 - label;
    ds.X(i, d_numerical) = static_cast<double>(prot);
  }
  return ds;
}

}  // namespace xai::tabular
