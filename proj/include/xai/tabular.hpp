#pragma once

#include <Eigen/Dense>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "xai/rng.hpp"

namespace xai::tabular {

struct IngestionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class FeatureKind { numerical, categorical };

struct Column {
  std::string name;
  FeatureKind kind = FeatureKind::numerical;
  std::vector<std::string> categories;  // categorical only, >= 2 entries
};

/// Ordered column list; the order defines the feature index space.
struct FeatureSchema {
  std::vector<Column> columns;

  int size() const { return static_cast<int>(columns.size()); }
  int index_of(const std::string& name) const;  // -1 when absent
  void validate() const;  // unique names, categorical columns have >= 2 categories
};

struct Dataset {
  FeatureSchema schema;
  Eigen::MatrixXd X;   // n_rows x d, categoricals integer-encoded
  Eigen::VectorXi y;   // binary labels, 1 = benign/superior outcome
  std::optional<int> protected_index;

  Eigen::Index n_rows() const { return X.rows(); }
  int d() const { return static_cast<int>(X.cols()); }
  void validate() const;
};

struct SplitPair {
  Dataset train;
  Dataset test;
};

/// Per-column scaling statistics plus the pruning decision, so a fitted
/// transform can be replayed on a second split. Serializes to JSON
/// {column -> {mean, std}}.
struct ScalingStats {
  std::vector<std::string> column_names;  // numerical columns, schema order
  std::vector<double> means;
  std::vector<double> stds;               // population std
  std::vector<std::string> dropped_columns;

  std::string to_json() const;
  static ScalingStats from_json(const std::string& text);
};

struct PreprocessResult {
  Dataset data;
  ScalingStats stats;
  std::vector<std::string> dropped_columns;
  std::vector<std::string> warnings;  // e.g. zero-variance columns
};

/// Load a CSV (header row, comma separated, '.' decimal point) against a
/// declared schema. Labels are normalized so 1 means the superior outcome:
/// rows whose label equals positive_label get y=1, every other label value
/// (there must be exactly one) gets y=0.
Dataset load_csv_dataset(const std::string& path, const FeatureSchema& schema,
                         const std::string& label_column,
                         const std::string& positive_label);

/// Standard-scale numerical columns and drop the later column of every
/// numerical pair with |Pearson r| > corr_threshold. The protected feature
/// is never dropped. When fit_stats is given the transform is replayed
/// (same means/stds/drop set) instead of re-fitted.
PreprocessResult preprocess(const Dataset& ds, double corr_threshold,
                            const ScalingStats* fit_stats = nullptr);

/// Deterministic stratified split.
SplitPair split(const Dataset& ds, double test_fraction, std::uint64_t seed);

/// Synthetic biased dataset: d_numerical informative Gaussian features plus
/// one binary protected feature equal to the label with probability
/// 0.5 + 0.5*bias_strength. Desk-scale stand-in for the biased datasets the
/// attacks target.
Dataset generate_synthetic_biased(int n_rows, int d_numerical,
                                  double bias_strength, std::uint64_t seed);

}  // namespace xai::tabular
