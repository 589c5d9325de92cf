#pragma once

#include "mixdiff/types.hpp"

#include <optional>
#include <string>
#include <vector>

namespace mixdiff {

struct DatasetRecord {
  std::string id;
  FeatureVector features;
  std::optional<int> label;  // dense class index into label_names
  bool is_ood = false;
};

/// Feature vectors plus ground-truth ID/OOD flags. String labels are mapped
/// to dense indices [0, K) at load time; the mapping is kept in label_names
/// so it can be persisted next to run outputs.
struct LabeledDataset {
  std::vector<DatasetRecord> records;
  std::vector<std::string> label_names;
  int dim = 0;

  int num_classes() const { return static_cast<int>(label_names.size()); }
  std::size_t size() const { return records.size(); }

  void validate() const;
};

enum class DatasetFormat { Csv, Jsonl };

/// Picks Csv for ".csv", Jsonl for ".jsonl"/".ndjson"; errors otherwise.
DatasetFormat dataset_format_from_path(const std::string& path);

/// CSV columns: id, ood, label, f0..f(d-1). JSONL keys:
/// {"id","ood","label","features"}. Labels of ID rows are required; OOD
/// rows may leave the label empty. Errors name the offending row.
LabeledDataset load_dataset(const std::string& path, DatasetFormat format);

void save_dataset(const LabeledDataset& ds, const std::string& path, DatasetFormat format);

/// Label table as a JSON object {"name": index, ...}.
void save_label_table(const LabeledDataset& ds, const std::string& path);

/// Takes the first per_class ID exemplars of every class, in row order.
/// With labeled=false the same exemplars are flattened into a single pool.
OracleSet make_oracle_set(const LabeledDataset& ds, int per_class, bool labeled);

}  // namespace mixdiff
