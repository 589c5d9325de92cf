#include "mixdiff/dataset.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace mixdiff {

namespace {

using json = nlohmann::ordered_json;

[[noreturn]] void core_error(const std::string& msg) { throw Error("core", msg); }

[[noreturn]] void row_error(std::size_t row, const std::string& msg) {
  core_error("row " + std::to_string(row) + ": " + msg);
}

bool parse_bool(const std::string& s, bool& out) {
  if (s == "0" || s == "false") { out = false; return true; }
  if (s == "1" || s == "true") { out = true; return true; }
  return false;
}

bool parse_double(const std::string& s, double& out) {
  const char* begin = s.data();
  const char* end = begin + s.size();
  auto [ptr, ec] = std::from_chars(begin, end, out);
  return ec == std::errc() && ptr == end;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

bool looks_like_integer(const std::string& s) {
  if (s.empty()) return false;
  std::size_t i = (s[0] == '-' || s[0] == '+') ? 1 : 0;
  if (i == s.size()) return false;
  for (; i < s.size(); ++i)
    if (!std::isdigit(static_cast<unsigned char>(s[i]))) return false;
  return true;
}

struct RawRecord {
  std::string id;
  std::vector<double> features;
  std::string label;  // empty = none
  bool is_ood = false;
};

LabeledDataset assemble(std::vector<RawRecord> raw) {
  if (raw.empty()) core_error("empty dataset");

  LabeledDataset ds;
  ds.dim = static_cast<int>(raw.front().features.size());
  if (ds.dim < 1) row_error(1, "record has no features");

  // Label table from ID rows. Numeric ordering when every label parses as
  // an integer, lexicographic otherwise, so "2" < "10" behaves as expected.
  std::vector<std::string> names;
  for (const auto& r : raw) {
    if (!r.is_ood && !r.label.empty() &&
        std::find(names.begin(), names.end(), r.label) == names.end())
      names.push_back(r.label);
  }
  bool numeric = !names.empty() &&
                 std::all_of(names.begin(), names.end(), looks_like_integer);
  std::sort(names.begin(), names.end(), [numeric](const std::string& a, const std::string& b) {
    if (numeric) return std::stoll(a) < std::stoll(b);
    return a < b;
  });
  std::map<std::string, int> index;
  for (std::size_t i = 0; i < names.size(); ++i) index[names[i]] = static_cast<int>(i);
  ds.label_names = std::move(names);

  std::size_t row = 0;
  for (auto& r : raw) {
    ++row;
    if (static_cast<int>(r.features.size()) != ds.dim)
      row_error(row, "feature dimension " + std::to_string(r.features.size()) +
                         " does not match dataset dimension " + std::to_string(ds.dim));
    DatasetRecord rec;
    rec.id = std::move(r.id);
    rec.is_ood = r.is_ood;
    rec.features = Eigen::Map<const Eigen::VectorXd>(r.features.data(),
                                                     static_cast<Eigen::Index>(r.features.size()));
    if (!all_finite(rec.features)) row_error(row, "non-finite feature value");
    if (!r.label.empty()) {
      auto it = index.find(r.label);
      if (it == index.end()) {
        // Only ID labels enter the table; an OOD row may not invent one.
        row_error(row, "label '" + r.label + "' does not name an ID class");
      }
      rec.label = it->second;
    } else if (!rec.is_ood) {
      row_error(row, "ID record is missing its class label");
    }
    ds.records.push_back(std::move(rec));
  }

  ds.validate();
  return ds;
}

}  // namespace

void LabeledDataset::validate() const {
  if (records.empty()) core_error("empty dataset");
  if (dim < 1) core_error("dataset dimension must be positive");
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (r.features.size() != dim) row_error(i + 1, "feature dimension mismatch");
    if (!all_finite(r.features)) row_error(i + 1, "non-finite feature value");
    if (!r.is_ood && !r.label.has_value()) row_error(i + 1, "ID record is missing its class label");
    if (r.label && (*r.label < 0 || *r.label >= num_classes()))
      row_error(i + 1, "label index outside the label table");
  }
}

DatasetFormat dataset_format_from_path(const std::string& path) {
  auto ends_with = [&](const std::string& suffix) {
    return path.size() >= suffix.size() &&
           path.compare(path.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  if (ends_with(".csv")) return DatasetFormat::Csv;
  if (ends_with(".jsonl") || ends_with(".ndjson")) return DatasetFormat::Jsonl;
  core_error("cannot infer dataset format from path '" + path + "' (use .csv or .jsonl)");
}

LabeledDataset load_dataset(const std::string& path, DatasetFormat format) {
  std::ifstream in(path);
  if (!in) core_error("cannot open dataset file '" + path + "'");

  std::vector<RawRecord> raw;
  std::string line;
  std::size_t row = 0;

  if (format == DatasetFormat::Csv) {
    bool first = true;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      auto fields = split_csv_line(line);
      if (first && !fields.empty() && fields[0] == "id") {
        first = false;
        continue;  // header
      }
      first = false;
      ++row;
      if (fields.size() < 4) row_error(row, "expected id, ood, label and at least one feature");
      RawRecord r;
      r.id = fields[0];
      if (!parse_bool(fields[1], r.is_ood)) row_error(row, "cannot parse ood flag '" + fields[1] + "'");
      r.label = fields[2];
      for (std::size_t i = 3; i < fields.size(); ++i) {
        double v = 0.0;
        if (!parse_double(fields[i], v))
          row_error(row, "cannot parse feature value '" + fields[i] + "'");
        r.features.push_back(v);
      }
      raw.push_back(std::move(r));
    }
  } else {
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      ++row;
      json obj;
      try {
        obj = json::parse(line);
      } catch (const json::exception& e) {
        row_error(row, std::string("malformed JSON: ") + e.what());
      }
      RawRecord r;
      if (!obj.contains("id") || !obj.contains("ood") || !obj.contains("features"))
        row_error(row, "record needs id, ood and features keys");
      r.id = obj["id"].is_string() ? obj["id"].get<std::string>() : obj["id"].dump();
      if (!obj["ood"].is_boolean()) row_error(row, "ood must be a boolean");
      r.is_ood = obj["ood"].get<bool>();
      if (obj.contains("label") && !obj["label"].is_null()) {
        r.label = obj["label"].is_string() ? obj["label"].get<std::string>()
                                           : obj["label"].dump();
      }
      if (!obj["features"].is_array() || obj["features"].empty())
        row_error(row, "features must be a non-empty array");
      for (const auto& v : obj["features"]) {
        if (!v.is_number()) row_error(row, "feature entries must be numbers");
        r.features.push_back(v.get<double>());
      }
      raw.push_back(std::move(r));
    }
  }

  return assemble(std::move(raw));
}

void save_dataset(const LabeledDataset& ds, const std::string& path, DatasetFormat format) {
  ds.validate();
  std::ofstream out(path);
  if (!out) core_error("cannot open '" + path + "' for writing");
  out.precision(17);

  if (format == DatasetFormat::Csv) {
    out << "id,ood,label";
    for (int i = 0; i < ds.dim; ++i) out << ",f" << i;
    out << "\n";
    for (const auto& r : ds.records) {
      out << r.id << ',' << (r.is_ood ? 1 : 0) << ','
          << (r.label ? ds.label_names[*r.label] : std::string());
      for (int i = 0; i < ds.dim; ++i) out << ',' << r.features[i];
      out << "\n";
    }
  } else {
    for (const auto& r : ds.records) {
      json obj;
      obj["id"] = r.id;
      obj["ood"] = r.is_ood;
      if (r.label)
        obj["label"] = ds.label_names[*r.label];
      else
        obj["label"] = nullptr;
      obj["features"] = std::vector<double>(r.features.data(), r.features.data() + r.features.size());
      out << obj.dump() << "\n";
    }
  }
}

void save_label_table(const LabeledDataset& ds, const std::string& path) {
  json table = json::object();
  for (std::size_t i = 0; i < ds.label_names.size(); ++i)
    table[ds.label_names[i]] = static_cast<int>(i);
  std::ofstream out(path);
  if (!out) core_error("cannot open '" + path + "' for writing");
  out << table.dump(2) << "\n";
}

OracleSet make_oracle_set(const LabeledDataset& ds, int per_class, bool labeled) {
  if (per_class < 1) core_error("oracle set needs at least one exemplar per class");
  std::map<int, std::vector<OracleExemplar>> by_class;
  for (const auto& r : ds.records) {
    if (r.is_ood || !r.label) continue;
    auto& v = by_class[*r.label];
    if (static_cast<int>(v.size()) < per_class) v.push_back({r.id, r.features});
  }
  if (by_class.empty()) core_error("dataset has no labeled ID rows to build oracles from");
  for (const auto& [k, v] : by_class) {
    if (static_cast<int>(v.size()) < per_class)
      core_error("class " + std::to_string(k) + " has only " + std::to_string(v.size()) +
                 " ID exemplars, need " + std::to_string(per_class));
  }

  OracleSet set;
  set.labeled = labeled;
  if (labeled) {
    set.by_class = std::move(by_class);
  } else {
    for (auto& [k, v] : by_class)
      for (auto& e : v) set.pool.push_back(std::move(e));
  }
  set.validate();
  return set;
}

}  // namespace mixdiff
