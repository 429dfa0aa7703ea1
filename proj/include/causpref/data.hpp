#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "causpref/errors.hpp"
#include "causpref/matrix.hpp"

namespace causpref {

constexpr const char* kDatasetVersion = "v1";

// --- feature schema ----------------------------------------------------------

enum class ColumnKind { kNumeric, kCategorical };

struct FeatureColumn {
  std::string name;
  ColumnKind kind = ColumnKind::kNumeric;
  std::vector<std::string> categories;  // categorical only
};

struct FeatureSchema {
  std::vector<FeatureColumn> columns;

  void validate() const {
    std::set<std::string> seen;
    for (const auto& c : columns) {
      if (!seen.insert(c.name).second) {
        throw DataError("schema: duplicate column name '" + c.name + "'");
      }
      if (c.kind == ColumnKind::kCategorical && c.categories.empty()) {
        throw DataError("schema: categorical column '" + c.name +
                        "' lists no categories");
      }
    }
  }

  std::size_t encoded_width() const {
    std::size_t w = 0;
    for (const auto& c : columns) {
      w += c.kind == ColumnKind::kNumeric ? 1 : c.categories.size();
    }
    return w;
  }

  // One name per encoded column; one-hot blocks become "col=category".
  std::vector<std::string> encoded_names() const {
    std::vector<std::string> names;
    for (const auto& c : columns) {
      if (c.kind == ColumnKind::kNumeric) {
        names.push_back(c.name);
      } else {
        for (const auto& cat : c.categories) {
          names.push_back(c.name + "=" + cat);
        }
      }
    }
    return names;
  }
};

struct NormStat {
  std::string column;
  double mean = 0.0;
  double stddev = 1.0;
};

struct Interaction {
  std::uint32_t user = 0;
  std::uint32_t item = 0;
  friend bool operator==(const Interaction&, const Interaction&) = default;
};

// The observational sample: dense user/item feature tables plus the positive
// interaction list. Immutable after construction; safe for concurrent reads.
struct EncodedDataset {
  FeatureSchema user_schema, item_schema;
  std::vector<std::string> user_ids, item_ids;
  Matrix user_features;  // N_u x q_u
  Matrix item_features;  // N_v x q_v
  std::vector<Interaction> interactions;  // deduplicated
  std::vector<std::string> regions;       // empty, or one label per interaction
  std::vector<NormStat> user_norm, item_norm;

  std::size_t q_u() const { return user_features.cols(); }
  std::size_t q_v() const { return item_features.cols(); }
  std::size_t node_count() const { return q_u() + q_v(); }
  bool has_regions() const { return !regions.empty(); }

  void validate() const {
    if (q_u() < 1 || q_v() < 1) {
      throw DataError("dataset: q_u and q_v must be >= 1");
    }
    for (const auto& it : interactions) {
      if (it.user >= user_features.rows() || it.item >= item_features.rows()) {
        throw DataError("dataset: interaction index out of range");
      }
    }
    if (!regions.empty() && regions.size() != interactions.size()) {
      throw DataError("dataset: region labels must match interaction count");
    }
  }

  // All encoded feature names, user columns first; used for graph export.
  std::vector<std::string> node_names() const {
    std::vector<std::string> names;
    for (const auto& n : user_schema.encoded_names()) names.push_back("u:" + n);
    for (const auto& n : item_schema.encoded_names()) names.push_back("i:" + n);
    return names;
  }
};

struct LoadReport {
  std::size_t unseen_categories = 0;
  std::size_t duplicate_interactions = 0;
};

// --- csv ----------------------------------------------------------------------

namespace detail {

// RFC-4180-ish: comma separated, double quotes with "" escapes, tolerant of
// trailing \r.
inline std::vector<std::string> parse_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(ch);
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

inline std::vector<std::vector<std::string>> read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open file: " + path);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    rows.push_back(parse_csv_line(line));
  }
  if (rows.empty()) throw DataError("empty csv file: " + path);
  return rows;
}

inline double parse_number(const std::string& s, const std::string& context) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataError("cannot parse number '" + s + "' in " + context);
  }
}

struct EncodedTable {
  std::vector<std::string> ids;
  Matrix features;
  std::vector<NormStat> norm;
};

// One-hot categorical columns, z-score numeric ones over all loaded rows
// (the full table is the training portion at ingest time; splits subset
// interactions, not feature rows). Rows come out sorted by id.
inline EncodedTable encode_table(const std::vector<std::vector<std::string>>& rows,
                                 const FeatureSchema& schema,
                                 const std::string& path, LoadReport* report) {
  schema.validate();
  const auto& header = rows[0];
  if (header.empty() || header[0] != "id") {
    throw DataError(path + ": first column must be 'id'");
  }
  if (header.size() != schema.columns.size() + 1) {
    throw DataError(path + ": header has " + std::to_string(header.size() - 1) +
                    " feature columns, schema describes " +
                    std::to_string(schema.columns.size()));
  }
  for (std::size_t c = 0; c < schema.columns.size(); ++c) {
    if (header[c + 1] != schema.columns[c].name) {
      throw DataError(path + ": column '" + header[c + 1] +
                      "' does not match schema column '" +
                      schema.columns[c].name + "'");
    }
  }

  std::vector<std::size_t> order(rows.size() - 1);
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i + 1;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return rows[a][0] < rows[b][0];
  });

  EncodedTable table;
  table.features = Matrix(order.size(), schema.encoded_width());
  for (std::size_t r = 0; r < order.size(); ++r) {
    const auto& row = rows[order[r]];
    if (row.size() != header.size()) {
      throw DataError(path + ": row for id '" + row[0] +
                      "' has wrong field count");
    }
    if (!table.ids.empty() && table.ids.back() == row[0]) {
      throw DataError(path + ": duplicate id '" + row[0] + "'");
    }
    table.ids.push_back(row[0]);
    std::size_t off = 0;
    for (std::size_t c = 0; c < schema.columns.size(); ++c) {
      const auto& col = schema.columns[c];
      const std::string& cell = row[c + 1];
      if (col.kind == ColumnKind::kNumeric) {
        table.features(r, off++) = parse_number(cell, path + " column " + col.name);
      } else {
        const auto it =
            std::find(col.categories.begin(), col.categories.end(), cell);
        if (it == col.categories.end()) {
          // Unseen category: all-zero block, counted.
          if (report) ++report->unseen_categories;
        } else {
          table.features(r, off + (it - col.categories.begin())) = 1.0;
        }
        off += col.categories.size();
      }
    }
  }

  // z-score numeric columns (population std; constant columns left centered).
  std::size_t off = 0;
  for (const auto& col : schema.columns) {
    if (col.kind != ColumnKind::kNumeric) {
      off += col.categories.size();
      continue;
    }
    double mean = 0.0;
    for (std::size_t r = 0; r < table.features.rows(); ++r) {
      mean += table.features(r, off);
    }
    mean /= static_cast<double>(table.features.rows());
    double var = 0.0;
    for (std::size_t r = 0; r < table.features.rows(); ++r) {
      const double d = table.features(r, off) - mean;
      var += d * d;
    }
    var /= static_cast<double>(table.features.rows());
    const double stddev = var > 0.0 ? std::sqrt(var) : 1.0;
    for (std::size_t r = 0; r < table.features.rows(); ++r) {
      table.features(r, off) = (table.features(r, off) - mean) / stddev;
    }
    table.norm.push_back({col.name, mean, stddev});
    ++off;
  }
  return table;
}

}  // namespace detail

// --- ingestion ----------------------------------------------------------------

inline EncodedDataset load_raw(const std::string& users_path,
                               const std::string& items_path,
                               const std::string& interactions_path,
                               const FeatureSchema& user_schema,
                               const FeatureSchema& item_schema,
                               LoadReport* report = nullptr) {
  LoadReport local;
  LoadReport* rep = report ? report : &local;

  EncodedDataset ds;
  ds.user_schema = user_schema;
  ds.item_schema = item_schema;
  auto users = detail::encode_table(detail::read_csv(users_path), user_schema,
                                    users_path, rep);
  auto items = detail::encode_table(detail::read_csv(items_path), item_schema,
                                    items_path, rep);
  ds.user_ids = std::move(users.ids);
  ds.user_features = std::move(users.features);
  ds.user_norm = std::move(users.norm);
  ds.item_ids = std::move(items.ids);
  ds.item_features = std::move(items.features);
  ds.item_norm = std::move(items.norm);

  std::map<std::string, std::uint32_t> user_index, item_index;
  for (std::size_t i = 0; i < ds.user_ids.size(); ++i) {
    user_index[ds.user_ids[i]] = static_cast<std::uint32_t>(i);
  }
  for (std::size_t i = 0; i < ds.item_ids.size(); ++i) {
    item_index[ds.item_ids[i]] = static_cast<std::uint32_t>(i);
  }

  const auto rows = detail::read_csv(interactions_path);
  const auto& header = rows[0];
  if (header.size() < 2 || header[0] != "user_id" || header[1] != "item_id") {
    throw DataError(interactions_path +
                    ": header must be 'user_id,item_id[,region]'");
  }
  const bool with_region = header.size() >= 3 && header[2] == "region";
  std::set<std::pair<std::uint32_t, std::uint32_t>> seen;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    const auto ui = user_index.find(row[0]);
    if (ui == user_index.end()) {
      throw DataError(interactions_path + ": unknown user id '" + row[0] + "'");
    }
    const auto ii = item_index.find(row.size() > 1 ? row[1] : "");
    if (ii == item_index.end()) {
      throw DataError(interactions_path + ": unknown item id '" +
                      (row.size() > 1 ? row[1] : "") + "'");
    }
    if (!seen.insert({ui->second, ii->second}).second) {
      ++rep->duplicate_interactions;
      continue;
    }
    ds.interactions.push_back({ui->second, ii->second});
    if (with_region) {
      ds.regions.push_back(row.size() > 2 ? row[2] : "");
    }
  }
  ds.validate();
  return ds;
}

// --- persistence ----------------------------------------------------------------

namespace detail {

inline nlohmann::json schema_to_json(const FeatureSchema& s) {
  nlohmann::json cols = nlohmann::json::array();
  for (const auto& c : s.columns) {
    nlohmann::json jc{{"name", c.name},
                      {"kind", c.kind == ColumnKind::kNumeric ? "numeric"
                                                              : "categorical"}};
    if (c.kind == ColumnKind::kCategorical) jc["categories"] = c.categories;
    cols.push_back(jc);
  }
  return nlohmann::json{{"columns", cols}};
}

inline FeatureSchema schema_from_json(const nlohmann::json& j) {
  FeatureSchema s;
  for (const auto& jc : j.at("columns")) {
    FeatureColumn c;
    c.name = jc.at("name").get<std::string>();
    const std::string kind = jc.at("kind").get<std::string>();
    if (kind == "numeric") {
      c.kind = ColumnKind::kNumeric;
    } else if (kind == "categorical") {
      c.kind = ColumnKind::kCategorical;
      c.categories = jc.at("categories").get<std::vector<std::string>>();
    } else {
      throw DataError("schema: unknown column kind '" + kind + "'");
    }
    s.columns.push_back(std::move(c));
  }
  s.validate();
  return s;
}

inline nlohmann::json matrix_to_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return nlohmann::json{{"rows", m.rows()}, {"cols", m.cols()},
                        {"values", rows}};
}

inline Matrix matrix_from_json(const nlohmann::json& j) {
  Matrix m(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>());
  const auto& rows = j.at("values");
  if (rows.size() != m.rows()) throw DataError("matrix: row count mismatch");
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const auto& row = rows[i];
    if (row.size() != m.cols()) throw DataError("matrix: column count mismatch");
    for (std::size_t jx = 0; jx < m.cols(); ++jx) {
      m(i, jx) = row[jx].get<double>();
    }
  }
  return m;
}

inline nlohmann::json norm_to_json(const std::vector<NormStat>& ns) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& n : ns) {
    arr.push_back({{"column", n.column}, {"mean", n.mean}, {"std", n.stddev}});
  }
  return arr;
}

inline std::vector<NormStat> norm_from_json(const nlohmann::json& j) {
  std::vector<NormStat> ns;
  for (const auto& jn : j) {
    ns.push_back({jn.at("column").get<std::string>(),
                  jn.at("mean").get<double>(), jn.at("std").get<double>()});
  }
  return ns;
}

inline nlohmann::json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open file: " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed json in " + path + ": " + e.what());
  }
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write file: " + path);
  out << text;
  if (!out) throw DataError("write failed: " + path);
}

}  // namespace detail

inline void save_encoded(const EncodedDataset& ds, const std::string& path) {
  nlohmann::json j{
      {"version", kDatasetVersion},
      {"schemas",
       {{"user", detail::schema_to_json(ds.user_schema)},
        {"item", detail::schema_to_json(ds.item_schema)}}},
      {"normalization_stats",
       {{"user", detail::norm_to_json(ds.user_norm)},
        {"item", detail::norm_to_json(ds.item_norm)}}},
      {"user_ids", ds.user_ids},
      {"item_ids", ds.item_ids},
      {"user_features", detail::matrix_to_json(ds.user_features)},
      {"item_features", detail::matrix_to_json(ds.item_features)},
      {"interactions", nlohmann::json::array()},
      {"regions", ds.regions}};
  for (const auto& it : ds.interactions) {
    j["interactions"].push_back({it.user, it.item});
  }
  detail::write_text_file(path, j.dump());
}

inline EncodedDataset load_encoded(const std::string& path) {
  const nlohmann::json j = detail::load_json_file(path);
  try {
    const std::string version = j.at("version").get<std::string>();
    if (version != kDatasetVersion) {
      throw DataError("dataset " + path + ": version '" + version +
                      "' not supported (current " + kDatasetVersion + ")");
    }
    EncodedDataset ds;
    ds.user_schema = detail::schema_from_json(j.at("schemas").at("user"));
    ds.item_schema = detail::schema_from_json(j.at("schemas").at("item"));
    ds.user_norm = detail::norm_from_json(j.at("normalization_stats").at("user"));
    ds.item_norm = detail::norm_from_json(j.at("normalization_stats").at("item"));
    ds.user_ids = j.at("user_ids").get<std::vector<std::string>>();
    ds.item_ids = j.at("item_ids").get<std::vector<std::string>>();
    ds.user_features = detail::matrix_from_json(j.at("user_features"));
    ds.item_features = detail::matrix_from_json(j.at("item_features"));
    for (const auto& ji : j.at("interactions")) {
      ds.interactions.push_back({ji.at(0).get<std::uint32_t>(),
                                 ji.at(1).get<std::uint32_t>()});
    }
    ds.regions = j.at("regions").get<std::vector<std::string>>();
    ds.validate();
    return ds;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("dataset " + path + ": " + e.what());
  }
}

// FNV-1a over the canonical schema serialization; persisted in model files so
// a checkpoint cannot be evaluated against a differently-encoded dataset.
inline std::uint64_t schema_hash(const EncodedDataset& ds) {
  const std::string text = detail::schema_to_json(ds.user_schema).dump() + "|" +
                           detail::schema_to_json(ds.item_schema).dump();
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace causpref
