#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "treex/blackbox.hpp"
#include "treex/cartpole.hpp"
#include "treex/core.hpp"
#include "treex/error.hpp"
#include "treex/forest.hpp"
#include "treex/gmm.hpp"

namespace treex {

using json = nlohmann::json;

inline constexpr int kFormatVersion = 1;

// ---------------------------------------------------------------------------
// Files

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Writes via a temporary file in the same directory and renames it into place.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write " + tmp.string());
    out << content;
    if (!out.flush()) throw InputError("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw InputError("cannot rename " + tmp.string() + ": " + ec.message());
}

inline json load_json(const std::filesystem::path& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

namespace detail {

inline void expect_kind(const json& j, std::string_view kind) {
  if (!j.is_object() || !j.contains("kind") || j.at("kind") != kind)
    throw InputError("expected a \"" + std::string(kind) + "\" document");
  if (j.value("format_version", 0) != kFormatVersion)
    throw InputError("unsupported format_version for " + std::string(kind));
}

// JSON has no infinities; unbounded sides are written as null.
inline json bound_to_json(double v) { return std::isinf(v) ? json(nullptr) : json(v); }
inline double bound_from_json(const json& j, double inf_value) {
  return j.is_null() ? inf_value : j.get<double>();
}

template <class F>
decltype(auto) guard_json(F&& f) {
  try {
    return f();
  } catch (const json::exception& e) {
    throw InputError(std::string("malformed model document: ") + e.what());
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Trees

inline json tree_to_json(const DecisionTree& t) {
  json nodes = json::array();
  for (const auto& n : t.nodes()) {
    json jn;
    jn["label"] = n.stats.label;
    jn["class_histogram"] = n.stats.class_histogram;
    jn["mass"] = n.stats.mass;
    jn["cached_gain"] = n.stats.cached_gain;
    if (n.split) {
      jn["dim"] = n.split->dim;
      jn["threshold"] = n.split->threshold;
      jn["left"] = n.split->left;
      jn["right"] = n.split->right;
    }
    nodes.push_back(std::move(jn));
  }
  return {{"kind", "decision_tree"}, {"format_version", kFormatVersion}, {"d", t.dim()},
          {"m", t.classes()},        {"root", t.root()},                 {"nodes", nodes}};
}

inline DecisionTree tree_from_json(const json& j) {
  return detail::guard_json([&] {
    detail::expect_kind(j, "decision_tree");
    std::vector<TreeNode> nodes;
    for (const auto& jn : j.at("nodes")) {
      TreeNode n;
      n.stats.label = jn.at("label").get<Label>();
      n.stats.class_histogram = jn.at("class_histogram").get<std::vector<double>>();
      n.stats.mass = jn.at("mass").get<double>();
      n.stats.cached_gain = jn.at("cached_gain").get<double>();
      if (jn.contains("dim"))
        n.split = Split{jn.at("dim").get<std::size_t>(), jn.at("threshold").get<double>(),
                        jn.at("left").get<NodeId>(), jn.at("right").get<NodeId>()};
      nodes.push_back(std::move(n));
    }
    return DecisionTree(j.at("d").get<std::size_t>(), j.at("m").get<int>(), std::move(nodes),
                        j.at("root").get<NodeId>());
  });
}

// ---------------------------------------------------------------------------
// Mixtures

inline json gmm_to_json(const GaussianMixture& g) {
  const std::size_t k = g.components();
  json means = json::array(), sds = json::array();
  for (std::size_t j = 0; j < k; ++j) {
    means.push_back(std::vector<double>(g.means.begin() + j * g.d, g.means.begin() + (j + 1) * g.d));
    sds.push_back(
        std::vector<double>(g.stddevs.begin() + j * g.d, g.stddevs.begin() + (j + 1) * g.d));
  }
  json out = {{"kind", "gaussian_mixture"}, {"format_version", kFormatVersion}, {"d", g.d},
              {"weights", g.weights},       {"means", means},                  {"stddevs", sds}};
  if (g.domain_bound) out["domain_bound"] = *g.domain_bound;
  return out;
}

inline GaussianMixture gmm_from_json(const json& j) {
  return detail::guard_json([&] {
    detail::expect_kind(j, "gaussian_mixture");
    GaussianMixture g;
    g.d = j.at("d").get<std::size_t>();
    g.weights = j.at("weights").get<std::vector<double>>();
    for (const auto& row : j.at("means")) {
      auto v = row.get<std::vector<double>>();
      if (v.size() != g.d) throw InputError("mixture mean row has wrong length");
      g.means.insert(g.means.end(), v.begin(), v.end());
    }
    for (const auto& row : j.at("stddevs")) {
      auto v = row.get<std::vector<double>>();
      if (v.size() != g.d) throw InputError("mixture stddev row has wrong length");
      g.stddevs.insert(g.stddevs.end(), v.begin(), v.end());
    }
    if (j.contains("domain_bound")) g.domain_bound = j.at("domain_bound").get<double>();
    g.validate();
    return g;
  });
}

// ---------------------------------------------------------------------------
// Blackboxes

inline json forest_to_json(const RandomForest& f) {
  json trees = json::array();
  for (const auto& t : f.trees()) trees.push_back(tree_to_json(t));
  return {{"kind", "random_forest"}, {"format_version", kFormatVersion}, {"d", f.dim()},
          {"m", f.classes()},        {"trees", trees}};
}

inline RandomForest forest_from_json(const json& j) {
  return detail::guard_json([&] {
    detail::expect_kind(j, "random_forest");
    std::vector<DecisionTree> trees;
    for (const auto& t : j.at("trees")) trees.push_back(tree_from_json(t));
    return RandomForest(j.at("d").get<std::size_t>(), j.at("m").get<int>(), std::move(trees));
  });
}

inline json policy_to_json(const TabularPolicy& p) {
  json axes = json::array();
  for (const auto& a : p.axes()) axes.push_back({{"lo", a.lo}, {"hi", a.hi}, {"bins", a.bins}});
  return {{"kind", "cartpole_policy"},
          {"format_version", kFormatVersion},
          {"axes", axes},
          {"actions", p.actions()}};
}

inline TabularPolicy policy_from_json(const json& j) {
  return detail::guard_json([&] {
    detail::expect_kind(j, "cartpole_policy");
    std::array<GridAxis, 4> axes;
    if (j.at("axes").size() != 4) throw InputError("policy needs exactly 4 axes");
    for (std::size_t i = 0; i < 4; ++i) {
      const auto& a = j.at("axes")[i];
      axes[i] = {a.at("lo").get<double>(), a.at("hi").get<double>(), a.at("bins").get<std::size_t>()};
      if (axes[i].bins == 0 || !(axes[i].lo < axes[i].hi)) throw InputError("bad policy axis");
    }
    return TabularPolicy(axes, j.at("actions").get<std::vector<Label>>());
  });
}

inline json box_function_to_json(const BoxFunction& f) {
  json boxes = json::array();
  for (std::size_t b = 0; b < f.boxes().size(); ++b) {
    json lower = json::array(), upper = json::array();
    for (double v : f.boxes()[b].lower) lower.push_back(detail::bound_to_json(v));
    for (double v : f.boxes()[b].upper) upper.push_back(detail::bound_to_json(v));
    boxes.push_back({{"lower", lower}, {"upper", upper}, {"label", f.labels()[b]}});
  }
  return {{"kind", "box_function"},   {"format_version", kFormatVersion}, {"d", f.dim()},
          {"m", f.classes()},         {"default_label", f.default_label()},
          {"boxes", boxes}};
}

inline std::unique_ptr<BoxFunction> box_function_from_json(const json& j) {
  return detail::guard_json([&] {
    detail::expect_kind(j, "box_function");
    const auto d = j.at("d").get<std::size_t>();
    std::vector<BoxConstraint> boxes;
    std::vector<Label> labels;
    for (const auto& jb : j.at("boxes")) {
      BoxConstraint b;
      for (const auto& v : jb.at("lower")) b.lower.push_back(detail::bound_from_json(v, -kInf));
      for (const auto& v : jb.at("upper")) b.upper.push_back(detail::bound_from_json(v, kInf));
      if (b.lower.size() != d || b.upper.size() != d) throw InputError("box has wrong dimension");
      boxes.push_back(std::move(b));
      labels.push_back(jb.at("label").get<Label>());
    }
    return std::make_unique<BoxFunction>(d, j.at("m").get<int>(), std::move(boxes),
                                         std::move(labels), j.at("default_label").get<Label>());
  });
}

// Blackbox from a spec string "rf:path", "cartpole:path", "synthetic:path" or "tree:path".
inline std::unique_ptr<Blackbox> load_blackbox(const std::string& spec) {
  const auto colon = spec.find(':');
  if (colon == std::string::npos) throw InputError("blackbox spec must look like kind:path");
  const std::string kind = spec.substr(0, colon);
  const json j = load_json(spec.substr(colon + 1));
  if (kind == "rf") return std::make_unique<RandomForest>(forest_from_json(j));
  if (kind == "cartpole") return std::make_unique<TabularPolicy>(policy_from_json(j));
  if (kind == "synthetic") return box_function_from_json(j);
  if (kind == "tree") return std::make_unique<TreeBlackbox>(tree_from_json(j));
  throw InputError("unknown blackbox kind '" + kind + "'");
}

// ---------------------------------------------------------------------------
// CSV

// RFC 4180 records: quoted fields may contain commas, quotes ("") and newlines.
inline std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false, field_started = false;
  std::size_t line = 1;
  auto end_field = [&] {
    row.push_back(std::move(field));
    field.clear();
    field_started = false;
  };
  auto end_row = [&] {
    end_field();
    if (!(row.size() == 1 && row[0].empty())) rows.push_back(std::move(row));
    row.clear();
  };
  for (std::size_t k = 0; k < text.size(); ++k) {
    const char c = text[k];
    if (quoted) {
      if (c == '"') {
        if (k + 1 < text.size() && text[k + 1] == '"') {
          field += '"';
          ++k;
        } else {
          quoted = false;
        }
      } else {
        if (c == '\n') ++line;
        field += c;
      }
      continue;
    }
    switch (c) {
      case '"':
        if (field_started) throw InputError("csv line " + std::to_string(line) + ": stray quote");
        quoted = field_started = true;
        break;
      case ',':
        end_field();
        break;
      case '\r':
        break;
      case '\n':
        end_row();
        ++line;
        break;
      default:
        field += c;
        field_started = true;
    }
  }
  if (quoted) throw InputError("csv: unterminated quoted field");
  if (!field.empty() || !row.empty()) end_row();
  return rows;
}

struct CsvSchema {
  std::optional<std::string> label_column;
  std::set<std::string> categorical;
};

// Column layout learned from a training file and reused for later files so
// that one-hot columns and class indices stay aligned.
struct CsvEncoding {
  struct Column {
    std::string name;
    bool categorical = false;
    std::vector<std::string> categories;  // first-appearance order
  };
  std::vector<Column> columns;  // input columns excluding the label
  std::optional<std::string> label_column;
  std::vector<std::string> class_names;  // empty when labels are integer indices
  int m = 0;
};

namespace detail {

inline double parse_number(const std::string& s, std::size_t line, const std::string& col) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size() || !std::isfinite(v))
    throw InputError("csv line " + std::to_string(line) + ": column '" + col +
                     "' is not a finite number: '" + s + "'");
  return v;
}

inline bool is_index(const std::string& s) {
  return !s.empty() && s.size() < 9 &&
         std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; });
}

}  // namespace detail

// Parses CSV text. With `fitted` == nullptr the encoding is learned from this
// file; otherwise the given encoding is applied and unknown categories are errors.
inline std::pair<Dataset, CsvEncoding> parse_dataset(const std::string& text,
                                                     const CsvSchema& schema,
                                                     const CsvEncoding* fitted = nullptr) {
  auto rows = parse_csv(text);
  if (rows.size() < 2) throw InputError("csv needs a header and at least one row");
  const auto& header = rows[0];
  for (std::size_t r = 1; r < rows.size(); ++r)
    if (rows[r].size() != header.size())
      throw InputError("csv line " + std::to_string(r + 1) + ": expected " +
                       std::to_string(header.size()) + " fields, got " +
                       std::to_string(rows[r].size()));
  std::optional<std::size_t> label_idx;
  if (schema.label_column) {
    auto it = std::find(header.begin(), header.end(), *schema.label_column);
    if (it == header.end()) throw InputError("label column '" + *schema.label_column + "' missing");
    label_idx = std::size_t(it - header.begin());
  }
  for (const auto& c : schema.categorical)
    if (std::find(header.begin(), header.end(), c) == header.end())
      throw InputError("categorical column '" + c + "' missing");

  CsvEncoding enc;
  if (fitted) {
    enc = *fitted;
    std::vector<std::string> names;
    for (std::size_t c = 0; c < header.size(); ++c)
      if (c != label_idx) names.push_back(header[c]);
    if (names.size() != enc.columns.size()) throw InputError("csv columns do not match the schema");
    for (std::size_t c = 0; c < names.size(); ++c)
      if (names[c] != enc.columns[c].name)
        throw InputError("csv column '" + names[c] + "' does not match schema column '" +
                         enc.columns[c].name + "'");
  } else {
    enc.label_column = schema.label_column;
    for (std::size_t c = 0; c < header.size(); ++c) {
      if (c == label_idx) continue;
      CsvEncoding::Column col{header[c], schema.categorical.count(header[c]) > 0, {}};
      if (col.categorical)
        for (std::size_t r = 1; r < rows.size(); ++r)
          if (std::find(col.categories.begin(), col.categories.end(), rows[r][c]) ==
              col.categories.end())
            col.categories.push_back(rows[r][c]);
      enc.columns.push_back(std::move(col));
    }
    if (label_idx) {
      bool numeric = true;
      int max_index = -1;
      for (std::size_t r = 1; r < rows.size(); ++r) {
        if (!detail::is_index(rows[r][*label_idx])) {
          numeric = false;
          break;
        }
        max_index = std::max(max_index, std::stoi(rows[r][*label_idx]));
      }
      if (numeric) {
        enc.m = std::max(2, max_index + 1);
      } else {
        for (std::size_t r = 1; r < rows.size(); ++r)
          if (std::find(enc.class_names.begin(), enc.class_names.end(), rows[r][*label_idx]) ==
              enc.class_names.end())
            enc.class_names.push_back(rows[r][*label_idx]);
        enc.m = std::max<int>(2, int(enc.class_names.size()));
      }
    }
  }

  Dataset ds;
  ds.n = rows.size() - 1;
  ds.m = enc.m;
  for (const auto& col : enc.columns) {
    if (col.categorical)
      for (const auto& cat : col.categories) ds.column_names.push_back(col.name + "=" + cat);
    else
      ds.column_names.push_back(col.name);
  }
  ds.d = ds.column_names.size();
  ds.features.reserve(ds.n * ds.d);
  if (label_idx) ds.labels.emplace();
  for (std::size_t r = 1; r < rows.size(); ++r) {
    std::size_t c_in = 0;
    for (std::size_t c = 0; c < header.size(); ++c) {
      if (c == label_idx) continue;
      const auto& col = enc.columns[c_in++];
      const std::string& v = rows[r][c];
      if (col.categorical) {
        auto it = std::find(col.categories.begin(), col.categories.end(), v);
        if (it == col.categories.end())
          throw InputError("csv line " + std::to_string(r + 1) + ": unknown category '" + v +
                           "' in column '" + col.name + "'");
        for (std::size_t k = 0; k < col.categories.size(); ++k)
          ds.features.push_back(col.categories.begin() + k == it ? 1.0 : 0.0);
      } else {
        ds.features.push_back(detail::parse_number(v, r + 1, col.name));
      }
    }
    if (label_idx) {
      const std::string& v = rows[r][*label_idx];
      if (enc.class_names.empty()) {
        if (!detail::is_index(v) || std::stoi(v) >= enc.m)
          throw InputError("csv line " + std::to_string(r + 1) + ": bad label '" + v + "'");
        ds.labels->push_back(std::stoi(v));
      } else {
        auto it = std::find(enc.class_names.begin(), enc.class_names.end(), v);
        if (it == enc.class_names.end())
          throw InputError("csv line " + std::to_string(r + 1) + ": unknown class '" + v + "'");
        ds.labels->push_back(Label(it - enc.class_names.begin()));
      }
    }
  }
  ds.validate();
  return {std::move(ds), std::move(enc)};
}

inline std::pair<Dataset, CsvEncoding> load_csv(const std::filesystem::path& path,
                                                const CsvSchema& schema,
                                                const CsvEncoding* fitted = nullptr) {
  return parse_dataset(read_file(path), schema, fitted);
}

inline json encoding_to_json(const CsvEncoding& e) {
  json cols = json::array();
  for (const auto& c : e.columns)
    cols.push_back({{"name", c.name}, {"categorical", c.categorical}, {"categories", c.categories}});
  json j{{"columns", cols}, {"class_names", e.class_names}, {"m", e.m}};
  j["label_column"] = e.label_column ? json(*e.label_column) : json(nullptr);
  return j;
}

inline CsvEncoding encoding_from_json(const json& j) {
  return detail::guard_json([&] {
    CsvEncoding e;
    for (const auto& c : j.at("columns"))
      e.columns.push_back({c.at("name").get<std::string>(), c.at("categorical").get<bool>(),
                           c.at("categories").get<std::vector<std::string>>()});
    e.class_names = j.at("class_names").get<std::vector<std::string>>();
    e.m = j.at("m").get<int>();
    if (!j.at("label_column").is_null()) e.label_column = j.at("label_column").get<std::string>();
    return e;
  });
}

namespace detail {
inline std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
  return out + "\"";
}
}  // namespace detail

// Numeric CSV with %.17g values; the label (when present) is the last column.
inline std::string dataset_to_csv(const Dataset& ds, const std::string& label_name = "label") {
  std::ostringstream os;
  for (std::size_t i = 0; i < ds.d; ++i) {
    if (i) os << ',';
    os << detail::csv_escape(ds.column_names.empty() ? "x" + std::to_string(i)
                                                     : ds.column_names[i]);
  }
  if (ds.labels) os << ',' << detail::csv_escape(label_name);
  os << '\n';
  char buf[40];
  for (std::size_t r = 0; r < ds.n; ++r) {
    for (std::size_t i = 0; i < ds.d; ++i) {
      std::snprintf(buf, sizeof buf, "%.17g", ds.row(r)[i]);
      if (i) os << ',';
      os << buf;
    }
    if (ds.labels) os << ',' << (*ds.labels)[r];
    os << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Graphviz

inline std::string export_dot(const DecisionTree& t, const std::vector<std::string>& column_names,
                              const std::vector<std::string>& class_names = {}) {
  auto quote = [](const std::string& s) {
    std::string out = "\"";
    for (char c : s) out += (c == '"' || c == '\\') ? std::string("\\") + c : std::string(1, c);
    return out + "\"";
  };
  std::ostringstream os;
  os << "digraph tree {\n  node [shape=box];\n";
  char buf[40];
  for (NodeId id : t.reachable()) {
    const auto& n = t.node(id);
    std::string label;
    if (n.split) {
      std::snprintf(buf, sizeof buf, "%.6g", n.split->threshold);
      const std::string name = n.split->dim < column_names.size()
                                   ? column_names[n.split->dim]
                                   : "x" + std::to_string(n.split->dim);
      label = name + " ≤ " + buf;
    } else {
      label = std::size_t(n.stats.label) < class_names.size() ? class_names[n.stats.label]
                                                              : std::to_string(n.stats.label);
    }
    os << "  n" << id << " [label=" << quote(label) << "];\n";
  }
  for (NodeId id : t.reachable())
    if (const auto& s = t.node(id).split) {
      os << "  n" << id << " -> n" << s->left << " [label=\"yes\"];\n";
      os << "  n" << id << " -> n" << s->right << " [label=\"no\"];\n";
    }
  os << "}\n";
  return os.str();
}

}  // namespace treex
