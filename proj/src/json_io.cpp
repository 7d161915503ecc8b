#include "handsyn/json_io.hpp"

#include <fstream>
#include <sstream>

namespace handsyn::io {

json mat_to_json(const Mat& m) {
  json out = json::array();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (std::size_t c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    out.push_back(std::move(row));
  }
  return out;
}

json vec_to_json(const Mat& m) {
  json out = json::array();
  for (double v : m.storage()) out.push_back(v);
  return out;
}

Mat mat_from_json(const json& j, const std::string& field, std::size_t expected_cols) {
  if (!j.is_array()) throw SchemaError("field '" + field + "' must be an array of rows");
  const std::size_t rows = j.size();
  std::size_t cols = expected_cols;
  if (rows > 0 && cols == 0) {
    if (!j[0].is_array()) throw SchemaError("field '" + field + "' row 0 is not an array");
    cols = j[0].size();
  }
  Mat m(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const json& row = j[r];
    if (!row.is_array() || row.size() != cols)
      throw SchemaError("field '" + field + "' row " + std::to_string(r) + " must have " +
                        std::to_string(cols) + " entries");
    for (std::size_t c = 0; c < cols; ++c) {
      if (!row[c].is_number())
        throw SchemaError("field '" + field + "' entry (" + std::to_string(r) + "," +
                          std::to_string(c) + ") is not a number");
      m(r, c) = row[c].get<double>();
    }
  }
  return m;
}

Mat row_from_json(const json& j, const std::string& field) {
  if (!j.is_array()) throw SchemaError("field '" + field + "' must be a numeric array");
  Mat m(1, j.size());
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number())
      throw SchemaError("field '" + field + "' entry " + std::to_string(i) + " is not a number");
    m[i] = j[i].get<double>();
  }
  return m;
}

const json& require(const json& obj, const std::string& field) {
  if (!obj.is_object()) throw SchemaError("expected an object while looking for '" + field + "'");
  auto it = obj.find(field);
  if (it == obj.end()) throw SchemaError("missing required field '" + field + "'");
  return *it;
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw SchemaError(path.string() + ": " + e.what());
  }
}

void write_json_file(const std::filesystem::path& path, const json& j) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

std::vector<json> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<json> records;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      records.push_back(json::parse(line));
    } catch (const json::parse_error& e) {
      throw SchemaError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return records;
}

void write_jsonl(const std::filesystem::path& path, const std::vector<json>& records) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& r : records) out << r.dump() << '\n';
}

}  // namespace handsyn::io
