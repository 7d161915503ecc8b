#pragma once
// Helpers for moving numeric arrays between Mat and nlohmann::json.

#include <filesystem>
#include <json.hpp>
#include <stdexcept>
#include <string>
#include <vector>

#include "handsyn/matrix.hpp"

namespace handsyn::io {

using json = nlohmann::json;

class SchemaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// rows×cols nested array.
json mat_to_json(const Mat& m);
/// Flat array for 1×n / n×1 matrices.
json vec_to_json(const Mat& m);

/// Parses a nested numeric array. `expected_cols` of 0 accepts any consistent width.
Mat mat_from_json(const json& j, const std::string& field, std::size_t expected_cols = 0);
/// Parses a flat numeric array into a 1×n row.
Mat row_from_json(const json& j, const std::string& field);

const json& require(const json& obj, const std::string& field);

json read_json_file(const std::filesystem::path& path);
/// Writes `j` with two-space indent and a trailing newline (byte-stable for identical input).
void write_json_file(const std::filesystem::path& path, const json& j);

/// Line-delimited JSON.
std::vector<json> read_jsonl(const std::filesystem::path& path);
void write_jsonl(const std::filesystem::path& path, const std::vector<json>& records);

}  // namespace handsyn::io
