#include <algorithm>
#include <fstream>
#include <map>
#include <cctype>

#include "cli.hpp"

namespace handsyn::cli {

namespace {

struct PathField {
  const char* name;
  std::optional<std::filesystem::path> ManifestRecord::*member;
};

const PathField kPathFields[] = {
    {"image", &ManifestRecord::image},
    {"syntheticImage", &ManifestRecord::synthetic_image},
    {"realImage", &ManifestRecord::real_image},
    {"objectMask", &ManifestRecord::object_mask},
    {"armMask", &ManifestRecord::arm_mask},
    {"handMask", &ManifestRecord::hand_mask},
    {"pose", &ManifestRecord::pose},
};

std::optional<Camera> parse_camera(const io::json& j, std::string& problem) {
  if (!j.is_object()) {
    problem = "camera must be an object with fx, fy, cx, cy, width, height";
    return std::nullopt;
  }
  Camera cam;
  for (const auto& [name, dst] : {std::pair<const char*, double*>{"fx", &cam.fx}, {"fy", &cam.fy},
                                  {"cx", &cam.cx}, {"cy", &cam.cy}}) {
    if (!j.contains(name) || !j[name].is_number()) {
      problem = std::string("camera.") + name + " must be a number";
      return std::nullopt;
    }
    *dst = j[name].get<double>();
  }
  for (const auto& [name, dst] : {std::pair<const char*, std::size_t*>{"width", &cam.width}, {"height", &cam.height}}) {
    if (!j.contains(name) || !j[name].is_number_unsigned()) {
      problem = std::string("camera.") + name + " must be a positive integer";
      return std::nullopt;
    }
    *dst = j[name].get<std::size_t>();
  }
  try {
    cam.validate();
  } catch (const std::exception& e) {
    problem = std::string("camera: ") + e.what();
    return std::nullopt;
  }
  return cam;
}

}  // namespace

const std::vector<std::string>& manifest_path_fields() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> v;
    for (const auto& f : kPathFields) v.emplace_back(f.name);
    return v;
  }();
  return names;
}

ManifestReport validate_manifest(const std::filesystem::path& path, const std::set<std::string>& required) {
  ManifestReport report;
  report.path = path;
  std::ifstream in(path);
  if (!in) {
    report.violations.push_back(path.string() + ": cannot open manifest");
    return report;
  }
  const std::filesystem::path base = path.parent_path();
  std::map<std::string, std::size_t> first_line;
  std::string text;
  std::size_t line_no = 0;
  while (std::getline(in, text)) {
    ++line_no;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    ++report.records_visited;
    const std::string where = "line " + std::to_string(line_no);
    io::json j;
    try {
      j = io::json::parse(text);
    } catch (const io::json::parse_error& e) {
      report.violations.push_back(where + ": not valid JSON (" + e.what() + ")");
      continue;
    }
    if (!j.is_object()) {
      report.violations.push_back(where + ": record must be a JSON object");
      continue;
    }
    ManifestRecord rec;
    rec.line = line_no;
    bool ok = true;
    auto violation = [&](const std::string& msg) {
      report.violations.push_back(where + (rec.id.empty() ? "" : " ('" + rec.id + "')") + ": " + msg);
      ok = false;
    };
    if (!j.contains("id") || !j["id"].is_string() || j["id"].get<std::string>().empty()) {
      violation("missing or empty string field 'id'");
    } else {
      rec.id = j["id"].get<std::string>();
      const bool safe = rec.id.front() != '.' && std::all_of(rec.id.begin(), rec.id.end(), [](char c) {
        return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.';
      });
      if (!safe) violation("id may only use letters, digits, '_', '-', '.' and must not start with '.' (it names output files)");
      auto [it, inserted] = first_line.emplace(rec.id, line_no);
      if (!inserted) violation("duplicate id (first seen on line " + std::to_string(it->second) + ")");
    }
    if (j.contains("split")) {
      if (j["split"].is_string()) rec.split = j["split"].get<std::string>();
      else violation("'split' must be a string");
    }
    for (const auto& f : kPathFields) {
      if (!j.contains(f.name)) continue;
      if (!j[f.name].is_string()) {
        violation(std::string("'") + f.name + "' must be a path string");
        continue;
      }
      std::filesystem::path p = j[f.name].get<std::string>();
      if (p.is_relative()) p = base / p;
      if (!std::filesystem::is_regular_file(p)) violation(std::string("'") + f.name + "' file not found: " + p.string());
      rec.*f.member = p;
    }
    if (j.contains("camera")) {
      std::string problem;
      rec.camera = parse_camera(j["camera"], problem);
      if (!rec.camera) violation(problem);
    }
    for (const auto& name : required)
      if (!j.contains(name)) violation("missing required field '" + name + "'");
    for (const auto& [key, value] : j.items()) {
      (void)value;
      const bool known = key == "id" || key == "split" || key == "camera" ||
                         std::find(manifest_path_fields().begin(), manifest_path_fields().end(), key) !=
                             manifest_path_fields().end();
      if (!known) report.warnings.push_back(where + ": unknown field '" + key + "' ignored");
    }
    if (ok) report.records.push_back(std::move(rec));
  }
  if (report.records_visited == 0) report.warnings.push_back("manifest is empty (valid, but there is nothing to do)");
  return report;
}

io::json ManifestReport::to_json() const {
  return {{"manifest", path.filename().string()},
          {"valid", valid()},
          {"records", records.size()},
          {"recordsVisited", records_visited},
          {"violations", violations},
          {"warnings", warnings}};
}

}  // namespace handsyn::cli
