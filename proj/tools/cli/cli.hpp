#pragma once
// Command-line front end. `run` is the whole program minus process setup, so tests can drive it.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "handsyn/json_io.hpp"
#include "handsyn/occlusion.hpp"

namespace handsyn::cli {

inline constexpr const char* kToolVersion = "0.1.0";

/// Exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;   // validation found violations, or a run-level error
inline constexpr int kExitUsage = 2;     // bad flags or arguments
inline constexpr int kExitPartial = 3;   // some records failed; outputs for the rest were written

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Per-record stream seed, a pure function of the global seed and the record id.
std::uint64_t record_seed(std::uint64_t global_seed, const std::string& record_id);

/// FNV-1a 64 over a byte range.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t state = 0xcbf29ce484222325ull);
std::string file_digest(const std::filesystem::path& path);

struct ManifestRecord {
  std::string id;
  std::string split;
  std::size_t line = 0;
  std::optional<std::filesystem::path> image, synthetic_image, real_image, object_mask, arm_mask, hand_mask, pose;
  std::optional<Camera> camera;
};

struct ManifestReport {
  std::filesystem::path path;
  std::vector<ManifestRecord> records;
  std::vector<std::string> violations;
  std::vector<std::string> warnings;
  /// Number of record lines examined; every record is visited exactly once.
  std::size_t records_visited = 0;

  bool valid() const noexcept { return violations.empty(); }
  io::json to_json() const;
};

/// Path fields recognized in a manifest line, by their JSON names.
const std::vector<std::string>& manifest_path_fields();

/// Schema and existence checks. `required` lists fields every record must carry (JSON names,
/// including "camera"). Relative paths resolve against the manifest's directory.
/// Never throws for content problems; they are collected as violations.
ManifestReport validate_manifest(const std::filesystem::path& path, const std::set<std::string>& required = {});

}  // namespace handsyn::cli
