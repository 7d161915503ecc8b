#pragma once
// Shared plumbing for subcommands: output bookkeeping, input digests, record-parallel loops.

#include <atomic>
#include <exception>
#include <filesystem>
#include <functional>
#include <mutex>
#include <ostream>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "cli.hpp"
#include "handsyn/hand_model.hpp"

namespace handsyn::cli {

namespace fs = std::filesystem;

/// Thrown for problems that are the caller's fault (bad arguments, invalid manifest).
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Thrown when a manifest fails validation; the report is printed by the caller.
class ManifestInvalid : public std::runtime_error {
 public:
  explicit ManifestInvalid(ManifestReport r)
      : std::runtime_error("manifest failed validation"), report(std::move(r)) {}
  ManifestReport report;
};

struct RecordFailure {
  std::string id;
  std::string error;
};

class Context {
 public:
  Context(std::string command, std::uint64_t seed, unsigned threads, fs::path out_dir, std::ostream& out,
          std::ostream& err);

  const std::string& command() const noexcept { return command_; }
  std::uint64_t seed() const noexcept { return seed_; }
  unsigned threads() const noexcept { return threads_; }
  const fs::path& out_dir() const noexcept { return out_dir_; }
  std::ostream& out() { return out_; }
  std::ostream& err() { return err_; }

  io::json config = io::json::object();

  /// Records an input file and its digest under `role`.
  void add_input(const std::string& role, const fs::path& path);
  /// Digest over every file referenced by the manifest records, in record order.
  void add_manifest_inputs(const fs::path& manifest, const std::vector<ManifestRecord>& records);

  /// Path for a new output file (relative to the output directory). Creates parent
  /// directories and refuses to overwrite any recorded input.
  fs::path output(const std::string& relative);

  void fail(const std::string& id, const std::string& error);
  const std::vector<RecordFailure>& failures() const noexcept { return failures_; }

  /// Writes run_summary.json and returns the exit status.
  int finish();

 private:
  std::string command_;
  std::uint64_t seed_;
  unsigned threads_;
  fs::path out_dir_;
  std::ostream& out_;
  std::ostream& err_;
  io::json inputs_ = io::json::array();
  std::set<fs::path> input_paths_;
  std::vector<std::string> outputs_;
  std::vector<RecordFailure> failures_;
};

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Exceptions are captured per index
/// and returned in index order (empty string for success).
std::vector<std::string> parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& fn);

/// Validates a manifest and throws ManifestInvalid on violations; warnings go to err.
std::vector<ManifestRecord> load_manifest(Context& ctx, const fs::path& path, const std::set<std::string>& required);

/// Pose file: {"joints", "vertices"?, "state"?}. Missing joints/vertices are computed from the
/// state with the model when one is given.
struct PoseFile {
  Mat joints, vertices;
  bool has_state = false;
  PoseState state;
};
PoseFile read_pose_file(const fs::path& path, const HandModel* model);

/// Line-delimited pose collection: {"id", "joints", "vertices"?} per line.
struct PoseEntry {
  std::string id;
  Mat joints, vertices;
};
std::vector<PoseEntry> read_pose_collection(const fs::path& path);

}  // namespace handsyn::cli
