#include "context.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iterator>

#include "handsyn/simd.hpp"

namespace handsyn::cli {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

fs::path normalized(const fs::path& p) { return fs::weakly_canonical(fs::absolute(p)); }

}  // namespace

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t state) {
  for (unsigned char c : bytes) {
    state ^= c;
    state *= 0x100000001b3ull;
  }
  return state;
}

std::string file_digest(const fs::path& path) { return hex64(fnv1a64(read_bytes(path))); }

std::uint64_t record_seed(std::uint64_t global_seed, const std::string& record_id) {
  return splitmix64(splitmix64(global_seed) ^ fnv1a64(record_id));
}

Context::Context(std::string command, std::uint64_t seed, unsigned threads, fs::path out_dir, std::ostream& out,
                 std::ostream& err)
    : command_(std::move(command)), seed_(seed), threads_(threads), out_dir_(std::move(out_dir)), out_(out),
      err_(err) {}

void Context::add_input(const std::string& role, const fs::path& path) {
  const std::string bytes = read_bytes(path);
  inputs_.push_back({{"role", role}, {"file", path.filename().string()}, {"bytes", bytes.size()},
                     {"fnv1a64", hex64(fnv1a64(bytes))}});
  input_paths_.insert(normalized(path));
}

void Context::add_manifest_inputs(const fs::path& manifest, const std::vector<ManifestRecord>& records) {
  add_input("manifest", manifest);
  std::uint64_t h = 0xcbf29ce484222325ull;
  std::size_t files = 0;
  for (const auto& rec : records) {
    for (const auto* p : {&rec.image, &rec.synthetic_image, &rec.real_image, &rec.object_mask, &rec.arm_mask,
                          &rec.hand_mask, &rec.pose}) {
      if (!*p) continue;
      const std::string bytes = read_bytes(**p);
      h = fnv1a64(rec.id, h);
      h = fnv1a64(bytes, h);
      input_paths_.insert(normalized(**p));
      ++files;
    }
  }
  inputs_.push_back({{"role", "manifest-references"}, {"files", files}, {"fnv1a64", hex64(h)}});
}

fs::path Context::output(const std::string& relative) {
  const fs::path p = out_dir_ / relative;
  fs::create_directories(p.parent_path());
  if (input_paths_.count(normalized(p)))
    throw UsageError("refusing to overwrite input file " + p.string() + "; choose another output directory");
  outputs_.push_back(fs::path(relative).generic_string());
  return p;
}

void Context::fail(const std::string& id, const std::string& error) {
  failures_.push_back({id, error});
  err_ << "handsyn " << command_ << ": record '" << id << "' failed: " << error << '\n';
}

int Context::finish() {
  std::vector<std::string> outs = outputs_;
  std::sort(outs.begin(), outs.end());
  io::json failures = io::json::array();
  for (const auto& f : failures_) failures.push_back({{"id", f.id}, {"error", f.error}});
  const bool partial = !failures_.empty();
  const io::json summary = {{"tool", "handsyn"},
                            {"version", kToolVersion},
                            {"command", command_},
                            {"seed", seed_},
                            {"threads", threads_},
                            {"simd", std::string(simd::isa_name(simd::active_isa()))},
                            {"config", config},
                            {"inputs", inputs_},
                            {"outputs", outs},
                            {"status", partial ? "partial" : "complete"},
                            {"failures", failures}};
  const fs::path p = out_dir_ / "run_summary.json";
  fs::create_directories(out_dir_);
  io::write_json_file(p, summary);
  if (partial) {
    err_ << "handsyn " << command_ << ": " << failures_.size()
         << " record(s) failed; outputs are partial (see run_summary.json)\n";
    return kExitPartial;
  }
  return kExitOk;
}

std::vector<std::string> parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& fn) {
  std::vector<std::string> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < n;) {
      try {
        fn(i);
      } catch (const std::exception& e) {
        errors[i] = e.what();
        if (errors[i].empty()) errors[i] = "unknown error";
      } catch (...) {
        errors[i] = "unknown error";
      }
    }
  };
  const unsigned t = static_cast<unsigned>(std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(n, 1)));
  std::vector<std::thread> pool;
  for (unsigned k = 1; k < t; ++k) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  return errors;
}

std::vector<ManifestRecord> load_manifest(Context& ctx, const fs::path& path, const std::set<std::string>& required) {
  ManifestReport report = validate_manifest(path, required);
  for (const auto& w : report.warnings) ctx.err() << "handsyn " << ctx.command() << ": warning: " << w << '\n';
  if (!report.valid()) throw ManifestInvalid(std::move(report));
  ctx.add_manifest_inputs(path, report.records);
  return std::move(report.records);
}

PoseFile read_pose_file(const fs::path& path, const HandModel* model) {
  const io::json j = io::read_json_file(path);
  PoseFile pf;
  if (j.contains("state")) {
    pf.has_state = true;
    pf.state = pose_state_from_json(j["state"]);
  }
  if (j.contains("joints")) pf.joints = io::mat_from_json(j["joints"], "joints", 3);
  if (j.contains("vertices")) pf.vertices = io::mat_from_json(j["vertices"], "vertices", 3);
  if ((pf.joints.empty() || pf.vertices.empty()) && pf.has_state && model) {
    const LbsResult posed = lbs_forward(*model, pf.state);
    if (pf.joints.empty()) pf.joints = posed.joints;
    if (pf.vertices.empty()) pf.vertices = posed.vertices;
  }
  if (pf.joints.empty()) throw io::SchemaError(path.filename().string() + ": pose file has no joints and no usable state");
  return pf;
}

std::vector<PoseEntry> read_pose_collection(const fs::path& path) {
  std::vector<PoseEntry> out;
  std::size_t line = 0;
  for (const auto& j : io::read_jsonl(path)) {
    ++line;
    const std::string where = path.filename().string() + " record " + std::to_string(line);
    if (!j.is_object() || !j.contains("id") || !j["id"].is_string())
      throw io::SchemaError(where + ": needs a string 'id'");
    PoseEntry e;
    e.id = j["id"].get<std::string>();
    e.joints = io::mat_from_json(io::require(j, "joints"), where + " joints", 3);
    if (j.contains("vertices")) e.vertices = io::mat_from_json(j["vertices"], where + " vertices", 3);
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace handsyn::cli
