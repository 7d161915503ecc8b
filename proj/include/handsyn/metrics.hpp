#pragma once
// Similarity (Procrustes) alignment and joint/vertex error metrics, grouped by occlusion level.

#include <array>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "handsyn/json_io.hpp"
#include "handsyn/matrix.hpp"

namespace handsyn {

class TopologyError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct SimilarityTransform {
  double scale = 1.0;
  std::array<double, 9> rotation{1, 0, 0, 0, 1, 0, 0, 0, 1};  // row-major
  std::array<double, 3> translation{};

  /// Rows of `points` mapped to s·R·p + t.
  Mat apply(const Mat& points) const;
};

/// Least-squares similarity from source to target (K×3 each), reflections excluded.
/// Throws if K < 3 or the centered source has rank below 2.
SimilarityTransform procrustes_align(const Mat& source, const Mat& target);

/// Mean Euclidean distance in cm between rows of two K×3 matrices given in meters.
double mean_distance_cm(const Mat& a, const Mat& b);

double mpjpe(const Mat& pred, const Mat& gt);
double mpvpe(const Mat& pred, const Mat& gt);
double pa_mpjpe(const Mat& pred, const Mat& gt);
/// Vertices aligned with the transform estimated from the joints.
double pa_mpvpe(const Mat& pred_vertices, const Mat& gt_vertices, const Mat& pred_joints, const Mat& gt_joints);

struct PoseRecord {
  std::string id;
  Mat joints;    // J×3, meters
  Mat vertices;  // V×3 or empty
};

struct LevelLabel {
  std::string id;
  int level = 0;  // 0–6
};

struct MetricSet {
  std::size_t count = 0;
  double pa_mpjpe = 0, mpjpe = 0;
  std::size_t vertex_count = 0;  // samples with vertices on both sides
  double pa_mpvpe = 0, mpvpe = 0;
};

inline constexpr int kMaxOcclusionLevel = 6;

struct EvalReport {
  MetricSet overall;
  std::array<MetricSet, kMaxOcclusionLevel + 1> per_level{};
  /// Joint count after topology adaptation.
  std::size_t evaluated_joints = 0;
  bool topology_adapted = false;
};

/// Predictions, ground truth and labels must list the same ids in the same order. When joint
/// counts differ, `topology_map` selects joints of the larger skeleton; without it this throws.
EvalReport evaluate(std::span<const PoseRecord> predictions, std::span<const PoseRecord> ground_truth,
                    std::span<const LevelLabel> labels,
                    std::optional<std::vector<std::size_t>> topology_map = std::nullopt, unsigned threads = 0);

io::json eval_report_to_json(const EvalReport& report);
/// Comma-separated table: one row for all samples, then one per level.
std::string eval_report_table(const EvalReport& report);

}  // namespace handsyn
