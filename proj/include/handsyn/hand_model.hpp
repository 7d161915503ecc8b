#pragma once
// Loadable linear-blend-skinning hand model and its pose parameters.
//
// Conventions: meters, row-vector points (n×3), joint 0 is the wrist root and
// every joint is listed after its parent. The pose vector stacks one
// axis-angle triple per non-root joint; the global rotation and translation
// are applied last, about the world origin.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "handsyn/json_io.hpp"
#include "handsyn/matrix.hpp"
#include "handsyn/tape.hpp"

namespace handsyn {

enum class Part : std::uint8_t { Thumb = 0, Index = 1, Middle = 2, Ring = 3, Pinky = 4, Palm = 5 };
inline constexpr std::size_t kPartCount = 6;
std::string_view part_name(Part p) noexcept;

using Face = std::array<std::uint32_t, 3>;

struct HandModel {
  Mat rest_vertices;                      // V×3
  std::vector<Face> faces;                // F
  Mat skin_weights;                       // V×J, rows sum to 1
  std::vector<int> parents;               // J, parents[0] == -1
  Mat shape_blend;                        // S×3V (row k = displacement field of β_k)
  Mat pose_blend;                         // P×3V or empty
  Mat joint_regressor;                    // J×V
  std::vector<std::size_t> topology_map;  // empty when absent
  std::vector<Part> part_labels;          // V
  std::vector<std::string> joint_names;   // optional, J when present

  std::size_t num_vertices() const noexcept { return rest_vertices.rows(); }
  std::size_t num_joints() const noexcept { return parents.size(); }
  std::size_t pose_dim() const noexcept { return num_joints() == 0 ? 0 : 3 * (num_joints() - 1); }
  std::size_t shape_dim() const noexcept { return shape_blend.rows(); }

  /// Throws io::SchemaError describing the first violated invariant.
  void validate() const;
};

struct PoseState {
  Mat pose;         // 1×P
  Mat shape;        // 1×S
  Mat rotation;     // 1×3 axis-angle
  Mat translation;  // 1×3, meters

  static PoseState zeros(const HandModel& model);
  void check_against(const HandModel& model) const;
};

struct LbsResult {
  Mat vertices;  // V×3
  Mat joints;    // J×3
};

struct LbsVars {
  diff::Var vertices;
  diff::Var joints;
};

/// Differentiable skinning; pose/shape/rotation/translation may be variables or constants.
LbsVars lbs_on_tape(diff::Tape& tape, const HandModel& model, diff::Var pose, diff::Var shape,
                    diff::Var rotation, diff::Var translation);

LbsResult lbs_forward(const HandModel& model, const PoseState& state);

/// joints = jointRegressor · vertices.
Mat regress_joints(const Mat& vertices, const HandModel& model);

/// Rows of `joints` at the model's topology map, in map order.
Mat adapt_topology(const Mat& joints, const HandModel& model);
Mat adapt_topology(const Mat& joints, std::span<const std::size_t> map);

HandModel model_from_json(const io::json& j);
io::json model_to_json(const HandModel& model);
HandModel load_model(const std::filesystem::path& path);
void save_model(const HandModel& model, const std::filesystem::path& path);

io::json pose_state_to_json(const PoseState& s);
PoseState pose_state_from_json(const io::json& j);

}  // namespace handsyn
