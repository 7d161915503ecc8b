#include "handsyn/hand_model.hpp"

#include <cmath>
#include <unordered_set>

#include "handsyn/simd.hpp"

namespace handsyn {

using io::json;
using io::SchemaError;

std::string_view part_name(Part p) noexcept {
  switch (p) {
    case Part::Thumb: return "thumb";
    case Part::Index: return "index";
    case Part::Middle: return "middle";
    case Part::Ring: return "ring";
    case Part::Pinky: return "pinky";
    case Part::Palm: return "palm";
  }
  return "unknown";
}

namespace {

std::string dims(std::size_t r, std::size_t c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

void require_shape(const Mat& m, std::size_t r, std::size_t c, const char* what) {
  if (m.rows() != r || m.cols() != c)
    throw SchemaError(std::string(what) + " has shape " + m.shape_string() + ", expected " +
                      dims(r, c));
}

void require_finite(const Mat& m, const char* what) {
  if (!all_finite(m)) throw SchemaError(std::string(what) + " contains non-finite values");
}

// File layout of blend tensors is V×3×K (per vertex, per axis, per coefficient);
// internally each coefficient owns one contiguous row of length 3V.
Mat blend_from_json(const json& j, const std::string& field, std::size_t v) {
  if (!j.is_array() || j.size() != v)
    throw SchemaError("field '" + field + "' must have one entry per vertex (" +
                      std::to_string(v) + ")");
  std::size_t k = 0;
  if (v > 0) {
    if (!j[0].is_array() || j[0].size() != 3 || !j[0][0].is_array())
      throw SchemaError("field '" + field + "' entries must be 3×K arrays");
    k = j[0][0].size();
  }
  Mat out(k, 3 * v);
  for (std::size_t i = 0; i < v; ++i) {
    const json& vert = j[i];
    if (!vert.is_array() || vert.size() != 3)
      throw SchemaError("field '" + field + "' vertex " + std::to_string(i) + " must be 3×K");
    for (std::size_t a = 0; a < 3; ++a) {
      const json& coeffs = vert[a];
      if (!coeffs.is_array() || coeffs.size() != k)
        throw SchemaError("field '" + field + "' vertex " + std::to_string(i) +
                          " has inconsistent coefficient count");
      for (std::size_t c = 0; c < k; ++c) {
        if (!coeffs[c].is_number())
          throw SchemaError("field '" + field + "' contains a non-number");
        out(c, 3 * i + a) = coeffs[c].get<double>();
      }
    }
  }
  return out;
}

json blend_to_json(const Mat& b, std::size_t v) {
  json out = json::array();
  for (std::size_t i = 0; i < v; ++i) {
    json vert = json::array();
    for (std::size_t a = 0; a < 3; ++a) {
      json coeffs = json::array();
      for (std::size_t c = 0; c < b.rows(); ++c) coeffs.push_back(b(c, 3 * i + a));
      vert.push_back(std::move(coeffs));
    }
    out.push_back(std::move(vert));
  }
  return out;
}

std::vector<std::size_t> index_list(const json& j, const std::string& field) {
  if (!j.is_array()) throw SchemaError("field '" + field + "' must be an array of indices");
  std::vector<std::size_t> out;
  out.reserve(j.size());
  for (const auto& e : j) {
    if (!e.is_number_integer() || e.get<long long>() < 0)
      throw SchemaError("field '" + field + "' must contain non-negative integers");
    out.push_back(e.get<std::size_t>());
  }
  return out;
}

}  // namespace

void HandModel::validate() const {
  const std::size_t v = num_vertices();
  const std::size_t nj = num_joints();
  if (rest_vertices.cols() != 3) throw SchemaError("restVertices must be V×3");
  if (v == 0) throw SchemaError("restVertices is empty");
  if (nj == 0) throw SchemaError("kinematicTree is empty");
  require_finite(rest_vertices, "restVertices");

  if (parents[0] != -1) throw SchemaError("kinematicTree: joint 0 must be the root (parent -1)");
  for (std::size_t j = 1; j < nj; ++j) {
    if (parents[j] < 0 || static_cast<std::size_t>(parents[j]) >= j)
      throw SchemaError("kinematicTree: joint " + std::to_string(j) + " has parent " +
                        std::to_string(parents[j]) +
                        "; every non-root joint needs a parent listed before it");
  }

  require_shape(skin_weights, v, nj, "skinWeights");
  require_finite(skin_weights, "skinWeights");
  for (std::size_t i = 0; i < v; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < nj; ++j) {
      const double w = skin_weights(i, j);
      if (w < 0.0)
        throw SchemaError("skinWeights row " + std::to_string(i) + " has a negative weight");
      s += w;
    }
    if (std::abs(s - 1.0) > 1e-6)
      throw SchemaError("skinWeights row " + std::to_string(i) + " sums to " + std::to_string(s) +
                        ", expected 1");
  }

  for (std::size_t f = 0; f < faces.size(); ++f)
    for (auto idx : faces[f])
      if (idx >= v)
        throw SchemaError("face " + std::to_string(f) + " references vertex " +
                          std::to_string(idx) + " but V=" + std::to_string(v));

  if (shape_blend.cols() != 3 * v && !(shape_blend.rows() == 0))
    throw SchemaError("shapeBlend does not match vertex count");
  require_finite(shape_blend, "shapeBlend");
  if (!pose_blend.empty()) {
    require_shape(pose_blend, 9 * (nj - 1), 3 * v, "poseBlend (internal P×3V)");
    require_finite(pose_blend, "poseBlend");
  }

  require_shape(joint_regressor, nj, v, "jointRegressor");
  require_finite(joint_regressor, "jointRegressor");

  std::unordered_set<std::size_t> seen;
  for (auto idx : topology_map) {
    if (idx >= nj)
      throw SchemaError("topologyMap entry " + std::to_string(idx) + " is not a joint index (J=" +
                        std::to_string(nj) + ")");
    if (!seen.insert(idx).second)
      throw SchemaError("topologyMap contains duplicate index " + std::to_string(idx));
  }

  if (part_labels.size() != v) throw SchemaError("partLabels must have one entry per vertex");
  for (auto p : part_labels)
    if (static_cast<std::size_t>(p) >= kPartCount) throw SchemaError("partLabels out of range");
  if (!joint_names.empty() && joint_names.size() != nj)
    throw SchemaError("jointNames must have one entry per joint");
}

PoseState PoseState::zeros(const HandModel& model) {
  return {Mat(1, model.pose_dim()), Mat(1, model.shape_dim()), Mat(1, 3), Mat(1, 3)};
}

void PoseState::check_against(const HandModel& model) const {
  auto check = [](const Mat& m, std::size_t n, const char* what) {
    if (m.size() != n)
      throw std::invalid_argument(std::string("PoseState.") + what + " has " +
                                  std::to_string(m.size()) + " entries, model expects " +
                                  std::to_string(n));
    if (!all_finite(m)) throw std::invalid_argument(std::string("PoseState.") + what + " is not finite");
  };
  check(pose, model.pose_dim(), "pose");
  check(shape, model.shape_dim(), "shape");
  check(rotation, 3, "rotation");
  check(translation, 3, "translation");
}

LbsVars lbs_on_tape(diff::Tape& tape, const HandModel& model, diff::Var pose, diff::Var shape,
                    diff::Var rotation, diff::Var translation) {
  using namespace diff;
  const std::size_t v = model.num_vertices();
  const std::size_t nj = model.num_joints();
  if (pose.value().size() != model.pose_dim() || shape.value().size() != model.shape_dim() ||
      rotation.value().size() != 3 || translation.value().size() != 3)
    throw std::invalid_argument("lbs: parameter dimensions do not match the model");

  Var shaped = tape.constant(model.rest_vertices);
  if (model.shape_dim() > 0) {
    Var offsets = matmul(reshape(shape, 1, model.shape_dim()), tape.constant(model.shape_blend));
    shaped = shaped + reshape(offsets, v, 3);
  }
  Var rest_joints = matmul(tape.constant(model.joint_regressor), shaped);

  const Var eye = tape.constant(Mat::identity(3));
  std::vector<Var> gr(nj), gt(nj), jr(nj);
  std::vector<Var> rel_rot;
  rel_rot.reserve(nj);
  for (std::size_t j = 0; j < nj; ++j) jr[j] = slice(rest_joints, 3 * j, 1, 3);
  gr[0] = eye;
  gt[0] = jr[0];
  for (std::size_t j = 1; j < nj; ++j) {
    const auto p = static_cast<std::size_t>(model.parents[j]);
    Var r = rodrigues(slice(pose, 3 * (j - 1), 1, 3));
    rel_rot.push_back(r);
    gr[j] = matmul(gr[p], r);
    gt[j] = gt[p] + matmul(jr[j] - jr[p], transpose(gr[p]));
  }

  // Pose-corrective offsets are driven by the flattened (R_j - I) features, computed in
  // the rest pose before skinning.
  if (!model.pose_blend.empty()) {
    std::vector<Var> feats;
    feats.reserve(nj - 1);
    for (auto& r : rel_rot) feats.push_back(r - eye);
    Var f = concat(feats, 1, 9 * (nj - 1));
    shaped = shaped + reshape(matmul(f, tape.constant(model.pose_blend)), v, 3);
  }

  std::vector<Var> packed;
  packed.reserve(2 * nj);
  for (std::size_t j = 0; j < nj; ++j) {
    packed.push_back(reshape(gr[j], 1, 9));
    packed.push_back(gt[j] - matmul(jr[j], transpose(gr[j])));
  }
  Var transforms = concat(packed, nj, 12);
  Var blended = matmul(tape.constant(model.skin_weights), transforms);
  Var skinned = affine_rows(blended, shaped);

  Var global_rt = transpose(rodrigues(reshape(rotation, 1, 3)));
  Var t = reshape(translation, 1, 3);
  Var verts = add_row(matmul(skinned, global_rt), t);
  Var joints = add_row(matmul(concat(gt, nj, 3), global_rt), t);
  return {verts, joints};
}

LbsResult lbs_forward(const HandModel& model, const PoseState& state) {
  state.check_against(model);
  diff::Tape tape;
  auto out = lbs_on_tape(tape, model, tape.constant(state.pose), tape.constant(state.shape),
                         tape.constant(state.rotation), tape.constant(state.translation));
  return {out.vertices.value(), out.joints.value()};
}

Mat regress_joints(const Mat& vertices, const HandModel& model) {
  if (vertices.rows() != model.num_vertices() || vertices.cols() != 3)
    throw std::invalid_argument("regress_joints: vertices are " + vertices.shape_string() +
                                ", regressor expects " + dims(model.num_vertices(), 3));
  const std::size_t nj = model.num_joints();
  const std::size_t v = model.num_vertices();
  Mat out(nj, 3);
  simd::kernels().gemm_acc(nj, 3, v, model.joint_regressor.data(), v, vertices.data(), 3,
                           out.data(), 3);
  return out;
}

Mat adapt_topology(const Mat& joints, std::span<const std::size_t> map) {
  if (joints.cols() != 3) throw std::invalid_argument("adapt_topology: joints must be J×3");
  Mat out(map.size(), 3);
  for (std::size_t i = 0; i < map.size(); ++i) {
    if (map[i] >= joints.rows())
      throw std::invalid_argument("adapt_topology: map index " + std::to_string(map[i]) +
                                  " exceeds joint count " + std::to_string(joints.rows()));
    for (std::size_t a = 0; a < 3; ++a) out(i, a) = joints(map[i], a);
  }
  return out;
}

Mat adapt_topology(const Mat& joints, const HandModel& model) {
  if (model.topology_map.empty())
    throw std::invalid_argument(
        "adapt_topology: model has no topologyMap; joint labels must be adapted to the "
        "evaluation skeleton before computing metrics");
  if (joints.rows() != model.num_joints())
    throw std::invalid_argument("adapt_topology: expected " + std::to_string(model.num_joints()) +
                                " joints, got " + std::to_string(joints.rows()));
  return adapt_topology(joints, model.topology_map);
}

HandModel model_from_json(const json& j) {
  HandModel m;
  m.rest_vertices = io::mat_from_json(io::require(j, "restVertices"), "restVertices", 3);
  const std::size_t v = m.rest_vertices.rows();

  const json& faces = io::require(j, "faces");
  if (!faces.is_array()) throw SchemaError("field 'faces' must be an array");
  for (const auto& f : faces) {
    auto idx = index_list(f, "faces");
    if (idx.size() != 3) throw SchemaError("every face must have exactly 3 vertex indices");
    m.faces.push_back({static_cast<std::uint32_t>(idx[0]), static_cast<std::uint32_t>(idx[1]),
                       static_cast<std::uint32_t>(idx[2])});
  }

  const json& tree = io::require(j, "kinematicTree");
  if (!tree.is_array()) throw SchemaError("field 'kinematicTree' must be an array");
  for (const auto& p : tree) {
    if (!p.is_number_integer()) throw SchemaError("kinematicTree entries must be integers");
    m.parents.push_back(p.get<int>());
  }
  const std::size_t nj = m.parents.size();

  m.skin_weights = io::mat_from_json(io::require(j, "skinWeights"), "skinWeights", nj);
  m.shape_blend = blend_from_json(io::require(j, "shapeBlend"), "shapeBlend", v);
  if (auto it = j.find("poseBlend"); it != j.end() && !it->is_null())
    m.pose_blend = blend_from_json(*it, "poseBlend", v);
  m.joint_regressor = io::mat_from_json(io::require(j, "jointRegressor"), "jointRegressor", v);
  if (auto it = j.find("topologyMap"); it != j.end() && !it->is_null())
    m.topology_map = index_list(*it, "topologyMap");
  for (auto p : index_list(io::require(j, "partLabels"), "partLabels")) {
    if (p >= kPartCount) throw SchemaError("partLabels entries must be in [0, 5]");
    m.part_labels.push_back(static_cast<Part>(p));
  }
  if (auto it = j.find("jointNames"); it != j.end() && it->is_array())
    for (const auto& n : *it) m.joint_names.push_back(n.get<std::string>());

  m.validate();
  return m;
}

json model_to_json(const HandModel& m) {
  const std::size_t v = m.num_vertices();
  json j;
  j["format"] = "handsyn-model";
  j["version"] = 1;
  j["units"] = "meters";
  j["restVertices"] = io::mat_to_json(m.rest_vertices);
  json faces = json::array();
  for (const auto& f : m.faces) faces.push_back({f[0], f[1], f[2]});
  j["faces"] = std::move(faces);
  j["skinWeights"] = io::mat_to_json(m.skin_weights);
  j["kinematicTree"] = m.parents;
  j["shapeBlend"] = blend_to_json(m.shape_blend, v);
  if (!m.pose_blend.empty()) j["poseBlend"] = blend_to_json(m.pose_blend, v);
  j["jointRegressor"] = io::mat_to_json(m.joint_regressor);
  if (!m.topology_map.empty()) j["topologyMap"] = m.topology_map;
  json labels = json::array();
  for (auto p : m.part_labels) labels.push_back(static_cast<int>(p));
  j["partLabels"] = std::move(labels);
  if (!m.joint_names.empty()) j["jointNames"] = m.joint_names;
  return j;
}

HandModel load_model(const std::filesystem::path& path) {
  try {
    return model_from_json(io::read_json_file(path));
  } catch (const SchemaError& e) {
    throw SchemaError(path.string() + ": " + e.what());
  }
}

void save_model(const HandModel& model, const std::filesystem::path& path) {
  model.validate();
  io::write_json_file(path, model_to_json(model));
}

json pose_state_to_json(const PoseState& s) {
  return {{"pose", io::vec_to_json(s.pose)},
          {"shape", io::vec_to_json(s.shape)},
          {"rotation", io::vec_to_json(s.rotation)},
          {"translation", io::vec_to_json(s.translation)}};
}

PoseState pose_state_from_json(const json& j) {
  return {io::row_from_json(io::require(j, "pose"), "pose"),
          io::row_from_json(io::require(j, "shape"), "shape"),
          io::row_from_json(io::require(j, "rotation"), "rotation"),
          io::row_from_json(io::require(j, "translation"), "translation")};
}

}  // namespace handsyn
