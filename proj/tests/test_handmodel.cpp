#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "handsyn/asset_builder.hpp"
#include "handsyn/hand_model.hpp"
#include "oracles/finite_difference.hpp"
#include "oracles/toy_assets.hpp"

using namespace handsyn;
using handsyn::testing::central_difference;
using handsyn::testing::eigen_rotation;
using handsyn::testing::relative_error;
using handsyn::testing::two_bone_model;

namespace {

std::filesystem::path scratch_dir() {
  auto p = std::filesystem::temp_directory_path() / "handsyn_test_handmodel";
  std::filesystem::create_directories(p);
  return p;
}

Mat random_mat(std::mt19937_64& rng, std::size_t r, std::size_t c, double scale) {
  std::normal_distribution<double> n(0.0, scale);
  Mat m(r, c);
  for (auto& x : m.storage()) x = n(rng);
  return m;
}

PoseState random_state(const HandModel& m, std::mt19937_64& rng, double pose_scale = 0.3) {
  PoseState s = PoseState::zeros(m);
  s.pose = random_mat(rng, 1, m.pose_dim(), pose_scale);
  s.shape = random_mat(rng, 1, m.shape_dim(), 1.0);
  return s;
}

Mat rigid(const Mat& pts, const Eigen::Matrix3d& r, const double t[3]) {
  Mat out(pts.rows(), 3);
  for (std::size_t i = 0; i < pts.rows(); ++i) {
    Eigen::Vector3d p(pts(i, 0), pts(i, 1), pts(i, 2));
    Eigen::Vector3d q = r * p;
    for (int a = 0; a < 3; ++a) out(i, a) = q[a] + t[a];
  }
  return out;
}

}  // namespace

TEST_CASE("two-bone toy asset loads and passes invariants") {
  const HandModel toy = two_bone_model();
  const auto path = scratch_dir() / "toy.json";
  save_model(toy, path);
  const HandModel loaded = load_model(path);
  CHECK(loaded.num_vertices() == 8);
  CHECK(loaded.num_joints() == 2);
  CHECK(loaded.rest_vertices == toy.rest_vertices);
  CHECK(loaded.shape_blend == toy.shape_blend);
  CHECK(loaded.joint_regressor == toy.joint_regressor);
  CHECK(loaded.faces == toy.faces);
}

TEST_CASE("skin weight row summing to 0.5 is rejected") {
  auto j = model_to_json(two_bone_model());
  j["skinWeights"][3] = {0.25, 0.25};
  CHECK_THROWS_AS(model_from_json(j), io::SchemaError);
  try {
    model_from_json(j);
  } catch (const io::SchemaError& e) {
    CHECK(std::string(e.what()).find("skinWeights row 3") != std::string::npos);
  }
}

TEST_CASE("schema errors are descriptive") {
  auto base = model_to_json(two_bone_model());
  {
    auto j = base;
    j.erase("jointRegressor");
    try {
      model_from_json(j);
      FAIL("expected rejection");
    } catch (const io::SchemaError& e) {
      CHECK(std::string(e.what()).find("jointRegressor") != std::string::npos);
    }
  }
  {
    auto j = base;
    j["faces"][0] = {0, 1, 8};
    CHECK_THROWS_AS(model_from_json(j), io::SchemaError);
  }
  {
    auto j = base;
    j["kinematicTree"] = {0, -1};
    CHECK_THROWS_AS(model_from_json(j), io::SchemaError);
  }
  {
    auto j = base;
    j["skinWeights"][0] = {1.5, -0.5};
    CHECK_THROWS_AS(model_from_json(j), io::SchemaError);
  }
  {
    auto j = base;
    j["partLabels"][0] = 6;
    CHECK_THROWS_AS(model_from_json(j), io::SchemaError);
  }
}

TEST_CASE("desk-scale asset from the builder loads and regresses 21 joints") {
  const HandModel built = build_hand_asset();
  const auto path = scratch_dir() / "hand21.json";
  save_model(built, path);
  const HandModel m = load_model(path);
  CHECK(m.num_vertices() >= 500);
  CHECK(m.num_joints() == 21);
  CHECK(m.shape_dim() == 10);
  CHECK(m.pose_dim() == 60);
  const Mat joints = regress_joints(m.rest_vertices, m);
  CHECK(joints.rows() == 21);
  CHECK(joints.cols() == 3);
  // Wrist at the origin, middle fingertip roughly a hand length away.
  CHECK(std::abs(joints(0, 1)) < 1e-12);
  CHECK(joints(12, 1) > 0.15);
  CHECK(joints(12, 1) < 0.22);
  // Every part is represented.
  std::array<int, kPartCount> counts{};
  for (auto p : m.part_labels) ++counts[static_cast<std::size_t>(p)];
  for (int c : counts) CHECK(c > 0);
}

TEST_CASE("rest pose is the identity") {
  for (const HandModel& m : {two_bone_model(), build_hand_asset()}) {
    const auto out = lbs_forward(m, PoseState::zeros(m));
    CHECK(max_abs_diff(out.vertices, m.rest_vertices) < 1e-14);
    CHECK(max_abs_diff(out.joints, regress_joints(m.rest_vertices, m)) < 1e-14);
  }
}

TEST_CASE("pure translation shifts every vertex exactly") {
  const HandModel m = build_hand_asset();
  PoseState s = PoseState::zeros(m);
  s.translation = Mat::row({0.1, 0.0, 0.0});
  const auto out = lbs_forward(m, s);
  for (std::size_t i = 0; i < m.num_vertices(); ++i) {
    CHECK(std::abs(out.vertices(i, 0) - (m.rest_vertices(i, 0) + 0.1)) < 1e-15);
    CHECK(out.vertices(i, 1) == m.rest_vertices(i, 1));
    CHECK(out.vertices(i, 2) == m.rest_vertices(i, 2));
  }
}

TEST_CASE("90 degree child rotation matches the rigid-transform oracle") {
  const HandModel m = two_bone_model();
  PoseState s = PoseState::zeros(m);
  s.pose = Mat::row({0.0, 0.0, M_PI / 2});
  const auto out = lbs_forward(m, s);
  const Eigen::Matrix3d rz = eigen_rotation(0, 0, M_PI / 2);
  const Eigen::Vector3d pivot(1.0, 0.0, 0.0);
  for (std::size_t i = 0; i < 8; ++i) {
    Eigen::Vector3d p(m.rest_vertices(i, 0), m.rest_vertices(i, 1), m.rest_vertices(i, 2));
    Eigen::Vector3d expect = i < 4 ? p : Eigen::Vector3d(pivot + rz * (p - pivot));
    for (int a = 0; a < 3; ++a) CHECK(out.vertices(i, a) == doctest::Approx(expect[a]).epsilon(1e-12));
  }
  // Vertex 4 (2, 0.1, 0.1) lands at (0.9, 1, 0.1).
  CHECK(out.vertices(4, 0) == doctest::Approx(0.9));
  CHECK(out.vertices(4, 1) == doctest::Approx(1.0));
  CHECK(out.vertices(4, 2) == doctest::Approx(0.1));
  // The child joint stays at its pivot.
  CHECK(out.joints(1, 0) == doctest::Approx(1.0));
  CHECK(std::abs(out.joints(1, 1)) < 1e-15);
}

TEST_CASE("chained rotations compose along the kinematic tree") {
  // Three-joint chain along x; rotating the middle joint carries the last joint with it.
  HandModel m;
  m.rest_vertices = Mat(3, 3, {0, 0, 0, 1, 0, 0, 2, 0, 0});
  m.skin_weights = Mat(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  m.parents = {-1, 0, 1};
  m.joint_regressor = Mat::identity(3);
  m.part_labels = {Part::Palm, Part::Index, Part::Index};
  m.validate();
  PoseState s = PoseState::zeros(m);
  s.pose = Mat::row({0, 0, M_PI / 2, 0, 0, M_PI / 2});
  const auto out = lbs_forward(m, s);
  // Joint 1 rotates about joint 1 (so stays at (1,0,0)); joint 2 first swings to (1,1,0)
  // about joint 1, then its own rotation does not move it.
  CHECK(out.joints(2, 0) == doctest::Approx(1.0));
  CHECK(out.joints(2, 1) == doctest::Approx(1.0));
  CHECK(out.vertices(2, 0) == doctest::Approx(1.0));
  CHECK(out.vertices(2, 1) == doctest::Approx(1.0));
}

TEST_CASE("single joint with identity weights is one rigid transform") {
  HandModel m = two_bone_model();
  m.parents = {-1};
  m.skin_weights = Mat(8, 1, 1.0);
  m.joint_regressor = Mat(1, 8, 0.125);
  m.topology_map = {0};
  m.validate();
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    PoseState s = PoseState::zeros(m);
    s.rotation = random_mat(rng, 1, 3, 1.0);
    s.translation = random_mat(rng, 1, 3, 0.2);
    const auto out = lbs_forward(m, s);
    const double t[3] = {s.translation[0], s.translation[1], s.translation[2]};
    const Mat expect = rigid(m.rest_vertices, eigen_rotation(s.rotation[0], s.rotation[1], s.rotation[2]), t);
    CHECK(max_abs_diff(out.vertices, expect) < 1e-12);
  }
}

TEST_CASE("lbs is equivariant under a global similarity of (r, t)") {
  const HandModel m = build_hand_asset();
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 5; ++trial) {
    PoseState s = random_state(m, rng);
    const auto local = lbs_forward(m, s);
    s.rotation = random_mat(rng, 1, 3, 1.0);
    s.translation = random_mat(rng, 1, 3, 0.3);
    const auto world = lbs_forward(m, s);
    const Eigen::Matrix3d r = eigen_rotation(s.rotation[0], s.rotation[1], s.rotation[2]);
    const double t[3] = {s.translation[0], s.translation[1], s.translation[2]};
    CHECK(max_abs_diff(world.vertices, rigid(local.vertices, r, t)) < 1e-12);
    CHECK(max_abs_diff(world.joints, rigid(local.joints, r, t)) < 1e-12);
  }
}

TEST_CASE("posed joints equal the regressor applied to the shaped rest mesh, then skinned") {
  // At the rest pose with nonzero shape, joints equal regress(vertices).
  const HandModel m = build_hand_asset();
  std::mt19937_64 rng(5);
  PoseState s = PoseState::zeros(m);
  s.shape = random_mat(rng, 1, m.shape_dim(), 1.0);
  const auto out = lbs_forward(m, s);
  CHECK(max_abs_diff(out.joints, regress_joints(out.vertices, m)) < 1e-12);
}

TEST_CASE("lbs rejects mismatched state dimensions") {
  const HandModel m = two_bone_model();
  PoseState s = PoseState::zeros(m);
  s.pose = Mat(1, 4);
  CHECK_THROWS_AS(lbs_forward(m, s), std::invalid_argument);
  s = PoseState::zeros(m);
  s.shape = Mat(1, 3);
  CHECK_THROWS_AS(lbs_forward(m, s), std::invalid_argument);
}

TEST_CASE("regress_joints: one-hot selection, centroid, and triple-loop oracle") {
  HandModel m = two_bone_model();
  m.joint_regressor = Mat(2, 8);
  m.joint_regressor(0, 2) = 1.0;
  m.joint_regressor(1, 6) = 1.0;
  Mat j = regress_joints(m.rest_vertices, m);
  for (int a = 0; a < 3; ++a) {
    CHECK(j(0, a) == m.rest_vertices(2, a));
    CHECK(j(1, a) == m.rest_vertices(6, a));
  }

  m.joint_regressor = Mat(2, 8, 0.125);
  j = regress_joints(m.rest_vertices, m);
  CHECK(j(0, 0) == doctest::Approx(1.0));
  CHECK(std::abs(j(0, 1)) < 1e-15);

  std::mt19937_64 rng(3);
  const HandModel big = build_hand_asset();
  HandModel r = big;
  r.joint_regressor = random_mat(rng, big.num_joints(), big.num_vertices(), 1.0);
  const Mat x = random_mat(rng, big.num_vertices(), 3, 1.0);
  const Mat got = regress_joints(x, r);
  for (std::size_t jj = 0; jj < r.num_joints(); ++jj)
    for (std::size_t a = 0; a < 3; ++a) {
      double acc = 0.0;
      for (std::size_t v = 0; v < r.num_vertices(); ++v) acc += r.joint_regressor(jj, v) * x(v, a);
      CHECK(got(jj, a) == doctest::Approx(acc).epsilon(1e-12));
    }

  CHECK_THROWS_AS(regress_joints(Mat(7, 3), m), std::invalid_argument);
}

TEST_CASE("regress_joints is linear") {
  const HandModel m = build_hand_asset();
  std::mt19937_64 rng(21);
  const Mat x = random_mat(rng, m.num_vertices(), 3, 1.0);
  const Mat y = random_mat(rng, m.num_vertices(), 3, 1.0);
  const double a = 1.7, b = -0.4;
  Mat combo(x.rows(), 3);
  for (std::size_t i = 0; i < combo.size(); ++i) combo[i] = a * x[i] + b * y[i];
  const Mat lhs = regress_joints(combo, m);
  const Mat rx = regress_joints(x, m), ry = regress_joints(y, m);
  for (std::size_t i = 0; i < lhs.size(); ++i)
    CHECK(lhs[i] == doctest::Approx(a * rx[i] + b * ry[i]).epsilon(1e-12));
}

TEST_CASE("adapt_topology: identity, 25 to 21, duplicate and missing maps") {
  const HandModel m21 = build_hand_asset();
  const Mat j21 = regress_joints(m21.rest_vertices, m21);
  CHECK(adapt_topology(j21, m21) == j21);

  AssetOptions o;
  o.joints = 25;
  const HandModel m25 = build_hand_asset(o);
  CHECK(m25.num_joints() == 25);
  REQUIRE(m25.topology_map.size() == 21);
  const Mat j25 = regress_joints(m25.rest_vertices, m25);
  const Mat adapted = adapt_topology(j25, m25);
  CHECK(adapted.rows() == 21);
  for (std::size_t i = 0; i < 21; ++i)
    for (std::size_t a = 0; a < 3; ++a) CHECK(adapted(i, a) == j25(m25.topology_map[i], a));
  // The retained joints coincide with the 21-joint build of the same hand.
  CHECK(max_abs_diff(adapted, j21) < 1e-12);
  for (std::size_t i = 0; i < 21; ++i)
    CHECK(m25.joint_names[m25.topology_map[i]] == m21.joint_names[i]);

  auto j = model_to_json(two_bone_model());
  j["topologyMap"] = {1, 1};
  CHECK_THROWS_AS(model_from_json(j), io::SchemaError);
  j["topologyMap"] = {0, 2};
  CHECK_THROWS_AS(model_from_json(j), io::SchemaError);

  HandModel nomap = two_bone_model();
  nomap.topology_map.clear();
  try {
    adapt_topology(Mat(2, 3), nomap);
    FAIL("expected rejection");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("adapted") != std::string::npos);
  }
}

TEST_CASE("25-joint asset poses consistently with the 21-joint asset when CMC joints are at rest") {
  AssetOptions o;
  o.joints = 25;
  const HandModel m25 = build_hand_asset(o);
  const HandModel m21 = build_hand_asset();
  std::mt19937_64 rng(9);
  PoseState s21 = random_state(m21, rng);
  PoseState s25 = PoseState::zeros(m25);
  s25.shape = s21.shape;
  // Copy each retained joint's rotation into the 25-joint pose vector.
  for (std::size_t i = 1; i < 21; ++i) {
    const std::size_t j = m25.topology_map[i];
    for (int a = 0; a < 3; ++a) s25.pose[3 * (j - 1) + a] = s21.pose[3 * (i - 1) + a];
  }
  const auto a = lbs_forward(m21, s21);
  const auto b = lbs_forward(m25, s25);
  CHECK(max_abs_diff(adapt_topology(b.joints, m25), a.joints) < 1e-12);
}

namespace {

// Squared distance to a fixed target as a function of packed parameters, evaluated
// both on the tape and by plain forward passes.
struct LbsLoss {
  const HandModel& m;
  Mat target;
  bool with_shape_and_translation;

  std::size_t dim() const {
    return m.pose_dim() + 3 + (with_shape_and_translation ? m.shape_dim() + 3 : 0);
  }

  PoseState unpack(const std::vector<double>& x) const {
    PoseState s = PoseState::zeros(m);
    std::size_t k = 0;
    for (auto& v : s.pose.storage()) v = x[k++];
    for (auto& v : s.rotation.storage()) v = x[k++];
    if (with_shape_and_translation) {
      for (auto& v : s.shape.storage()) v = x[k++];
      for (auto& v : s.translation.storage()) v = x[k++];
    }
    return s;
  }

  double value(const std::vector<double>& x) const {
    const auto out = lbs_forward(m, unpack(x));
    double acc = 0.0;
    for (std::size_t i = 0; i < out.vertices.size(); ++i) {
      const double d = out.vertices[i] - target[i];
      acc += d * d;
    }
    for (std::size_t i = 0; i < out.joints.size(); ++i) acc += out.joints[i] * out.joints[i];
    return acc;
  }

  std::vector<double> gradient(const std::vector<double>& x) const {
    const PoseState s = unpack(x);
    diff::Tape t;
    diff::Var pose = t.variable(s.pose), shape = t.variable(s.shape);
    diff::Var rot = t.variable(s.rotation), trans = t.variable(s.translation);
    auto out = lbs_on_tape(t, m, pose, shape, rot, trans);
    diff::Var loss = diff::sum_squares(out.vertices - t.constant(target)) + diff::sum_squares(out.joints);
    std::vector<diff::Var> params{pose, rot};
    if (with_shape_and_translation) {
      params.push_back(shape);
      params.push_back(trans);
    }
    auto g = diff::gradients(loss, params);
    std::vector<double> flat;
    for (auto& gi : g) flat.insert(flat.end(), gi.storage().begin(), gi.storage().end());
    return flat;
  }
};

}  // namespace

TEST_CASE("6-parameter LBS loss gradient matches central differences") {
  const HandModel m = two_bone_model();
  std::mt19937_64 rng(1234);
  std::normal_distribution<double> n(0.0, 0.7);
  for (int seed = 0; seed < 100; ++seed) {
    LbsLoss loss{m, random_mat(rng, 8, 3, 1.0), false};
    std::vector<double> x(loss.dim());
    for (auto& v : x) v = n(rng);
    const auto analytic = loss.gradient(x);
    const auto numeric = central_difference([&](const std::vector<double>& p) { return loss.value(p); }, x);
    CHECK(relative_error(analytic, numeric) < 1e-4);
  }
}

TEST_CASE("full desk-asset LBS gradient matches central differences") {
  const HandModel m = build_hand_asset();
  std::mt19937_64 rng(99);
  std::normal_distribution<double> n(0.0, 0.3);
  for (int seed = 0; seed < 3; ++seed) {
    LbsLoss loss{m, random_mat(rng, m.num_vertices(), 3, 0.05), true};
    std::vector<double> x(loss.dim());
    for (auto& v : x) v = n(rng);
    const auto analytic = loss.gradient(x);
    const auto numeric = central_difference([&](const std::vector<double>& p) { return loss.value(p); }, x);
    CHECK(relative_error(analytic, numeric) < 1e-4);
  }
}

TEST_CASE("pose blend offsets are applied, serialized, and differentiated") {
  HandModel m = two_bone_model();
  std::mt19937_64 rng(17);
  m.pose_blend = random_mat(rng, 9, 24, 0.05);
  m.validate();

  PoseState s = PoseState::zeros(m);
  CHECK(max_abs_diff(lbs_forward(m, s).vertices, m.rest_vertices) < 1e-15);

  const HandModel back = model_from_json(model_to_json(m));
  CHECK(back.pose_blend == m.pose_blend);

  // A root-bound vertex only sees the pose-corrective offset.
  s.pose = Mat::row({0.0, 0.0, 0.5});
  const auto out = lbs_forward(m, s);
  const Eigen::Matrix3d r = eigen_rotation(0, 0, 0.5);
  double feat[9];
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b) feat[3 * a + b] = r(a, b) - (a == b ? 1.0 : 0.0);
  for (int a = 0; a < 3; ++a) {
    double off = 0.0;
    for (int k = 0; k < 9; ++k) off += feat[k] * m.pose_blend(k, a);
    CHECK(out.vertices(0, a) == doctest::Approx(m.rest_vertices(0, a) + off).epsilon(1e-12));
  }

  LbsLoss loss{m, random_mat(rng, 8, 3, 1.0), true};
  std::vector<double> x(loss.dim());
  std::normal_distribution<double> n(0.0, 0.5);
  for (auto& v : x) v = n(rng);
  CHECK(relative_error(loss.gradient(x),
                       central_difference([&](const std::vector<double>& p) { return loss.value(p); }, x)) <
        1e-4);
}

TEST_CASE("pose state round-trips through json") {
  const HandModel m = build_hand_asset();
  std::mt19937_64 rng(2);
  PoseState s = random_state(m, rng);
  s.translation = Mat::row({0.1, -0.2, 0.5});
  const PoseState back = pose_state_from_json(pose_state_to_json(s));
  CHECK(back.pose == s.pose);
  CHECK(back.shape == s.shape);
  CHECK(back.translation == s.translation);
  CHECK_NOTHROW(back.check_against(m));
}
