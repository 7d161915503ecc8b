#include "handsyn/asset_builder.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace handsyn {
namespace {

using Vec3 = std::array<double, 3>;

Vec3 add(Vec3 a, Vec3 b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
Vec3 sub(Vec3 a, Vec3 b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
Vec3 mul(Vec3 a, double s) { return {a[0] * s, a[1] * s, a[2] * s}; }
Vec3 cross(Vec3 a, Vec3 b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
Vec3 normalized(Vec3 a) {
  const double n = std::sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2]);
  return mul(a, 1.0 / n);
}

struct Digit {
  const char* name;
  Part part;
  Vec3 base;
  Vec3 dir;
  std::array<double, 3> segments;
  double radius;
  bool has_cmc;  // only meaningful for the 25-joint layout
  const char* joint_names[4];
};

constexpr double kPalmLength = 0.095;
constexpr double kPalmHalfThickness = 0.013;
constexpr double kBlendWidth = 0.005;
constexpr double kCmcFraction = 0.3;

std::array<Digit, 5> digits() {
  return {{
      {"thumb", Part::Thumb, {0.022, 0.022, -0.003}, normalized({0.62, 0.78, -0.08}),
       {0.040, 0.032, 0.028}, 0.0105, false, {"thumb_cmc", "thumb_mcp", "thumb_ip", "thumb_tip"}},
      {"index", Part::Index, {0.027, 0.092, 0.0}, {0.0, 1.0, 0.0}, {0.040, 0.025, 0.022}, 0.0090,
       true, {"index_mcp", "index_pip", "index_dip", "index_tip"}},
      {"middle", Part::Middle, {0.008, 0.095, 0.0}, {0.0, 1.0, 0.0}, {0.045, 0.028, 0.024},
       0.0093, true, {"middle_mcp", "middle_pip", "middle_dip", "middle_tip"}},
      {"ring", Part::Ring, {-0.011, 0.092, 0.0}, {0.0, 1.0, 0.0}, {0.042, 0.027, 0.023}, 0.0088,
       true, {"ring_mcp", "ring_pip", "ring_dip", "ring_tip"}},
      {"pinky", Part::Pinky, {-0.029, 0.086, 0.0}, {0.0, 1.0, 0.0}, {0.033, 0.020, 0.020},
       0.0078, true, {"pinky_mcp", "pinky_pip", "pinky_dip", "pinky_tip"}},
  }};
}

double palm_half_width(double y) { return 0.040 + 0.005 * (y / kPalmLength); }

// Per-vertex bookkeeping used to build the shape blend fields.
struct VertexInfo {
  int digit = -1;     // -1 for palm
  double along = 0;   // distance from the digit base along its axis
  Vec3 axis_point{};  // closest point on the digit axis (or palm ring center)
};

}  // namespace

HandModel build_hand_asset(const AssetOptions& opt) {
  if (opt.joints != 21 && opt.joints != 25)
    throw std::invalid_argument("build_hand_asset: joints must be 21 or 25");
  if (opt.rings_per_digit < 2 || opt.ring_vertices < 3 || opt.palm_rings < 2 ||
      opt.palm_ring_vertices < 3)
    throw std::invalid_argument("build_hand_asset: ring counts too small");

  const bool with_cmc = opt.joints == 25;
  const auto dg = digits();

  // Joint layout.
  std::vector<int> parents{-1};
  std::vector<std::string> names{"wrist"};
  std::array<int, 5> cmc_joint{-1, -1, -1, -1, -1};
  std::array<int, 5> first_joint{};
  for (std::size_t d = 0; d < dg.size(); ++d) {
    int parent = 0;
    if (with_cmc && dg[d].has_cmc) {
      cmc_joint[d] = static_cast<int>(parents.size());
      parents.push_back(0);
      names.push_back(std::string(dg[d].name) + "_cmc");
      parent = cmc_joint[d];
    }
    first_joint[d] = static_cast<int>(parents.size());
    for (int k = 0; k < 4; ++k) {
      parents.push_back(k == 0 ? parent : static_cast<int>(parents.size()) - 1);
      names.push_back(dg[d].joint_names[k]);
    }
  }
  const std::size_t nj = parents.size();

  std::vector<Vec3> verts;
  std::vector<Face> faces;
  std::vector<std::vector<std::pair<std::size_t, double>>> weights;
  std::vector<Part> labels;
  std::vector<VertexInfo> info;
  std::vector<std::vector<std::pair<std::size_t, double>>> regressor(nj);

  auto push_vertex = [&](Vec3 p, Part part, VertexInfo vi,
                         std::vector<std::pair<std::size_t, double>> w) {
    verts.push_back(p);
    labels.push_back(part);
    info.push_back(vi);
    weights.push_back(std::move(w));
    return static_cast<std::uint32_t>(verts.size() - 1);
  };
  auto tube_faces = [&](std::uint32_t ring0, std::uint32_t ring1, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
      const auto i1 = static_cast<std::uint32_t>((i + 1) % n);
      const auto ii = static_cast<std::uint32_t>(i);
      faces.push_back({ring0 + ii, ring0 + i1, ring1 + i1});
      faces.push_back({ring0 + ii, ring1 + i1, ring1 + ii});
    }
  };
  auto fan_faces = [&](std::uint32_t center, std::uint32_t ring, std::size_t n, bool flip) {
    for (std::size_t i = 0; i < n; ++i) {
      const auto a = static_cast<std::uint32_t>(ring + i);
      const auto b = static_cast<std::uint32_t>(ring + (i + 1) % n);
      faces.push_back(flip ? Face{center, b, a} : Face{center, a, b});
    }
  };
  // Regressor row = average of a contiguous vertex range, scaled by `w`.
  auto add_ring_to_regressor = [&](std::size_t joint, std::uint32_t start, std::size_t n,
                                   double w) {
    for (std::size_t i = 0; i < n; ++i) regressor[joint].push_back({start + i, w / n});
  };

  // Palm: elliptical rings along +y, capped at both ends. The wrist is the
  // center of the proximal cap.
  const std::size_t pn = opt.palm_ring_vertices;
  std::vector<std::uint32_t> palm_ring_start;
  const auto wrist_vertex = push_vertex({0, 0, 0}, Part::Palm, {-1, 0, {0, 0, 0}}, {{0, 1.0}});
  for (std::size_t r = 0; r < opt.palm_rings; ++r) {
    const double y = kPalmLength * static_cast<double>(r) / (opt.palm_rings - 1);
    const double a = palm_half_width(y);
    palm_ring_start.push_back(static_cast<std::uint32_t>(verts.size()));
    for (std::size_t i = 0; i < pn; ++i) {
      const double phi = 2.0 * std::numbers::pi * static_cast<double>(i) / pn;
      push_vertex({a * std::cos(phi), y, kPalmHalfThickness * std::sin(phi)}, Part::Palm,
                  {-1, y, {0, y, 0}}, {{0, 1.0}});
    }
    if (r > 0) tube_faces(palm_ring_start[r - 1], palm_ring_start[r], pn);
  }
  fan_faces(wrist_vertex, palm_ring_start.front(), pn, true);
  const auto palm_end =
      push_vertex({0, kPalmLength, 0}, Part::Palm, {-1, kPalmLength, {0, kPalmLength, 0}},
                  {{0, 1.0}});
  fan_faces(palm_end, palm_ring_start.back(), pn, false);
  regressor[0].push_back({wrist_vertex, 1.0});

  // Digits.
  const std::size_t rn = opt.ring_vertices;
  for (std::size_t d = 0; d < dg.size(); ++d) {
    const Digit& g = dg[d];
    const double total = g.segments[0] + g.segments[1] + g.segments[2];
    const std::array<double, 4> joint_at{0.0, g.segments[0], g.segments[0] + g.segments[1], total};
    const std::size_t chain_parent = cmc_joint[d] >= 0 ? static_cast<std::size_t>(cmc_joint[d]) : 0;
    std::array<std::size_t, 4> chain{chain_parent, static_cast<std::size_t>(first_joint[d]),
                                     static_cast<std::size_t>(first_joint[d] + 1),
                                     static_cast<std::size_t>(first_joint[d] + 2)};

    // Segment s is driven by chain[s + 1]; near a joint the weight ramps
    // linearly across kBlendWidth between the two adjacent segments.
    auto skin = [&](double along) {
      std::array<double, 4> w{};
      int s = 0;
      while (s < 2 && along >= joint_at[s + 1]) ++s;
      w[s + 1] = 1.0;
      const double lo = (along - joint_at[s]) / (2 * kBlendWidth) + 0.5;
      if (lo < 1.0) {
        w[s + 1] = std::max(lo, 0.0);
        w[s] = 1.0 - w[s + 1];
      } else if (s < 2) {
        const double hi = (along - joint_at[s + 1]) / (2 * kBlendWidth) + 0.5;
        if (hi > 0.0) {
          w[s + 2] = hi;
          w[s + 1] = 1.0 - hi;
        }
      }
      std::vector<std::pair<std::size_t, double>> out;
      for (int k = 0; k < 4; ++k)
        if (w[k] > 0.0) out.push_back({chain[k], w[k]});
      return out;
    };

    Vec3 u = normalized(cross(g.dir, {0.0, 0.0, 1.0}));
    Vec3 v = cross(u, g.dir);
    std::vector<std::uint32_t> ring_start;
    std::vector<double> ring_along;
    for (std::size_t r = 0; r < opt.rings_per_digit; ++r) {
      const double along = total * static_cast<double>(r) / opt.rings_per_digit;
      const double radius = g.radius * (1.0 - 0.25 * along / total);
      const Vec3 center = add(g.base, mul(g.dir, along));
      ring_start.push_back(static_cast<std::uint32_t>(verts.size()));
      ring_along.push_back(along);
      auto w = skin(along);
      for (std::size_t i = 0; i < rn; ++i) {
        const double phi = 2.0 * std::numbers::pi * static_cast<double>(i) / rn;
        const Vec3 off = add(mul(u, radius * std::cos(phi)), mul(v, radius * std::sin(phi)));
        push_vertex(add(center, off), g.part, {static_cast<int>(d), along, center}, w);
      }
      if (r > 0) tube_faces(ring_start[r - 1], ring_start[r], rn);
    }
    const auto tip = push_vertex(add(g.base, mul(g.dir, total)), g.part,
                                 {static_cast<int>(d), total, add(g.base, mul(g.dir, total))},
                                 skin(total));
    fan_faces(tip, ring_start.back(), rn, false);

    // Joints sit on the straight digit axis, so each is an exact interpolation
    // of the two bracketing ring centroids (or the last ring and the tip vertex).
    for (int k = 0; k < 4; ++k) {
      const std::size_t joint = static_cast<std::size_t>(first_joint[d] + k);
      const double at = joint_at[k];
      std::size_t r = 0;
      while (r + 1 < ring_along.size() && ring_along[r + 1] <= at) ++r;
      const double next = r + 1 < ring_along.size() ? ring_along[r + 1] : total;
      const double t = next > ring_along[r] ? (at - ring_along[r]) / (next - ring_along[r]) : 0.0;
      if (1.0 - t > 0.0) add_ring_to_regressor(joint, ring_start[r], rn, 1.0 - t);
      if (t > 0.0) {
        if (r + 1 < ring_along.size())
          add_ring_to_regressor(joint, ring_start[r + 1], rn, t);
        else
          regressor[joint].push_back({tip, t});
      }
    }
    if (cmc_joint[d] >= 0) {
      const auto c = static_cast<std::size_t>(cmc_joint[d]);
      regressor[c].push_back({wrist_vertex, 1.0 - kCmcFraction});
      add_ring_to_regressor(c, ring_start[0], rn, kCmcFraction);
    }
  }

  const std::size_t nv = verts.size();
  HandModel m;
  m.rest_vertices = Mat(nv, 3);
  for (std::size_t i = 0; i < nv; ++i)
    for (std::size_t a = 0; a < 3; ++a) m.rest_vertices(i, a) = verts[i][a];
  m.faces = std::move(faces);
  m.skin_weights = Mat(nv, nj);
  for (std::size_t i = 0; i < nv; ++i)
    for (auto [j, w] : weights[i]) m.skin_weights(i, j) += w;
  m.parents = parents;
  m.joint_regressor = Mat(nj, nv);
  for (std::size_t j = 0; j < nj; ++j)
    for (auto [i, w] : regressor[j]) m.joint_regressor(j, i) += w;
  m.part_labels = std::move(labels);
  m.joint_names = std::move(names);

  // Shape blend fields, one row of 3V per coefficient, sized so that a unit
  // coefficient is a few-percent change of the corresponding dimension.
  constexpr std::size_t kShapes = 10;
  m.shape_blend = Mat(kShapes, 3 * nv);
  for (std::size_t i = 0; i < nv; ++i) {
    const Vec3 p = verts[i];
    const VertexInfo& vi = info[i];
    auto put = [&](std::size_t k, Vec3 disp) {
      for (std::size_t a = 0; a < 3; ++a) m.shape_blend(k, 3 * i + a) = disp[a];
    };
    put(0, mul(p, 0.05));
    Vec3 radial = sub(p, vi.axis_point);
    if (vi.digit < 0) {
      radial[1] = 0.0;
      put(2, mul(radial, 0.08));
      put(3, {0.06 * p[0], 0, 0});
      put(4, {0, 0.06 * p[1], 0});
    } else {
      const Digit& g = dg[static_cast<std::size_t>(vi.digit)];
      put(1, mul(g.dir, 0.06 * vi.along));
      put(2, mul(radial, 0.08));
      put(3, {0.06 * g.base[0], 0, 0});
      put(4, {0, 0.06 * g.base[1], 0});
      put(5 + static_cast<std::size_t>(vi.digit), mul(g.dir, 0.08 * vi.along));
    }
  }

  if (with_cmc) {
    for (std::size_t j = 0; j < nj; ++j)
      if (std::find(cmc_joint.begin(), cmc_joint.end(), static_cast<int>(j)) == cmc_joint.end())
        m.topology_map.push_back(j);
  } else {
    for (std::size_t j = 0; j < nj; ++j) m.topology_map.push_back(j);
  }

  m.validate();
  return m;
}

}  // namespace handsyn
