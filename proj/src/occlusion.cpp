#include "handsyn/occlusion.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace handsyn {

double focal_convert(double fx_pixels, double image_width_pixels) {
  if (!(fx_pixels > 0) || !(image_width_pixels > 0))
    throw std::invalid_argument("focal_convert: fx and image width must be positive");
  constexpr double kSensorWidthMm = 36.0;
  return fx_pixels * kSensorWidthMm / image_width_pixels;
}

void Camera::validate() const {
  if (!(fx > 0) || !(fy > 0)) throw std::invalid_argument("camera: fx and fy must be positive");
  if (height == 0 || width == 0) throw std::invalid_argument("camera: image size must be nonzero");
  if (!(cx >= 0 && cx <= static_cast<double>(width) && cy >= 0 && cy <= static_cast<double>(height)))
    throw std::invalid_argument("camera: principal point (" + std::to_string(cx) + ", " + std::to_string(cy) +
                                ") lies outside the " + std::to_string(width) + "x" + std::to_string(height) +
                                " image");
  if (!(near_plane > 0)) throw std::invalid_argument("camera: near plane must be positive");
}

std::array<double, 3> Camera::project(const double p[3]) const noexcept {
  return {fx * p[0] / p[2] + cx, fy * p[1] / p[2] + cy, p[2]};
}

bool Camera::pixel_of(double u, double v, std::size_t& row, std::size_t& col) const noexcept {
  if (!(u >= 0 && v >= 0 && u < static_cast<double>(width) && v < static_cast<double>(height))) return false;
  col = static_cast<std::size_t>(u);
  row = static_cast<std::size_t>(v);
  return true;
}

void Mesh::validate() const {
  if (vertices.cols() != 3 && vertices.rows() != 0)
    throw std::invalid_argument("mesh: vertices must be V×3");
  if (part_labels.size() != vertices.rows())
    throw std::invalid_argument("mesh: " + std::to_string(part_labels.size()) + " part labels for " +
                                std::to_string(vertices.rows()) + " vertices");
  for (std::size_t i = 0; i < faces.size(); ++i)
    for (auto idx : faces[i])
      if (idx >= vertices.rows())
        throw std::invalid_argument("mesh: face " + std::to_string(i) + " references vertex " +
                                    std::to_string(idx));
}

Mesh make_mesh(const HandModel& model, const Mat& posed_vertices) {
  Mesh m{posed_vertices, model.faces, model.part_labels};
  m.validate();
  return m;
}

Part face_part(const Mesh& mesh, const Face& f) noexcept {
  const Part a = mesh.part_labels[f[0]], b = mesh.part_labels[f[1]], c = mesh.part_labels[f[2]];
  if (a == b || a == c) return a;
  if (b == c) return b;
  return std::min({a, b, c});
}

RenderBuffers rasterize(const Mesh& mesh, const Camera& camera) {
  camera.validate();
  mesh.validate();
  RenderBuffers out;
  out.height = camera.height;
  out.width = camera.width;
  out.part_id.assign(out.height * out.width, kBackground);
  out.depth.assign(out.height * out.width, std::numeric_limits<double>::infinity());

  const double hmax = static_cast<double>(out.height) - 1, wmax = static_cast<double>(out.width) - 1;
  for (const Face& f : mesh.faces) {
    std::array<std::array<double, 3>, 3> s{};
    bool finite = true, clipped = false;
    for (int k = 0; k < 3; ++k) {
      const double* p = mesh.vertices.row_span(f[k]).data();
      if (!std::isfinite(p[0]) || !std::isfinite(p[1]) || !std::isfinite(p[2])) finite = false;
      else if (p[2] <= camera.near_plane) clipped = true;
      else s[k] = camera.project(p);
    }
    if (!finite) { ++out.degenerate_faces; continue; }
    if (clipped) { ++out.clipped_faces; continue; }

    auto edge = [](const std::array<double, 3>& a, const std::array<double, 3>& b, double x, double y) {
      return (b[0] - a[0]) * (y - a[1]) - (b[1] - a[1]) * (x - a[0]);
    };
    double area = edge(s[0], s[1], s[2][0], s[2][1]);
    if (!(std::abs(area) > 1e-12)) { ++out.degenerate_faces; continue; }
    const double sign = area > 0 ? 1.0 : -1.0;
    area *= sign;

    const double umin = std::min({s[0][0], s[1][0], s[2][0]}), umax = std::max({s[0][0], s[1][0], s[2][0]});
    const double vmin = std::min({s[0][1], s[1][1], s[2][1]}), vmax = std::max({s[0][1], s[1][1], s[2][1]});
    const double c0 = std::max(0.0, std::ceil(umin - 0.5)), c1 = std::min(wmax, std::floor(umax - 0.5));
    const double r0 = std::max(0.0, std::ceil(vmin - 0.5)), r1 = std::min(hmax, std::floor(vmax - 0.5));
    if (c0 > c1 || r0 > r1) continue;

    const auto part = static_cast<std::int8_t>(face_part(mesh, f));
    const double iz0 = 1.0 / s[0][2], iz1 = 1.0 / s[1][2], iz2 = 1.0 / s[2][2];
    for (auto r = static_cast<std::size_t>(r0); r <= static_cast<std::size_t>(r1); ++r) {
      const double y = static_cast<double>(r) + 0.5;
      for (auto c = static_cast<std::size_t>(c0); c <= static_cast<std::size_t>(c1); ++c) {
        const double x = static_cast<double>(c) + 0.5;
        const double w0 = sign * edge(s[1], s[2], x, y);
        const double w1 = sign * edge(s[2], s[0], x, y);
        const double w2 = sign * edge(s[0], s[1], x, y);
        if (w0 < 0 || w1 < 0 || w2 < 0) continue;
        const double z = area / (w0 * iz0 + w1 * iz1 + w2 * iz2);
        const std::size_t i = r * out.width + c;
        if (z < out.depth[i] || (z == out.depth[i] && part < out.part_id[i])) {
          out.depth[i] = z;
          out.part_id[i] = part;
        }
      }
    }
  }
  return out;
}

std::size_t LabelOptions::effective_threshold(std::size_t vertex_count) const {
  if (!auto_scale) return threshold;
  const double scaled = static_cast<double>(threshold) * static_cast<double>(vertex_count) / kReferenceVertexCount;
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(scaled)));
}

namespace {

void check_mask(const MaskBuffer& mask, const Camera& camera) {
  if (mask.height() != camera.height || mask.width() != camera.width)
    throw std::invalid_argument("object mask is " + std::to_string(mask.height()) + "x" +
                                std::to_string(mask.width()) + ", camera image is " +
                                std::to_string(camera.height) + "x" + std::to_string(camera.width));
}

}  // namespace

OcclusionLabel label_occlusion(const Mesh& mesh, const Camera& camera, const MaskBuffer& object_mask,
                               const LabelOptions& options) {
  return label_occlusion(mesh, camera, rasterize(mesh, camera), object_mask, options);
}

OcclusionLabel label_occlusion(const Mesh& mesh, const Camera& camera, const RenderBuffers& buffers,
                               const MaskBuffer& object_mask, const LabelOptions& options) {
  camera.validate();
  mesh.validate();
  check_mask(object_mask, camera);
  if (buffers.height != camera.height || buffers.width != camera.width)
    throw std::invalid_argument("label_occlusion: render buffers do not match the camera");

  OcclusionLabel label;
  label.threshold = options.effective_threshold(mesh.vertices.rows());
  for (std::size_t v = 0; v < mesh.vertices.rows(); ++v) {
    const auto part = static_cast<std::size_t>(mesh.part_labels[v]);
    const double* p = mesh.vertices.row_span(v).data();
    std::size_t r = 0, c = 0;
    bool in_view = p[2] > camera.near_plane;
    std::array<double, 3> s{};
    if (in_view) {
      s = camera.project(p);
      in_view = camera.pixel_of(s[0], s[1], r, c);
    }
    if (!in_view) {
      ++label.out_of_view_counts[part];
      ++label.occluded_counts[part];
      continue;
    }
    const bool obj = object_mask.at(r, c);
    const bool self = s[2] > buffers.depth_at(r, c) + options.depth_epsilon;
    label.object_counts[part] += obj;
    label.self_counts[part] += self;
    label.occluded_counts[part] += (obj || (self && options.count_self_occlusion));
  }
  for (std::size_t k = 0; k < kPartCount; ++k) {
    label.part_occluded[k] = label.occluded_counts[k] >= label.threshold;
    label.level += label.part_occluded[k];
  }
  return label;
}

std::vector<bool> joint_visibility(const RenderBuffers& buffers, const Mat& joints, const Camera& camera,
                                   const MaskBuffer& object_mask, double epsilon) {
  camera.validate();
  check_mask(object_mask, camera);
  if (joints.cols() != 3 && joints.rows() != 0) throw std::invalid_argument("joint_visibility: joints must be J×3");
  std::vector<bool> visible(joints.rows(), false);
  for (std::size_t j = 0; j < joints.rows(); ++j) {
    const double* p = joints.row_span(j).data();
    if (!(p[2] > camera.near_plane)) continue;
    const auto s = camera.project(p);
    std::size_t r = 0, c = 0;
    if (!camera.pixel_of(s[0], s[1], r, c) || object_mask.at(r, c)) continue;
    visible[j] = s[2] <= buffers.depth_at(r, c) + epsilon;
  }
  return visible;
}

std::vector<bool> joint_visibility(const Mesh& mesh, const Mat& joints, const Camera& camera,
                                   const MaskBuffer& object_mask, double epsilon) {
  return joint_visibility(rasterize(mesh, camera), joints, camera, object_mask, epsilon);
}

MaskBuffer part_mask(const RenderBuffers& buffers, Part part) {
  MaskBuffer m(buffers.height, buffers.width);
  for (std::size_t r = 0; r < buffers.height; ++r)
    for (std::size_t c = 0; c < buffers.width; ++c)
      m.set(r, c, buffers.part_at(r, c) == static_cast<std::int8_t>(part));
  return m;
}

}  // namespace handsyn
