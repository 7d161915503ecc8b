#pragma once
// Pinhole camera, z-buffer rasterization with part ids, and render-and-compare occlusion labels.

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "handsyn/hand_model.hpp"
#include "handsyn/image.hpp"
#include "handsyn/matrix.hpp"

namespace handsyn {

/// Focal length in mm of a 36 mm-wide sensor whose image is `image_width` pixels across.
double focal_convert(double fx_pixels, double image_width_pixels);

/// Camera frame: x right, y down, z forward (meters). Pixel (r, c) covers
/// [c, c+1) × [r, r+1) in image coordinates and is sampled at its center.
struct Camera {
  double fx = 0, fy = 0, cx = 0, cy = 0;
  std::size_t height = 0, width = 0;
  double near_plane = 1e-3;

  void validate() const;
  /// (u, v, z): image coordinates and depth.
  std::array<double, 3> project(const double p[3]) const noexcept;
  /// Pixel containing (u, v), or false if outside the image.
  bool pixel_of(double u, double v, std::size_t& row, std::size_t& col) const noexcept;
};

/// Triangle mesh in camera coordinates with a part per vertex.
struct Mesh {
  Mat vertices;  // V×3
  std::vector<Face> faces;
  std::vector<Part> part_labels;  // V

  void validate() const;
};

Mesh make_mesh(const HandModel& model, const Mat& posed_vertices);

/// Two or three equal labels decide; three distinct labels give the smallest.
Part face_part(const Mesh& mesh, const Face& f) noexcept;

inline constexpr std::int8_t kBackground = -1;

struct RenderBuffers {
  std::size_t height = 0, width = 0;
  std::vector<std::int8_t> part_id;  // kBackground or a Part value
  std::vector<double> depth;         // +inf on background
  std::size_t degenerate_faces = 0;  // zero projected area or non-finite vertices
  std::size_t clipped_faces = 0;     // any vertex at or before the near plane

  std::int8_t part_at(std::size_t r, std::size_t c) const noexcept { return part_id[r * width + c]; }
  double depth_at(std::size_t r, std::size_t c) const noexcept { return depth[r * width + c]; }
  bool operator==(const RenderBuffers&) const = default;
};

/// Perspective-correct depth, inclusive edge test at pixel centers. Equal depths resolve to the
/// smaller part id, so the result does not depend on face order.
RenderBuffers rasterize(const Mesh& mesh, const Camera& camera);

struct LabelOptions {
  std::size_t threshold = 40;
  /// Scale the threshold by V / 5990 (rounded, at least 1).
  bool auto_scale = false;
  /// A vertex deeper than the depth buffer by more than this is self-occluded (meters).
  double depth_epsilon = 0.005;
  /// When false, self-occluded vertices are still counted but do not feed occluded_counts or the flags.
  bool count_self_occlusion = true;

  std::size_t effective_threshold(std::size_t vertex_count) const;
};

inline constexpr double kReferenceVertexCount = 5990.0;

struct OcclusionLabel {
  std::array<bool, kPartCount> part_occluded{};
  int level = 0;
  std::vector<bool> joint_visible;
  std::array<std::size_t, kPartCount> occluded_counts{};  // union of the causes below (self only if counted)
  std::array<std::size_t, kPartCount> object_counts{};    // vertex pixel in the object mask
  std::array<std::size_t, kPartCount> self_counts{};      // vertex behind the rendered surface
  std::array<std::size_t, kPartCount> out_of_view_counts{};
  std::size_t threshold = 0;
};

/// Counts occluded vertices per part and flags parts whose count reaches the threshold.
/// Vertices projecting outside the image (or before the near plane) count as occluded.
OcclusionLabel label_occlusion(const Mesh& mesh, const Camera& camera, const MaskBuffer& object_mask,
                               const LabelOptions& options = {});
/// Same, against precomputed buffers.
OcclusionLabel label_occlusion(const Mesh& mesh, const Camera& camera, const RenderBuffers& buffers,
                               const MaskBuffer& object_mask, const LabelOptions& options = {});

/// Joint visible iff it projects inside the image, is not masked, and is no deeper than
/// the depth buffer plus epsilon (background pixels count as unobstructed).
std::vector<bool> joint_visibility(const RenderBuffers& buffers, const Mat& joints, const Camera& camera,
                                   const MaskBuffer& object_mask, double epsilon = 0.005);
std::vector<bool> joint_visibility(const Mesh& mesh, const Mat& joints, const Camera& camera,
                                   const MaskBuffer& object_mask, double epsilon = 0.005);

/// Mask of pixels whose rendered part is `part`.
MaskBuffer part_mask(const RenderBuffers& buffers, Part part);

}  // namespace handsyn
