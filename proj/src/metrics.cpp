#include "handsyn/metrics.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <sstream>
#include <thread>

#include "handsyn/hand_model.hpp"

namespace handsyn {

namespace {

constexpr double kCmPerMeter = 100.0;

using Points = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;

Eigen::Map<const Points> as_points(const Mat& m) { return {m.data(), static_cast<Eigen::Index>(m.rows()), 3}; }

void check_pair(const Mat& a, const Mat& b, const char* what) {
  if (a.cols() != 3 || b.cols() != 3)
    throw std::invalid_argument(std::string(what) + ": inputs must be K×3");
  if (a.rows() != b.rows())
    throw std::invalid_argument(std::string(what) + ": " + std::to_string(a.rows()) + " rows vs " +
                                std::to_string(b.rows()));
  if (!all_finite(a) || !all_finite(b)) throw std::invalid_argument(std::string(what) + ": non-finite input");
}

}  // namespace

Mat SimilarityTransform::apply(const Mat& points) const {
  Mat out(points.rows(), 3);
  for (std::size_t i = 0; i < points.rows(); ++i)
    for (std::size_t r = 0; r < 3; ++r) {
      double acc = 0.0;
      for (std::size_t c = 0; c < 3; ++c) acc += rotation[3 * r + c] * points(i, c);
      out(i, r) = scale * acc + translation[r];
    }
  return out;
}

SimilarityTransform procrustes_align(const Mat& source, const Mat& target) {
  check_pair(source, target, "procrustes_align");
  if (source.rows() < 3)
    throw std::invalid_argument("procrustes_align: need at least 3 points, got " + std::to_string(source.rows()));
  const auto src = as_points(source), tgt = as_points(target);
  const Eigen::RowVector3d mu_s = src.colwise().mean(), mu_t = tgt.colwise().mean();
  const Points sc = src.rowwise() - mu_s, tc = tgt.rowwise() - mu_t;
  const double k = static_cast<double>(source.rows());

  const Eigen::JacobiSVD<Points> rank_check(sc);
  const auto& sv = rank_check.singularValues();
  const double tol = 1e-12 * std::max(1.0, sv(0));
  const int rank = static_cast<int>((sv.array() > tol).count());
  if (rank < 2)
    throw std::invalid_argument("procrustes_align: source points are degenerate (centered rank " +
                                std::to_string(rank) + ", need at least 2; points are collinear or coincident)");

  const Eigen::Matrix3d cov = tc.transpose() * sc / k;
  const Eigen::JacobiSVD<Eigen::Matrix3d> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Vector3d d = Eigen::Vector3d::Ones();
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0) d(2) = -1.0;
  const Eigen::Matrix3d rot = svd.matrixU() * d.asDiagonal() * svd.matrixV().transpose();
  const double var_s = sc.squaredNorm() / k;
  const double s = svd.singularValues().dot(d) / var_s;
  if (!(s > 0))
    throw std::invalid_argument("procrustes_align: target points are degenerate (optimal scale is not positive)");
  const Eigen::Vector3d t = mu_t.transpose() - s * rot * mu_s.transpose();

  SimilarityTransform out;
  out.scale = s;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) out.rotation[3 * r + c] = rot(r, c);
    out.translation[r] = t(r);
  }
  return out;
}

double mean_distance_cm(const Mat& a, const Mat& b) {
  check_pair(a, b, "mean_distance");
  if (a.rows() == 0) throw std::invalid_argument("mean_distance: empty input");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double dx = a(i, 0) - b(i, 0), dy = a(i, 1) - b(i, 1), dz = a(i, 2) - b(i, 2);
    acc += std::sqrt(dx * dx + dy * dy + dz * dz) * kCmPerMeter;
  }
  return acc / static_cast<double>(a.rows());
}

double mpjpe(const Mat& pred, const Mat& gt) { return mean_distance_cm(pred, gt); }
double mpvpe(const Mat& pred, const Mat& gt) { return mean_distance_cm(pred, gt); }

double pa_mpjpe(const Mat& pred, const Mat& gt) {
  return mean_distance_cm(procrustes_align(pred, gt).apply(pred), gt);
}

double pa_mpvpe(const Mat& pred_vertices, const Mat& gt_vertices, const Mat& pred_joints, const Mat& gt_joints) {
  check_pair(pred_vertices, gt_vertices, "pa_mpvpe");
  return mean_distance_cm(procrustes_align(pred_joints, gt_joints).apply(pred_vertices), gt_vertices);
}

namespace {

struct SampleMetrics {
  double pa_mpjpe = 0, mpjpe = 0, pa_mpvpe = 0, mpvpe = 0;
  bool has_vertices = false;
};

void accumulate(MetricSet& set, const SampleMetrics& m) {
  ++set.count;
  set.pa_mpjpe += m.pa_mpjpe;
  set.mpjpe += m.mpjpe;
  if (m.has_vertices) {
    ++set.vertex_count;
    set.pa_mpvpe += m.pa_mpvpe;
    set.mpvpe += m.mpvpe;
  }
}

void finish(MetricSet& set) {
  if (set.count) {
    set.pa_mpjpe /= static_cast<double>(set.count);
    set.mpjpe /= static_cast<double>(set.count);
  }
  if (set.vertex_count) {
    set.pa_mpvpe /= static_cast<double>(set.vertex_count);
    set.mpvpe /= static_cast<double>(set.vertex_count);
  }
}

}  // namespace

EvalReport evaluate(std::span<const PoseRecord> predictions, std::span<const PoseRecord> ground_truth,
                    std::span<const LevelLabel> labels, std::optional<std::vector<std::size_t>> topology_map,
                    unsigned threads) {
  const std::size_t n = ground_truth.size();
  if (predictions.size() != n)
    throw std::invalid_argument("evaluate: " + std::to_string(predictions.size()) + " predictions for " +
                                std::to_string(n) + " ground-truth samples");
  if (labels.size() != n)
    throw std::invalid_argument("evaluate: " + std::to_string(labels.size()) + " occlusion labels for " +
                                std::to_string(n) + " samples");
  for (std::size_t i = 0; i < n; ++i) {
    if (predictions[i].id != ground_truth[i].id)
      throw std::invalid_argument("evaluate: sample " + std::to_string(i) + " is '" + predictions[i].id +
                                  "' in predictions but '" + ground_truth[i].id + "' in ground truth");
    if (labels[i].id != ground_truth[i].id)
      throw std::invalid_argument("evaluate: no occlusion label for '" + ground_truth[i].id + "' at position " +
                                  std::to_string(i) + " (found '" + labels[i].id + "')");
    if (labels[i].level < 0 || labels[i].level > kMaxOcclusionLevel)
      throw std::invalid_argument("evaluate: occlusion level " + std::to_string(labels[i].level) + " for '" +
                                  labels[i].id + "' is outside 0-6");
  }

  EvalReport report;
  std::vector<SampleMetrics> per_sample(n);
  std::vector<std::size_t> adapted_joint_counts(n);
  auto run_one = [&](std::size_t i) {
    Mat pj = predictions[i].joints, gj = ground_truth[i].joints;
    if (pj.rows() != gj.rows()) {
      if (!topology_map)
        throw TopologyError("evaluate: prediction '" + predictions[i].id + "' has " + std::to_string(pj.rows()) +
                            " joints but ground truth has " + std::to_string(gj.rows()) +
                            "; supply a topology map to adapt the larger skeleton");
      Mat& larger = pj.rows() > gj.rows() ? pj : gj;
      const std::size_t smaller = std::min(pj.rows(), gj.rows());
      if (topology_map->size() != smaller)
        throw TopologyError("evaluate: topology map has " + std::to_string(topology_map->size()) +
                            " entries, expected " + std::to_string(smaller));
      larger = adapt_topology(larger, *topology_map);
    }
    adapted_joint_counts[i] = pj.rows();
    SampleMetrics m;
    const SimilarityTransform tf = procrustes_align(pj, gj);
    m.pa_mpjpe = mean_distance_cm(tf.apply(pj), gj);
    m.mpjpe = mean_distance_cm(pj, gj);
    const Mat& pv = predictions[i].vertices;
    const Mat& gv = ground_truth[i].vertices;
    if (!pv.empty() && !gv.empty()) {
      if (pv.rows() != gv.rows())
        throw std::invalid_argument("evaluate: '" + predictions[i].id + "' has " + std::to_string(pv.rows()) +
                                    " predicted vertices and " + std::to_string(gv.rows()) + " ground-truth vertices");
      m.has_vertices = true;
      m.pa_mpvpe = mean_distance_cm(tf.apply(pv), gv);
      m.mpvpe = mean_distance_cm(pv, gv);
    }
    per_sample[i] = m;
  };

  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, std::max<std::size_t>(n, 1)));
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < n;) {
      try {
        run_one(i);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);

  for (std::size_t i = 0; i < n; ++i) {
    accumulate(report.overall, per_sample[i]);
    accumulate(report.per_level[static_cast<std::size_t>(labels[i].level)], per_sample[i]);
  }
  finish(report.overall);
  for (auto& s : report.per_level) finish(s);
  if (n) {
    report.evaluated_joints = adapted_joint_counts.front();
    report.topology_adapted = predictions.front().joints.rows() != ground_truth.front().joints.rows();
  }
  return report;
}

namespace {

io::json metric_json(const MetricSet& s) {
  io::json j = {{"count", s.count}, {"paMpjpeCm", s.pa_mpjpe}, {"mpjpeCm", s.mpjpe}, {"vertexCount", s.vertex_count}};
  if (s.vertex_count) {
    j["paMpvpeCm"] = s.pa_mpvpe;
    j["mpvpeCm"] = s.mpvpe;
  }
  return j;
}

}  // namespace

io::json eval_report_to_json(const EvalReport& report) {
  io::json levels = io::json::array();
  for (int l = 0; l <= kMaxOcclusionLevel; ++l) {
    io::json j = metric_json(report.per_level[static_cast<std::size_t>(l)]);
    j["level"] = l;
    levels.push_back(std::move(j));
  }
  return {{"overall", metric_json(report.overall)},
          {"perLevel", std::move(levels)},
          {"evaluatedJoints", report.evaluated_joints},
          {"topologyAdapted", report.topology_adapted}};
}

std::string eval_report_table(const EvalReport& report) {
  std::ostringstream out;
  out.precision(10);
  out << "group,count,pa_mpjpe_cm,mpjpe_cm,vertex_count,pa_mpvpe_cm,mpvpe_cm\n";
  auto row = [&](const std::string& name, const MetricSet& s) {
    out << name << ',' << s.count << ',' << s.pa_mpjpe << ',' << s.mpjpe << ',' << s.vertex_count << ',';
    if (s.vertex_count) out << s.pa_mpvpe << ',' << s.mpvpe;
    else out << ',';
    out << '\n';
  };
  row("all", report.overall);
  for (int l = 0; l <= kMaxOcclusionLevel; ++l) row("level_" + std::to_string(l), report.per_level[static_cast<std::size_t>(l)]);
  return out.str();
}

}  // namespace handsyn
