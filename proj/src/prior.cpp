#include "handsyn/prior.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <mutex>
#include <numbers>
#include <numeric>
#include <random>
#include <thread>

#include "handsyn/adam.hpp"
#include "handsyn/asset_builder.hpp"
#include "handsyn/hand_model.hpp"

namespace handsyn {

using diff::Tape;
using diff::Var;

PriorError::PriorError(std::size_t epoch, std::size_t step, const std::string& detail)
    : std::runtime_error("prior training failed at epoch " + std::to_string(epoch) + ", step " +
                         std::to_string(step) + ": " + detail),
      epoch_(epoch),
      step_(step) {}

namespace {

struct LayerShape {
  std::size_t in, out;
  bool relu;
};

std::vector<LayerShape> layer_shapes(std::size_t input, std::size_t latent, std::size_t hidden) {
  return {
      {input, hidden, true},  {hidden, hidden, true}, {hidden, hidden, true},
      {hidden, hidden, false}, {hidden, 2 * latent, false},
      {latent, hidden, true}, {hidden, hidden, true}, {hidden, hidden, true},
      {hidden, hidden, true}, {hidden, hidden, true}, {hidden, hidden, false},
      {hidden, input, false},
  };
}

Var dense_stack(const std::vector<Var>& params, std::size_t first, std::size_t count,
                const std::vector<LayerShape>& shapes, Var h) {
  for (std::size_t l = first; l < first + count; ++l) {
    h = diff::add_row(diff::matmul(h, params[2 * l]), params[2 * l + 1]);
    if (shapes[l].relu) h = diff::relu(h);
  }
  return h;
}

std::vector<LayerShape> shapes_of(const PriorModel& m) {
  return layer_shapes(m.input_dim(), m.latent_dim, m.hidden_dim);
}

}  // namespace

PriorModel PriorModel::init(std::size_t joints, std::size_t latent_dim, std::size_t hidden_dim,
                            std::uint64_t seed) {
  if (joints == 0 || latent_dim == 0 || hidden_dim == 0)
    throw std::invalid_argument("prior: joints, latent and hidden sizes must be positive");
  PriorModel m;
  m.joints = joints;
  m.latent_dim = latent_dim;
  m.hidden_dim = hidden_dim;
  m.mean_pose = Mat(1, 3 * joints);
  std::mt19937_64 rng(seed);
  for (const auto& s : layer_shapes(3 * joints, latent_dim, hidden_dim)) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(s.in));
    std::uniform_real_distribution<double> u(-bound, bound);
    Mat w(s.in, s.out), b(1, s.out);
    for (auto& v : w.storage()) v = u(rng);
    for (auto& v : b.storage()) v = u(rng);
    m.params.push_back(std::move(w));
    m.params.push_back(std::move(b));
  }
  return m;
}

std::size_t PriorModel::parameter_count() const noexcept {
  std::size_t n = 0;
  for (const auto& p : params) n += p.size();
  return n;
}

void PriorModel::validate() const {
  const auto shapes = shapes_of(*this);
  if (params.size() != 2 * shapes.size())
    throw io::SchemaError("prior: expected " + std::to_string(2 * shapes.size()) + " parameter arrays, found " +
                          std::to_string(params.size()));
  for (std::size_t l = 0; l < shapes.size(); ++l) {
    const Mat& w = params[2 * l];
    const Mat& b = params[2 * l + 1];
    if (w.rows() != shapes[l].in || w.cols() != shapes[l].out || b.rows() != 1 || b.cols() != shapes[l].out)
      throw io::SchemaError("prior: layer " + std::to_string(l) + " has weight " + w.shape_string() + " and bias " +
                            b.shape_string() + ", expected " + std::to_string(shapes[l].in) + "x" +
                            std::to_string(shapes[l].out));
  }
  if (mean_pose.rows() != 1 || mean_pose.cols() != input_dim())
    throw io::SchemaError("prior: mean pose must be 1x" + std::to_string(input_dim()));
  if (root_joint >= joints) throw io::SchemaError("prior: root joint out of range");
  if (!(units_per_meter > 0)) throw io::SchemaError("prior: unitsPerMeter must be positive");
}

double kl_divergence(const Mat& mean, const Mat& log_variance) {
  if (!mean.same_shape(log_variance))
    throw std::invalid_argument("kl_divergence: mean is " + mean.shape_string() + ", log-variance is " +
                                log_variance.shape_string());
  if (mean.rows() == 0) return 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < mean.size(); ++i)
    acc += mean[i] * mean[i] + std::exp(log_variance[i]) - 1.0 - log_variance[i];
  return 0.5 * acc / static_cast<double>(mean.rows());
}

Var kl_on_tape(Var mean, Var log_variance) {
  const double rows = static_cast<double>(mean.rows());
  Var s = diff::sum_squares(mean) + diff::sum(diff::exp(log_variance)) - diff::sum(log_variance);
  s = diff::add_scalar(s, -static_cast<double>(mean.value().size()));
  return diff::scale(s, 0.5 / rows);
}

PriorVars bind_prior(Tape& tape, const PriorModel& model, bool trainable) {
  PriorVars v;
  v.params.reserve(model.params.size());
  for (const auto& p : model.params) v.params.push_back(trainable ? tape.variable(p) : tape.constant(p));
  return v;
}

Encoding encode(const PriorModel& model, const PriorVars& vars, Var input) {
  const Var h = dense_stack(vars.params, 0, kEncoderLayers, shapes_of(model), input);
  return {diff::slice_cols(h, 0, model.latent_dim), diff::slice_cols(h, model.latent_dim, model.latent_dim)};
}

Var decode(const PriorModel& model, const PriorVars& vars, Var z) {
  Mat mean_units = model.mean_pose;
  for (auto& v : mean_units.storage()) v *= model.units_per_meter;
  const Var residual = dense_stack(vars.params, kEncoderLayers, kDecoderLayers, shapes_of(model), z);
  return diff::add_row(residual, z.tape->constant(std::move(mean_units)));
}

VaeLoss vae_loss(const PriorModel& model, const PriorVars& vars, const Mat& masked_input, const Mat& target,
                 const Mat& noise, double lambda_kl) {
  Tape& tape = *vars.params.front().tape;
  if (masked_input.cols() != model.input_dim() || !masked_input.same_shape(target))
    throw std::invalid_argument("vae_loss: inputs must be Bx" + std::to_string(model.input_dim()));
  if (noise.rows() != masked_input.rows() || noise.cols() != model.latent_dim)
    throw std::invalid_argument("vae_loss: noise must be Bx" + std::to_string(model.latent_dim));
  const Encoding e = encode(model, vars, tape.constant(masked_input));
  const Var std_dev = diff::exp(diff::scale(e.log_variance, 0.5));
  const Var z = e.mean + diff::mul(std_dev, tape.constant(noise));
  const Var recon_x = decode(model, vars, z);
  const double rows = static_cast<double>(masked_input.rows());
  VaeLoss out;
  out.kl = kl_on_tape(e.mean, e.log_variance);
  out.reconstruction = diff::scale(diff::sum_squares(recon_x - tape.constant(target)), 1.0 / rows);
  out.total = diff::scale(out.kl, lambda_kl) + out.reconstruction;
  return out;
}

void PriorTrainConfig::validate() const {
  if (batch_size == 0) throw std::invalid_argument("prior config: batch size must be positive");
  if (!(learning_rate > 0)) throw std::invalid_argument("prior config: learning rate must be positive");
  if (epochs == 0) throw std::invalid_argument("prior config: epochs must be positive");
  if (!(lambda_kl >= 0)) throw std::invalid_argument("prior config: KL weight must be non-negative");
  if (!(mask_rate >= 0 && mask_rate < 1)) throw std::invalid_argument("prior config: mask rate must be in [0, 1)");
  if (latent_dim == 0 || hidden_dim == 0) throw std::invalid_argument("prior config: layer sizes must be positive");
  if (!(units_per_meter > 0)) throw std::invalid_argument("prior config: units per meter must be positive");
}

Mat root_center(std::span<const Mat> poses, std::size_t root_joint) {
  if (poses.empty()) return Mat(0, 0);
  const std::size_t j = poses.front().rows();
  if (root_joint >= j) throw std::invalid_argument("root_center: root joint out of range");
  Mat out(poses.size(), 3 * j);
  for (std::size_t n = 0; n < poses.size(); ++n) {
    const Mat& p = poses[n];
    if (p.rows() != j || p.cols() != 3)
      throw std::invalid_argument("root_center: pose " + std::to_string(n) + " is " + p.shape_string() +
                                  ", expected " + std::to_string(j) + "x3");
    for (std::size_t k = 0; k < j; ++k)
      for (std::size_t a = 0; a < 3; ++a) out(n, 3 * k + a) = p(k, a) - p(root_joint, a);
  }
  if (!all_finite(out)) throw std::invalid_argument("root_center: poses contain non-finite values");
  return out;
}

std::size_t masked_joint_count(double mask_rate, std::size_t joints) {
  return static_cast<std::size_t>(std::llround(mask_rate * static_cast<double>(joints)));
}

PriorTrainResult train_prior(std::span<const Mat> poses, const PriorTrainConfig& cfg) {
  cfg.validate();
  if (poses.size() < cfg.batch_size)
    throw std::invalid_argument("train_prior: " + std::to_string(poses.size()) + " poses is fewer than batch size " +
                                std::to_string(cfg.batch_size));
  const Mat x = root_center(poses);
  const std::size_t n = x.rows(), dim = x.cols(), joints = dim / 3;

  PriorTrainResult result;
  PriorModel& model = result.model;
  model = PriorModel::init(joints, cfg.latent_dim, cfg.hidden_dim, cfg.seed);
  model.units_per_meter = cfg.units_per_meter;
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < dim; ++c) model.mean_pose(0, c) += x(r, c) / static_cast<double>(n);

  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::vector<double> lrs(model.params.size(), cfg.learning_rate);
  diff::AdamState adam = diff::AdamState::init(model.params, lrs);
  const std::size_t hide = masked_joint_count(cfg.mask_rate, joints);
  const std::size_t batches = n / cfg.batch_size;
  std::vector<std::size_t> order(n), joint_ids(joints);
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t b = 0; b < batches; ++b) {
      Mat target(cfg.batch_size, dim), input(cfg.batch_size, dim), noise(cfg.batch_size, cfg.latent_dim);
      for (std::size_t i = 0; i < cfg.batch_size; ++i) {
        const std::size_t src = order[b * cfg.batch_size + i];
        for (std::size_t c = 0; c < dim; ++c) target(i, c) = input(i, c) = x(src, c) * cfg.units_per_meter;
        std::iota(joint_ids.begin(), joint_ids.end(), 0);
        for (std::size_t k = 0; k < hide; ++k) {
          std::uniform_int_distribution<std::size_t> pick(k, joints - 1);
          std::swap(joint_ids[k], joint_ids[pick(rng)]);
          for (std::size_t a = 0; a < 3; ++a) input(i, 3 * joint_ids[k] + a) = 0.0;
        }
      }
      for (auto& v : noise.storage()) v = normal(rng);

      Tape tape;
      const PriorVars vars = bind_prior(tape, model, true);
      std::vector<Mat> grads;
      try {
        const VaeLoss loss = vae_loss(model, vars, input, target, noise, cfg.lambda_kl);
        const PriorStep rec{epoch, b, loss.total.scalar(), loss.kl.scalar(), loss.reconstruction.scalar()};
        if (!std::isfinite(rec.total)) throw PriorError(epoch, b, "loss is " + std::to_string(rec.total));
        result.trace.push_back(rec);
        grads = diff::gradients(loss.total, vars.params);
      } catch (const diff::NonFiniteError& e) {
        throw PriorError(epoch, b, e.what());
      }
      for (const auto& g : grads)
        if (!all_finite(g)) throw PriorError(epoch, b, "non-finite gradient");
      diff::adam_step(adam, model.params, grads);
    }
    result.epoch_rms.push_back(reconstruction_rms(model, poses));
  }
  return result;
}

namespace {

Mat posterior_mean_decode(const PriorModel& model, const Mat& input) {
  Tape tape;
  const PriorVars vars = bind_prior(tape, model, false);
  const Encoding e = encode(model, vars, tape.constant(input));
  return decode(model, vars, e.mean).value();
}

}  // namespace

RefineResult refine(const PriorModel& model, const Mat& pose, const std::vector<bool>& visible) {
  if (pose.rows() != model.joints || pose.cols() != 3)
    throw std::invalid_argument("refine: pose is " + pose.shape_string() + ", prior expects " +
                                std::to_string(model.joints) + "x3");
  if (visible.size() != model.joints)
    throw std::invalid_argument("refine: visibility has " + std::to_string(visible.size()) + " entries, expected " +
                                std::to_string(model.joints));
  RefineResult out{pose, std::none_of(visible.begin(), visible.end(), [](bool v) { return v; })};
  if (std::all_of(visible.begin(), visible.end(), [](bool v) { return v; })) return out;

  double offset[3] = {0, 0, 0};
  if (visible[model.root_joint])
    for (int a = 0; a < 3; ++a) offset[a] = pose(model.root_joint, a);
  Mat input(1, model.input_dim());
  for (std::size_t j = 0; j < model.joints; ++j)
    if (visible[j])
      for (std::size_t a = 0; a < 3; ++a) input(0, 3 * j + a) = (pose(j, a) - offset[a]) * model.units_per_meter;
  const Mat decoded = posterior_mean_decode(model, input);
  for (std::size_t j = 0; j < model.joints; ++j)
    if (!visible[j])
      for (std::size_t a = 0; a < 3; ++a) out.pose(j, a) = decoded(0, 3 * j + a) / model.units_per_meter + offset[a];
  return out;
}

std::vector<RefineResult> refine_batch(const PriorModel& model, std::span<const Mat> poses,
                                       std::span<const std::vector<bool>> visible, unsigned threads) {
  if (poses.size() != visible.size())
    throw std::invalid_argument("refine_batch: " + std::to_string(poses.size()) + " poses but " +
                                std::to_string(visible.size()) + " visibility vectors");
  std::vector<RefineResult> out(poses.size());
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, std::max<std::size_t>(1, poses.size())));
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < poses.size();) {
      try {
        out[i] = refine(model, poses[i], visible[i]);
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
  return out;
}

double reconstruction_rms(const PriorModel& model, std::span<const Mat> poses) {
  if (poses.empty()) return 0.0;
  const Mat x = root_center(poses, model.root_joint);
  Mat input = x;
  for (auto& v : input.storage()) v *= model.units_per_meter;
  const Mat decoded = posterior_mean_decode(model, input);
  double ss = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = decoded[i] / model.units_per_meter - x[i];
    ss += d * d;
  }
  return std::sqrt(ss / static_cast<double>(x.size()));
}

io::json prior_to_json(const PriorModel& model) {
  model.validate();
  io::json layers = io::json::array();
  const auto shapes = shapes_of(model);
  for (std::size_t l = 0; l < shapes.size(); ++l) {
    const bool enc = l < kEncoderLayers;
    layers.push_back({{"name", std::string(enc ? "encoder." : "decoder.") + std::to_string(enc ? l : l - kEncoderLayers)},
                      {"in", shapes[l].in},
                      {"out", shapes[l].out},
                      {"relu", shapes[l].relu},
                      {"weight", model.weight(l).storage()},
                      {"bias", model.bias(l).storage()}});
  }
  return {{"format", "handsyn-prior"},
          {"version", 1},
          {"joints", model.joints},
          {"latentDim", model.latent_dim},
          {"hiddenDim", model.hidden_dim},
          {"rootJoint", model.root_joint},
          {"unitsPerMeter", model.units_per_meter},
          {"meanPose", model.mean_pose.storage()},
          {"layers", std::move(layers)}};
}

PriorModel prior_from_json(const io::json& j) {
  try {
    if (io::require(j, "format").get<std::string>() != "handsyn-prior")
      throw io::SchemaError("prior: format must be \"handsyn-prior\"");
    if (io::require(j, "version").get<int>() != 1) throw io::SchemaError("prior: unsupported version");
    PriorModel m;
    m.joints = io::require(j, "joints").get<std::size_t>();
    m.latent_dim = io::require(j, "latentDim").get<std::size_t>();
    m.hidden_dim = io::require(j, "hiddenDim").get<std::size_t>();
    m.root_joint = io::require(j, "rootJoint").get<std::size_t>();
    m.units_per_meter = io::require(j, "unitsPerMeter").get<double>();
    m.mean_pose = Mat(1, 3 * m.joints, io::require(j, "meanPose").get<std::vector<double>>());
    const auto shapes = shapes_of(m);
    const auto& layers = io::require(j, "layers");
    if (!layers.is_array() || layers.size() != shapes.size())
      throw io::SchemaError("prior: expected " + std::to_string(shapes.size()) + " layers");
    for (std::size_t l = 0; l < shapes.size(); ++l) {
      m.params.emplace_back(shapes[l].in, shapes[l].out, io::require(layers[l], "weight").get<std::vector<double>>());
      m.params.emplace_back(1, shapes[l].out, io::require(layers[l], "bias").get<std::vector<double>>());
    }
    m.validate();
    for (const auto& p : m.params)
      if (!all_finite(p)) throw io::SchemaError("prior: non-finite weights");
    return m;
  } catch (const io::json::exception& e) {
    throw io::SchemaError(std::string("prior: malformed document: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw io::SchemaError(std::string("prior: ") + e.what());
  }
}

void save_prior(const PriorModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << prior_to_json(model).dump() << '\n';
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

PriorModel load_prior(const std::filesystem::path& path) { return prior_from_json(io::read_json_file(path)); }

ToyPoseManifold::ToyPoseManifold(Mat base_joints, std::uint64_t structure_seed, double amplitude)
    : base_(std::move(base_joints)) {
  if (base_.cols() != 3 || base_.rows() == 0) throw std::invalid_argument("toy manifold: base pose must be Jx3");
  const std::size_t j = base_.rows();
  for (std::size_t k = j; k-- > 0;)
    for (std::size_t a = 0; a < 3; ++a) base_(k, a) -= base_(0, a);
  std::mt19937_64 rng(structure_seed);
  std::normal_distribution<double> amp(0.0, amplitude);
  std::uniform_real_distribution<double> phase(0.0, 2 * std::numbers::pi);
  amp_a_ = Mat(j, 3);
  amp_b_ = Mat(j, 3);
  phase_a_.assign(j, 0.0);
  phase_b_.assign(j, 0.0);
  for (std::size_t k = 1; k < j; ++k) {
    for (std::size_t a = 0; a < 3; ++a) {
      amp_a_(k, a) = amp(rng);
      amp_b_(k, a) = amp(rng);
    }
    phase_a_[k] = phase(rng);
    phase_b_[k] = phase(rng);
  }
}

ToyPoseManifold ToyPoseManifold::from_asset(std::size_t joints, std::uint64_t structure_seed) {
  AssetOptions opts;
  opts.joints = joints;
  const HandModel model = build_hand_asset(opts);
  return ToyPoseManifold(regress_joints(model.rest_vertices, model), structure_seed);
}

Mat ToyPoseManifold::pose(double t1, double t2) const {
  Mat p = base_;
  for (std::size_t k = 1; k < p.rows(); ++k) {
    const double sa = std::sin(t1 + phase_a_[k]), sb = std::sin(t2 + phase_b_[k]);
    for (std::size_t a = 0; a < 3; ++a) p(k, a) += amp_a_(k, a) * sa + amp_b_(k, a) * sb;
  }
  return p;
}

std::vector<Mat> ToyPoseManifold::sample(std::size_t count, std::uint64_t seed) const {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> t(0.0, 2 * std::numbers::pi);
  std::vector<Mat> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const double t1 = t(rng), t2 = t(rng);
    out.push_back(pose(t1, t2));
  }
  return out;
}

}  // namespace handsyn
