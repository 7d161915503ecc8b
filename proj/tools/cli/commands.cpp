#include "commands.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>

#include "handsyn/asset_builder.hpp"
#include "handsyn/compose.hpp"
#include "handsyn/fitting.hpp"
#include "handsyn/metrics.hpp"
#include "handsyn/occlusion.hpp"
#include "handsyn/prior.hpp"
#include "handsyn/spectrum.hpp"

namespace handsyn::cli {

namespace {

HandModel load_checked_model(Context& ctx, const fs::path& path) {
  ctx.add_input("model", path);
  return load_model(path);
}

io::json camera_json(const Camera& c) {
  return {{"fx", c.fx}, {"fy", c.fy}, {"cx", c.cx}, {"cy", c.cy}, {"width", c.width}, {"height", c.height}};
}

std::string zero_pad(std::size_t i, int width) {
  std::string s = std::to_string(i);
  return std::string(width > static_cast<int>(s.size()) ? width - s.size() : 0, '0') + s;
}

/// Processes records in fixed-size chunks: compute in parallel, then emit in record order.
template <class Result>
void chunked(Context& ctx, const std::vector<ManifestRecord>& records,
             const std::function<Result(const ManifestRecord&)>& compute,
             const std::function<void(const ManifestRecord&, Result&)>& emit) {
  const std::size_t chunk = std::max<std::size_t>(16, 4 * static_cast<std::size_t>(ctx.threads()));
  for (std::size_t start = 0; start < records.size(); start += chunk) {
    const std::size_t n = std::min(chunk, records.size() - start);
    std::vector<std::optional<Result>> results(n);
    const auto errors = parallel_for(n, ctx.threads(), [&](std::size_t i) { results[i] = compute(records[start + i]); });
    for (std::size_t i = 0; i < n; ++i) {
      if (!errors[i].empty()) ctx.fail(records[start + i].id, errors[i]);
      else emit(records[start + i], *results[i]);
    }
  }
}

// Flat colors for the toy renders, one per part.
constexpr double kPartColor[kPartCount][3] = {{0.85, 0.35, 0.30}, {0.35, 0.75, 0.35}, {0.30, 0.45, 0.85},
                                              {0.85, 0.75, 0.25}, {0.65, 0.35, 0.75}, {0.90, 0.70, 0.55}};

ImageBuffer smooth_background(std::size_t h, std::size_t w, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> amp(0.0, 0.15), phase(0.0, 2 * std::numbers::pi);
  std::uniform_int_distribution<int> freq(-3, 3);
  ImageBuffer img(h, w, 3, 0.5);
  for (std::size_t ch = 0; ch < 3; ++ch)
    for (int m = 0; m < 3; ++m) {
      const double a = amp(rng), p = phase(rng);
      const int fx = freq(rng), fy = freq(rng);
      for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < w; ++c)
          img.at(ch, r, c) += a * std::sin(2 * std::numbers::pi * (fx * (c + 0.5) / w + fy * (r + 0.5) / h) + p);
    }
  for (double& v : img.storage()) v = std::clamp(v, 0.0, 1.0);
  return img;
}

}  // namespace

void cmd_build_asset(Context& ctx, const BuildAssetOptions& o) {
  AssetOptions opts;
  opts.joints = o.joints;
  ctx.config = {{"joints", o.joints}};
  const HandModel model = build_hand_asset(opts);
  io::write_json_file(ctx.output("asset.json"), model_to_json(model));
}

void cmd_make_toy(Context& ctx, const MakeToyOptions& o) {
  const HandModel model = load_checked_model(ctx, o.model);
  ctx.config = {{"count", o.count}, {"trainCount", o.train_count}, {"width", o.width}, {"height", o.height},
                {"focal", o.focal}};
  Camera cam;
  cam.fx = cam.fy = o.focal;
  cam.cx = 0.5 * static_cast<double>(o.width);
  cam.cy = 0.5 * static_cast<double>(o.height);
  cam.width = o.width;
  cam.height = o.height;
  cam.validate();

  struct Scene {
    io::json pose;
    ImageBuffer synthetic, real;
    MaskBuffer object, arm, hand;
  };
  std::vector<std::string> ids(o.count);
  for (std::size_t i = 0; i < o.count; ++i) ids[i] = "toy_" + zero_pad(i, 4);
  std::vector<Scene> scenes(o.count);
  const auto errors = parallel_for(o.count, ctx.threads(), [&](std::size_t i) {
    const std::uint64_t rs = record_seed(ctx.seed(), ids[i]);
    const PoseState state = sample_target_state(model, rs);
    const LbsResult posed = lbs_forward(model, state);
    const Mesh mesh = make_mesh(model, posed.vertices);
    const RenderBuffers buf = rasterize(mesh, cam);
    std::mt19937_64 rng(rs ^ 0x6a09e667f3bcc908ull);
    Scene& s = scenes[i];
    s.pose = {{"state", pose_state_to_json(state)}, {"joints", io::mat_to_json(posed.joints)},
              {"vertices", io::mat_to_json(posed.vertices)}};
    s.real = smooth_background(o.height, o.width, rng);
    s.synthetic = smooth_background(o.height, o.width, rng);
    s.hand = MaskBuffer(o.height, o.width);
    for (std::size_t r = 0; r < o.height; ++r)
      for (std::size_t c = 0; c < o.width; ++c) {
        const std::int8_t part = buf.part_at(r, c);
        if (part == kBackground) continue;
        s.hand.set(r, c, true);
        for (std::size_t ch = 0; ch < 3; ++ch) s.synthetic.at(ch, r, c) = kPartColor[part][ch];
      }

    // Object: a disc over a random non-root joint; small radii leave the hand unoccluded.
    std::uniform_int_distribution<std::size_t> pick(1, model.num_joints() - 1);
    std::uniform_real_distribution<double> radius_dist(0.0, 45.0);
    const auto centre = cam.project(posed.joints.row_span(pick(rng)).data());
    const double radius = radius_dist(rng);
    s.object = MaskBuffer(o.height, o.width);
    if (radius >= 6.0)
      for (std::size_t r = 0; r < o.height; ++r)
        for (std::size_t c = 0; c < o.width; ++c) {
          const double du = c + 0.5 - centre[0], dv = r + 0.5 - centre[1];
          if (du * du + dv * dv <= radius * radius) s.object.set(r, c, true);
        }

    // Forearm: a band leaving the wrist away from the fingers.
    const auto wrist = cam.project(posed.joints.row_span(0).data());
    double mu = 0, mv = 0;
    for (std::size_t j = 0; j < posed.joints.rows(); ++j) {
      const auto p = cam.project(posed.joints.row_span(j).data());
      mu += p[0];
      mv += p[1];
    }
    mu /= static_cast<double>(posed.joints.rows());
    mv /= static_cast<double>(posed.joints.rows());
    double du = wrist[0] - mu, dv = wrist[1] - mv;
    const double len = std::hypot(du, dv);
    du = len > 0 ? du / len : 0.0;
    dv = len > 0 ? dv / len : 1.0;
    s.arm = MaskBuffer(o.height, o.width);
    for (std::size_t r = 0; r < o.height; ++r)
      for (std::size_t c = 0; c < o.width; ++c) {
        const double pu = c + 0.5 - wrist[0], pv = r + 0.5 - wrist[1];
        const double along = pu * du + pv * dv, across = std::abs(pv * du - pu * dv);
        if (along >= -10.0 && across <= 20.0 && !s.hand.at(r, c)) s.arm.set(r, c, true);
      }
  });
  for (std::size_t i = 0; i < o.count; ++i)
    if (!errors[i].empty()) throw std::runtime_error("toy scene " + ids[i] + ": " + errors[i]);

  std::vector<io::json> manifest;
  for (std::size_t i = 0; i < o.count; ++i) {
    const std::string& id = ids[i];
    const Scene& s = scenes[i];
    io::write_json_file(ctx.output("poses/" + id + ".json"), s.pose);
    write_image(s.synthetic, ctx.output("images/" + id + "_syn.png"));
    write_image(s.real, ctx.output("images/" + id + "_real.png"));
    write_mask(s.object, ctx.output("masks/" + id + "_object.png"));
    write_mask(s.arm, ctx.output("masks/" + id + "_arm.png"));
    write_mask(s.hand, ctx.output("masks/" + id + "_hand.png"));
    manifest.push_back({{"id", id},
                        {"split", "test"},
                        {"image", "images/" + id + "_syn.png"},
                        {"syntheticImage", "images/" + id + "_syn.png"},
                        {"realImage", "images/" + id + "_real.png"},
                        {"objectMask", "masks/" + id + "_object.png"},
                        {"armMask", "masks/" + id + "_arm.png"},
                        {"handMask", "masks/" + id + "_hand.png"},
                        {"pose", "poses/" + id + ".json"},
                        {"camera", camera_json(cam)}});
  }
  io::write_jsonl(ctx.output("manifest.jsonl"), manifest);

  std::vector<io::json> train(o.train_count);
  const auto train_errors = parallel_for(o.train_count, ctx.threads(), [&](std::size_t i) {
    const std::string id = "train_" + zero_pad(i, 5);
    const LbsResult posed = lbs_forward(model, sample_target_state(model, record_seed(ctx.seed(), id)));
    train[i] = {{"id", id}, {"joints", io::mat_to_json(posed.joints)}};
  });
  for (const auto& e : train_errors)
    if (!e.empty()) throw std::runtime_error("training pose: " + e);
  io::write_jsonl(ctx.output("train_poses.jsonl"), train);
}

void cmd_fit(Context& ctx, const FitOptions& o) {
  FitConfig cfg;
  cfg.coarse.epochs = o.coarse_epochs;
  cfg.fine.epochs = o.fine_epochs;
  cfg.coarse.iters_per_epoch = cfg.fine.iters_per_epoch = o.iters_per_epoch;
  cfg.coarse.lr_decay_every = cfg.fine.lr_decay_every = o.decay_every;
  cfg.validate();
  const HandModel model = load_checked_model(ctx, o.model);
  const auto records = load_manifest(ctx, o.manifest, {"pose"});
  ctx.config = {{"coarseEpochs", o.coarse_epochs}, {"fineEpochs", o.fine_epochs},
                {"itersPerEpoch", o.iters_per_epoch}, {"decayEvery", o.decay_every}};

  std::vector<io::json> lines;
  chunked<io::json>(
      ctx, records,
      [&](const ManifestRecord& rec) {
        const PoseFile target = read_pose_file(*rec.pose, &model);
        if (target.vertices.rows() != model.num_vertices())
          throw std::invalid_argument("target has " + std::to_string(target.vertices.rows()) + " vertices, model has " +
                                      std::to_string(model.num_vertices()));
        const FitResult r = fit(model, target.vertices, target.joints, cfg);
        const LbsResult posed = lbs_forward(model, r.state);
        return io::json{{"id", rec.id},
                        {"state", pose_state_to_json(r.state)},
                        {"vertexRms", r.fine.vertex_rms},
                        {"coarseVertexRms", r.coarse.vertex_rms},
                        {"joints", io::mat_to_json(posed.joints)},
                        {"vertices", io::mat_to_json(posed.vertices)}};
      },
      [&](const ManifestRecord&, io::json& line) { lines.push_back(std::move(line)); });
  io::write_jsonl(ctx.output("fits.jsonl"), lines);
}

void cmd_label_occlusion(Context& ctx, const LabelOptionsCli& o) {
  LabelOptions opts;
  opts.threshold = o.threshold;
  opts.auto_scale = o.auto_scale;
  opts.depth_epsilon = o.depth_epsilon;
  opts.count_self_occlusion = !o.object_only;
  const HandModel model = load_checked_model(ctx, o.model);
  const auto records = load_manifest(ctx, o.manifest, {"pose", "camera"});
  ctx.config = {{"threshold", o.threshold}, {"autoScale", o.auto_scale}, {"countSelfOcclusion", !o.object_only}, {"depthEpsilon", o.depth_epsilon},
                {"jointEpsilon", o.joint_epsilon}};

  std::vector<io::json> lines;
  chunked<io::json>(
      ctx, records,
      [&](const ManifestRecord& rec) {
        const PoseFile pf = read_pose_file(*rec.pose, &model);
        if (pf.vertices.rows() != model.num_vertices())
          throw std::invalid_argument("pose has " + std::to_string(pf.vertices.rows()) + " vertices, model has " +
                                      std::to_string(model.num_vertices()));
        const Camera& cam = *rec.camera;
        MaskBuffer mask(cam.height, cam.width);
        if (rec.object_mask) {
          mask = read_mask(*rec.object_mask);
          if (mask.height() != cam.height || mask.width() != cam.width)
            throw std::invalid_argument("object mask is " + std::to_string(mask.width()) + "x" +
                                        std::to_string(mask.height()) + ", camera image is " +
                                        std::to_string(cam.width) + "x" + std::to_string(cam.height));
        }
        const Mesh mesh = make_mesh(model, pf.vertices);
        const RenderBuffers buf = rasterize(mesh, cam);
        const OcclusionLabel label = label_occlusion(mesh, cam, buf, mask, opts);
        const std::vector<bool> visible = joint_visibility(buf, pf.joints, cam, mask, o.joint_epsilon);
        return io::json{{"id", rec.id},
                        {"level", label.level},
                        {"partOccluded", label.part_occluded},
                        {"jointVisible", visible},
                        {"occludedCounts", label.occluded_counts},
                        {"objectCounts", label.object_counts},
                        {"selfCounts", label.self_counts},
                        {"outOfViewCounts", label.out_of_view_counts},
                        {"threshold", label.threshold}};
      },
      [&](const ManifestRecord&, io::json& line) { lines.push_back(std::move(line)); });
  io::write_jsonl(ctx.output("labels.jsonl"), lines);
}

void cmd_train_prior(Context& ctx, const TrainPriorOptions& o) {
  PriorTrainConfig cfg;
  cfg.epochs = o.epochs;
  cfg.batch_size = o.batch;
  cfg.latent_dim = o.latent;
  cfg.hidden_dim = o.hidden;
  cfg.learning_rate = o.lr;
  cfg.lambda_kl = o.lambda_kl;
  cfg.mask_rate = o.mask_rate;
  cfg.seed = ctx.seed();
  cfg.validate();
  ctx.add_input("poses", o.poses);
  const auto entries = read_pose_collection(o.poses);
  std::vector<Mat> poses;
  poses.reserve(entries.size());
  for (const auto& e : entries) poses.push_back(e.joints);
  ctx.config = {{"epochs", o.epochs}, {"batchSize", o.batch}, {"latentDim", o.latent}, {"hiddenDim", o.hidden},
                {"learningRate", o.lr}, {"lambdaKl", o.lambda_kl}, {"maskRate", o.mask_rate}};

  const PriorTrainResult result = train_prior(poses, cfg);
  save_prior(result.model, ctx.output("prior.json"));
  io::json log = {{"poses", poses.size()}, {"steps", result.trace.size()}, {"epochRms", result.epoch_rms}};
  if (!result.trace.empty()) {
    const PriorStep& last = result.trace.back();
    log["finalStep"] = {{"total", last.total}, {"kl", last.kl}, {"reconstruction", last.reconstruction}};
  }
  io::write_json_file(ctx.output("training.json"), log);
}

void cmd_refine(Context& ctx, const RefineOptions& o) {
  ctx.add_input("prior", o.prior);
  ctx.add_input("poses", o.poses);
  ctx.add_input("labels", o.labels);
  const PriorModel model = load_prior(o.prior);
  const auto poses = read_pose_collection(o.poses);
  std::map<std::string, std::vector<bool>> visibility;
  for (const auto& j : io::read_jsonl(o.labels)) {
    const auto& id = io::require(j, "id");
    const auto& vis = io::require(j, "jointVisible");
    if (!id.is_string() || !vis.is_array()) throw io::SchemaError("labels: 'id' must be a string, 'jointVisible' an array");
    visibility[id.get<std::string>()] = vis.get<std::vector<bool>>();
  }

  std::vector<io::json> lines(poses.size());
  const auto errors = parallel_for(poses.size(), ctx.threads(), [&](std::size_t i) {
    const auto it = visibility.find(poses[i].id);
    if (it == visibility.end()) throw std::invalid_argument("no joint visibility label");
    const RefineResult r = refine(model, poses[i].joints, it->second);
    const auto hidden = std::count(it->second.begin(), it->second.end(), false);
    lines[i] = {{"id", poses[i].id}, {"joints", io::mat_to_json(r.pose)}, {"hiddenJoints", hidden},
                {"allHidden", r.all_hidden}};
  });
  std::vector<io::json> kept;
  for (std::size_t i = 0; i < poses.size(); ++i) {
    if (!errors[i].empty()) ctx.fail(poses[i].id, errors[i]);
    else kept.push_back(std::move(lines[i]));
  }
  io::write_jsonl(ctx.output("refined.jsonl"), kept);
}

void cmd_evaluate(Context& ctx, const EvaluateOptions& o) {
  std::optional<HandModel> model;
  if (!o.model.empty()) model = load_checked_model(ctx, o.model);
  ctx.add_input("predictions", o.predictions);
  ctx.add_input("labels", o.labels);
  const auto records = load_manifest(ctx, o.manifest, {"pose"});
  const auto preds = read_pose_collection(o.predictions);

  std::vector<PoseRecord> pred_records, gt_records;
  for (const auto& p : preds) pred_records.push_back({p.id, p.joints, p.vertices});
  for (const auto& rec : records) {
    const PoseFile pf = read_pose_file(*rec.pose, model ? &*model : nullptr);
    gt_records.push_back({rec.id, pf.joints, pf.vertices});
  }
  std::map<std::string, int> levels;
  for (const auto& j : io::read_jsonl(o.labels)) {
    const auto& id = io::require(j, "id");
    const auto& level = io::require(j, "level");
    if (!id.is_string() || !level.is_number_integer()) throw io::SchemaError("labels: 'id' must be a string, 'level' an integer");
    levels[id.get<std::string>()] = level.get<int>();
  }
  std::vector<LevelLabel> labels;
  for (const auto& g : gt_records) {
    const auto it = levels.find(g.id);
    labels.push_back(it == levels.end() ? LevelLabel{"(missing)", 0} : LevelLabel{g.id, it->second});
  }

  std::optional<std::vector<std::size_t>> map;
  if (!o.map.empty()) map = o.map;
  else if (model && !model->topology_map.empty()) map = model->topology_map;
  ctx.config = {{"topologyMap", map ? io::json(*map) : io::json(nullptr)}};

  const EvalReport report = evaluate(pred_records, gt_records, labels, map, ctx.threads());
  io::write_json_file(ctx.output("eval_report.json"), eval_report_to_json(report));
  std::ofstream(ctx.output("eval_table.csv"), std::ios::binary) << eval_report_table(report);
}

void cmd_augment(Context& ctx, const AugmentOptions& o) {
  AmpAugParams base;
  base.alpha = o.alpha;
  base.beta = o.beta;
  base.k = o.k;
  base.clamp_nonneg = !o.no_clamp;
  base.validate();
  const auto records = load_manifest(ctx, o.manifest, {"image"});
  ctx.config = {{"alpha", o.alpha}, {"beta", o.beta}, {"k", o.k}, {"clampNonnegative", base.clamp_nonneg}};
  chunked<ImageBuffer>(
      ctx, records,
      [&](const ManifestRecord& rec) {
        AmpAugParams p = base;
        p.seed = record_seed(ctx.seed(), rec.id);
        return amp_augment(read_image(*rec.image), p);
      },
      [&](const ManifestRecord& rec, ImageBuffer& img) { write_image(img, ctx.output("augmented/" + rec.id + ".png")); });
}

void cmd_analyze_spectrum(Context& ctx, const SpectrumOptions& o) {
  const auto records = load_manifest(ctx, o.manifest, {"image"});
  ctx.config = {{"bands", o.bands}};
  const SpectrumProfile prof =
      band_variance(records.size(), [&](std::size_t i) { return read_image(*records[i].image); }, o.bands, ctx.threads());
  if (prof.single_image_warning)
    ctx.err() << "handsyn analyze-spectrum: warning: a single image gives no across-image variance\n";
  io::write_json_file(ctx.output("spectrum.json"), {{"imageCount", prof.image_count},
                                                    {"bandEdges", prof.band_edges},
                                                    {"meanLogAmplitude", prof.mean_amplitude},
                                                    {"variance", prof.variance},
                                                    {"singleImageWarning", prof.single_image_warning}});
  std::ostringstream csv;
  csv.precision(12);
  csv << "band,low,high,mean_log_amplitude,variance\n";
  for (std::size_t b = 0; b < prof.mean_amplitude.size(); ++b)
    csv << b << ',' << prof.band_edges[b] << ',' << prof.band_edges[b + 1] << ',' << prof.mean_amplitude[b] << ','
        << prof.variance[b] << '\n';
  std::ofstream(ctx.output("spectrum.csv"), std::ios::binary) << csv.str();
}

void cmd_compose(Context& ctx, const ComposeOptions& o) {
  const bool random = o.mode == "random-fill";
  std::set<std::string> required = {"syntheticImage", "realImage", "objectMask", "armMask"};
  if (random && !o.no_fill_arm) required.insert("handMask");
  const auto records = load_manifest(ctx, o.manifest, required);
  ctx.config = {{"mode", o.mode}, {"fillArm", !o.no_fill_arm}, {"fillObject", !o.no_fill_object}};
  chunked<ImageBuffer>(
      ctx, records,
      [&](const ManifestRecord& rec) {
        CompositionJob job;
        job.syn = read_image(*rec.synthetic_image);
        job.real = read_image(*rec.real_image);
        job.object_mask = read_mask(*rec.object_mask);
        job.arm_mask = read_mask(*rec.arm_mask);
        if (rec.hand_mask) job.hand_mask = read_mask(*rec.hand_mask);
        job.mode = random ? ComposeMode::RandomFill : ComposeMode::Segmented;
        job.fill_arm = !o.no_fill_arm;
        job.fill_object = !o.no_fill_object;
        job.seed = record_seed(ctx.seed(), rec.id);
        return run_composition(job);
      },
      [&](const ManifestRecord& rec, ImageBuffer& img) { write_image(img, ctx.output("composed/" + rec.id + ".png")); });
}

}  // namespace handsyn::cli
