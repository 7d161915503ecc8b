#include <CLI11.hpp>
#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <iostream>

#include "commands.hpp"

namespace handsyn::cli {

namespace {

struct Common {
  std::uint64_t seed = 0;
  unsigned threads = 0;
  std::string out;
};

void add_common(CLI::App* sub, Common& c, bool needs_output = true) {
  sub->add_option("--seed", c.seed, "Global seed; per-record streams derive from it and the record id");
  sub->add_option("--threads", c.threads, "Worker threads (default: $HANDSYN_THREADS, else all cores)");
  if (needs_output) sub->add_option("--out", c.out, "Output directory (default: $HANDSYN_OUTPUT_DIR)");
}

unsigned resolve_threads(unsigned flag) {
  if (flag > 0) return flag;
  if (const char* env = std::getenv("HANDSYN_THREADS"); env && *env) {
    unsigned v = 0;
    const char* end = env + std::char_traits<char>::length(env);
    const auto [ptr, ec] = std::from_chars(env, end, v);
    if (ec != std::errc() || ptr != end || v == 0)
      throw UsageError(std::string("HANDSYN_THREADS must be a positive integer, got '") + env + "'");
    return v;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

fs::path resolve_output(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("HANDSYN_OUTPUT_DIR"); env && *env) return env;
  throw UsageError("no output directory: pass --out or set HANDSYN_OUTPUT_DIR");
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Synthetic hand data pipeline: asset building, fitting, augmentation, compositing, occlusion "
               "labelling, pose prior and evaluation.",
               "handsyn"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string("handsyn ") + kToolVersion);

  Common common;
  BuildAssetOptions build;
  MakeToyOptions toy;
  FitOptions fit;
  LabelOptionsCli label;
  TrainPriorOptions train;
  RefineOptions refine_opts;
  EvaluateOptions eval;
  AugmentOptions augment;
  SpectrumOptions spectrum;
  ComposeOptions compose_opts;
  std::string validate_manifest_path;
  std::vector<std::string> validate_required;

  auto* s_build = app.add_subcommand("build-asset", "Write the procedural hand model asset");
  s_build->add_option("--joints", build.joints, "Skeleton size")->check(CLI::IsMember({21, 25}));
  add_common(s_build, common);

  auto* s_toy = app.add_subcommand("make-toy", "Generate toy scenes, a manifest and training poses from an asset");
  s_toy->add_option("--model", toy.model, "Model asset")->required()->check(CLI::ExistingFile);
  s_toy->add_option("--count", toy.count, "Scenes");
  s_toy->add_option("--train-count", toy.train_count, "Training poses for the prior");
  s_toy->add_option("--width", toy.width)->check(CLI::PositiveNumber);
  s_toy->add_option("--height", toy.height)->check(CLI::PositiveNumber);
  s_toy->add_option("--focal", toy.focal, "Focal length in pixels")->check(CLI::PositiveNumber);
  add_common(s_toy, common);

  auto* s_fit = app.add_subcommand("fit", "Fit model parameters to the target meshes named by a manifest");
  s_fit->add_option("--model", fit.model)->required()->check(CLI::ExistingFile);
  s_fit->add_option("--manifest", fit.manifest)->required()->check(CLI::ExistingFile);
  s_fit->add_option("--coarse-epochs", fit.coarse_epochs);
  s_fit->add_option("--fine-epochs", fit.fine_epochs);
  s_fit->add_option("--iters-per-epoch", fit.iters_per_epoch, "Both stages");
  s_fit->add_option("--decay-every", fit.decay_every, "Learning-rate division period, both stages");
  add_common(s_fit, common);

  auto* s_label = app.add_subcommand("label-occlusion", "Per-part occlusion flags, level and joint visibility");
  s_label->add_option("--model", label.model)->required()->check(CLI::ExistingFile);
  s_label->add_option("--manifest", label.manifest)->required()->check(CLI::ExistingFile);
  s_label->add_option("--threshold", label.threshold, "Occluded vertices needed to flag a part");
  s_label->add_flag("--auto-scale", label.auto_scale, "Scale the threshold by vertex count");
  s_label->add_flag("--object-only", label.object_only,
                    "Flag parts from object-masked and out-of-view vertices; self-occlusion is still reported");
  s_label->add_option("--depth-epsilon", label.depth_epsilon, "Self-occlusion depth tolerance (m)");
  s_label->add_option("--joint-epsilon", label.joint_epsilon, "Joint visibility depth tolerance (m)");
  add_common(s_label, common);

  auto* s_train = app.add_subcommand("train-prior", "Train the masked pose VAE on a pose collection");
  s_train->add_option("--poses", train.poses, "JSONL with id and joints per line")->required()->check(CLI::ExistingFile);
  s_train->add_option("--epochs", train.epochs);
  s_train->add_option("--batch", train.batch);
  s_train->add_option("--latent", train.latent);
  s_train->add_option("--hidden", train.hidden);
  s_train->add_option("--lr", train.lr);
  s_train->add_option("--lambda-kl", train.lambda_kl);
  s_train->add_option("--mask-rate", train.mask_rate);
  add_common(s_train, common);

  auto* s_refine = app.add_subcommand("refine", "Replace hidden joints with the prior's reconstruction");
  s_refine->add_option("--prior", refine_opts.prior)->required()->check(CLI::ExistingFile);
  s_refine->add_option("--poses", refine_opts.poses)->required()->check(CLI::ExistingFile);
  s_refine->add_option("--labels", refine_opts.labels, "label-occlusion output")->required()->check(CLI::ExistingFile);
  add_common(s_refine, common);

  auto* s_eval = app.add_subcommand("evaluate", "Aligned and raw joint/vertex errors per occlusion level");
  s_eval->add_option("--predictions", eval.predictions)->required()->check(CLI::ExistingFile);
  s_eval->add_option("--manifest", eval.manifest, "Ground truth via pose files")->required()->check(CLI::ExistingFile);
  s_eval->add_option("--labels", eval.labels)->required()->check(CLI::ExistingFile);
  s_eval->add_option("--model", eval.model, "Asset whose topology map adapts mismatched skeletons")
      ->check(CLI::ExistingFile);
  s_eval->add_option("--topology-map", eval.map, "Joint indices kept from the larger skeleton")->delimiter(',');
  add_common(s_eval, common);

  auto* s_aug = app.add_subcommand("augment", "Random amplitude-spectrum perturbation of manifest images");
  s_aug->add_option("--manifest", augment.manifest)->required()->check(CLI::ExistingFile);
  s_aug->add_option("--alpha", augment.alpha);
  s_aug->add_option("--beta", augment.beta);
  s_aug->add_option("--k", augment.k);
  s_aug->add_flag("--no-clamp", augment.no_clamp, "Keep negative spectrum multipliers");
  add_common(s_aug, common);

  auto* s_spec = app.add_subcommand("analyze-spectrum", "Per-band log-amplitude mean and variance over images");
  s_spec->add_option("--manifest", spectrum.manifest)->required()->check(CLI::ExistingFile);
  s_spec->add_option("--bands", spectrum.bands)->check(CLI::PositiveNumber);
  add_common(s_spec, common);

  auto* s_comp = app.add_subcommand("compose", "Paste synthetic hands into real scenes");
  s_comp->add_option("--manifest", compose_opts.manifest)->required()->check(CLI::ExistingFile);
  s_comp->add_option("--mode", compose_opts.mode)->check(CLI::IsMember({"segmented", "random-fill"}));
  s_comp->add_flag("--no-fill-arm", compose_opts.no_fill_arm);
  s_comp->add_flag("--no-fill-object", compose_opts.no_fill_object);
  add_common(s_comp, common);

  auto* s_val = app.add_subcommand("validate", "Check a manifest and print the report");
  s_val->add_option("--manifest", validate_manifest_path)->required();
  s_val->add_option("--require", validate_required, "Fields every record must carry")->delimiter(',');

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  CLI::App* chosen = app.get_subcommands().front();
  const std::string name = chosen->get_name();
  try {
    if (chosen == s_val) {
      const std::set<std::string> required(validate_required.begin(), validate_required.end());
      const ManifestReport report = validate_manifest(validate_manifest_path, required);
      out << report.to_json().dump(2) << '\n';
      return report.valid() ? kExitOk : kExitFailure;
    }
    Context ctx(name, common.seed, resolve_threads(common.threads), resolve_output(common.out), out, err);
    if (chosen == s_build) cmd_build_asset(ctx, build);
    else if (chosen == s_toy) cmd_make_toy(ctx, toy);
    else if (chosen == s_fit) cmd_fit(ctx, fit);
    else if (chosen == s_label) cmd_label_occlusion(ctx, label);
    else if (chosen == s_train) cmd_train_prior(ctx, train);
    else if (chosen == s_refine) cmd_refine(ctx, refine_opts);
    else if (chosen == s_eval) cmd_evaluate(ctx, eval);
    else if (chosen == s_aug) cmd_augment(ctx, augment);
    else if (chosen == s_spec) cmd_analyze_spectrum(ctx, spectrum);
    else if (chosen == s_comp) cmd_compose(ctx, compose_opts);
    return ctx.finish();
  } catch (const ManifestInvalid& e) {
    err << "handsyn " << name << ": manifest " << e.report.path.string() << " is invalid; nothing was written\n";
    for (const auto& v : e.report.violations) err << "  " << v << '\n';
    return kExitFailure;
  } catch (const UsageError& e) {
    err << "handsyn " << name << ": " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "handsyn " << name << ": error: " << e.what() << '\n';
    return kExitFailure;
  }
}

}  // namespace handsyn::cli
