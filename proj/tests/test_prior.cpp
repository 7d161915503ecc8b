#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>

#include "handsyn/prior.hpp"
#include "oracles/finite_difference.hpp"

using namespace handsyn;
using handsyn::testing::central_difference;
using handsyn::testing::relative_error;

namespace {

std::vector<double> flatten(const std::vector<Mat>& ms) {
  std::vector<double> out;
  for (const auto& m : ms) out.insert(out.end(), m.storage().begin(), m.storage().end());
  return out;
}

void unflatten(const std::vector<double>& flat, std::vector<Mat>& ms) {
  std::size_t k = 0;
  for (auto& m : ms)
    for (auto& v : m.storage()) v = flat[k++];
}

Mat random_mat(std::size_t r, std::size_t c, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> n(0.0, sd);
  Mat m(r, c);
  for (auto& v : m.storage()) v = n(rng);
  return m;
}

PriorTrainConfig small_config() {
  PriorTrainConfig cfg;
  cfg.batch_size = 32;
  cfg.hidden_dim = 48;
  cfg.latent_dim = 8;
  cfg.epochs = 3;
  cfg.learning_rate = 1e-3;
  cfg.seed = 5;
  return cfg;
}

}  // namespace

TEST_CASE("KL divergence closed form") {
  CHECK(kl_divergence(Mat(1, 4, 0.0), Mat(1, 4, 0.0)) == 0.0);
  CHECK(kl_divergence(Mat(1, 1, 1.0), Mat(1, 1, 0.0)) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(kl_divergence(Mat(1, 1, 0.0), Mat(1, 1, 1.0)) == doctest::Approx(0.5 * (std::numbers::e - 2)).epsilon(1e-15));
  CHECK(kl_divergence(Mat(1, 1, 0.0), Mat(1, 1, 1.0)) == doctest::Approx(0.3591).epsilon(1e-4));
  // Rows are averaged: two rows of the one-dimension μ = 1 case.
  CHECK(kl_divergence(Mat(2, 1, 1.0), Mat(2, 1, 0.0)) == doctest::Approx(0.5));
  CHECK_THROWS_AS(kl_divergence(Mat(1, 2), Mat(1, 3)), std::invalid_argument);

  std::mt19937_64 rng(1);
  for (int t = 0; t < 200; ++t) {
    const Mat mu = random_mat(3, 5, rng, 2.0), lv = random_mat(3, 5, rng, 2.0);
    const double kl = kl_divergence(mu, lv);
    CHECK(kl >= 0.0);
    diff::Tape tape;
    CHECK(kl_on_tape(tape.constant(mu), tape.constant(lv)).scalar() == doctest::Approx(kl).epsilon(1e-13));
  }
}

TEST_CASE("architecture and initialization") {
  const PriorModel m = PriorModel::init(21, 64, 512, 0);
  CHECK(m.params.size() == 2 * (kEncoderLayers + kDecoderLayers));
  CHECK(m.weight(0).rows() == 63);
  CHECK(m.weight(4).cols() == 128);
  CHECK(m.weight(5).rows() == 64);
  CHECK(m.weight(11).cols() == 63);
  for (std::size_t l = 0; l < kEncoderLayers + kDecoderLayers; ++l) {
    if (l != 0 && l != 5) CHECK(m.weight(l).rows() == 512);
    if (l != 4 && l != 11) CHECK(m.weight(l).cols() == 512);
  }
  CHECK_NOTHROW(m.validate());
  CHECK(PriorModel::init(21, 64, 512, 0) == m);
  CHECK_FALSE(PriorModel::init(21, 64, 512, 1) == m);
  CHECK(masked_joint_count(0.25, 21) == 5);
  CHECK(masked_joint_count(0.0, 21) == 0);
}

TEST_CASE("VAE loss gradients match central differences on a two-joint micro-network") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(seed);
    PriorModel m = PriorModel::init(2, 2, 4, seed);
    m.mean_pose = random_mat(1, 6, rng, 0.01);
    const std::size_t batch = 3;
    const Mat target = random_mat(batch, 6, rng);
    Mat input = target;
    for (std::size_t a = 0; a < 3; ++a) input(seed % batch, 3 * (seed % 2) + a) = 0.0;
    const Mat noise = random_mat(batch, 2, rng);
    const double lambda = seed % 3 == 0 ? 0.0 : 0.01 * double(seed % 7 + 1);

    diff::Tape tape;
    const PriorVars vars = bind_prior(tape, m, true);
    const VaeLoss loss = vae_loss(m, vars, input, target, noise, lambda);
    const double tot = loss.total.scalar();
    CHECK(std::abs(tot - (lambda * loss.kl.scalar() + loss.reconstruction.scalar())) <= 1e-12 * std::max(1.0, tot));
    const auto analytic = flatten(diff::gradients(loss.total, vars.params));

    auto f = [&](const std::vector<double>& x) {
      PriorModel probe = m;
      unflatten(x, probe.params);
      diff::Tape t;
      return vae_loss(probe, bind_prior(t, probe, false), input, target, noise, lambda).total.scalar();
    };
    const auto numeric = central_difference(f, flatten(m.params), 1e-6);
    CHECK(relative_error(analytic, numeric) < 1e-4);
  }
}

TEST_CASE("training records the loss decomposition and is deterministic") {
  const auto man = ToyPoseManifold::from_asset(21, 3);
  const auto poses = man.sample(128, 1);
  const PriorTrainConfig cfg = small_config();
  const auto a = train_prior(poses, cfg);
  const auto b = train_prior(poses, cfg);
  CHECK(a.model == b.model);
  REQUIRE(a.trace.size() == 3 * 4);
  for (const auto& s : a.trace) CHECK(std::abs(s.total - (cfg.lambda_kl * s.kl + s.reconstruction)) <= 1e-12 * s.total);
  CHECK(a.epoch_rms.size() == 3);

  PriorTrainConfig other = cfg;
  other.seed = 6;
  CHECK_FALSE(train_prior(poses, other).model == a.model);
}

TEST_CASE("pure autoencoder training lowers reconstruction RMS every epoch") {
  const auto man = ToyPoseManifold::from_asset(21, 3);
  const auto poses = man.sample(512, 2);
  PriorTrainConfig cfg = small_config();
  cfg.lambda_kl = 0.0;
  cfg.mask_rate = 0.0;
  cfg.epochs = 5;
  cfg.hidden_dim = 128;
  cfg.learning_rate = 1e-4;
  const auto res = train_prior(poses, cfg);
  REQUIRE(res.epoch_rms.size() == 5);
  for (std::size_t e = 1; e < 5; ++e) CHECK(res.epoch_rms[e] < res.epoch_rms[e - 1]);
}

TEST_CASE("refine: visible joints pass through, hidden joints decode from the posterior mean") {
  const auto man = ToyPoseManifold::from_asset(21, 4);
  PriorTrainConfig cfg = small_config();
  const auto model = train_prior(man.sample(64, 1), cfg).model;
  std::mt19937_64 rng(8);
  const auto poses = man.sample(30, 9);
  for (const auto& raw : poses) {
    Mat p = raw;
    for (auto& v : p.storage()) v += 0.3;  // not root-centered
    std::vector<bool> vis(21);
    for (std::size_t j = 0; j < 21; ++j) vis[j] = std::bernoulli_distribution(0.6)(rng);
    const auto r = refine(model, p, vis);
    for (std::size_t j = 0; j < 21; ++j)
      if (vis[j])
        for (std::size_t a = 0; a < 3; ++a) CHECK(r.pose(j, a) == p(j, a));
  }
  const Mat p = poses.front();
  CHECK(refine(model, p, std::vector<bool>(21, true)).pose == p);

  const auto hidden = refine(model, p, std::vector<bool>(21, false));
  CHECK(hidden.all_hidden);
  diff::Tape tape;
  const PriorVars vars = bind_prior(tape, model, false);
  const Mat decoded = decode(model, vars, encode(model, vars, tape.constant(Mat(1, 63))).mean).value();
  for (std::size_t j = 0; j < 21; ++j)
    for (std::size_t a = 0; a < 3; ++a) CHECK(hidden.pose(j, a) == decoded(0, 3 * j + a) / 100.0);

  CHECK_THROWS_AS(refine(model, p, std::vector<bool>(20, true)), std::invalid_argument);
  CHECK_THROWS_AS(refine(model, Mat(20, 3), std::vector<bool>(21, true)), std::invalid_argument);
}

TEST_CASE("refine_batch equals sequential refinement") {
  const auto man = ToyPoseManifold::from_asset(21, 4);
  const auto model = train_prior(man.sample(64, 1), small_config()).model;
  const auto poses = man.sample(17, 3);
  std::vector<std::vector<bool>> vis(poses.size(), std::vector<bool>(21, true));
  for (std::size_t i = 0; i < vis.size(); ++i) vis[i][(i * 5) % 21] = vis[i][(i * 7 + 3) % 21] = false;
  const auto par = refine_batch(model, poses, vis, 3);
  for (std::size_t i = 0; i < poses.size(); ++i) CHECK(par[i].pose == refine(model, poses[i], vis[i]).pose);
}

TEST_CASE("refined hidden joints beat mean-pose filling on the toy manifold") {
  const auto man = ToyPoseManifold::from_asset(21, 7);
  PriorTrainConfig cfg = small_config();
  cfg.hidden_dim = 128;
  cfg.latent_dim = 16;
  cfg.epochs = 30;
  const auto model = train_prior(man.sample(1024, 1), cfg).model;
  std::mt19937_64 rng(2);
  double ss_ref = 0, ss_base = 0;
  for (const auto& p : man.sample(200, 5)) {
    std::vector<bool> vis(21, true);
    std::vector<std::size_t> ids(20);
    std::iota(ids.begin(), ids.end(), 1);
    std::shuffle(ids.begin(), ids.end(), rng);
    for (int k = 0; k < 6; ++k) vis[ids[k]] = false;
    const auto r = refine(model, p, vis);
    for (std::size_t j = 0; j < 21; ++j)
      if (!vis[j])
        for (std::size_t a = 0; a < 3; ++a) {
          ss_ref += std::pow(r.pose(j, a) - p(j, a), 2);
          ss_base += std::pow(model.mean_pose(0, 3 * j + a) + p(0, a) - p(j, a), 2);
        }
  }
  CHECK(ss_ref < ss_base);
}

TEST_CASE("training errors: too few poses, bad config, divergence") {
  const auto man = ToyPoseManifold::from_asset(21, 1);
  PriorTrainConfig cfg = small_config();
  CHECK_THROWS_AS(train_prior(man.sample(10, 1), cfg), std::invalid_argument);
  cfg.mask_rate = 1.0;
  CHECK_THROWS_AS(train_prior(man.sample(64, 1), cfg), std::invalid_argument);
  cfg = small_config();
  cfg.learning_rate = 1e200;
  try {
    train_prior(man.sample(64, 1), cfg);
    FAIL("expected divergence");
  } catch (const PriorError& e) {
    CHECK(e.epoch() == 0);
    CHECK(e.step() == 1);
  }
}

TEST_CASE("prior documents round-trip exactly and reject malformed input") {
  const auto man = ToyPoseManifold::from_asset(21, 2);
  const auto model = train_prior(man.sample(64, 1), small_config()).model;
  const auto path = std::filesystem::temp_directory_path() / "handsyn_prior_roundtrip.json";
  save_prior(model, path);
  CHECK(load_prior(path) == model);
  auto j = prior_to_json(model);
  j["layers"][3]["weight"].erase(0);
  CHECK_THROWS_AS(prior_from_json(j), io::SchemaError);
  j = prior_to_json(model);
  j["format"] = "other";
  CHECK_THROWS_AS(prior_from_json(j), io::SchemaError);
}

TEST_CASE("toy manifold is root-centered and reproducible") {
  const auto man = ToyPoseManifold::from_asset(21, 3);
  const auto a = man.sample(5, 1), b = man.sample(5, 1);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(a[i] == b[i]);
    for (std::size_t k = 0; k < 3; ++k) CHECK(a[i](0, k) == 0.0);
  }
  CHECK_FALSE(a[0] == a[1]);
  CHECK(ToyPoseManifold::from_asset(25, 3).joints() == 25);
}
