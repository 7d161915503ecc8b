#include <doctest.h>

#include <cmath>
#include <random>

#include "handsyn/adam.hpp"
#include "handsyn/tape.hpp"
#include "oracles/finite_difference.hpp"

using namespace handsyn;
using namespace handsyn::diff;
using handsyn::testing::central_difference;
using handsyn::testing::relative_error;

TEST_CASE("grad of x^2 at 3 is 6") {
  Tape t;
  Var x = t.variable(Mat(1, 1, 3.0));
  Var f = mul(x, x);
  const Var params[] = {x};
  auto g = gradients(f, params);
  CHECK(g[0][0] == doctest::Approx(6.0));
}

TEST_CASE("grad of x*y + y^2 at (2,5) is (5,12)") {
  Tape t;
  Var x = t.variable(Mat(1, 1, 2.0));
  Var y = t.variable(Mat(1, 1, 5.0));
  Var f = add(mul(x, y), mul(y, y));
  const Var params[] = {x, y};
  auto g = gradients(f, params);
  CHECK(g[0][0] == doctest::Approx(5.0));
  CHECK(g[1][0] == doctest::Approx(12.0));
}

namespace {

using Builder = std::function<Var(Tape&, Var)>;

struct PrimitiveCase {
  const char* name;
  std::size_t rows, cols;
  double lo, hi;  // input sampling range (kept away from kinks / log domain)
  Builder build;  // must reduce to a scalar
};

Mat random_mat(std::size_t r, std::size_t c, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  Mat m(r, c);
  for (auto& x : m.storage()) x = d(rng);
  return m;
}

double check_primitive(const PrimitiveCase& pc, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Mat x0 = random_mat(pc.rows, pc.cols, rng, pc.lo, pc.hi);
  // Random weights make every output entry matter in the scalarised objective.
  auto objective = [&](Tape& t, Var x) {
    Var y = pc.build(t, x);
    std::mt19937_64 wr(seed ^ 0x9e3779b97f4a7c15ULL);
    Var w = t.constant(random_mat(y.rows(), y.cols(), wr, -1.0, 1.0));
    return sum(mul(y, w));
  };
  Tape t;
  Var x = t.variable(x0);
  const Var params[] = {x};
  auto g = gradients(objective(t, x), params);
  auto f = [&](const std::vector<double>& v) {
    Tape tt;
    Var xx = tt.constant(Mat(pc.rows, pc.cols, v));
    return objective(tt, xx).scalar();
  };
  auto fd = central_difference(f, x0.storage(), 1e-5);
  return relative_error(g[0].storage(), fd);
}

}  // namespace

TEST_CASE("every primitive matches central finite differences on 100 seeds") {
  std::mt19937_64 consts(7);
  const Mat fixed_b = random_mat(4, 3, consts, -1, 1);
  const Mat fixed_row = random_mat(1, 4, consts, -1, 1);
  const Mat fixed_pts = random_mat(5, 3, consts, -1, 1);
  const std::vector<PrimitiveCase> cases = {
      {"add", 3, 4, -1, 1, [](Tape&, Var x) { return add(x, mul(x, x)); }},
      {"sub", 3, 4, -1, 1, [](Tape&, Var x) { return sub(mul(x, x), x); }},
      {"mul", 3, 4, -1, 1, [](Tape&, Var x) { return mul(x, add_scalar(x, 0.5)); }},
      {"scale", 2, 2, -1, 1, [](Tape&, Var x) { return scale(mul(x, x), -2.5); }},
      {"add_row", 3, 4, -1, 1,
       [&](Tape& t, Var x) { return add_row(mul(x, x), t.constant(fixed_row)); }},
      {"add_row (row grad)", 1, 4, -1, 1,
       [&](Tape& t, Var x) { return add_row(t.constant(Mat(3, 4, 0.3)), mul(x, x)); }},
      {"matmul (left)", 3, 4, -1, 1, [&](Tape& t, Var x) { return matmul(x, t.constant(fixed_b)); }},
      {"matmul (right)", 4, 3, -1, 1,
       [&](Tape& t, Var x) { return matmul(t.constant(fixed_b.transposed()), mul(x, x)); }},
      {"transpose", 2, 5, -1, 1, [](Tape&, Var x) { return transpose(mul(x, x)); }},
      {"reshape", 2, 6, -1, 1, [](Tape&, Var x) { return reshape(mul(x, x), 3, 4); }},
      {"slice", 2, 6, -1, 1, [](Tape&, Var x) { return slice(mul(x, x), 3, 2, 3); }},
      {"slice_cols", 3, 5, -1, 1, [](Tape&, Var x) { return slice_cols(mul(x, x), 1, 3); }},
      {"concat", 2, 3, -1, 1,
       [](Tape&, Var x) {
         const Var parts[] = {x, mul(x, x)};
         return concat(parts, 3, 4);
       }},
      {"relu", 3, 4, 0.05, 1,
       [](Tape& t, Var x) {
         Mat sign(3, 4);
         for (std::size_t i = 0; i < sign.size(); ++i) sign[i] = (i % 2 == 0) ? 1.0 : -1.0;
         return relu(mul(x, t.constant(sign)));
       }},
      {"exp", 3, 3, -1, 1, [](Tape&, Var x) { return exp(x); }},
      {"log", 3, 3, 0.2, 2, [](Tape&, Var x) { return log(x); }},
      {"sum", 3, 3, -1, 1, [](Tape&, Var x) { return sum(mul(x, x)); }},
      {"mean", 3, 3, -1, 1, [](Tape&, Var x) { return mean(mul(x, x)); }},
      {"sum_squares", 3, 3, -1, 1, [](Tape&, Var x) { return sum_squares(x); }},
      {"norm", 3, 3, -1, 1, [](Tape&, Var x) { return norm(x); }},
      {"rodrigues", 1, 3, -2, 2, [](Tape&, Var x) { return rodrigues(x); }},
      {"rodrigues (small angle)", 1, 3, -4e-3, 4e-3, [](Tape&, Var x) { return rodrigues(x); }},
      {"affine_rows (matrices)", 5, 12, -1, 1,
       [&](Tape& t, Var x) { return affine_rows(x, t.constant(fixed_pts)); }},
      {"affine_rows (points)", 5, 3, -1, 1,
       [&](Tape& t, Var x) {
         std::mt19937_64 r(3);
         return affine_rows(t.constant(random_mat(5, 12, r, -1, 1)), x);
       }},
  };
  for (const auto& pc : cases) {
    CAPTURE(pc.name);
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) worst = std::max(worst, check_primitive(pc, seed));
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("rodrigues at zero is the identity with skew Jacobian") {
  Tape t;
  Var w = t.variable(Mat(1, 3, 0.0));
  Var r = rodrigues(w);
  CHECK(max_abs_diff(r.value(), Mat::identity(3)) == 0.0);
  // d R(1,0) / d w_z = 1 at zero (R ≈ I + [w]x).
  Var pick = t.constant(Mat(3, 3, {0, 0, 0, 1, 0, 0, 0, 0, 0}));
  const Var params[] = {w};
  auto g = gradients(sum(mul(r, pick)), params);
  CHECK(g[0][2] == doctest::Approx(1.0));
  CHECK(g[0][0] == doctest::Approx(0.0));
}

TEST_CASE("backward on a sum of independent subgraphs concatenates independent backwards") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    Mat a0 = random_mat(2, 3, rng, -1, 1), b0 = random_mat(3, 2, rng, -1, 1);
    auto f1 = [](Var a) { return sum_squares(exp(a)); };
    auto f2 = [](Var b) { return norm(matmul(b, transpose(b))); };
    Tape t;
    Var a = t.variable(a0), b = t.variable(b0);
    const Var both[] = {a, b};
    auto g = gradients(add(f1(a), f2(b)), both);

    Tape t1;
    Var a1 = t1.variable(a0);
    const Var pa[] = {a1};
    auto ga = gradients(f1(a1), pa);
    Tape t2;
    Var b2 = t2.variable(b0);
    const Var pb[] = {b2};
    auto gb = gradients(f2(b2), pb);
    CHECK(max_abs_diff(g[0], ga[0]) < 1e-14);
    CHECK(max_abs_diff(g[1], gb[0]) < 1e-14);
  }
}

TEST_CASE("backward visits each differentiable node exactly once") {
  Tape t;
  Var x = t.variable(Mat(1, 1, 0.5));
  Var c = t.constant(Mat(1, 1, 2.0));
  Var y = mul(x, x);       // 2
  Var z = add(y, x);       // 3
  Var w = mul(z, c);       // 4
  Var unused = exp(x);     // 5, does not feed w
  (void)unused;
  t.backward(w);
  // w, z, y carry gradients; the unused branch and leaves are skipped.
  CHECK(t.last_backward_visits() == 3);
  CHECK(t.gradient(x)[0] == doctest::Approx(2.0 * (2 * 0.5 + 1)));
}

TEST_CASE("non-finite intermediate raises an error naming the node") {
  Tape t;
  Var x = t.variable(Mat(1, 1, -1.0));
  try {
    (void)log(x);
    FAIL("expected NonFiniteError");
  } catch (const NonFiniteError& e) {
    CHECK(e.op() == "log");
    CHECK(e.node() == 1);
    CHECK(std::string(e.what()).find("log") != std::string::npos);
  }
}

TEST_CASE("shape errors are reported") {
  Tape t;
  Var a = t.variable(Mat(2, 3));
  Var b = t.variable(Mat(2, 2));
  CHECK_THROWS_AS(add(a, b), std::invalid_argument);
  CHECK_THROWS_AS(matmul(a, a), std::invalid_argument);
  CHECK_THROWS_AS(t.backward(a), std::invalid_argument);
}

TEST_CASE("adam: zero gradient leaves parameters unchanged and decays moments") {
  std::vector<Mat> p = {Mat(1, 2, {1.0, -2.0})};
  const double lr[] = {0.1};
  auto s = AdamState::init(p, lr);
  s.first_moment[0] = Mat(1, 2, {0.5, -0.5});
  s.second_moment[0] = Mat(1, 2, {0.25, 0.25});
  std::vector<Mat> g = {Mat(1, 2, 0.0)};
  // Nonzero first moment moves the parameter; only a fresh state with zero
  // gradient is exactly stationary.
  auto fresh = AdamState::init(p, lr);
  auto p2 = p;
  adam_step(fresh, p2, g);
  CHECK(p2[0] == p[0]);
  CHECK(fresh.step == 1);
  adam_step(s, p, g);
  CHECK(s.first_moment[0][0] == doctest::Approx(0.45));
  CHECK(s.second_moment[0][0] == doctest::Approx(0.24975));
}

TEST_CASE("adam: constant gradient moves opposite to its sign") {
  std::vector<Mat> p = {Mat(1, 2, {0.0, 0.0})};
  const double lr[] = {0.01};
  auto s = AdamState::init(p, lr);
  std::vector<Mat> g = {Mat(1, 2, {3.0, -0.2})};
  for (int i = 0; i < 50; ++i) adam_step(s, p, g);
  CHECK(p[0][0] < 0.0);
  CHECK(p[0][1] > 0.0);
  CHECK(s.step == 50);
}

TEST_CASE("adam: first step with g=1, lr=0.1 is -0.1 after bias correction") {
  // m1 = 0.1, v1 = 0.001; m̂ = 1, v̂ = 1 → Δ = -0.1 / (1 + 1e-8).
  std::vector<Mat> p = {Mat(1, 1, 0.0)};
  const double lr[] = {0.1};
  auto s = AdamState::init(p, lr);
  std::vector<Mat> g = {Mat(1, 1, 1.0)};
  adam_step(s, p, g);
  CHECK(p[0][0] == doctest::Approx(-0.1 / (1.0 + 1e-8)).epsilon(1e-14));
}

TEST_CASE("adam: mismatched shapes are rejected") {
  std::vector<Mat> p = {Mat(1, 2)};
  const double lr[] = {0.1};
  auto s = AdamState::init(p, lr);
  std::vector<Mat> g = {Mat(2, 1)};
  CHECK_THROWS_AS(adam_step(s, p, g), std::invalid_argument);
  std::vector<Mat> none;
  CHECK_THROWS_AS(adam_step(s, none, none), std::invalid_argument);
}
