#include "handsyn/tape.hpp"

#include <cmath>
#include <utility>

#include "handsyn/simd.hpp"

namespace handsyn::diff {
namespace {

void check_same(const char* op, Var a, Var b) {
  if (a.tape != b.tape) throw std::invalid_argument(std::string(op) + ": operands on different tapes");
  if (!a.value().same_shape(b.value()))
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.value().shape_string() +
                                " vs " + b.value().shape_string());
}

// c += a · b
void gemm_into(const Mat& a, const Mat& b, Mat& c) {
  simd::kernels().gemm_acc(a.rows(), b.cols(), a.cols(), a.data(), a.cols(), b.data(), b.cols(),
                           c.data(), c.cols());
}

void accumulate(Tape& t, std::size_t id, const Mat& g, double alpha = 1.0) {
  if (!t.requires_grad(id)) return;
  Mat& acc = t.grad_accumulator(id);
  simd::kernels().axpy(g.size(), alpha, g.data(), acc.data());
}

}  // namespace

const Mat& Var::value() const { return tape->value(id); }

double Var::scalar() const {
  const Mat& v = value();
  if (v.size() != 1) throw std::invalid_argument("Var::scalar on " + v.shape_string() + " node");
  return v[0];
}

Var Tape::variable(Mat value) {
  Var v = push("variable", std::move(value), {}, nullptr);
  nodes_[v.id].requires_grad = true;
  return v;
}

Var Tape::constant(Mat value) { return push("constant", std::move(value), {}, nullptr); }

Var Tape::push(std::string op, Mat value, std::vector<std::size_t> parents, BackwardFn fn) {
  const std::size_t id = nodes_.size();
  if (!all_finite(value.span())) throw NonFiniteError(op, id);
  bool needs = false;
  for (std::size_t p : parents) needs = needs || nodes_.at(p).requires_grad;
  Node n;
  n.op = std::move(op);
  n.value = std::move(value);
  n.parents = std::move(parents);
  n.requires_grad = needs;
  if (needs) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var{this, id};
}

Mat& Tape::grad_accumulator(std::size_t id) {
  Node& n = nodes_.at(id);
  if (n.grad.size() != n.value.size() || !n.grad.same_shape(n.value))
    n.grad = Mat(n.value.rows(), n.value.cols());
  return n.grad;
}

const Mat& Tape::gradient(Var v) { return grad_accumulator(v.id); }

void Tape::backward(Var output) {
  if (output.tape != this) throw std::invalid_argument("backward: output belongs to another tape");
  if (value(output).size() != 1)
    throw std::invalid_argument("backward: output must be scalar, got " +
                                value(output).shape_string());
  for (auto& n : nodes_) n.grad = Mat();
  grad_accumulator(output.id)[0] = 1.0;
  visits_ = 0;
  for (std::size_t i = output.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || !n.backward || n.grad.empty()) continue;
    n.backward(*this, i);
    ++visits_;
    if (!all_finite(n.grad.span())) throw NonFiniteError(n.op + " (gradient)", i);
  }
}

std::vector<Mat> gradients(Var objective, std::span<const Var> params) {
  Tape& t = *objective.tape;
  t.backward(objective);
  std::vector<Mat> out;
  out.reserve(params.size());
  for (Var p : params) out.push_back(t.gradient(p));
  return out;
}

Var add(Var a, Var b) {
  check_same("add", a, b);
  Mat v = a.value();
  simd::kernels().axpy(v.size(), 1.0, b.value().data(), v.data());
  const std::size_t ia = a.id, ib = b.id;
  return a.tape->push("add", std::move(v), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
    const Mat& g = t.grad_of(self);
    accumulate(t, ia, g);
    accumulate(t, ib, g);
  });
}

Var sub(Var a, Var b) {
  check_same("sub", a, b);
  Mat v = a.value();
  simd::kernels().axpy(v.size(), -1.0, b.value().data(), v.data());
  const std::size_t ia = a.id, ib = b.id;
  return a.tape->push("sub", std::move(v), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
    const Mat& g = t.grad_of(self);
    accumulate(t, ia, g);
    accumulate(t, ib, g, -1.0);
  });
}

Var mul(Var a, Var b) {
  check_same("mul", a, b);
  Mat v(a.rows(), a.cols());
  simd::kernels().hadamard(v.size(), a.value().data(), b.value().data(), v.data());
  const std::size_t ia = a.id, ib = b.id;
  return a.tape->push("mul", std::move(v), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
    const Mat& g = t.grad_of(self);
    const auto& k = simd::kernels();
    if (t.requires_grad(ia)) k.hadamard_acc(g.size(), g.data(), t.value(ib).data(), t.grad_accumulator(ia).data());
    if (t.requires_grad(ib)) k.hadamard_acc(g.size(), g.data(), t.value(ia).data(), t.grad_accumulator(ib).data());
  });
}

Var scale(Var a, double s) {
  Mat v(a.rows(), a.cols());
  simd::kernels().axpy(v.size(), s, a.value().data(), v.data());
  const std::size_t ia = a.id;
  return a.tape->push("scale", std::move(v), {ia}, [ia, s](Tape& t, std::size_t self) {
    accumulate(t, ia, t.grad_of(self), s);
  });
}

Var add_scalar(Var a, double s) {
  Mat v = a.value();
  for (double& x : v.storage()) x += s;
  const std::size_t ia = a.id;
  return a.tape->push("add_scalar", std::move(v), {ia}, [ia](Tape& t, std::size_t self) {
    accumulate(t, ia, t.grad_of(self));
  });
}

Var neg(Var a) { return scale(a, -1.0); }

Var add_row(Var a, Var row) {
  if (a.tape != row.tape) throw std::invalid_argument("add_row: operands on different tapes");
  if (row.rows() != 1 || row.cols() != a.cols())
    throw std::invalid_argument("add_row: expected 1x" + std::to_string(a.cols()) + " row, got " +
                                row.value().shape_string());
  Mat v = a.value();
  const Mat& r = row.value();
  for (std::size_t i = 0; i < v.rows(); ++i) simd::kernels().axpy(v.cols(), 1.0, r.data(), v.row_span(i).data());
  const std::size_t ia = a.id, ir = row.id;
  return a.tape->push("add_row", std::move(v), {ia, ir}, [ia, ir](Tape& t, std::size_t self) {
    const Mat& g = t.grad_of(self);
    accumulate(t, ia, g);
    if (t.requires_grad(ir)) {
      Mat& gr = t.grad_accumulator(ir);
      for (std::size_t i = 0; i < g.rows(); ++i)
        simd::kernels().axpy(g.cols(), 1.0, g.row_span(i).data(), gr.data());
    }
  });
}

Var matmul(Var a, Var b) {
  if (a.tape != b.tape) throw std::invalid_argument("matmul: operands on different tapes");
  if (a.cols() != b.rows())
    throw std::invalid_argument("matmul: inner dimensions differ " + a.value().shape_string() +
                                " · " + b.value().shape_string());
  Mat v(a.rows(), b.cols());
  gemm_into(a.value(), b.value(), v);
  const std::size_t ia = a.id, ib = b.id;
  return a.tape->push("matmul", std::move(v), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
    const Mat& g = t.grad_of(self);
    if (t.requires_grad(ia)) gemm_into(g, t.value(ib).transposed(), t.grad_accumulator(ia));
    if (t.requires_grad(ib)) gemm_into(t.value(ia).transposed(), g, t.grad_accumulator(ib));
  });
}

Var transpose(Var a) {
  const std::size_t ia = a.id;
  return a.tape->push("transpose", a.value().transposed(), {ia}, [ia](Tape& t, std::size_t self) {
    accumulate(t, ia, t.grad_of(self).transposed());
  });
}

Var reshape(Var a, std::size_t rows, std::size_t cols) {
  if (rows * cols != a.value().size())
    throw std::invalid_argument("reshape: " + a.value().shape_string() + " cannot become " +
                                std::to_string(rows) + "x" + std::to_string(cols));
  const std::size_t ia = a.id;
  return a.tape->push("reshape", Mat(rows, cols, a.value().storage()), {ia},
                      [ia](Tape& t, std::size_t self) {
                        const Mat& g = t.grad_of(self);
                        if (!t.requires_grad(ia)) return;
                        Mat& acc = t.grad_accumulator(ia);
                        simd::kernels().axpy(g.size(), 1.0, g.data(), acc.data());
                      });
}

Var slice(Var a, std::size_t offset, std::size_t rows, std::size_t cols) {
  const std::size_t n = rows * cols;
  if (offset + n > a.value().size())
    throw std::out_of_range("slice: range [" + std::to_string(offset) + ", " +
                            std::to_string(offset + n) + ") exceeds " + a.value().shape_string());
  const auto& src = a.value().storage();
  Mat v(rows, cols, std::vector<double>(src.begin() + offset, src.begin() + offset + n));
  const std::size_t ia = a.id;
  return a.tape->push("slice", std::move(v), {ia}, [ia, offset](Tape& t, std::size_t self) {
    if (!t.requires_grad(ia)) return;
    const Mat& g = t.grad_of(self);
    Mat& acc = t.grad_accumulator(ia);
    simd::kernels().axpy(g.size(), 1.0, g.data(), acc.data() + offset);
  });
}

Var slice_cols(Var a, std::size_t c0, std::size_t n) {
  const Mat& av = a.value();
  if (c0 + n > av.cols())
    throw std::out_of_range("slice_cols: columns [" + std::to_string(c0) + ", " +
                            std::to_string(c0 + n) + ") exceed " + av.shape_string());
  Mat v(av.rows(), n);
  for (std::size_t i = 0; i < av.rows(); ++i)
    for (std::size_t j = 0; j < n; ++j) v(i, j) = av(i, c0 + j);
  const std::size_t ia = a.id;
  return a.tape->push("slice_cols", std::move(v), {ia}, [ia, c0](Tape& t, std::size_t self) {
    if (!t.requires_grad(ia)) return;
    const Mat& g = t.grad_of(self);
    Mat& acc = t.grad_accumulator(ia);
    for (std::size_t i = 0; i < g.rows(); ++i)
      for (std::size_t j = 0; j < g.cols(); ++j) acc(i, c0 + j) += g(i, j);
  });
}

Var concat(std::span<const Var> parts, std::size_t rows, std::size_t cols) {
  if (parts.empty()) throw std::invalid_argument("concat: no parts");
  Tape* tape = parts.front().tape;
  std::vector<double> data;
  data.reserve(rows * cols);
  std::vector<std::size_t> ids;
  std::vector<std::size_t> offsets;
  for (Var p : parts) {
    if (p.tape != tape) throw std::invalid_argument("concat: parts on different tapes");
    offsets.push_back(data.size());
    ids.push_back(p.id);
    const auto& s = p.value().storage();
    data.insert(data.end(), s.begin(), s.end());
  }
  if (data.size() != rows * cols)
    throw std::invalid_argument("concat: total size " + std::to_string(data.size()) +
                                " does not match " + std::to_string(rows) + "x" +
                                std::to_string(cols));
  return tape->push("concat", Mat(rows, cols, std::move(data)), ids,
                    [ids, offsets](Tape& t, std::size_t self) {
                      const Mat& g = t.grad_of(self);
                      for (std::size_t k = 0; k < ids.size(); ++k) {
                        if (!t.requires_grad(ids[k])) continue;
                        Mat& acc = t.grad_accumulator(ids[k]);
                        simd::kernels().axpy(acc.size(), 1.0, g.data() + offsets[k], acc.data());
                      }
                    });
}

Var relu(Var a) {
  Mat v(a.rows(), a.cols());
  simd::kernels().relu(v.size(), a.value().data(), v.data());
  const std::size_t ia = a.id;
  return a.tape->push("relu", std::move(v), {ia}, [ia](Tape& t, std::size_t self) {
    if (!t.requires_grad(ia)) return;
    const Mat& g = t.grad_of(self);
    simd::kernels().relu_backward(g.size(), t.value(ia).data(), g.data(),
                                  t.grad_accumulator(ia).data());
  });
}

Var exp(Var a) {
  Mat v = a.value();
  for (double& x : v.storage()) x = std::exp(x);
  const std::size_t ia = a.id;
  return a.tape->push("exp", std::move(v), {ia}, [ia](Tape& t, std::size_t self) {
    if (!t.requires_grad(ia)) return;
    const Mat& g = t.grad_of(self);
    simd::kernels().hadamard_acc(g.size(), g.data(), t.value(self).data(),
                                 t.grad_accumulator(ia).data());
  });
}

Var log(Var a) {
  Mat v = a.value();
  for (double& x : v.storage()) x = std::log(x);
  const std::size_t ia = a.id;
  return a.tape->push("log", std::move(v), {ia}, [ia](Tape& t, std::size_t self) {
    if (!t.requires_grad(ia)) return;
    const Mat& g = t.grad_of(self);
    const Mat& x = t.value(ia);
    Mat& acc = t.grad_accumulator(ia);
    for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i] / x[i];
  });
}

Var sum(Var a) {
  double s = 0.0;
  for (double x : a.value().storage()) s += x;
  const std::size_t ia = a.id;
  return a.tape->push("sum", Mat(1, 1, s), {ia}, [ia](Tape& t, std::size_t self) {
    if (!t.requires_grad(ia)) return;
    const double g = t.grad_of(self)[0];
    for (double& x : t.grad_accumulator(ia).storage()) x += g;
  });
}

Var mean(Var a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw std::invalid_argument("mean: empty operand");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var sum_squares(Var a) {
  const Mat& av = a.value();
  const double s = simd::kernels().dot(av.size(), av.data(), av.data());
  const std::size_t ia = a.id;
  return a.tape->push("sum_squares", Mat(1, 1, s), {ia}, [ia](Tape& t, std::size_t self) {
    if (!t.requires_grad(ia)) return;
    const double g = t.grad_of(self)[0];
    const Mat& x = t.value(ia);
    simd::kernels().axpy(x.size(), 2.0 * g, x.data(), t.grad_accumulator(ia).data());
  });
}

Var norm(Var a) {
  const Mat& av = a.value();
  const double n = std::sqrt(simd::kernels().dot(av.size(), av.data(), av.data()));
  const std::size_t ia = a.id;
  return a.tape->push("norm", Mat(1, 1, n), {ia}, [ia](Tape& t, std::size_t self) {
    if (!t.requires_grad(ia)) return;
    const double nv = t.value(self)[0];
    if (nv == 0.0) return;
    const double g = t.grad_of(self)[0];
    const Mat& x = t.value(ia);
    simd::kernels().axpy(x.size(), g / nv, x.data(), t.grad_accumulator(ia).data());
  });
}

namespace {

// R = I + a K + b K², K = [w]×, with a = sin θ/θ, b = (1-cos θ)/θ².
// c = (da/dθ)/θ, d = (db/dθ)/θ for the Jacobian. Series below θ = 1e-2.
struct RodriguesCoeffs {
  double a, b, c, d;
};

RodriguesCoeffs rodrigues_coeffs(double theta2) {
  if (theta2 < 1e-4) {
    const double t4 = theta2 * theta2;
    return {1.0 - theta2 / 6.0 + t4 / 120.0, 0.5 - theta2 / 24.0 + t4 / 720.0,
            -1.0 / 3.0 + theta2 / 30.0 - t4 / 840.0, -1.0 / 12.0 + theta2 / 180.0 - t4 / 6720.0};
  }
  const double th = std::sqrt(theta2);
  const double s = std::sin(th), co = std::cos(th);
  const double a = s / th;
  const double b = (1.0 - co) / theta2;
  const double c = (th * co - s) / (theta2 * th);
  const double d = (th * s - 2.0 * (1.0 - co)) / (theta2 * theta2);
  return {a, b, c, d};
}

void skew(const double w[3], double k[9]) {
  k[0] = 0.0;   k[1] = -w[2]; k[2] = w[1];
  k[3] = w[2];  k[4] = 0.0;   k[5] = -w[0];
  k[6] = -w[1]; k[7] = w[0];  k[8] = 0.0;
}

void mat3_mul(const double x[9], const double y[9], double out[9]) {
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c)
      out[3 * r + c] = x[3 * r] * y[c] + x[3 * r + 1] * y[3 + c] + x[3 * r + 2] * y[6 + c];
}

}  // namespace

void rodrigues_value(const double w[3], double out[9]) {
  const double theta2 = w[0] * w[0] + w[1] * w[1] + w[2] * w[2];
  const RodriguesCoeffs co = rodrigues_coeffs(theta2);
  double k[9], k2[9];
  skew(w, k);
  mat3_mul(k, k, k2);
  for (int i = 0; i < 9; ++i) out[i] = co.a * k[i] + co.b * k2[i];
  out[0] += 1.0;
  out[4] += 1.0;
  out[8] += 1.0;
}

Var rodrigues(Var axis_angle) {
  if (axis_angle.value().size() != 3)
    throw std::invalid_argument("rodrigues: expected 3 components, got " +
                                axis_angle.value().shape_string());
  Mat v(3, 3);
  rodrigues_value(axis_angle.value().data(), v.data());
  const std::size_t ia = axis_angle.id;
  return axis_angle.tape->push("rodrigues", std::move(v), {ia}, [ia](Tape& t, std::size_t self) {
    if (!t.requires_grad(ia)) return;
    const double* w = t.value(ia).data();
    const Mat& g = t.grad_of(self);
    const double theta2 = w[0] * w[0] + w[1] * w[1] + w[2] * w[2];
    const RodriguesCoeffs co = rodrigues_coeffs(theta2);
    double k[9], k2[9];
    skew(w, k);
    mat3_mul(k, k, k2);
    Mat& acc = t.grad_accumulator(ia);
    for (int i = 0; i < 3; ++i) {
      double e[3] = {0.0, 0.0, 0.0};
      e[i] = 1.0;
      double ei[9], ek[9], ke[9];
      skew(e, ei);
      mat3_mul(ei, k, ek);
      mat3_mul(k, ei, ke);
      double dot = 0.0;
      for (int q = 0; q < 9; ++q) {
        const double dr = co.a * ei[q] + co.b * (ek[q] + ke[q]) + w[i] * (co.c * k[q] + co.d * k2[q]);
        dot += g[q] * dr;
      }
      acc[i] += dot;
    }
  });
}

Var affine_rows(Var m, Var x) {
  if (m.tape != x.tape) throw std::invalid_argument("affine_rows: operands on different tapes");
  if (m.cols() != 12 || x.cols() != 3 || m.rows() != x.rows())
    throw std::invalid_argument("affine_rows: expected n×12 and n×3, got " + m.value().shape_string() +
                                " and " + x.value().shape_string());
  Mat v(x.rows(), 3);
  simd::kernels().affine_rows(x.rows(), m.value().data(), x.value().data(), v.data());
  const std::size_t im = m.id, ix = x.id;
  return m.tape->push("affine_rows", std::move(v), {im, ix}, [im, ix](Tape& t, std::size_t self) {
    const Mat& g = t.grad_of(self);
    const Mat& mv = t.value(im);
    const Mat& xv = t.value(ix);
    const std::size_t n = g.rows();
    if (t.requires_grad(im)) {
      Mat& gm = t.grad_accumulator(im);
      for (std::size_t i = 0; i < n; ++i) {
        const double* gi = g.data() + 3 * i;
        const double* xi = xv.data() + 3 * i;
        double* gmi = gm.data() + 12 * i;
        for (int r = 0; r < 3; ++r) {
          gmi[3 * r] += gi[r] * xi[0];
          gmi[3 * r + 1] += gi[r] * xi[1];
          gmi[3 * r + 2] += gi[r] * xi[2];
          gmi[9 + r] += gi[r];
        }
      }
    }
    if (t.requires_grad(ix)) {
      Mat& gx = t.grad_accumulator(ix);
      for (std::size_t i = 0; i < n; ++i) {
        const double* gi = g.data() + 3 * i;
        const double* mi = mv.data() + 12 * i;
        double* gxi = gx.data() + 3 * i;
        for (int c = 0; c < 3; ++c)
          gxi[c] += gi[0] * mi[c] + gi[1] * mi[3 + c] + gi[2] * mi[6 + c];
      }
    }
  });
}

}  // namespace handsyn::diff
