#pragma once
// Reverse-mode differentiation over matrix-valued nodes.
//
// A Tape records every operation in creation order, so parents always precede
// children and a single reverse sweep visits each node once. Leaves are either
// variables (gradient tracked) or constants. Every node value is checked for
// finiteness on creation; the first NaN/Inf raises NonFiniteError naming the op.

#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "handsyn/matrix.hpp"

namespace handsyn::diff {

class NonFiniteError : public std::runtime_error {
 public:
  NonFiniteError(std::string op, std::size_t node)
      : std::runtime_error("non-finite value produced by node #" + std::to_string(node) + " (" +
                           op + ")"),
        op_(std::move(op)),
        node_(node) {}
  const std::string& op() const noexcept { return op_; }
  std::size_t node() const noexcept { return node_; }

 private:
  std::string op_;
  std::size_t node_;
};

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the Tape lives.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Mat& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  double scalar() const;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var variable(Mat value);
  Var constant(Mat value);

  const Mat& value(std::size_t id) const { return nodes_.at(id).value; }
  const Mat& value(Var v) const { return value(v.id); }
  /// Gradient of the last backward() output w.r.t. v (zeros if v does not feed it).
  const Mat& gradient(Var v);
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  const std::string& op_name(std::size_t id) const { return nodes_.at(id).op; }
  const std::vector<std::size_t>& parents(std::size_t id) const { return nodes_.at(id).parents; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Seeds d(output)/d(output) = 1 and sweeps the tape in reverse. Output must be 1×1.
  void backward(Var output);

  /// Number of nodes whose backward closure ran during the last backward().
  std::size_t last_backward_visits() const noexcept { return visits_; }

  // Used by op implementations.
  Var push(std::string op, Mat value, std::vector<std::size_t> parents, BackwardFn fn);
  Mat& grad_accumulator(std::size_t id);
  const Mat& grad_of(std::size_t id) const { return nodes_[id].grad; }

 private:
  struct Node {
    std::string op;
    Mat value;
    Mat grad;
    std::vector<std::size_t> parents;
    BackwardFn backward;
    bool requires_grad = false;
  };

  std::vector<Node> nodes_;
  std::size_t visits_ = 0;
};

/// d(objective)/d(param) for each parameter, in order.
std::vector<Mat> gradients(Var objective, std::span<const Var> params);

// Elementwise / structural ops. Shapes must agree exactly unless noted.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);  // Hadamard product
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var neg(Var a);
/// a (n×c) + row (1×c) broadcast over rows.
Var add_row(Var a, Var row);
Var matmul(Var a, Var b);
Var transpose(Var a);
Var reshape(Var a, std::size_t rows, std::size_t cols);
/// Flat slice [offset, offset + rows*cols) of a's row-major storage, shaped rows×cols.
Var slice(Var a, std::size_t offset, std::size_t rows, std::size_t cols);
/// Columns [c0, c0 + n) of a.
Var slice_cols(Var a, std::size_t c0, std::size_t n);
/// Concatenates the row-major storage of all parts and shapes it rows×cols.
Var concat(std::span<const Var> parts, std::size_t rows, std::size_t cols);

Var relu(Var a);
Var exp(Var a);
Var log(Var a);

Var sum(Var a);
Var mean(Var a);
Var sum_squares(Var a);
/// Euclidean (Frobenius) norm; gradient undefined at exactly zero and reported as zero.
Var norm(Var a);

/// Axis-angle (1×3 or 3×1) to a 3×3 rotation matrix.
Var rodrigues(Var axis_angle);
/// Row i of the n×3 result is A_i x_i + b_i with M (n×12) rows packing [A_i row-major, b_i].
Var affine_rows(Var m, Var x);

// Operator sugar.
inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, double s) { return scale(a, s); }
inline Var operator*(double s, Var a) { return scale(a, s); }

/// Plain value version of the rodrigues map, shared with non-differentiated callers.
void rodrigues_value(const double w[3], double out[9]);

}  // namespace handsyn::diff
