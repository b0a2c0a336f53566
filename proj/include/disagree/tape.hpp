#pragma once

#include "disagree/tensor.hpp"

#include <initializer_list>
#include <span>
#include <string_view>
#include <vector>

namespace disagree {

/// Every operation the tape can record. The set is closed: MLPs, the
/// disagreement reward, the imagined-rollout objective and the PPO /
/// REINFORCE losses are all built from these.
enum class OpKind {
  Leaf,
  Affine,        // x W + b, b broadcast over rows
  Relu,
  Tanh,
  Softmax,       // row-wise
  Log,
  Add,           // elementwise, with scalar / row / column broadcasting
  Sub,
  Mul,
  SquaredNorm,   // row-wise sum of squares: n x d -> n x 1
  RowSum,        // n x d -> n x 1
  Sum,           // all elements -> 1 x 1
  Mean,          // all elements -> 1 x 1
  Concat,        // column-wise
  StopGradient,
};

std::string_view op_name(OpKind kind);

/// Forward kernels shared by the tape and the untraced code paths, so both
/// produce bit-identical values.
namespace kernels {
Tensor affine(const Tensor& x, const Tensor& weight, const Tensor& bias);
Tensor relu(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor softmax(const Tensor& x);
Tensor log(const Tensor& x);
Tensor squared_norm(const Tensor& x);
/// Inputs at or below this are clamped before taking the log.
inline constexpr double kLogFloor = 1e-300;
}  // namespace kernels

class Tape;

/// Handle to a node on a tape. Cheap to copy; only valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  int id() const { return id_; }
  const Tensor& value() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

struct TapeNode {
  OpKind kind = OpKind::Leaf;
  std::vector<int> inputs;
  Tensor value;
  bool is_parameter = false;
  bool requires_grad = false;
};

/// Reverse-mode tape. Single writer; nodes are appended in creation order so
/// inputs always precede outputs.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf whose gradient is tracked.
  Var parameter(Tensor value);
  /// Leaf treated as a constant.
  Var constant(Tensor value);
  Var constant(double value);

  Var record(OpKind kind, std::vector<int> inputs, Tensor value);

  const TapeNode& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
  const Tensor& value(Var v) const { return node(v.id()).value; }
  std::size_t size() const { return nodes_.size(); }

  /// Accumulates d(output)/d(node) for every node that depends on a
  /// parameter. Throws ShapeError unless output is 1 x 1.
  void backward(Var output);

  /// Gradient of the last backward() output with respect to v. Nodes that
  /// the output does not depend on get a zero tensor of matching shape.
  Tensor grad(Var v) const;

  void clear();

 private:
  void accumulate(int id, const Tensor& g);
  void propagate(int id);

  std::vector<TapeNode> nodes_;
  std::vector<Tensor> grads_;
  std::vector<char> has_grad_;
};

// Recorded operations.
Var affine(Var x, Var weight, Var bias);
Var relu(Var x);
Var tanh(Var x);
Var softmax(Var x);
Var log(Var x);
Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator*(Var a, Var b);
Var squared_norm(Var x);
Var row_sum(Var x);
Var sum(Var x);
Var mean(Var x);
Var concat(std::span<const Var> parts);
Var concat(std::initializer_list<Var> parts);
Var stop_gradient(Var x);

// Conveniences expressed with the ops above.
Var scale(Var x, double factor);
inline Var operator*(double factor, Var x) { return scale(x, factor); }
inline Var operator*(Var x, double factor) { return scale(x, factor); }
inline Var operator-(Var x) { return scale(x, -1.0); }

}  // namespace disagree
