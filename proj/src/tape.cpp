#include "disagree/tape.hpp"

#include <algorithm>
#include <cmath>

namespace disagree {

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Leaf: return "leaf";
    case OpKind::Affine: return "affine";
    case OpKind::Relu: return "relu";
    case OpKind::Tanh: return "tanh";
    case OpKind::Softmax: return "softmax";
    case OpKind::Log: return "log";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::SquaredNorm: return "squared_norm";
    case OpKind::RowSum: return "row_sum";
    case OpKind::Sum: return "sum";
    case OpKind::Mean: return "mean";
    case OpKind::Concat: return "concat";
    case OpKind::StopGradient: return "stop_gradient";
  }
  return "unknown";
}

namespace kernels {

Tensor affine(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.cols() != weight.rows() || bias.rows() != 1 || bias.cols() != weight.cols()) {
    throw ShapeError("affine: input " + shape_string(x) + ", weight " +
                     shape_string(weight) + ", bias " + shape_string(bias));
  }
  Tensor out = x * weight;
  out.rowwise() += bias.row(0);
  return out;
}

Tensor relu(const Tensor& x) { return x.cwiseMax(0.0); }

Tensor tanh(const Tensor& x) { return x.array().tanh().matrix(); }

Tensor softmax(const Tensor& x) {
  Tensor out(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    const double top = x.row(r).maxCoeff();
    out.row(r) = (x.row(r).array() - top).exp().matrix();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

Tensor log(const Tensor& x) { return x.array().max(kLogFloor).log().matrix(); }

Tensor squared_norm(const Tensor& x) { return x.rowwise().squaredNorm(); }

}  // namespace kernels

namespace {

bool broadcastable(const Tensor& small, Index rows, Index cols) {
  return (small.rows() == rows || small.rows() == 1) &&
         (small.cols() == cols || small.cols() == 1);
}

Tensor expand(const Tensor& t, Index rows, Index cols) {
  if (t.rows() == rows && t.cols() == cols) return t;
  if (t.rows() == 1 && t.cols() == 1) return Tensor::Constant(rows, cols, t(0, 0));
  if (t.rows() == 1) return t.replicate(rows, 1);
  return t.replicate(1, cols);
}

// Sums a full-shape gradient back down to the shape of a broadcast operand.
Tensor reduce_to(const Tensor& g, Index rows, Index cols) {
  if (g.rows() == rows && g.cols() == cols) return g;
  if (rows == 1 && cols == 1) return Tensor::Constant(1, 1, g.sum());
  if (rows == 1) return g.colwise().sum();
  return g.rowwise().sum();
}

Var binary(OpKind kind, Var a, Var b) {
  Tape& tape = a.tape();
  if (&tape != &b.tape()) throw std::invalid_argument("operands live on different tapes");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const Index rows = std::max(av.rows(), bv.rows());
  const Index cols = std::max(av.cols(), bv.cols());
  if (!broadcastable(av, rows, cols) || !broadcastable(bv, rows, cols)) {
    throw ShapeError(std::string(op_name(kind)) + ": cannot broadcast " +
                     shape_string(av) + " with " + shape_string(bv));
  }
  const Tensor ae = expand(av, rows, cols);
  const Tensor be = expand(bv, rows, cols);
  Tensor out;
  switch (kind) {
    case OpKind::Add: out = ae + be; break;
    case OpKind::Sub: out = ae - be; break;
    case OpKind::Mul: out = ae.cwiseProduct(be); break;
    default: throw std::logic_error("binary: not a binary op");
  }
  return tape.record(kind, {a.id(), b.id()}, std::move(out));
}

}  // namespace

const Tensor& Var::value() const { return tape_->value(*this); }

Var Tape::parameter(Tensor value) {
  nodes_.push_back(TapeNode{OpKind::Leaf, {}, std::move(value), true, true});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::constant(Tensor value) {
  nodes_.push_back(TapeNode{OpKind::Leaf, {}, std::move(value), false, false});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::constant(double value) { return constant(Tensor::Constant(1, 1, value)); }

Var Tape::record(OpKind kind, std::vector<int> inputs, Tensor value) {
  bool tracked = false;
  if (kind != OpKind::StopGradient) {
    for (const int in : inputs) tracked = tracked || nodes_[static_cast<std::size_t>(in)].requires_grad;
  }
  nodes_.push_back(TapeNode{kind, std::move(inputs), std::move(value), false, tracked});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

void Tape::clear() {
  nodes_.clear();
  grads_.clear();
  has_grad_.clear();
}

void Tape::accumulate(int id, const Tensor& g) {
  const auto i = static_cast<std::size_t>(id);
  if (!nodes_[i].requires_grad) return;
  if (has_grad_[i]) {
    grads_[i] += g;
  } else {
    grads_[i] = g;
    has_grad_[i] = 1;
  }
}

void Tape::backward(Var output) {
  const Tensor& out = value(output);
  if (out.rows() != 1 || out.cols() != 1) {
    throw ShapeError("backward: output must be scalar, got " + shape_string(out));
  }
  grads_.assign(nodes_.size(), Tensor());
  has_grad_.assign(nodes_.size(), 0);
  accumulate(output.id(), Tensor::Ones(1, 1));
  for (int id = output.id(); id >= 0; --id) {
    if (has_grad_[static_cast<std::size_t>(id)]) propagate(id);
  }
}

void Tape::propagate(int id) {
  const TapeNode& n = nodes_[static_cast<std::size_t>(id)];
  const Tensor& g = grads_[static_cast<std::size_t>(id)];
  auto in = [&](int k) -> const Tensor& {
    return nodes_[static_cast<std::size_t>(n.inputs[static_cast<std::size_t>(k)])].value;
  };
  auto needs = [&](int k) {
    return nodes_[static_cast<std::size_t>(n.inputs[static_cast<std::size_t>(k)])].requires_grad;
  };
  auto send = [&](int k, const Tensor& grad) {
    accumulate(n.inputs[static_cast<std::size_t>(k)], grad);
  };

  switch (n.kind) {
    case OpKind::Leaf:
    case OpKind::StopGradient:
      break;
    case OpKind::Affine: {
      if (needs(0)) send(0, g * in(1).transpose());
      if (needs(1)) send(1, in(0).transpose() * g);
      if (needs(2)) send(2, g.colwise().sum());
      break;
    }
    case OpKind::Relu:
      send(0, (in(0).array() > 0.0).select(g, 0.0));
      break;
    case OpKind::Tanh:
      send(0, g.cwiseProduct((1.0 - n.value.array().square()).matrix()));
      break;
    case OpKind::Softmax: {
      const Vector dot = g.cwiseProduct(n.value).rowwise().sum();
      Tensor dx = g;
      dx.colwise() -= dot;
      send(0, dx.cwiseProduct(n.value));
      break;
    }
    case OpKind::Log:
      send(0, g.cwiseQuotient(in(0).cwiseMax(kernels::kLogFloor)));
      break;
    case OpKind::Add:
    case OpKind::Sub:
    case OpKind::Mul: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      if (needs(0)) {
        const Tensor ga = n.kind == OpKind::Mul ? Tensor(g.cwiseProduct(expand(b, g.rows(), g.cols()))) : g;
        send(0, reduce_to(ga, a.rows(), a.cols()));
      }
      if (needs(1)) {
        Tensor gb;
        if (n.kind == OpKind::Mul) gb = g.cwiseProduct(expand(a, g.rows(), g.cols()));
        else if (n.kind == OpKind::Sub) gb = -g;
        else gb = g;
        send(1, reduce_to(gb, b.rows(), b.cols()));
      }
      break;
    }
    case OpKind::SquaredNorm: {
      Tensor dx = 2.0 * in(0);
      dx.array().colwise() *= g.col(0).array();
      send(0, dx);
      break;
    }
    case OpKind::RowSum:
      send(0, g.col(0).replicate(1, in(0).cols()));
      break;
    case OpKind::Sum:
      send(0, Tensor::Constant(in(0).rows(), in(0).cols(), g(0, 0)));
      break;
    case OpKind::Mean: {
      const double count = static_cast<double>(in(0).size());
      send(0, Tensor::Constant(in(0).rows(), in(0).cols(), g(0, 0) / count));
      break;
    }
    case OpKind::Concat: {
      Index offset = 0;
      for (std::size_t k = 0; k < n.inputs.size(); ++k) {
        const Index width = in(static_cast<int>(k)).cols();
        if (needs(static_cast<int>(k))) send(static_cast<int>(k), g.middleCols(offset, width));
        offset += width;
      }
      break;
    }
  }
}

Tensor Tape::grad(Var v) const {
  const auto i = static_cast<std::size_t>(v.id());
  if (i < has_grad_.size() && has_grad_[i]) return grads_[i];
  const Tensor& val = nodes_[i].value;
  return Tensor::Zero(val.rows(), val.cols());
}

Var affine(Var x, Var weight, Var bias) {
  return x.tape().record(OpKind::Affine, {x.id(), weight.id(), bias.id()},
                         kernels::affine(x.value(), weight.value(), bias.value()));
}

Var relu(Var x) { return x.tape().record(OpKind::Relu, {x.id()}, kernels::relu(x.value())); }

Var tanh(Var x) { return x.tape().record(OpKind::Tanh, {x.id()}, kernels::tanh(x.value())); }

Var softmax(Var x) {
  return x.tape().record(OpKind::Softmax, {x.id()}, kernels::softmax(x.value()));
}

Var log(Var x) { return x.tape().record(OpKind::Log, {x.id()}, kernels::log(x.value())); }

Var operator+(Var a, Var b) { return binary(OpKind::Add, a, b); }
Var operator-(Var a, Var b) { return binary(OpKind::Sub, a, b); }
Var operator*(Var a, Var b) { return binary(OpKind::Mul, a, b); }

Var squared_norm(Var x) {
  return x.tape().record(OpKind::SquaredNorm, {x.id()}, kernels::squared_norm(x.value()));
}

Var row_sum(Var x) {
  return x.tape().record(OpKind::RowSum, {x.id()}, x.value().rowwise().sum());
}

Var sum(Var x) {
  return x.tape().record(OpKind::Sum, {x.id()}, Tensor::Constant(1, 1, x.value().sum()));
}

Var mean(Var x) {
  return x.tape().record(OpKind::Mean, {x.id()}, Tensor::Constant(1, 1, x.value().mean()));
}

Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  const Index rows = parts.front().rows();
  Index cols = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows) {
      throw ShapeError("concat: row mismatch " + shape_string(p.value()) + " vs " +
                       std::to_string(rows) + " rows");
    }
    cols += p.cols();
  }
  Tensor out(rows, cols);
  std::vector<int> ids;
  Index offset = 0;
  for (const Var& p : parts) {
    out.middleCols(offset, p.cols()) = p.value();
    offset += p.cols();
    ids.push_back(p.id());
  }
  return parts.front().tape().record(OpKind::Concat, std::move(ids), std::move(out));
}

Var concat(std::initializer_list<Var> parts) {
  return concat(std::span<const Var>(parts.begin(), parts.size()));
}

Var stop_gradient(Var x) {
  return x.tape().record(OpKind::StopGradient, {x.id()}, x.value());
}

Var scale(Var x, double factor) { return x * x.tape().constant(factor); }

}  // namespace disagree
