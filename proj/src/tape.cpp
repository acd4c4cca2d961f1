#include "csn/tape.hpp"

#include <algorithm>
#include <cmath>

#include "csn/errors.hpp"

namespace csn {

std::string_view op_name(OpKind op) {
  switch (op) {
    case OpKind::kLeaf: return "leaf";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kDiv: return "div";
    case OpKind::kAddScalar: return "add_scalar";
    case OpKind::kMulScalar: return "mul_scalar";
    case OpKind::kMatmul: return "matmul";
    case OpKind::kConv2d: return "conv2d";
    case OpKind::kRelu: return "relu";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kLog: return "log";
    case OpKind::kSqrt: return "sqrt";
    case OpKind::kSquare: return "square";
    case OpKind::kSum: return "sum";
    case OpKind::kMean: return "mean";
    case OpKind::kGlobalAvgPool: return "global_avg_pool";
    case OpKind::kReshape: return "reshape";
    case OpKind::kConcat: return "concat";
    case OpKind::kNarrow: return "narrow";
    case OpKind::kMaximum: return "maximum";
    case OpKind::kMinimum: return "minimum";
  }
  return "?";
}

const Tensor& Var::value() const { return tape->node(id).value; }

bool Var::requires_grad() const { return tape->node(id).requires_grad; }

Var Tape::leaf(Tensor value, bool requires_grad) {
  if (!value.all_finite()) throw NumericalError("non-finite value in leaf tensor");
  TapeNode n;
  n.op = OpKind::kLeaf;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

Var Tape::record(OpKind op, std::vector<std::size_t> inputs, Tensor value, BackwardFn backward) {
  if (!value.all_finite())
    throw NumericalError("non-finite result from " + std::string(op_name(op)) + " " +
                         shape_str(value.shape()));
  TapeNode n;
  n.op = op;
  n.requires_grad = std::any_of(inputs.begin(), inputs.end(),
                                [&](std::size_t i) { return nodes_.at(i).requires_grad; });
  n.inputs = std::move(inputs);
  n.value = std::move(value);
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

std::span<double> Tape::grad_buffer(std::size_t id) {
  auto& n = nodes_.at(id);
  if (n.grad.empty()) n.grad.assign(n.value.numel(), 0.0);
  return n.grad;
}

Tensor Tape::grad(Var v) const {
  const auto& n = nodes_.at(v.id);
  if (n.grad.empty()) return Tensor(n.value.shape(), 0.0);
  return Tensor(n.value.shape(), n.grad);
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw ShapeError("backward: variable belongs to another tape");
  if (nodes_.at(loss.id).value.numel() != 1)
    throw ShapeError("backward requires a scalar loss, got shape " +
                     shape_str(nodes_[loss.id].value.shape()));
  for (auto& n : nodes_)
    if (n.op != OpKind::kLeaf) n.grad.clear();
  if (!nodes_[loss.id].requires_grad) return;
  grad_buffer(loss.id)[0] += 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    auto& n = nodes_[i];
    if (n.op == OpKind::kLeaf || !n.requires_grad || n.grad.empty()) continue;
    // Inputs always precede their consumer, so this buffer stays untouched.
    n.backward(*this, n.grad);
  }
  for (const auto& n : nodes_)
    for (double g : n.grad)
      if (!std::isfinite(g)) throw NumericalError("non-finite gradient during backward");
}

void Tape::zero_grad() {
  for (auto& n : nodes_) n.grad.clear();
}

void Tape::append_kink_mask(std::span<const std::uint8_t> mask) {
  if (track_kinks_) kink_masks_.insert(kink_masks_.end(), mask.begin(), mask.end());
}

}  // namespace csn
