#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "csn/tensor.hpp"

namespace csn {

enum class OpKind {
  kLeaf,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kAddScalar,
  kMulScalar,
  kMatmul,
  kConv2d,
  kRelu,
  kSigmoid,
  kLog,
  kSqrt,
  kSquare,
  kSum,
  kMean,
  kGlobalAvgPool,
  kReshape,
  kConcat,
  kNarrow,
  kMaximum,
  kMinimum,
};

std::string_view op_name(OpKind op);

class Tape;

// Handle to a node recorded on a Tape. Cheap to copy; valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
};

// Receives the gradient w.r.t. the node output and accumulates into its inputs.
using BackwardFn = std::function<void(Tape&, std::span<const double> out_grad)>;

struct TapeNode {
  OpKind op = OpKind::kLeaf;
  std::vector<std::size_t> inputs;
  Tensor value;
  bool requires_grad = false;
  std::vector<double> grad;  // empty until something flows into it
  BackwardFn backward;
};

// Records a computation as a DAG in creation order. Single-threaded; distinct
// tapes are independent.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = false);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  // Appends a node. `backward` is dropped when no input requires grad.
  Var record(OpKind op, std::vector<std::size_t> inputs, Tensor value, BackwardFn backward);

  const TapeNode& node(std::size_t id) const { return nodes_.at(id); }
  std::size_t size() const { return nodes_.size(); }

  // Gradient buffer for node `id`, allocated zeroed on first access.
  std::span<double> grad_buffer(std::size_t id);

  // dLoss/d(var); zeros when nothing reached the node.
  Tensor grad(Var v) const;

  // Populates grads of every requires_grad node reachable from the scalar
  // `loss`. Leaf grads accumulate across calls; interior grads are recomputed.
  void backward(Var loss);

  void zero_grad();

  // Kink bookkeeping for finite-difference checks: relu/max/min append their
  // active masks while enabled.
  void set_track_kinks(bool on) { track_kinks_ = on; }
  bool tracking_kinks() const { return track_kinks_; }
  void append_kink_mask(std::span<const std::uint8_t> mask);
  const std::vector<std::uint8_t>& kink_masks() const { return kink_masks_; }

 private:
  std::vector<TapeNode> nodes_;
  bool track_kinks_ = false;
  std::vector<std::uint8_t> kink_masks_;
};

}  // namespace csn
