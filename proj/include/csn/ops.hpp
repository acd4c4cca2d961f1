#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "csn/tape.hpp"

// Differentiable primitives. Binary elementwise ops accept equal shapes or an
// operand whose shape equals the other's shape without its leading axis
// (broadcast over the batch). Every other mismatch throws ShapeError.
namespace csn {

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);

Var add_scalar(Var x, double c);
Var mul_scalar(Var x, double c);
Var neg(Var x);
// c - x
Var scalar_minus(double c, Var x);

// [M,K] x [K,N] -> [M,N]
Var matmul(Var a, Var b);

// x [B,Cin,H,W], weight [Cout,Cin,k,k], bias [Cout]; square kernels,
// zero padding. Output [B,Cout,(H+2p-k)/s+1,(W+2p-k)/s+1].
Var conv2d(Var x, Var weight, std::optional<Var> bias, std::size_t stride, std::size_t pad);

Var relu(Var x);
Var sigmoid(Var x);
Var log(Var x);
// Backward uses gradient 0 at exactly 0.
Var sqrt(Var x);
Var square(Var x);

// Full reduction to a scalar.
Var sum(Var x);
Var mean(Var x);
// Reduction over `axes` (removed from the shape).
Var sum(Var x, std::vector<std::size_t> axes);
Var mean(Var x, std::vector<std::size_t> axes);

// [B,C,H,W] -> [B,C]
Var global_avg_pool(Var x);
Var reshape(Var x, Shape shape);
Var concat(std::span<const Var> xs, std::size_t axis);
Var narrow(Var x, std::size_t axis, std::size_t start, std::size_t length);

// Elementwise max/min with a constant; gradient passes only where the
// constant is not selected (strict inequality).
Var maximum(Var x, double c);
Var minimum(Var x, double c);

}  // namespace csn
