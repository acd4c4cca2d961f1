#include "csn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/Dense>

#include "csn/errors.hpp"

namespace csn {
namespace {

Tape& tape_of(Var a) {
  if (a.tape == nullptr) throw ShapeError("variable is not bound to a tape");
  return *a.tape;
}

Tape& tape_of(Var a, Var b) {
  if (a.tape != b.tape) throw ShapeError("operands recorded on different tapes");
  return tape_of(a);
}

bool drops_leading_axis(const Shape& big, const Shape& small) {
  return big.size() == small.size() + 1 && std::equal(small.begin(), small.end(), big.begin() + 1);
}

// Result shape of a broadcast binary op; throws on any other mismatch.
Shape broadcast_shape(const char* op, const Shape& a, const Shape& b) {
  if (a == b) return a;
  if (drops_leading_axis(a, b)) return a;
  if (drops_leading_axis(b, a)) return b;
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

template <class Fwd, class Da, class Db>
Var binary(OpKind kind, const char* name, Var a, Var b, Fwd fwd, Da da, Db db) {
  Tape& t = tape_of(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Shape out_shape = broadcast_shape(name, av.shape(), bv.shape());
  const std::size_t n = shape_numel(out_shape);
  const std::size_t na = av.numel(), nb = bv.numel();
  Tensor out(out_shape);
  for (std::size_t k = 0; k < n; ++k) out[k] = fwd(av[k % na], bv[k % nb]);
  const std::size_t ia = a.id, ib = b.id;
  const bool ga = a.requires_grad(), gb = b.requires_grad();
  return t.record(kind, {ia, ib}, std::move(out),
                  [=](Tape& tp, std::span<const double> g) {
                    const Tensor& x = tp.node(ia).value;
                    const Tensor& y = tp.node(ib).value;
                    if (ga) {
                      auto gx = tp.grad_buffer(ia);
                      for (std::size_t k = 0; k < n; ++k) gx[k % na] += g[k] * da(x[k % na], y[k % nb]);
                    }
                    if (gb) {
                      auto gy = tp.grad_buffer(ib);
                      for (std::size_t k = 0; k < n; ++k) gy[k % nb] += g[k] * db(x[k % na], y[k % nb]);
                    }
                  });
}

template <class Fwd, class Dx>
Var unary(OpKind kind, Var x, Fwd fwd, Dx dx) {
  Tape& t = tape_of(x);
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t k = 0; k < xv.numel(); ++k) out[k] = fwd(xv[k]);
  const std::size_t ix = x.id;
  // The derivative may depend on the output, which lands at the next slot.
  const std::size_t io = t.size();
  return t.record(kind, {ix}, std::move(out), [=](Tape& tp, std::span<const double> g) {
    const Tensor& xin = tp.node(ix).value;
    const Tensor& y = tp.node(io).value;
    auto gx = tp.grad_buffer(ix);
    for (std::size_t k = 0; k < g.size(); ++k) gx[k] += g[k] * dx(xin[k], y[k]);
  });
}

void record_mask(Tape& t, const Tensor& x, double c, bool greater) {
  if (!t.tracking_kinks()) return;
  std::vector<std::uint8_t> mask(x.numel());
  for (std::size_t k = 0; k < x.numel(); ++k) mask[k] = greater ? (x[k] > c) : (x[k] < c);
  t.append_kink_mask(mask);
}


// Maps every input flat index to its output flat index for a reduction.
std::vector<std::size_t> reduction_map(const Shape& in, const std::vector<bool>& reduced, Shape& out) {
  out.clear();
  for (std::size_t i = 0; i < in.size(); ++i)
    if (!reduced[i]) out.push_back(in[i]);
  // Output strides expressed per input axis (0 for reduced axes).
  std::vector<std::size_t> ost(in.size(), 0);
  std::size_t stride = 1;
  for (std::size_t i = in.size(); i-- > 0;) {
    if (!reduced[i]) {
      ost[i] = stride;
      stride *= in[i];
    }
  }
  const std::size_t n = shape_numel(in);
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> idx(in.size(), 0);
  std::size_t o = 0;
  for (std::size_t k = 0; k < n; ++k) {
    map[k] = o;
    for (std::size_t ax = in.size(); ax-- > 0;) {
      ++idx[ax];
      o += ost[ax];
      if (idx[ax] < in[ax]) break;
      o -= ost[ax] * idx[ax];
      idx[ax] = 0;
    }
  }
  return map;
}

Var reduce(OpKind kind, Var x, const std::vector<std::size_t>& axes, bool average) {
  Tape& t = tape_of(x);
  const Tensor& xv = x.value();
  std::vector<bool> reduced(xv.rank(), false);
  for (auto ax : axes) {
    if (ax >= xv.rank())
      throw ShapeError("reduction axis " + std::to_string(ax) + " out of range for " + shape_str(xv.shape()));
    reduced[ax] = true;
  }
  Shape out_shape;
  auto map = reduction_map(xv.shape(), reduced, out_shape);
  Tensor out(out_shape);
  const double count = static_cast<double>(xv.numel()) / static_cast<double>(out.numel());
  const double scale = average ? 1.0 / count : 1.0;
  for (std::size_t k = 0; k < xv.numel(); ++k) out[map[k]] += xv[k];
  if (average)
    for (auto& v : out.vec()) v *= scale;
  const std::size_t ix = x.id;
  return t.record(kind, {ix}, std::move(out), [ix, map = std::move(map), scale](Tape& tp, std::span<const double> g) {
    auto gx = tp.grad_buffer(ix);
    for (std::size_t k = 0; k < gx.size(); ++k) gx[k] += g[map[k]] * scale;
  });
}

}  // namespace

Var add(Var a, Var b) {
  return binary(OpKind::kAdd, "add", a, b, [](double x, double y) { return x + y; },
                [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Var sub(Var a, Var b) {
  return binary(OpKind::kSub, "sub", a, b, [](double x, double y) { return x - y; },
                [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Var mul(Var a, Var b) {
  return binary(OpKind::kMul, "mul", a, b, [](double x, double y) { return x * y; },
                [](double, double y) { return y; }, [](double x, double) { return x; });
}

Var div(Var a, Var b) {
  return binary(OpKind::kDiv, "div", a, b, [](double x, double y) { return x / y; },
                [](double, double y) { return 1.0 / y; }, [](double x, double y) { return -x / (y * y); });
}

Var add_scalar(Var x, double c) {
  return unary(OpKind::kAddScalar, x, [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

Var mul_scalar(Var x, double c) {
  return unary(OpKind::kMulScalar, x, [c](double v) { return v * c; }, [c](double, double) { return c; });
}

Var neg(Var x) { return mul_scalar(x, -1.0); }

Var scalar_minus(double c, Var x) { return add_scalar(neg(x), c); }

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0))
    throw ShapeError("matmul: incompatible shapes " + shape_str(av.shape()) + " and " + shape_str(bv.shape()));
  const std::size_t m = av.dim(0), kk = av.dim(1), n = bv.dim(1);
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < kk; ++p) {
      const double aip = av[i * kk + p];
      const double* brow = &bv[p * n];
      double* orow = &out[i * n];
      for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
    }
  const std::size_t ia = a.id, ib = b.id;
  const bool ga = a.requires_grad(), gb = b.requires_grad();
  return t.record(OpKind::kMatmul, {ia, ib}, std::move(out), [=](Tape& tp, std::span<const double> g) {
    const Tensor& x = tp.node(ia).value;
    const Tensor& y = tp.node(ib).value;
    if (ga) {
      auto gx = tp.grad_buffer(ia);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < kk; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * y[p * n + j];
          gx[i * kk + p] += acc;
        }
    }
    if (gb) {
      auto gy = tp.grad_buffer(ib);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < kk; ++p) {
          const double xip = x[i * kk + p];
          for (std::size_t j = 0; j < n; ++j) gy[p * n + j] += xip * g[i * n + j];
        }
    }
  });
}

namespace {

struct ConvGeom {
  std::size_t batch, cin, h, w, cout, k, stride, pad, oh, ow;

  // Output columns whose input column ow*stride - pad + kx lies inside [0, w).
  std::pair<std::size_t, std::size_t> valid_range(std::size_t kx, std::size_t extent, std::size_t out_extent) const {
    // smallest o with o*stride + kx >= pad
    std::size_t lo = kx >= pad ? 0 : (pad - kx + stride - 1) / stride;
    // largest o with o*stride + kx - pad <= extent - 1
    const std::size_t lim = extent - 1 + pad;
    std::size_t hi = kx > lim ? 0 : (lim - kx) / stride + 1;
    hi = std::min(hi, out_extent);
    if (lo > hi) lo = hi;
    return {lo, hi};
  }
};

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Map = Eigen::Map<RowMat>;
using ConstMap = Eigen::Map<const RowMat>;

// Rows (ci, ky, kx), columns (b, oy, ox); zero where the tap falls in padding.
RowMat im2col(const ConvGeom& g, const double* x) {
  const std::size_t p = g.oh * g.ow, ncols = g.batch * p;
  RowMat cols = RowMat::Zero(static_cast<Eigen::Index>(g.cin * g.k * g.k), static_cast<Eigen::Index>(ncols));
  for (std::size_t ci = 0; ci < g.cin; ++ci)
    for (std::size_t ky = 0; ky < g.k; ++ky)
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        double* row = cols.row(static_cast<Eigen::Index>((ci * g.k + ky) * g.k + kx)).data();
        auto [ylo, yhi] = g.valid_range(ky, g.h, g.oh);
        auto [xlo, xhi] = g.valid_range(kx, g.w, g.ow);
        for (std::size_t b = 0; b < g.batch; ++b) {
          const double* plane = x + (b * g.cin + ci) * g.h * g.w;
          for (std::size_t oy = ylo; oy < yhi; ++oy) {
            const double* src = plane + (oy * g.stride + ky - g.pad) * g.w;
            double* dst = row + b * p + oy * g.ow;
            for (std::size_t ox = xlo; ox < xhi; ++ox) dst[ox] = src[ox * g.stride + kx - g.pad];
          }
        }
      }
  return cols;
}

// Adjoint of im2col: accumulates column gradients into the input gradient.
void col2im(const ConvGeom& g, const RowMat& cols, double* gx) {
  const std::size_t p = g.oh * g.ow;
  for (std::size_t ci = 0; ci < g.cin; ++ci)
    for (std::size_t ky = 0; ky < g.k; ++ky)
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        const double* row = cols.row(static_cast<Eigen::Index>((ci * g.k + ky) * g.k + kx)).data();
        auto [ylo, yhi] = g.valid_range(ky, g.h, g.oh);
        auto [xlo, xhi] = g.valid_range(kx, g.w, g.ow);
        for (std::size_t b = 0; b < g.batch; ++b) {
          double* plane = gx + (b * g.cin + ci) * g.h * g.w;
          for (std::size_t oy = ylo; oy < yhi; ++oy) {
            double* dst = plane + (oy * g.stride + ky - g.pad) * g.w;
            const double* src = row + b * p + oy * g.ow;
            for (std::size_t ox = xlo; ox < xhi; ++ox) dst[ox * g.stride + kx - g.pad] += src[ox];
          }
        }
      }
}

// [cout, (b, pos)] <-> [b, cout, pos].
void scatter_channels(const ConvGeom& g, const RowMat& m, const double* bias, double* out) {
  const std::size_t p = g.oh * g.ow;
  for (std::size_t b = 0; b < g.batch; ++b)
    for (std::size_t co = 0; co < g.cout; ++co) {
      const double* src = m.row(static_cast<Eigen::Index>(co)).data() + b * p;
      double* dst = out + (b * g.cout + co) * p;
      const double add = bias ? bias[co] : 0.0;
      for (std::size_t q = 0; q < p; ++q) dst[q] = src[q] + add;
    }
}

RowMat gather_channels(const ConvGeom& g, const double* in) {
  const std::size_t p = g.oh * g.ow;
  RowMat m(static_cast<Eigen::Index>(g.cout), static_cast<Eigen::Index>(g.batch * p));
  for (std::size_t b = 0; b < g.batch; ++b)
    for (std::size_t co = 0; co < g.cout; ++co)
      std::copy_n(in + (b * g.cout + co) * p, p, m.row(static_cast<Eigen::Index>(co)).data() + b * p);
  return m;
}

}  // namespace

Var conv2d(Var x, Var weight, std::optional<Var> bias, std::size_t stride, std::size_t pad) {
  Tape& t = tape_of(x, weight);
  if (bias) tape_of(x, *bias);
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  if (xv.rank() != 4 || wv.rank() != 4)
    throw ShapeError("conv2d: expected rank-4 input and weight, got " + shape_str(xv.shape()) + " and " +
                     shape_str(wv.shape()));
  if (wv.dim(1) != xv.dim(1) || wv.dim(2) != wv.dim(3))
    throw ShapeError("conv2d: weight " + shape_str(wv.shape()) + " incompatible with input " + shape_str(xv.shape()));
  if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
  ConvGeom g{xv.dim(0), xv.dim(1), xv.dim(2), xv.dim(3), wv.dim(0), wv.dim(2), stride, pad, 0, 0};
  if (g.h + 2 * pad < g.k || g.w + 2 * pad < g.k) throw ShapeError("conv2d: kernel larger than padded input");
  g.oh = (g.h + 2 * pad - g.k) / stride + 1;
  g.ow = (g.w + 2 * pad - g.k) / stride + 1;
  if (bias && bias->value().shape() != Shape{g.cout})
    throw ShapeError("conv2d: bias shape " + shape_str(bias->value().shape()) + " != [" + std::to_string(g.cout) + "]");

  Tensor out({g.batch, g.cout, g.oh, g.ow});
  {
    const RowMat cols = im2col(g, xv.data().data());
    const RowMat prod = ConstMap(wv.data().data(), g.cout, g.cin * g.k * g.k) * cols;
    scatter_channels(g, prod, bias ? bias->value().data().data() : nullptr, out.data().data());
  }

  std::vector<std::size_t> inputs{x.id, weight.id};
  if (bias) inputs.push_back(bias->id);
  const std::size_t ixid = x.id, iwid = weight.id;
  const std::size_t ibid = bias ? bias->id : 0;
  const bool gx_on = x.requires_grad(), gw_on = weight.requires_grad();
  const bool gb_on = bias && bias->requires_grad();
  return t.record(OpKind::kConv2d, std::move(inputs), std::move(out), [=](Tape& tp, std::span<const double> gout) {
    const RowMat gmat = gather_channels(g, gout.data());
    if (gb_on) {
      auto gb = tp.grad_buffer(ibid);
      const Eigen::VectorXd s = gmat.rowwise().sum();
      for (std::size_t co = 0; co < g.cout; ++co) gb[co] += s[static_cast<Eigen::Index>(co)];
    }
    const std::size_t kdim = g.cin * g.k * g.k;
    if (gw_on) {
      const RowMat cols = im2col(g, tp.node(ixid).value.data().data());
      Map(tp.grad_buffer(iwid).data(), g.cout, kdim).noalias() += gmat * cols.transpose();
    }
    if (gx_on) {
      const RowMat gcols = ConstMap(tp.node(iwid).value.data().data(), g.cout, kdim).transpose() * gmat;
      col2im(g, gcols, tp.grad_buffer(ixid).data());
    }
  });
}

Var relu(Var x) {
  record_mask(tape_of(x), x.value(), 0.0, true);
  return unary(OpKind::kRelu, x, [](double v) { return v > 0.0 ? v : 0.0; },
               [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var sigmoid(Var x) {
  return unary(
      OpKind::kSigmoid, x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var log(Var x) {
  return unary(OpKind::kLog, x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Var sqrt(Var x) {
  return unary(OpKind::kSqrt, x, [](double v) { return std::sqrt(v); },
               [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; });
}

Var square(Var x) {
  return unary(OpKind::kSquare, x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Var sum(Var x) {
  std::vector<std::size_t> axes(x.value().rank());
  for (std::size_t i = 0; i < axes.size(); ++i) axes[i] = i;
  return reduce(OpKind::kSum, x, axes, false);
}

Var mean(Var x) {
  std::vector<std::size_t> axes(x.value().rank());
  for (std::size_t i = 0; i < axes.size(); ++i) axes[i] = i;
  return reduce(OpKind::kMean, x, axes, true);
}

Var sum(Var x, std::vector<std::size_t> axes) { return reduce(OpKind::kSum, x, axes, false); }

Var mean(Var x, std::vector<std::size_t> axes) { return reduce(OpKind::kMean, x, axes, true); }

Var global_avg_pool(Var x) {
  if (x.value().rank() != 4) throw ShapeError("global_avg_pool: expected [B,C,H,W], got " + shape_str(x.shape()));
  Var m = reduce(OpKind::kGlobalAvgPool, x, {2, 3}, true);
  return m;
}

Var reshape(Var x, Shape shape) {
  Tape& t = tape_of(x);
  if (shape_numel(shape) != x.value().numel())
    throw ShapeError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  Tensor out(std::move(shape), x.value().vec());
  const std::size_t ix = x.id;
  return t.record(OpKind::kReshape, {ix}, std::move(out), [ix](Tape& tp, std::span<const double> g) {
    auto gx = tp.grad_buffer(ix);
    for (std::size_t k = 0; k < g.size(); ++k) gx[k] += g[k];
  });
}

Var concat(std::span<const Var> xs, std::size_t axis) {
  if (xs.empty()) throw ShapeError("concat of zero tensors");
  Tape& t = tape_of(xs.front());
  const Shape& first = xs.front().shape();
  if (axis >= first.size()) throw ShapeError("concat: axis out of range for " + shape_str(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& v : xs) {
    tape_of(xs.front(), v);
    const Shape& s = v.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == first[i];
    if (!ok) throw ShapeError("concat: shape " + shape_str(s) + " incompatible with " + shape_str(first));
    out_shape[axis] += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
  Tensor out(out_shape);
  const std::size_t out_row = out_shape[axis] * inner;
  std::vector<std::size_t> ids, widths, offsets;
  std::size_t off = 0;
  for (const auto& v : xs) {
    const std::size_t wdt = v.shape()[axis] * inner;
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(&v.value()[o * wdt], wdt, &out[o * out_row + off]);
    ids.push_back(v.id);
    widths.push_back(wdt);
    offsets.push_back(off);
    off += wdt;
  }
  return t.record(OpKind::kConcat, ids, std::move(out), [=](Tape& tp, std::span<const double> g) {
    for (std::size_t n = 0; n < ids.size(); ++n) {
      if (!tp.node(ids[n]).requires_grad) continue;
      auto gx = tp.grad_buffer(ids[n]);
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t c = 0; c < widths[n]; ++c) gx[o * widths[n] + c] += g[o * out_row + offsets[n] + c];
    }
  });
}

Var narrow(Var x, std::size_t axis, std::size_t start, std::size_t length) {
  Tape& t = tape_of(x);
  const Shape& s = x.shape();
  if (axis >= s.size() || length == 0 || start + length > s[axis])
    throw ShapeError("narrow: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                     ") invalid on axis " + std::to_string(axis) + " of " + shape_str(s));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  Shape out_shape = s;
  out_shape[axis] = length;
  Tensor out(out_shape);
  const std::size_t in_row = s[axis] * inner, out_row = length * inner, off = start * inner;
  for (std::size_t o = 0; o < outer; ++o) std::copy_n(&x.value()[o * in_row + off], out_row, &out[o * out_row]);
  const std::size_t ix = x.id;
  return t.record(OpKind::kNarrow, {ix}, std::move(out), [=](Tape& tp, std::span<const double> g) {
    auto gx = tp.grad_buffer(ix);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t c = 0; c < out_row; ++c) gx[o * in_row + off + c] += g[o * out_row + c];
  });
}

Var maximum(Var x, double c) {
  record_mask(tape_of(x), x.value(), c, true);
  return unary(OpKind::kMaximum, x, [c](double v) { return v > c ? v : c; },
               [c](double v, double) { return v > c ? 1.0 : 0.0; });
}

Var minimum(Var x, double c) {
  record_mask(tape_of(x), x.value(), c, false);
  return unary(OpKind::kMinimum, x, [c](double v) { return v < c ? v : c; },
               [c](double v, double) { return v < c ? 1.0 : 0.0; });
}

}  // namespace csn
