#include "csn/losses.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "csn/errors.hpp"
#include "csn/ops.hpp"

namespace csn {

IntensityCounts IntensityCounts::from_labels(std::size_t num_aus, const LabelBatch& labels) {
  IntensityCounts c;
  c.per_au.assign(num_aus, {});
  for (const auto& row : labels) {
    if (row.size() != num_aus) throw ShapeError("label row has " + std::to_string(row.size()) + " AUs, expected " +
                                                std::to_string(num_aus));
    for (std::size_t i = 0; i < num_aus; ++i) {
      if (row[i] < 0 || row[i] > kMaxIntensity) throw std::invalid_argument("intensity out of range [0,5]");
      ++c.per_au[i][static_cast<std::size_t>(row[i])];
    }
  }
  return c;
}

WeightTables compute_weights(const IntensityCounts& counts) {
  WeightTables w;
  const std::size_t n = counts.per_au.size();
  w.reg.resize(n);
  w.cls.resize(n);
  w.det.resize(n);
  auto inv = [](std::int64_t total) { return 1.0 / static_cast<double>(total < 1 ? 1 : total); };
  for (std::size_t i = 0; i < n; ++i) {
    const auto& c = counts.per_au[i];
    for (auto v : c)
      if (v < 0) throw std::invalid_argument("negative intensity count for AU " + std::to_string(i));

    // MSE: bins {0,1} and {2..5}, weighted by bin width over bin count.
    const double low = 2.0 * inv(c[0] + c[1]);
    const double high = 4.0 * inv(c[2] + c[3] + c[4] + c[5]);
    for (int j = 0; j <= kMaxIntensity; ++j) w.reg[i][j] = (j < 2 ? low : high) / (low + high);

    // Ordinal CE: cumulative counts below / at-or-above each threshold.
    std::array<double, kOrdinalLevels> below{}, above{};
    double denom = 0.0;
    for (std::size_t j = 1; j <= kOrdinalLevels; ++j) {
      std::int64_t lt = 0, ge = 0;
      for (std::size_t k = 0; k <= kOrdinalLevels; ++k) (k < j ? lt : ge) += c[k];
      below[j - 1] = inv(lt);
      above[j - 1] = inv(ge);
      denom += below[j - 1] + above[j - 1];
    }
    for (std::size_t j = 0; j < kOrdinalLevels; ++j) {
      w.cls[i][j][0] = below[j] / denom;
      w.cls[i][j][1] = above[j] / denom;
    }

    // Detection CE: occurrence means intensity >= 2.
    const double pos = inv(c[2] + c[3] + c[4] + c[5]);
    const double neg = inv(c[0] + c[1]);
    w.det[i][1] = pos / (pos + neg);
    w.det[i][0] = neg / (pos + neg);
  }
  return w;
}

WeightTables uniform_weights(std::size_t num_aus) {
  WeightTables w;
  w.reg.resize(num_aus);
  w.cls.resize(num_aus);
  w.det.resize(num_aus);
  for (std::size_t i = 0; i < num_aus; ++i) {
    w.reg[i].fill(1.0);
    for (auto& t : w.cls[i]) t = {1.0, 1.0};
    w.det[i] = {1.0, 1.0};
  }
  return w;
}

namespace {

void check_labels(const LabelBatch& y, const Shape& shape, std::size_t n, const WeightTables* w, const char* what) {
  if (shape.empty() || y.size() != shape[0])
    throw ShapeError(std::string(what) + ": " + std::to_string(y.size()) + " label rows for output " + shape_str(shape));
  if (shape.size() < 2 || shape[1] != n) throw ShapeError(std::string(what) + ": bad output shape " + shape_str(shape));
  for (const auto& row : y) {
    if (row.size() != n) throw ShapeError(std::string(what) + ": label length " + std::to_string(row.size()) +
                                          " != " + std::to_string(n));
    for (int v : row)
      if (v < 0 || v > kMaxIntensity) throw std::invalid_argument(std::string(what) + ": intensity out of range");
  }
  if (w && w->num_aus() != n) throw ShapeError(std::string(what) + ": weight tables cover " +
                                               std::to_string(w->num_aus()) + " AUs, outputs " + std::to_string(n));
}

// Weighted binary CE with clamped probabilities, summed over all but the batch axis.
Var weighted_ce(Tape& t, Var logits, const Tensor& target, const Tensor& weight) {
  Var p = sigmoid(logits);
  // 1 - p evaluated as sigmoid(-z) to avoid cancellation at saturated logits.
  Var log_p = log(minimum(maximum(p, kProbClamp), 1.0 - kProbClamp));
  Var log_q = log(minimum(maximum(sigmoid(neg(logits)), kProbClamp), 1.0 - kProbClamp));
  Tensor inv_target = target;
  for (auto& v : inv_target.vec()) v = 1.0 - v;
  Var ce = neg(add(mul(t.constant(target), log_p), mul(t.constant(inv_target), log_q)));
  Var weighted = mul(t.constant(weight), ce);
  std::vector<std::size_t> axes;
  for (std::size_t a = 1; a < logits.shape().size(); ++a) axes.push_back(a);
  return sum(weighted, axes);
}

}  // namespace

Var loss_reg_mse(const LabelBatch& y, Var reg, const WeightTables& w) {
  const Shape& s = reg.shape();
  const std::size_t n = s.size() == 2 ? s[1] : 0;
  check_labels(y, s, n, &w, "loss_reg_mse");
  Tensor target(s), weight(s);
  for (std::size_t b = 0; b < y.size(); ++b)
    for (std::size_t i = 0; i < n; ++i) {
      target[b * n + i] = y[b][i];
      weight[b * n + i] = w.reg[i][static_cast<std::size_t>(y[b][i])];
    }
  Tape& t = *reg.tape;
  return sum(mul(t.constant(weight), square(sub(t.constant(target), reg))), {1});
}

Var loss_reg_cos(const LabelBatch& y, Var reg) {
  const Shape& s = reg.shape();
  const std::size_t n = s.size() == 2 ? s[1] : 0;
  check_labels(y, s, n, nullptr, "loss_reg_cos");
  const std::size_t batch = y.size();
  Tensor target(s), label_norm({batch}), mask({batch});
  for (std::size_t b = 0; b < batch; ++b) {
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      target[b * n + i] = y[b][i];
      ss += static_cast<double>(y[b][i]) * y[b][i];
    }
    label_norm[b] = std::sqrt(ss);
    mask[b] = ss > 0.0 ? 1.0 : 0.0;
  }
  Tape& t = *reg.tape;
  Var dot = sum(mul(t.constant(target), reg), {1});
  Var pred_norm = sqrt(sum(square(reg), {1}));
  Var denom = add_scalar(mul(pred_norm, t.constant(label_norm)), kCosineEps);
  return mul(t.constant(mask), scalar_minus(1.0, div(dot, denom)));
}

Var loss_class(const LabelBatch& y, Var ord_logits, const WeightTables& w) {
  const Shape& s = ord_logits.shape();
  if (s.size() != 3 || s[2] != kOrdinalLevels)
    throw ShapeError("loss_class: expected [B,n,5] logits, got " + shape_str(s));
  const std::size_t n = s[1];
  check_labels(y, s, n, &w, "loss_class");
  Tensor target(s), weight(s);
  for (std::size_t b = 0; b < y.size(); ++b)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 1; j <= kOrdinalLevels; ++j) {
        const std::size_t k = (b * n + i) * kOrdinalLevels + (j - 1);
        const int c = y[b][i] >= static_cast<int>(j) ? 1 : 0;
        target[k] = c;
        weight[k] = w.cls[i][j - 1][c];
      }
  return weighted_ce(*ord_logits.tape, ord_logits, target, weight);
}

Var loss_auie(const LabelBatch& y, const HeadOutputs& head, const WeightTables& w) {
  if (head.task != Task::kIntensity) throw ShapeError("loss_auie requires intensity head outputs");
  return add(add(loss_reg_mse(y, head.reg, w), loss_reg_cos(y, head.reg)), loss_class(y, head.ord_logits, w));
}

Var loss_aud(const LabelBatch& y, Var det_logits, const WeightTables& w) {
  const Shape& s = det_logits.shape();
  const std::size_t n = s.size() == 2 ? s[1] : 0;
  check_labels(y, s, n, &w, "loss_aud");
  Tensor target(s), weight(s);
  for (std::size_t b = 0; b < y.size(); ++b)
    for (std::size_t i = 0; i < n; ++i) {
      const int c = occurs(y[b][i]) ? 1 : 0;
      target[b * n + i] = c;
      weight[b * n + i] = w.det[i][c];
    }
  return weighted_ce(*det_logits.tape, det_logits, target, weight);
}

Var batch_loss(Task task, const LabelBatch& y, const HeadOutputs& head, const WeightTables& w) {
  if (y.empty()) throw std::invalid_argument("batch_loss: empty batch");
  if (head.task != task) throw ShapeError("batch_loss: head outputs do not match task");
  Var per_sample = task == Task::kIntensity ? loss_auie(y, head, w) : loss_aud(y, head.det_logits, w);
  return mean(per_sample);
}

}  // namespace csn
