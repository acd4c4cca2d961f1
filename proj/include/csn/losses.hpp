#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "csn/backbone.hpp"

namespace csn {

// Per-sample integer intensities, one row per sample, n AUs per row.
using LabelBatch = std::vector<std::vector<int>>;

// n_{i,j}: occurrences of AU i at intensity j in the training split.
struct IntensityCounts {
  std::vector<std::array<std::int64_t, kMaxIntensity + 1>> per_au;

  static IntensityCounts from_labels(std::size_t num_aus, const LabelBatch& labels);
};

// Inverse-frequency weights, normalized within each AU.
//  reg[i][j]      MSE weight for intensity j (two bins: {0,1} and {2..5})
//  cls[i][j-1][c] ordinal CE weight for threshold j and indicator c
//  det[i][c]      detection CE weight for occurrence indicator c
struct WeightTables {
  std::vector<std::array<double, kMaxIntensity + 1>> reg;
  std::vector<std::array<std::array<double, 2>, kOrdinalLevels>> cls;
  std::vector<std::array<double, 2>> det;

  std::size_t num_aus() const { return reg.size(); }
};

// Count sums used as denominators are clamped to >= 1. Throws
// std::invalid_argument on negative counts.
WeightTables compute_weights(const IntensityCounts& counts);

// All-ones tables (unweighted losses).
WeightTables uniform_weights(std::size_t num_aus);

inline constexpr double kCosineEps = 1e-8;
inline constexpr double kProbClamp = 1e-12;

// Per-sample losses; each returns a [B] vector on the tape of its inputs.
// Σ_i w_{i,y_i} (y_i - ŷ_i)^2 over reg [B,n].
Var loss_reg_mse(const LabelBatch& y, Var reg, const WeightTables& w);
// 1 - <y,ŷ> / (|y||ŷ| + eps); rows with y == 0 contribute 0.
Var loss_reg_cos(const LabelBatch& y, Var reg);
// Σ_i Σ_j w_{i,j,[y_i>=j]} CE([y_i>=j], σ(logit_{i,j})) over ord_logits [B,n,5].
Var loss_class(const LabelBatch& y, Var ord_logits, const WeightTables& w);
// mse + cos + class with unit coefficients.
Var loss_auie(const LabelBatch& y, const HeadOutputs& head, const WeightTables& w);
// Σ_i w_{i,[y_i>=2]} CE([y_i>=2], σ(logit_i)) over det_logits [B,n].
Var loss_aud(const LabelBatch& y, Var det_logits, const WeightTables& w);

// Mean of per-sample losses for the task; scalar.
Var batch_loss(Task task, const LabelBatch& y, const HeadOutputs& head, const WeightTables& w);

// Occurrence rule for detection ground truth.
inline bool occurs(int intensity) { return intensity >= 2; }

}  // namespace csn
