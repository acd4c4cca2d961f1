#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "csn/backbone.hpp"

namespace csn {

// Where the reference and target branches are differenced.
//  Stage(k): feature maps entering stage k (Stage(1) differences the images)
//  FC:       features entering the final head affine
//  Output:   raw head outputs (regression values and logits)
struct MergePoint {
  enum class Kind { kStage, kFC, kOutput };
  Kind kind = Kind::kStage;
  std::size_t stage = 0;  // 1-based, only for kStage

  static MergePoint Stage(std::size_t k) { return {Kind::kStage, k}; }
  static MergePoint FC() { return {Kind::kFC, 0}; }
  static MergePoint Output() { return {Kind::kOutput, 0}; }

  std::string name() const;  // "stage4", "fc", "output"
  void validate(const BackboneSpec& spec) const;

  friend bool operator==(const MergePoint&, const MergePoint&) = default;
};

MergePoint parse_merge_point(std::string_view text);

struct CsnOptions {
  // FC merge: difference the pooled features before the hidden affine
  // instead of the hidden features entering the final affine.
  bool fc_before_hidden = false;
};

// Shared-weight Siamese forward; differentiable through both branches.
HeadOutputs forward_csn(const BackboneSpec& spec, const BoundParams& params, Var target, Var reference,
                        MergePoint merge, const CsnOptions& options = {});

struct PredictionMode {
  enum class Kind { kNCG, kOfcBS, kOfcCSN };
  Kind kind = Kind::kNCG;
  MergePoint merge = MergePoint::Stage(4);  // only for kOfcCSN

  static PredictionMode NCG() { return {Kind::kNCG, {}}; }
  static PredictionMode OfcBS() { return {Kind::kOfcBS, {}}; }
  static PredictionMode OfcCSN(MergePoint m) { return {Kind::kOfcCSN, m}; }

  bool needs_reference() const { return kind != Kind::kNCG; }
  // "NCG", "OFC_BS", "OFC_CSN(stage4)"
  std::string name() const;
  // "ncg", "ofc_bs", "ofc_csn:stage4"
  std::string key() const;

  friend bool operator==(const PredictionMode&, const PredictionMode&) = default;
};

PredictionMode parse_prediction_mode(std::string_view text);

struct PredictOptions {
  // Clamp intensity estimates to [0, 5].
  bool clamp = false;
  CsnOptions csn;
};

// Batched inference on frames [B,C,H,W]; `references` must be given (same
// shape) for OFC modes and is ignored for NCG. Returns [B,n]:
//  intensity: regression estimates (reference-subtracted for OFC_BS)
//  detection: sigmoid score, or sigmoid(target) - sigmoid(reference) for OFC_BS
Tensor predict(const BackboneSpec& spec, const ParamStore& params, const PredictionMode& mode, const Tensor& frames,
               const Tensor* references, const PredictOptions& options = {});

// Single-frame convenience over [C,H,W] images.
std::vector<double> predict_frame(const BackboneSpec& spec, const ParamStore& params, const PredictionMode& mode,
                                  const Tensor& frame, const Tensor* reference, const PredictOptions& options = {});

// Binarizes detection scores: score >= threshold, or score > threshold when strict.
struct DetectionRule {
  double threshold = 0.5;
  bool strict = false;

  bool fires(double score) const { return strict ? score > threshold : score >= threshold; }
};

// 0.5 (inclusive) for NCG and OFC_CSN; bs_delta (strict) for OFC_BS.
DetectionRule detection_rule(const PredictionMode& mode, double bs_delta = 0.0);

}  // namespace csn
