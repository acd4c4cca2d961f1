#include "csn/siamese.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "csn/errors.hpp"
#include "csn/ops.hpp"

namespace csn {

std::string MergePoint::name() const {
  switch (kind) {
    case Kind::kStage: return "stage" + std::to_string(stage);
    case Kind::kFC: return "fc";
    case Kind::kOutput: return "output";
  }
  return "?";
}

void MergePoint::validate(const BackboneSpec& spec) const {
  if (kind == Kind::kStage && (stage < 1 || stage > spec.num_stages()))
    throw std::invalid_argument("merge point " + name() + " outside stages 1.." + std::to_string(spec.num_stages()));
}

MergePoint parse_merge_point(std::string_view text) {
  if (text == "fc") return MergePoint::FC();
  if (text == "output") return MergePoint::Output();
  if (text.starts_with("stage") && text.size() > 5) {
    std::size_t k = 0;
    for (char c : text.substr(5)) {
      if (c < '0' || c > '9') throw std::invalid_argument("bad merge point '" + std::string(text) + "'");
      k = k * 10 + static_cast<std::size_t>(c - '0');
    }
    if (k == 0) throw std::invalid_argument("merge stage is 1-based: '" + std::string(text) + "'");
    return MergePoint::Stage(k);
  }
  throw std::invalid_argument("bad merge point '" + std::string(text) + "' (expected stageK|fc|output)");
}

HeadOutputs forward_csn(const BackboneSpec& spec, const BoundParams& params, Var target, Var reference,
                        MergePoint merge, const CsnOptions& options) {
  merge.validate(spec);
  if (target.shape() != reference.shape())
    throw ShapeError("forward_csn: target " + shape_str(target.shape()) + " and reference " +
                     shape_str(reference.shape()) + " differ");
  const std::size_t S = spec.num_stages();
  switch (merge.kind) {
    case MergePoint::Kind::kStage: {
      const std::size_t k = merge.stage - 1;
      Var t = forward_stages(spec, params, target, 0, k);
      Var r = forward_stages(spec, params, reference, 0, k);
      return forward_head(spec, params, forward_stages(spec, params, sub(t, r), k, S));
    }
    case MergePoint::Kind::kFC: {
      Var t = pool_features(spec, forward_stages(spec, params, target, 0, S));
      Var r = pool_features(spec, forward_stages(spec, params, reference, 0, S));
      if (options.fc_before_hidden) return output_layer(spec, params, hidden_features(spec, params, sub(t, r)));
      return output_layer(spec, params, sub(hidden_features(spec, params, t), hidden_features(spec, params, r)));
    }
    case MergePoint::Kind::kOutput:
      return subtract(forward(spec, params, target), forward(spec, params, reference));
  }
  throw std::logic_error("unreachable merge kind");
}

std::string PredictionMode::name() const {
  switch (kind) {
    case Kind::kNCG: return "NCG";
    case Kind::kOfcBS: return "OFC_BS";
    case Kind::kOfcCSN: return "OFC_CSN(" + merge.name() + ")";
  }
  return "?";
}

std::string PredictionMode::key() const {
  switch (kind) {
    case Kind::kNCG: return "ncg";
    case Kind::kOfcBS: return "ofc_bs";
    case Kind::kOfcCSN: return "ofc_csn:" + merge.name();
  }
  return "?";
}

PredictionMode parse_prediction_mode(std::string_view text) {
  if (text == "ncg") return PredictionMode::NCG();
  if (text == "ofc_bs") return PredictionMode::OfcBS();
  if (text == "ofc_csn") return PredictionMode::OfcCSN(MergePoint::Stage(4));
  if (text.starts_with("ofc_csn:")) return PredictionMode::OfcCSN(parse_merge_point(text.substr(8)));
  throw std::invalid_argument("bad prediction mode '" + std::string(text) + "' (expected ncg|ofc_bs|ofc_csn:<merge>)");
}

namespace {

double sigmoid_value(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

Tensor head_estimate(const HeadOutputs& h, bool apply_sigmoid) {
  Tensor out = h.task == Task::kIntensity ? h.reg.value() : h.det_logits.value();
  if (apply_sigmoid)
    for (auto& v : out.vec()) v = sigmoid_value(v);
  return out;
}

}  // namespace

Tensor predict(const BackboneSpec& spec, const ParamStore& params, const PredictionMode& mode, const Tensor& frames,
               const Tensor* references, const PredictOptions& options) {
  if (mode.needs_reference() && references == nullptr)
    throw std::invalid_argument(mode.name() + " prediction requires a reference frame");
  Tape tape;
  BoundParams bound = BoundParams::bind(tape, params, false);
  Var x = tape.constant(frames);
  const bool detection = spec.task == Task::kDetection;
  Tensor out;
  switch (mode.kind) {
    case PredictionMode::Kind::kNCG:
      out = head_estimate(forward(spec, bound, x), detection);
      break;
    case PredictionMode::Kind::kOfcBS: {
      if (references->shape() != frames.shape())
        throw ShapeError("reference batch " + shape_str(references->shape()) + " differs from frames " +
                         shape_str(frames.shape()));
      Tensor t = head_estimate(forward(spec, bound, x), detection);
      Tensor r = head_estimate(forward(spec, bound, tape.constant(*references)), detection);
      out = t;
      for (std::size_t k = 0; k < out.numel(); ++k) out[k] = t[k] - r[k];
      break;
    }
    case PredictionMode::Kind::kOfcCSN:
      out = head_estimate(forward_csn(spec, bound, x, tape.constant(*references), mode.merge, options.csn), detection);
      break;
  }
  if (options.clamp && !detection)
    for (auto& v : out.vec()) v = std::clamp(v, 0.0, static_cast<double>(kMaxIntensity));
  return out;
}

std::vector<double> predict_frame(const BackboneSpec& spec, const ParamStore& params, const PredictionMode& mode,
                                  const Tensor& frame, const Tensor* reference, const PredictOptions& options) {
  Tensor frames = stack(std::span<const Tensor>(&frame, 1));
  Tensor refs;
  if (reference != nullptr) refs = stack(std::span<const Tensor>(reference, 1));
  return predict(spec, params, mode, frames, reference != nullptr ? &refs : nullptr, options).vec();
}

DetectionRule detection_rule(const PredictionMode& mode, double bs_delta) {
  if (mode.kind == PredictionMode::Kind::kOfcBS) return {bs_delta, true};
  return {0.5, false};
}

}  // namespace csn
