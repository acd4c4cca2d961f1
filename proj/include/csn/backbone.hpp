#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "csn/tape.hpp"
#include "csn/tensor.hpp"

namespace csn {

enum class Task { kIntensity, kDetection };

std::string_view task_name(Task task);
Task parse_task(std::string_view text);

// Ordinal thresholds y >= 1 .. y >= 5.
inline constexpr std::size_t kOrdinalLevels = 5;
inline constexpr int kMaxIntensity = 5;

struct StageSpec {
  std::size_t channels = 8;
  // conv3x3 + relu residual blocks after the stride-2 entry conv
  std::size_t blocks = 1;
};

struct BackboneSpec {
  std::size_t in_channels = 1;
  std::size_t height = 32;
  std::size_t width = 32;
  std::vector<StageSpec> stages{{8, 1}, {16, 1}, {32, 1}, {64, 1}};
  std::size_t hidden = 64;
  std::size_t num_aus = 6;
  Task task = Task::kIntensity;

  // Throws std::invalid_argument on a malformed spec.
  void validate() const;
  std::size_t num_stages() const { return stages.size(); }
  // Width of the final affine map: n + 5n for intensity, n for detection.
  std::size_t output_width() const;
  // Per-sample [C,H,W] entering stage `index` (0-based); index == num_stages()
  // gives the final feature map.
  Shape stage_input_shape(std::size_t index) const;
};

enum class ParamGroup { kLastLayer, kRest };

struct Param {
  std::string name;
  Tensor value;
  ParamGroup group = ParamGroup::kRest;

  friend bool operator==(const Param&, const Param&) = default;
};

// Named trainable tensors in a fixed order. "last-layer" is the final affine
// map producing the head outputs; everything else is "rest".
class ParamStore {
 public:
  void add(std::string name, Tensor value, ParamGroup group);

  const std::vector<Param>& params() const { return params_; }
  std::vector<Param>& params() { return params_; }
  const Param& at(std::string_view name) const;
  Param& at(std::string_view name);
  bool contains(std::string_view name) const;

  std::size_t size() const { return params_.size(); }
  std::size_t total_scalars() const;
  std::size_t group_scalars(ParamGroup group) const;

  std::vector<NamedTensor> to_named() const;

  friend bool operator==(const ParamStore&, const ParamStore&) = default;

 private:
  std::vector<Param> params_;
};

// Parameters recorded as leaves on one tape.
class BoundParams {
 public:
  static BoundParams bind(Tape& tape, const ParamStore& store, bool requires_grad);
  BoundParams(std::vector<std::string> names, std::vector<Var> vars);

  Var operator[](std::string_view name) const;
  const std::vector<Var>& vars() const { return vars_; }

 private:
  std::vector<std::string> names_;
  std::vector<Var> vars_;
};

// Kaiming-normal weights (gain sqrt(2) for relu layers, 1 for the output
// layer), zero biases. Deterministic in (spec, seed).
ParamStore init_backbone(const BackboneSpec& spec, std::uint64_t seed);

// Rebuilds a store from checkpoint tensors, checking names and shapes against
// the layout `spec` implies.
ParamStore params_from_named(const BackboneSpec& spec, const std::vector<NamedTensor>& tensors);

// Raw head outputs. Intensity: reg [B,n] and ord_logits [B,n,5] where column
// j-1 scores the event y >= j. Detection: det_logits [B,n]. Absent fields have
// a null tape.
struct HeadOutputs {
  Task task = Task::kIntensity;
  Var reg;
  Var ord_logits;
  Var det_logits;
};

HeadOutputs subtract(const HeadOutputs& a, const HeadOutputs& b);

// Runs stages [from, to) on x of shape [B, stage_input_shape(from)...].
Var forward_stages(const BackboneSpec& spec, const BoundParams& params, Var x, std::size_t from, std::size_t to);

// Head pieces: global pool -> hidden affine + relu -> output affine.
Var pool_features(const BackboneSpec& spec, Var features);
Var hidden_features(const BackboneSpec& spec, const BoundParams& params, Var pooled);
HeadOutputs output_layer(const BackboneSpec& spec, const BoundParams& params, Var hidden);

HeadOutputs forward_head(const BackboneSpec& spec, const BoundParams& params, Var features);
HeadOutputs forward(const BackboneSpec& spec, const BoundParams& params, Var x);

}  // namespace csn
