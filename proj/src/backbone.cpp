#include "csn/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "csn/errors.hpp"
#include "csn/ops.hpp"

namespace csn {

std::string_view task_name(Task task) { return task == Task::kIntensity ? "intensity" : "detection"; }

Task parse_task(std::string_view text) {
  if (text == "intensity") return Task::kIntensity;
  if (text == "detection") return Task::kDetection;
  throw std::invalid_argument("unknown task '" + std::string(text) + "' (expected intensity|detection)");
}

void BackboneSpec::validate() const {
  if (in_channels == 0 || height == 0 || width == 0) throw std::invalid_argument("backbone input extents must be >= 1");
  if (stages.size() < 2) throw std::invalid_argument("backbone needs at least 2 stages");
  for (const auto& s : stages)
    if (s.channels == 0 || s.blocks == 0) throw std::invalid_argument("stage channels and blocks must be >= 1");
  if (hidden == 0) throw std::invalid_argument("head hidden width must be >= 1");
  if (num_aus == 0) throw std::invalid_argument("num_aus must be >= 1");
}

std::size_t BackboneSpec::output_width() const {
  return task == Task::kIntensity ? num_aus * (1 + kOrdinalLevels) : num_aus;
}

Shape BackboneSpec::stage_input_shape(std::size_t index) const {
  if (index > stages.size()) throw std::out_of_range("stage index out of range");
  std::size_t c = in_channels, h = height, w = width;
  for (std::size_t s = 0; s < index; ++s) {
    c = stages[s].channels;
    h = (h + 1) / 2;
    w = (w + 1) / 2;
  }
  return {c, h, w};
}

void ParamStore::add(std::string name, Tensor value, ParamGroup group) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter " + name);
  params_.push_back(Param{std::move(name), std::move(value), group});
}

const Param& ParamStore::at(std::string_view name) const {
  for (const auto& p : params_)
    if (p.name == name) return p;
  throw std::out_of_range("no parameter named " + std::string(name));
}

Param& ParamStore::at(std::string_view name) {
  return const_cast<Param&>(static_cast<const ParamStore&>(*this).at(name));
}

bool ParamStore::contains(std::string_view name) const {
  return std::any_of(params_.begin(), params_.end(), [&](const Param& p) { return p.name == name; });
}

std::size_t ParamStore::total_scalars() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.numel();
  return n;
}

std::size_t ParamStore::group_scalars(ParamGroup group) const {
  std::size_t n = 0;
  for (const auto& p : params_)
    if (p.group == group) n += p.value.numel();
  return n;
}

std::vector<NamedTensor> ParamStore::to_named() const {
  std::vector<NamedTensor> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back({p.name, p.value});
  return out;
}

BoundParams BoundParams::bind(Tape& tape, const ParamStore& store, bool requires_grad) {
  std::vector<std::string> names;
  std::vector<Var> vars;
  for (const auto& p : store.params()) {
    names.push_back(p.name);
    vars.push_back(tape.leaf(p.value, requires_grad));
  }
  return BoundParams(std::move(names), std::move(vars));
}

BoundParams::BoundParams(std::vector<std::string> names, std::vector<Var> vars)
    : names_(std::move(names)), vars_(std::move(vars)) {
  if (names_.size() != vars_.size()) throw std::invalid_argument("BoundParams: names/vars length mismatch");
}

Var BoundParams::operator[](std::string_view name) const {
  for (std::size_t i = 0; i < names_.size(); ++i)
    if (names_[i] == name) return vars_[i];
  throw std::out_of_range("no bound parameter named " + std::string(name));
}

namespace {

std::string stage_prefix(std::size_t s) { return "stage" + std::to_string(s + 1); }

struct Layout {
  std::string name;
  Shape shape;
  ParamGroup group;
  double std_dev;  // 0 for biases
};

std::vector<Layout> param_layout(const BackboneSpec& spec) {
  spec.validate();
  std::vector<Layout> out;
  auto conv = [&](const std::string& name, std::size_t cout, std::size_t cin) {
    const double fan_in = static_cast<double>(cin * 9);
    out.push_back({name + ".w", {cout, cin, 3, 3}, ParamGroup::kRest, std::sqrt(2.0 / fan_in)});
    out.push_back({name + ".b", {cout}, ParamGroup::kRest, 0.0});
  };
  std::size_t cin = spec.in_channels;
  for (std::size_t s = 0; s < spec.stages.size(); ++s) {
    const auto& st = spec.stages[s];
    conv(stage_prefix(s) + ".entry", st.channels, cin);
    for (std::size_t b = 0; b < st.blocks; ++b)
      conv(stage_prefix(s) + ".block" + std::to_string(b) + ".conv", st.channels, st.channels);
    cin = st.channels;
  }
  out.push_back({"head.fc1.w", {cin, spec.hidden}, ParamGroup::kRest, std::sqrt(2.0 / static_cast<double>(cin))});
  out.push_back({"head.fc1.b", {spec.hidden}, ParamGroup::kRest, 0.0});
  out.push_back({"head.fc2.w", {spec.hidden, spec.output_width()}, ParamGroup::kLastLayer,
                 std::sqrt(1.0 / static_cast<double>(spec.hidden))});
  out.push_back({"head.fc2.b", {spec.output_width()}, ParamGroup::kLastLayer, 0.0});
  return out;
}

}  // namespace

ParamStore init_backbone(const BackboneSpec& spec, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  ParamStore store;
  for (const auto& l : param_layout(spec)) {
    Tensor t(l.shape);
    if (l.std_dev > 0.0)
      for (auto& v : t.vec()) v = l.std_dev * normal(rng);
    store.add(l.name, std::move(t), l.group);
  }
  return store;
}

ParamStore params_from_named(const BackboneSpec& spec, const std::vector<NamedTensor>& tensors) {
  ParamStore store;
  for (const auto& l : param_layout(spec)) {
    auto it = std::find_if(tensors.begin(), tensors.end(), [&](const NamedTensor& t) { return t.name == l.name; });
    if (it == tensors.end()) throw DataError("checkpoint is missing parameter " + l.name);
    if (it->value.shape() != l.shape)
      throw DataError("checkpoint parameter " + l.name + " has shape " + shape_str(it->value.shape()) + ", expected " +
                      shape_str(l.shape));
    store.add(l.name, it->value, l.group);
  }
  return store;
}

HeadOutputs subtract(const HeadOutputs& a, const HeadOutputs& b) {
  if (a.task != b.task) throw ShapeError("subtract: head outputs of different tasks");
  HeadOutputs out;
  out.task = a.task;
  if (a.task == Task::kIntensity) {
    out.reg = sub(a.reg, b.reg);
    out.ord_logits = sub(a.ord_logits, b.ord_logits);
  } else {
    out.det_logits = sub(a.det_logits, b.det_logits);
  }
  return out;
}

Var forward_stages(const BackboneSpec& spec, const BoundParams& params, Var x, std::size_t from, std::size_t to) {
  if (from > to || to > spec.num_stages())
    throw ShapeError("forward_stages: invalid range [" + std::to_string(from) + ", " + std::to_string(to) + ")");
  const Shape expected = spec.stage_input_shape(from);
  const Shape& got = x.shape();
  if (got.size() != 4 || !std::equal(expected.begin(), expected.end(), got.begin() + 1))
    throw ShapeError("forward_stages: input " + shape_str(got) + " does not match stage " + std::to_string(from + 1) +
                     " input [B," + shape_str(expected).substr(1));
  Var h = x;
  for (std::size_t s = from; s < to; ++s) {
    const std::string p = stage_prefix(s);
    h = relu(conv2d(h, params[p + ".entry.w"], params[p + ".entry.b"], 2, 1));
    for (std::size_t b = 0; b < spec.stages[s].blocks; ++b) {
      const std::string q = p + ".block" + std::to_string(b) + ".conv";
      h = relu(add(h, conv2d(h, params[q + ".w"], params[q + ".b"], 1, 1)));
    }
  }
  return h;
}

Var pool_features(const BackboneSpec& spec, Var features) {
  const Shape expected = spec.stage_input_shape(spec.num_stages());
  const Shape& got = features.shape();
  if (got.size() != 4 || !std::equal(expected.begin(), expected.end(), got.begin() + 1))
    throw ShapeError("head: features " + shape_str(got) + " do not match final stage output [B," +
                     shape_str(expected).substr(1));
  return global_avg_pool(features);
}

Var hidden_features(const BackboneSpec&, const BoundParams& params, Var pooled) {
  return relu(add(matmul(pooled, params["head.fc1.w"]), params["head.fc1.b"]));
}

HeadOutputs output_layer(const BackboneSpec& spec, const BoundParams& params, Var hidden) {
  Var raw = add(matmul(hidden, params["head.fc2.w"]), params["head.fc2.b"]);
  HeadOutputs out;
  out.task = spec.task;
  const std::size_t n = spec.num_aus;
  if (spec.task == Task::kIntensity) {
    const std::size_t batch = raw.shape()[0];
    out.reg = narrow(raw, 1, 0, n);
    out.ord_logits = reshape(narrow(raw, 1, n, n * kOrdinalLevels), {batch, n, kOrdinalLevels});
  } else {
    out.det_logits = raw;
  }
  return out;
}

HeadOutputs forward_head(const BackboneSpec& spec, const BoundParams& params, Var features) {
  return output_layer(spec, params, hidden_features(spec, params, pool_features(spec, features)));
}

HeadOutputs forward(const BackboneSpec& spec, const BoundParams& params, Var x) {
  return forward_head(spec, params, forward_stages(spec, params, x, 0, spec.num_stages()));
}

}  // namespace csn
