#include "csn/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "csn/errors.hpp"

namespace csn {

OptimState init_optim_state(const ParamStore& params) {
  OptimState s;
  for (const auto& p : params.params()) {
    s.m.emplace_back(p.value.shape(), 0.0);
    s.v.emplace_back(p.value.shape(), 0.0);
  }
  return s;
}

void adam_step(ParamStore& params, const std::vector<Tensor>& grads, OptimState& state, const AdamConfig& cfg) {
  auto& ps = params.params();
  if (grads.empty()) throw std::invalid_argument("adam_step: no gradients");
  if (grads.size() != ps.size() || state.m.size() != ps.size() || state.v.size() != ps.size())
    throw ShapeError("adam_step: gradient/state count does not match parameter count");
  for (std::size_t i = 0; i < ps.size(); ++i)
    if (grads[i].shape() != ps[i].value.shape() || state.m[i].shape() != ps[i].value.shape() ||
        state.v[i].shape() != ps[i].value.shape())
      throw ShapeError("adam_step: shape mismatch for " + ps[i].name);

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < ps.size(); ++i) {
    auto& theta = ps[i].value;
    const double lr = cfg.lr_for(ps[i].group);
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t k = 0; k < theta.numel(); ++k) {
      double g = grads[i][k];
      if (!cfg.decoupled) g += cfg.weight_decay * theta[k];
      m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g;
      v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g * g;
      const double mhat = m[k] / c1;
      const double vhat = v[k] / c2;
      if (cfg.decoupled) theta[k] -= lr * cfg.weight_decay * theta[k];
      theta[k] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
    if (!theta.all_finite()) throw NumericalError("adam_step produced non-finite values in " + ps[i].name);
  }
}

std::vector<NamedTensor> OptimState::to_named(const ParamStore& params) const {
  std::vector<NamedTensor> out;
  out.push_back({"adam.step", Tensor::scalar(static_cast<double>(step))});
  for (std::size_t i = 0; i < params.size(); ++i) {
    out.push_back({"adam.m." + params.params()[i].name, m.at(i)});
    out.push_back({"adam.v." + params.params()[i].name, v.at(i)});
  }
  return out;
}

OptimState OptimState::from_named(const ParamStore& params, const std::vector<NamedTensor>& tensors) {
  auto find = [&](const std::string& name) -> const Tensor& {
    auto it = std::find_if(tensors.begin(), tensors.end(), [&](const NamedTensor& t) { return t.name == name; });
    if (it == tensors.end()) throw DataError("checkpoint is missing optimizer tensor " + name);
    return it->value;
  };
  OptimState s;
  s.step = static_cast<std::int64_t>(find("adam.step").item());
  for (const auto& p : params.params()) {
    s.m.push_back(find("adam.m." + p.name));
    s.v.push_back(find("adam.v." + p.name));
    if (s.m.back().shape() != p.value.shape() || s.v.back().shape() != p.value.shape())
      throw DataError("optimizer moments for " + p.name + " do not match the parameter shape");
  }
  return s;
}

}  // namespace csn
