#include "csn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "csn/errors.hpp"

namespace csn {

double GradCheckReport::max_rel_error() const {
  double m = 0.0;
  for (const auto& e : entries) m = std::max(m, e.max_rel_error);
  return m;
}

std::size_t GradCheckReport::total_skipped() const {
  std::size_t s = 0;
  for (const auto& e : entries) s += e.skipped;
  return s;
}

namespace {

struct Evaluation {
  double loss;
  std::vector<std::uint8_t> masks;
};

Evaluation evaluate(const GraphBuilder& build, const std::vector<Tensor>& values) {
  Tape tape;
  tape.set_track_kinks(true);
  std::vector<Var> vars;
  vars.reserve(values.size());
  for (const auto& v : values) vars.push_back(tape.leaf(v, false));
  Var loss = build(tape, vars);
  if (loss.value().numel() != 1) throw ShapeError("grad_check: graph must produce a scalar");
  const double l = loss.value()[0];
  if (!std::isfinite(l)) throw NumericalError("grad_check: non-finite forward value");
  return {l, tape.kink_masks()};
}

}  // namespace

GradCheckReport grad_check(const GraphBuilder& build, std::span<const NamedTensor> params,
                           const GradCheckOptions& options) {
  std::vector<Tensor> values;
  values.reserve(params.size());
  for (const auto& p : params) values.push_back(p.value);

  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> vars;
    for (const auto& v : values) vars.push_back(tape.leaf(v, true));
    Var loss = build(tape, vars);
    tape.backward(loss);
    for (const auto& v : vars) analytic.push_back(tape.grad(v));
  }

  GradCheckReport report;
  report.tolerance = options.tolerance;
  std::mt19937_64 rng(options.seed);
  for (std::size_t p = 0; p < params.size(); ++p) {
    GradCheckEntry entry;
    entry.name = params[p].name;
    const std::size_t n = values[p].numel();
    std::vector<std::size_t> coords(n);
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (options.max_points_per_tensor != 0 && n > options.max_points_per_tensor) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(options.max_points_per_tensor);
      std::sort(coords.begin(), coords.end());
    }
    for (std::size_t k : coords) {
      const double orig = values[p][k];
      values[p][k] = orig + options.step;
      Evaluation plus = evaluate(build, values);
      values[p][k] = orig - options.step;
      Evaluation minus = evaluate(build, values);
      values[p][k] = orig;
      if (plus.masks != minus.masks) {
        ++entry.skipped;
        continue;
      }
      const double numeric = (plus.loss - minus.loss) / (2.0 * options.step);
      const double err = std::abs(analytic[p][k] - numeric) / std::max(1.0, std::abs(numeric));
      entry.max_rel_error = std::max(entry.max_rel_error, err);
      ++entry.checked;
    }
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace csn
