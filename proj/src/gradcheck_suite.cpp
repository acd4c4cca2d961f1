#include "csn/gradcheck_suite.hpp"

#include <random>

#include "csn/losses.hpp"
#include "csn/ops.hpp"
#include "csn/siamese.hpp"

namespace csn {
namespace {

Tensor random_tensor(std::mt19937_64& rng, Shape shape, double lo, double hi) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = u(rng);
  return t;
}

LabelBatch random_labels(std::mt19937_64& rng, std::size_t b, std::size_t n) {
  std::uniform_int_distribution<int> u(0, kMaxIntensity);
  LabelBatch y(b, std::vector<int>(n));
  for (auto& row : y)
    for (auto& v : row) v = u(rng) % 3 == 0 ? 0 : u(rng);
  return y;
}

// Contracts an arbitrary output with fixed random weights so every output
// coordinate carries a distinct upstream gradient.
Var project(Tape& t, Var out, const Tensor& weights) { return sum(mul(out, t.constant(weights))); }

}  // namespace

std::vector<GradCheckCase> primitive_cases(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<GradCheckCase> cases;

  auto unary = [&](std::string name, Shape shape, double lo, double hi, std::function<Var(Var)> f) {
    Tensor x = random_tensor(rng, shape, lo, hi);
    Tensor probe_out;
    {
      Tape t;
      probe_out = f(t.leaf(x, false)).value();
    }
    Tensor r = random_tensor(rng, probe_out.shape(), -1, 1);
    cases.push_back({std::move(name),
                     {{"x", x}},
                     [f, r](Tape& t, std::span<const Var> p) { return project(t, f(p[0]), r); },
                     {}});
  };
  auto binary = [&](std::string name, Shape sa, Shape sb, double lo, double hi, std::function<Var(Var, Var)> f) {
    Tensor a = random_tensor(rng, sa, -1, 1);
    Tensor b = random_tensor(rng, sb, lo, hi);
    Tensor probe_out;
    {
      Tape t;
      probe_out = f(t.leaf(a, false), t.leaf(b, false)).value();
    }
    Tensor r = random_tensor(rng, probe_out.shape(), -1, 1);
    cases.push_back({std::move(name),
                     {{"a", a}, {"b", b}},
                     [f, r](Tape& t, std::span<const Var> p) { return project(t, f(p[0], p[1]), r); },
                     {}});
  };

  binary("add", {3, 4}, {3, 4}, -1, 1, add);
  binary("add_broadcast", {3, 2, 2}, {2, 2}, -1, 1, add);
  binary("sub", {3, 4}, {3, 4}, -1, 1, sub);
  binary("sub_broadcast", {3, 4}, {4}, -1, 1, sub);
  binary("mul", {3, 4}, {3, 4}, -1, 1, mul);
  binary("mul_broadcast", {2, 3, 2}, {3, 2}, -1, 1, mul);
  binary("div", {3, 4}, {3, 4}, 0.5, 2, div);
  binary("div_broadcast", {3, 4}, {4}, 0.5, 2, div);
  binary("matmul", {3, 4}, {4, 5}, -1, 1, matmul);
  unary("add_scalar", {5}, -1, 1, [](Var x) { return add_scalar(x, 0.7); });
  unary("mul_scalar", {5}, -1, 1, [](Var x) { return mul_scalar(x, -1.3); });
  unary("neg", {5}, -1, 1, neg);
  unary("scalar_minus", {5}, -1, 1, [](Var x) { return scalar_minus(2.0, x); });
  unary("relu", {4, 5}, -1, 1, relu);
  unary("sigmoid", {4, 5}, -6, 6, sigmoid);
  unary("log", {4, 5}, 0.1, 3, log);
  unary("sqrt", {4, 5}, 0.1, 3, sqrt);
  unary("square", {4, 5}, -2, 2, square);
  unary("sum", {3, 4}, -1, 1, [](Var x) { return sum(x); });
  unary("mean", {3, 4}, -1, 1, [](Var x) { return mean(x); });
  unary("sum_axes", {2, 3, 4}, -1, 1, [](Var x) { return sum(x, {0, 2}); });
  unary("mean_axes", {2, 3, 4}, -1, 1, [](Var x) { return mean(x, {1}); });
  unary("global_avg_pool", {2, 3, 4, 5}, -1, 1, global_avg_pool);
  unary("reshape", {2, 6}, -1, 1, [](Var x) { return reshape(x, {3, 4}); });
  unary("narrow", {3, 7}, -1, 1, [](Var x) { return narrow(x, 1, 2, 3); });
  unary("maximum", {4, 5}, -1, 1, [](Var x) { return maximum(x, 0.1); });
  unary("minimum", {4, 5}, -1, 1, [](Var x) { return minimum(x, 0.1); });
  binary("concat", {2, 3}, {2, 4}, -1, 1, [](Var a, Var b) {
    Var xs[] = {a, b};
    return concat(xs, 1);
  });

  auto conv = [&](std::string name, Shape xs, Shape ws, bool bias, std::size_t stride, std::size_t pad) {
    Tensor x = random_tensor(rng, xs, -1, 1);
    Tensor w = random_tensor(rng, ws, -1, 1);
    Tensor b = random_tensor(rng, {ws[0]}, -1, 1);
    Tensor probe_out;
    {
      Tape t;
      probe_out = conv2d(t.leaf(x, false), t.leaf(w, false), std::optional<Var>(t.leaf(b, false)), stride, pad).value();
    }
    Tensor r = random_tensor(rng, probe_out.shape(), -1, 1);
    std::vector<NamedTensor> params{{"x", x}, {"w", w}};
    if (bias) params.push_back({"b", b});
    cases.push_back({std::move(name), params,
                     [r, bias, stride, pad](Tape& t, std::span<const Var> p) {
                       std::optional<Var> bv;
                       if (bias) bv = p[2];
                       return project(t, conv2d(p[0], p[1], bv, stride, pad), r);
                     },
                     {}});
  };
  conv("conv2d", {2, 2, 5, 5}, {3, 2, 3, 3}, true, 1, 1);
  conv("conv2d_stride2", {1, 2, 6, 7}, {2, 2, 3, 3}, true, 2, 1);
  conv("conv2d_nopad", {1, 3, 5, 4}, {2, 3, 2, 2}, false, 1, 0);

  // Losses on raw logits.
  const std::size_t b = 4, n = 3;
  WeightTables w = compute_weights(IntensityCounts::from_labels(n, random_labels(rng, 40, n)));
  WeightTables w_int = w;
  auto loss_case = [&](std::string name, Shape shape, std::function<Var(Var, const LabelBatch&, const WeightTables&)> f) {
    Tensor x = random_tensor(rng, shape, -2, 2);
    LabelBatch y = random_labels(rng, b, n);
    cases.push_back({std::move(name), {{"x", x}},
                     [f, y, w_int](Tape&, std::span<const Var> p) { return sum(f(p[0], y, w_int)); }, {}});
  };
  loss_case("loss_reg_mse", {b, n}, [](Var x, const LabelBatch& y, const WeightTables& w) { return loss_reg_mse(y, x, w); });
  loss_case("loss_reg_cos", {b, n}, [](Var x, const LabelBatch& y, const WeightTables&) { return loss_reg_cos(y, x); });
  loss_case("loss_class", {b, n, kOrdinalLevels},
            [](Var x, const LabelBatch& y, const WeightTables& w) { return loss_class(y, x, w); });
  loss_case("loss_aud", {b, n}, [](Var x, const LabelBatch& y, const WeightTables& w) { return loss_aud(y, x, w); });
  {
    Tensor reg = random_tensor(rng, {b, n}, -2, 2);
    Tensor ord = random_tensor(rng, {b, n, kOrdinalLevels}, -2, 2);
    LabelBatch y = random_labels(rng, b, n);
    cases.push_back({"loss_auie", {{"reg", reg}, {"ord", ord}},
                     [y, w_int](Tape&, std::span<const Var> p) {
                       HeadOutputs h;
                       h.task = Task::kIntensity;
                       h.reg = p[0];
                       h.ord_logits = p[1];
                       return sum(loss_auie(y, h, w_int));
                     },
                     {}});
  }
  return cases;
}

std::vector<GradCheckCase> network_cases(const BackboneSpec& base, std::uint64_t seed, std::size_t points) {
  std::vector<GradCheckCase> cases;
  std::mt19937_64 rng(seed);
  const std::size_t batch = 2;

  auto make = [&](std::string name, Task task, std::optional<MergePoint> merge, bool fc_before_hidden) {
    BackboneSpec spec = base;
    spec.task = task;
    ParamStore store = init_backbone(spec, seed);
    // Nonzero biases so their gradients are not a special case.
    std::normal_distribution<double> nd(0.0, 0.05);
    for (auto& p : store.params())
      for (std::size_t i = 0; i < p.value.numel(); ++i) p.value[i] += nd(rng);
    std::vector<NamedTensor> params = store.to_named();
    std::vector<std::string> names;
    for (const auto& p : params) names.push_back(p.name);

    Shape in{batch, spec.in_channels, spec.height, spec.width};
    Tensor target = random_tensor(rng, in, 0, 1);
    Tensor reference = random_tensor(rng, in, 0, 1);
    LabelBatch y = random_labels(rng, batch, spec.num_aus);
    WeightTables w = compute_weights(IntensityCounts::from_labels(spec.num_aus, random_labels(rng, 50, spec.num_aus)));
    CsnOptions opts{fc_before_hidden};

    GraphBuilder build = [=](Tape& t, std::span<const Var> p) {
      BoundParams bp(names, std::vector<Var>(p.begin(), p.end()));
      Var x = t.constant(target);
      HeadOutputs h = merge ? forward_csn(spec, bp, x, t.constant(reference), *merge, opts) : forward(spec, bp, x);
      return batch_loss(spec.task, y, h, w);
    };
    GradCheckOptions o;
    o.max_points_per_tensor = points;
    o.seed = seed;
    cases.push_back({std::move(name), std::move(params), std::move(build), o});
  };

  make("plain_intensity", Task::kIntensity, std::nullopt, false);
  make("plain_detection", Task::kDetection, std::nullopt, false);
  for (std::size_t k = 1; k <= base.stages.size(); ++k)
    make("csn_stage" + std::to_string(k) + "_intensity", Task::kIntensity, MergePoint::Stage(k), false);
  make("csn_fc_intensity", Task::kIntensity, MergePoint::FC(), false);
  make("csn_fc_before_hidden_intensity", Task::kIntensity, MergePoint::FC(), true);
  make("csn_output_intensity", Task::kIntensity, MergePoint::Output(), false);
  make("csn_stage4_detection", Task::kDetection, MergePoint::Stage(std::min<std::size_t>(4, base.stages.size())), false);
  make("csn_output_detection", Task::kDetection, MergePoint::Output(), false);
  return cases;
}

std::vector<GradCheckResult> run_cases(const std::vector<GradCheckCase>& cases) {
  std::vector<GradCheckResult> out;
  for (const auto& c : cases) out.push_back({c.name, grad_check(c.build, c.params, c.options)});
  return out;
}

}  // namespace csn
