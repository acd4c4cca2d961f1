#include <cmath>

#include "csn/backbone.hpp"
#include "csn/errors.hpp"
#include "csn/optimizer.hpp"
#include "doctest.h"

using namespace csn;

namespace {

ParamStore two_scalars(double a, double b) {
  ParamStore s;
  s.add("rest.w", Tensor({1}, a), ParamGroup::kRest);
  s.add("last.w", Tensor({1}, b), ParamGroup::kLastLayer);
  return s;
}

}  // namespace

TEST_CASE("first Adam step moves by lr") {
  for (double g : {3.0, -0.02, 1e-3}) {
    ParamStore s = two_scalars(1.0, 1.0);
    OptimState st = init_optim_state(s);
    AdamConfig cfg;
    cfg.weight_decay = 0.0;
    adam_step(s, {Tensor({1}, g), Tensor({1}, g)}, st, cfg);
    const double d_rest = std::abs(s.at("rest.w").value[0] - 1.0);
    const double d_last = std::abs(s.at("last.w").value[0] - 1.0);
    CHECK(d_rest == doctest::Approx(cfg.lr_rest).epsilon(1e-6));
    CHECK(d_last == doctest::Approx(cfg.lr_last).epsilon(1e-6));
    CHECK(d_last / d_rest == doctest::Approx(10.0).epsilon(1e-6));
    CHECK((s.at("rest.w").value[0] < 1.0) == (g > 0));
    CHECK(st.step == 1);
  }
}

TEST_CASE("zero gradient without decay is a fixed point") {
  ParamStore s = two_scalars(0.3, -0.7);
  const ParamStore before = s;
  OptimState st = init_optim_state(s);
  AdamConfig cfg;
  cfg.weight_decay = 0.0;
  for (int i = 0; i < 5; ++i) adam_step(s, {Tensor({1}, 0.0), Tensor({1}, 0.0)}, st, cfg);
  CHECK(s == before);
}

TEST_CASE("L2 decay enters the gradient; decoupled decay does not") {
  AdamConfig cfg;
  cfg.weight_decay = 0.1;
  ParamStore s = two_scalars(2.0, 2.0);
  OptimState st = init_optim_state(s);
  adam_step(s, {Tensor({1}, 0.0), Tensor({1}, 0.0)}, st, cfg);
  // g' = 0.1 * 2 > 0: the bias-corrected first step is -lr.
  CHECK(s.at("rest.w").value[0] == doctest::Approx(2.0 - cfg.lr_rest).epsilon(1e-9));
  CHECK(st.m[0][0] == doctest::Approx(0.1 * 0.2).epsilon(1e-12));

  cfg.decoupled = true;
  ParamStore s2 = two_scalars(2.0, 2.0);
  OptimState st2 = init_optim_state(s2);
  adam_step(s2, {Tensor({1}, 0.0), Tensor({1}, 0.0)}, st2, cfg);
  CHECK(s2.at("rest.w").value[0] == doctest::Approx(2.0 - cfg.lr_rest * 0.1 * 2.0).epsilon(1e-12));
  CHECK(st2.m[0][0] == 0.0);
}

TEST_CASE("Adam matches a scalar reference over several steps") {
  AdamConfig cfg;
  cfg.weight_decay = 5e-4;
  ParamStore s = two_scalars(0.5, 0.5);
  OptimState st = init_optim_state(s);
  double theta = 0.5, m = 0.0, v = 0.0;
  const double grads[] = {0.3, -0.1, 0.7, 0.05};
  for (int t = 1; t <= 4; ++t) {
    const double g = grads[t - 1];
    adam_step(s, {Tensor({1}, g), Tensor({1}, g)}, st, cfg);
    const double ge = g + cfg.weight_decay * theta;
    m = cfg.beta1 * m + (1 - cfg.beta1) * ge;
    v = cfg.beta2 * v + (1 - cfg.beta2) * ge * ge;
    const double mh = m / (1 - std::pow(cfg.beta1, t)), vh = v / (1 - std::pow(cfg.beta2, t));
    theta -= cfg.lr_rest * mh / (std::sqrt(vh) + cfg.eps);
    CHECK(s.at("rest.w").value[0] == doctest::Approx(theta).epsilon(1e-13));
  }
}

TEST_CASE("shape mismatch and empty gradients are errors") {
  ParamStore s = two_scalars(1, 1);
  OptimState st = init_optim_state(s);
  AdamConfig cfg;
  CHECK_THROWS(adam_step(s, {}, st, cfg));
  CHECK_THROWS(adam_step(s, {Tensor({2}, 0.0), Tensor({1}, 0.0)}, st, cfg));
}

TEST_CASE("optimizer state round-trips through named tensors") {
  ParamStore s = two_scalars(1, 2);
  OptimState st = init_optim_state(s);
  AdamConfig cfg;
  adam_step(s, {Tensor({1}, 0.4), Tensor({1}, -0.2)}, st, cfg);
  auto named = st.to_named(s);
  OptimState back = OptimState::from_named(s, named);
  CHECK(back.step == st.step);
  CHECK(back.m == st.m);
  CHECK(back.v == st.v);
}
