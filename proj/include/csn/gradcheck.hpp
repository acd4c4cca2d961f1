#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "csn/tape.hpp"

namespace csn {

// Builds a scalar loss on `tape` from leaf variables bound to the parameters,
// in the order they were passed to grad_check. Must be deterministic.
using GraphBuilder = std::function<Var(Tape& tape, std::span<const Var> params)>;

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  // 0 checks every coordinate; otherwise a seeded sample per tensor.
  std::size_t max_points_per_tensor = 0;
  std::uint64_t seed = 0;
};

struct GradCheckEntry {
  std::string name;
  std::size_t checked = 0;
  // Points whose central-difference stencil crosses a relu/max/min kink.
  std::size_t skipped = 0;
  double max_rel_error = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double tolerance = 0.0;

  double max_rel_error() const;
  std::size_t total_skipped() const;
  bool passed() const { return max_rel_error() < tolerance; }
};

// Compares reverse-mode gradients against central finite differences.
// Error per point is |analytic - numeric| / max(1, |numeric|).
GradCheckReport grad_check(const GraphBuilder& build, std::span<const NamedTensor> params,
                           const GradCheckOptions& options = {});

}  // namespace csn
