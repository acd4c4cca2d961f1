#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "csn/backbone.hpp"
#include "csn/gradcheck.hpp"

namespace csn {

struct GradCheckCase {
  std::string name;
  std::vector<NamedTensor> params;
  GraphBuilder build;
  GradCheckOptions options;
};

// One small case per tape primitive and per loss; every coordinate checked.
std::vector<GradCheckCase> primitive_cases(std::uint64_t seed);

// Plain and Siamese graphs on `spec` (Stage, FC and Output merges), trained
// loss on top, `points` sampled coordinates per parameter tensor.
std::vector<GradCheckCase> network_cases(const BackboneSpec& spec, std::uint64_t seed, std::size_t points);

struct GradCheckResult {
  std::string name;
  GradCheckReport report;
};

std::vector<GradCheckResult> run_cases(const std::vector<GradCheckCase>& cases);

}  // namespace csn
