#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "csn/backbone.hpp"
#include "csn/optimizer.hpp"
#include "csn/siamese.hpp"
#include "csn/synth.hpp"

namespace csn {

struct ExperimentConfig {
  // Empty: generate the synthetic benchmark from `synth`.
  std::string manifest;
  SynthConfig synth;
  // Synthetic data seed; follows `seed` unless set.
  std::optional<std::uint64_t> synth_seed;

  Task task = Task::kIntensity;
  std::vector<PredictionMode> modes{PredictionMode::NCG(), PredictionMode::OfcBS(),
                                    PredictionMode::OfcCSN(MergePoint::Stage(4))};
  // Input extents and AU count are taken from the dataset.
  BackboneSpec backbone;
  std::size_t epochs = 3;
  std::size_t batch_size = 64;
  std::uint64_t seed = 42;
  AdamConfig optim;
  std::size_t folds = 3;
  std::string out_dir = "out";
  double bs_delta = 0.0;
  bool clamp = false;
  CsnOptions csn;
  // Log the full training-set loss before training and after every epoch.
  bool eval_each_epoch = false;

  void validate() const;
  SynthConfig effective_synth() const;
  // Sorted `key = value` lines covering every setting.
  std::string canonical() const;
  // CRC32 of canonical(), 8 hex digits.
  std::string hash() const;
};

// Applies one dotted key. Throws std::invalid_argument on unknown keys or bad values.
void apply_setting(ExperimentConfig& cfg, const std::string& key, const std::string& value);

// Flat `key = value` text; '#' starts a comment.
ExperimentConfig parse_config(std::istream& in, const std::string& source = "config");
ExperimentConfig load_config(const std::filesystem::path& path);

}  // namespace csn
