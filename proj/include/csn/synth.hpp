#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "csn/data.hpp"

namespace csn {

// Confounded-identity benchmark. Every identity carries static "bias blobs"
// that partly imitate AU signatures, so a model that never sees a neutral
// frame of the same face confuses identity attributes with expressions.
struct SynthConfig {
  std::size_t participants = 12;
  std::size_t frames_per_participant = 200;
  std::size_t image_size = 32;
  std::size_t num_aus = 6;
  std::size_t bias_blobs = 3;
  // Share of each bias blob that copies an AU signature, in [0,1].
  double overlap = 0.7;
  // Bias blob amplitudes are drawn from U(0, bias_strength).
  double bias_strength = 0.6;
  // Amplitude of the identity-specific smooth base pattern.
  double base_strength = 0.3;
  // Probability of intensity 0, in (0,1); the rest decays geometrically over 1..5.
  double zero_mass = 0.7;
  double decay = 0.5;
  double noise = 0.05;
  std::uint64_t seed = 42;

  void validate() const;
};

struct SynthIdentity {
  std::string participant;
  std::vector<std::size_t> blob_aus;        // AU signature each blob imitates
  std::vector<double> blob_amplitudes;
  Tensor base;                              // [1,S,S]
  Tensor bias;                              // [1,S,S], sum of blobs
};

struct SynthDataset {
  DatasetManifest manifest;
  std::vector<Tensor> images;               // aligned with manifest.frames
  std::vector<Tensor> signatures;           // per AU, [1,S,S]
  std::vector<SynthIdentity> identities;

  Dataset dataset() const { return {manifest, images}; }
};

// Six AU names of the first DISFA columns; longer lists continue as AU<k>.
std::vector<std::string> synthetic_au_names(std::size_t n);

SynthDataset generate_synthetic(const SynthConfig& config);

// Writes <dir>/manifest.csv and <dir>/images.csnt.
void write_synthetic(const SynthDataset& data, const std::filesystem::path& dir);

}  // namespace csn
