#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "csn/tensor.hpp"

namespace csn {

struct FrameRecord {
  std::string participant;
  long frame = 0;
  // "<file>.csnt#<entry>" or "<file>.pgm", relative to the manifest directory.
  std::string image;
  bool is_reference = false;
  std::vector<int> intensities;

  friend bool operator==(const FrameRecord&, const FrameRecord&) = default;
};

struct DatasetManifest {
  std::vector<std::string> au_names;
  std::vector<FrameRecord> frames;
  std::string provenance;

  // Sorted, unique.
  std::vector<std::string> participants() const;
  // Indices into `frames`, in file order.
  std::vector<std::size_t> frames_of(const std::string& participant) const;
  std::size_t index_of(const std::string& participant, long frame) const;
  // Throws DataError naming the offending row.
  void validate() const;

  friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

// CSV with header `participant,frame,image,ref,au_<NAME>...`. `source` names
// the input in error messages. Image references are not resolved.
DatasetManifest parse_manifest(std::istream& in, const std::string& source = "manifest");
// Parses and checks that every image reference resolves.
DatasetManifest load_manifest(const std::filesystem::path& path);
void write_manifest(const DatasetManifest& manifest, std::ostream& out);
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

// Explicit `ref` flag wins; otherwise the frame with the smallest label sum,
// ties broken by the smallest frame id.
long select_reference(const DatasetManifest& manifest, const std::string& participant);

struct FoldSpec {
  std::size_t k = 0;
  std::map<std::string, std::size_t> fold_of;

  std::vector<std::string> participants_in(std::size_t fold) const;
  // Rejects empty folds and out-of-range indices.
  void validate() const;
  // Builds from explicit groups; a participant in two groups is an error.
  static FoldSpec from_groups(const std::vector<std::vector<std::string>>& groups);
};

// Participants sorted, shuffled with `seed`, dealt round-robin into k folds.
// k equal to the participant count is leave-one-participant-out.
FoldSpec make_folds(const DatasetManifest& manifest, std::size_t k, std::uint64_t seed);

// P5 (maxval 255) mapped linearly to [0,1]; returns [1,H,W].
Tensor read_pgm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const Tensor& image);

// A manifest with its images resolved, aligned with manifest.frames.
struct Dataset {
  DatasetManifest manifest;
  std::vector<Tensor> images;
};

Dataset load_dataset(const std::filesystem::path& manifest_path);

}  // namespace csn
