#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "csn/config.hpp"
#include "csn/data.hpp"
#include "csn/losses.hpp"
#include "csn/metrics.hpp"
#include "csn/optimizer.hpp"

namespace csn {

// Synthetic or manifest-backed dataset named by the config.
Dataset load_experiment_data(const ExperimentConfig& cfg);

// Config backbone with input extents, AU count and task taken from the data.
BackboneSpec resolve_backbone(const ExperimentConfig& cfg, const Dataset& data);

struct TrainingLog {
  std::vector<double> epoch_mean_loss;  // running mean over each epoch's batches
  std::vector<double> eval_loss;        // [0] before training, then per epoch (optional)
  std::size_t steps = 0;
  std::size_t items = 0;                // training samples per epoch
};

struct TrainResult {
  ParamStore params;
  OptimState state;
  TrainingLog log;
  WeightTables weights;
};

// Trains on every frame of `participants`. With a merge point the Siamese
// graph sees (frame, participant reference) pairs; otherwise single frames.
// Weights come from these participants' labels only.
TrainResult train(const ExperimentConfig& cfg, const Dataset& data, const std::vector<std::string>& participants,
                  std::optional<MergePoint> merge);

// Mean per-sample training loss over the given participants, no gradients.
double evaluate_loss(const ExperimentConfig& cfg, const Dataset& data, const std::vector<std::string>& participants,
                     std::optional<MergePoint> merge, const ParamStore& params, const WeightTables& weights);

// Predictions for every non-reference frame of `participants`; OFC modes use
// each participant's own reference frame.
PredictionSet predict_participants(const BackboneSpec& spec, const ParamStore& params, const PredictionMode& mode,
                                   const Dataset& data, const std::vector<std::string>& participants,
                                   const PredictOptions& options = {});

struct FoldProtocol {
  std::size_t fold = 0;
  std::vector<std::string> train_participants;
  std::vector<std::string> val_participants;
  std::map<std::string, long> val_references;
  std::size_t train_frames = 0;
  // Frames of validation participants used for training; must be 0.
  std::size_t val_frames_in_training = 0;
  std::size_t scored_frames = 0;
  // Validation reference frames that were scored; must be 0.
  std::size_t reference_frames_scored = 0;
  WeightTables weights;
  std::map<std::string, TrainingLog> logs;  // "plain" or "csn:<merge>"
};

struct CrossvalResult {
  ExperimentConfig config;
  std::vector<std::string> au_names;
  FoldSpec folds;
  std::vector<PredictionMode> modes;
  std::vector<MetricReport> reports;                    // per mode
  std::vector<std::vector<PredictionSet>> predictions;  // per mode, per fold
  std::vector<FoldProtocol> protocol;
};

// Participant-exclusive k-fold run. NCG and OFC_BS share one plain model per
// fold; every distinct CSN merge point gets its own Siamese model.
CrossvalResult run_crossval(const ExperimentConfig& cfg, const Dataset& data);

struct AblationResult {
  std::vector<MergePoint> merges;
  std::vector<CrossvalResult> runs;
};

// One OFC_CSN cross-validation per merge point with shared seed and folds.
AblationResult run_ablation(const ExperimentConfig& cfg, const Dataset& data, const std::vector<MergePoint>& merges);

}  // namespace csn
