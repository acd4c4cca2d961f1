#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "csn/backbone.hpp"
#include "csn/siamese.hpp"

namespace csn {

struct PredictionRow {
  std::string participant;
  long frame = 0;
  std::size_t au = 0;
  double label = 0.0;  // true intensity in [0,5]
  double prediction = 0.0;
};

struct PredictionSet {
  Task task = Task::kIntensity;
  std::vector<std::string> au_names;
  std::vector<PredictionRow> rows;

  // Unique (participant, frame, AU) keys, labels within [0,5], AU indices in range.
  void validate() const;
  std::vector<PredictionRow> slice(std::size_t au) const;
};

// Shrout-Fleiss ICC(3,1) with two raters (label, prediction): two-way mixed,
// consistency, single rater. Returns 0 when BMS + EMS vanishes.
double icc31(std::span<const std::pair<double, double>> pairs);

// One ICC over every participant's frames pooled.
double icc_across(const PredictionSet& preds, std::size_t au);
// Mean over participants (with >= 2 frames) of per-participant ICC; a
// participant whose labels are constant contributes 0.
double icc_within(const PredictionSet& preds, std::size_t au);
double mae(const PredictionSet& preds, std::size_t au);

struct DetectionScores {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  double f1 = 0.0, accuracy = 0.0, precision = 0.0, recall = 0.0;

  static DetectionScores from_counts(std::size_t tp, std::size_t fp, std::size_t fn, std::size_t tn);
};

// Ground truth is occurrence (label >= 2); predicted positive when rule fires.
DetectionScores detection_metrics(const PredictionSet& preds, std::size_t au, const DetectionRule& rule);

// Metric name -> per-AU values plus their arithmetic mean.
struct MetricBlock {
  std::vector<std::string> metrics;
  std::vector<std::vector<double>> per_au;
  std::vector<double> average;

  double value(const std::string& metric, std::size_t au) const;
  double mean(const std::string& metric) const;
};

struct MetricReport {
  std::string method;
  Task task = Task::kIntensity;
  std::vector<std::string> au_names;
  // Canonical numbers: predictions concatenated across folds, scored once.
  std::string pooling = "concatenated";
  MetricBlock pooled;
  std::vector<MetricBlock> per_fold;
  // Mean of per-fold values, the alternative convention.
  MetricBlock fold_mean;
};

// Intensity: "ICC(3,1)" (across participants), "ICC_within", "MAE".
// Detection: "F1", "Accuracy", "Precision", "Recall".
std::vector<std::string> metric_names(Task task);

MetricBlock score(const PredictionSet& preds, const DetectionRule& rule);

// Throws std::invalid_argument when a participant appears in two folds.
MetricReport build_report(const std::string& method, const std::vector<PredictionSet>& folds,
                          const DetectionRule& rule);

}  // namespace csn
