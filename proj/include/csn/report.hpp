#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "csn/experiment.hpp"

namespace csn {

// Table-shaped CSV: `metric,method,<AU...>,Average`, one row per (metric, method).
void write_report_csv(std::ostream& out, const std::vector<MetricReport>& reports);
// `variant,<metric averages...>`, one row per merge point.
void write_ablation_csv(std::ostream& out, const AblationResult& ablation);

// Full provenance: config text and hash, seed, folds, protocol counts,
// per-fold and pooled metrics, weight tables, training logs.
std::string crossval_json(const CrossvalResult& result);
std::string ablation_json(const AblationResult& result);
std::string weights_json(const WeightTables& w);

// `participant,frame,au,label,prediction` with AU names in the au column.
void write_predictions_csv(std::ostream& out, const PredictionSet& preds);
PredictionSet read_predictions_csv(std::istream& in, Task task, const std::string& source = "predictions");

// Writes report.csv, report.json and predictions_<mode>.csv into dir.
void write_crossval_outputs(const CrossvalResult& result, const std::filesystem::path& dir);
void write_ablation_outputs(const AblationResult& result, const std::filesystem::path& dir);

// Parameters plus optimizer state in one CSNT container.
void save_checkpoint(const std::filesystem::path& path, const ParamStore& params, const OptimState& state);

}  // namespace csn
