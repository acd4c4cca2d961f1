#include "csn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <stdexcept>
#include <tuple>

namespace csn {

void PredictionSet::validate() const {
  std::set<std::tuple<std::string, long, std::size_t>> keys;
  for (const auto& r : rows) {
    if (r.au >= au_names.size()) throw std::invalid_argument("prediction row AU index out of range");
    if (!(r.label >= 0.0 && r.label <= kMaxIntensity)) throw std::invalid_argument("prediction row label outside [0,5]");
    if (!keys.emplace(r.participant, r.frame, r.au).second)
      throw std::invalid_argument("duplicate prediction key (" + r.participant + ", " + std::to_string(r.frame) + ", " +
                                  std::to_string(r.au) + ")");
  }
}

std::vector<PredictionRow> PredictionSet::slice(std::size_t au) const {
  std::vector<PredictionRow> out;
  for (const auto& r : rows)
    if (r.au == au) out.push_back(r);
  return out;
}

double icc31(std::span<const std::pair<double, double>> pairs) {
  const std::size_t n = pairs.size();
  if (n < 2) throw std::invalid_argument("icc31 needs at least 2 pairs");
  constexpr double k = 2.0;
  double grand = 0.0, mean_a = 0.0, mean_b = 0.0;
  for (const auto& [a, b] : pairs) {
    mean_a += a;
    mean_b += b;
  }
  mean_a /= static_cast<double>(n);
  mean_b /= static_cast<double>(n);
  grand = 0.5 * (mean_a + mean_b);
  double ss_rows = 0.0, ss_err = 0.0;
  for (const auto& [a, b] : pairs) {
    const double mt = 0.5 * (a + b);
    ss_rows += (mt - grand) * (mt - grand);
    const double ea = a - mt - mean_a + grand;
    const double eb = b - mt - mean_b + grand;
    ss_err += ea * ea + eb * eb;
  }
  const double dn = static_cast<double>(n - 1);
  const double bms = k * ss_rows / dn;
  const double ems = ss_err / (dn * (k - 1.0));
  const double denom = bms + (k - 1.0) * ems;
  if (std::abs(denom) < 1e-12) return 0.0;
  return (bms - ems) / denom;
}

namespace {

std::vector<std::pair<double, double>> to_pairs(const std::vector<PredictionRow>& rows) {
  std::vector<std::pair<double, double>> p;
  p.reserve(rows.size());
  for (const auto& r : rows) p.emplace_back(r.label, r.prediction);
  return p;
}

std::vector<PredictionRow> nonempty_slice(const PredictionSet& preds, std::size_t au) {
  auto rows = preds.slice(au);
  if (rows.empty()) throw std::invalid_argument("no predictions for AU " + std::to_string(au));
  return rows;
}

}  // namespace

double icc_across(const PredictionSet& preds, std::size_t au) { return icc31(to_pairs(nonempty_slice(preds, au))); }

double icc_within(const PredictionSet& preds, std::size_t au) {
  std::map<std::string, std::vector<PredictionRow>> by_participant;
  for (auto& r : nonempty_slice(preds, au)) by_participant[r.participant].push_back(r);
  double total = 0.0;
  std::size_t valid = 0;
  for (const auto& [pid, rows] : by_participant) {
    if (rows.size() < 2) continue;
    const bool constant = std::all_of(rows.begin(), rows.end(), [&](const PredictionRow& r) { return r.label == rows[0].label; });
    total += constant ? 0.0 : icc31(to_pairs(rows));
    ++valid;
  }
  if (valid == 0) throw std::invalid_argument("icc_within: no participant with at least 2 frames");
  return total / static_cast<double>(valid);
}

double mae(const PredictionSet& preds, std::size_t au) {
  auto rows = nonempty_slice(preds, au);
  double s = 0.0;
  for (const auto& r : rows) s += std::abs(r.label - r.prediction);
  return s / static_cast<double>(rows.size());
}

DetectionScores DetectionScores::from_counts(std::size_t tp, std::size_t fp, std::size_t fn, std::size_t tn) {
  DetectionScores d;
  d.tp = tp;
  d.fp = fp;
  d.fn = fn;
  d.tn = tn;
  const double total = static_cast<double>(tp + fp + fn + tn);
  d.accuracy = total > 0 ? static_cast<double>(tp + tn) / total : 0.0;
  d.precision = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  d.recall = tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  d.f1 = d.precision + d.recall > 0.0 ? 2.0 * d.precision * d.recall / (d.precision + d.recall) : 0.0;
  return d;
}

DetectionScores detection_metrics(const PredictionSet& preds, std::size_t au, const DetectionRule& rule) {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  for (const auto& r : nonempty_slice(preds, au)) {
    const bool truth = r.label >= 2.0;
    const bool pred = rule.fires(r.prediction);
    if (truth && pred) ++tp;
    else if (!truth && pred) ++fp;
    else if (truth) ++fn;
    else ++tn;
  }
  return DetectionScores::from_counts(tp, fp, fn, tn);
}

double MetricBlock::value(const std::string& metric, std::size_t au) const {
  for (std::size_t m = 0; m < metrics.size(); ++m)
    if (metrics[m] == metric) return per_au.at(m).at(au);
  throw std::out_of_range("no metric " + metric);
}

double MetricBlock::mean(const std::string& metric) const {
  for (std::size_t m = 0; m < metrics.size(); ++m)
    if (metrics[m] == metric) return average.at(m);
  throw std::out_of_range("no metric " + metric);
}

std::vector<std::string> metric_names(Task task) {
  if (task == Task::kIntensity) return {"ICC(3,1)", "ICC_within", "MAE"};
  return {"F1", "Accuracy", "Precision", "Recall"};
}

MetricBlock score(const PredictionSet& preds, const DetectionRule& rule) {
  preds.validate();
  MetricBlock block;
  block.metrics = metric_names(preds.task);
  const std::size_t n = preds.au_names.size();
  block.per_au.assign(block.metrics.size(), std::vector<double>(n, 0.0));
  for (std::size_t au = 0; au < n; ++au) {
    if (preds.task == Task::kIntensity) {
      block.per_au[0][au] = icc_across(preds, au);
      block.per_au[1][au] = icc_within(preds, au);
      block.per_au[2][au] = mae(preds, au);
    } else {
      const auto d = detection_metrics(preds, au, rule);
      block.per_au[0][au] = d.f1;
      block.per_au[1][au] = d.accuracy;
      block.per_au[2][au] = d.precision;
      block.per_au[3][au] = d.recall;
    }
  }
  for (const auto& row : block.per_au) {
    double s = 0.0;
    for (double v : row) s += v;
    block.average.push_back(n ? s / static_cast<double>(n) : 0.0);
  }
  return block;
}

MetricReport build_report(const std::string& method, const std::vector<PredictionSet>& folds, const DetectionRule& rule) {
  if (folds.empty()) throw std::invalid_argument("build_report: no folds");
  std::map<std::string, std::size_t> owner;
  for (std::size_t f = 0; f < folds.size(); ++f)
    for (const auto& r : folds[f].rows) {
      auto [it, inserted] = owner.emplace(r.participant, f);
      if (!inserted && it->second != f)
        throw std::invalid_argument("participant " + r.participant + " appears in folds " + std::to_string(it->second) +
                                    " and " + std::to_string(f));
    }
  MetricReport report;
  report.method = method;
  report.task = folds.front().task;
  report.au_names = folds.front().au_names;
  PredictionSet all;
  all.task = report.task;
  all.au_names = report.au_names;
  for (const auto& f : folds) {
    if (f.task != report.task || f.au_names != report.au_names)
      throw std::invalid_argument("build_report: folds disagree on task or AU list");
    all.rows.insert(all.rows.end(), f.rows.begin(), f.rows.end());
    report.per_fold.push_back(score(f, rule));
  }
  report.pooled = score(all, rule);
  report.fold_mean = report.pooled;
  for (std::size_t m = 0; m < report.fold_mean.metrics.size(); ++m) {
    for (std::size_t au = 0; au < report.au_names.size(); ++au) {
      double s = 0.0;
      for (const auto& pf : report.per_fold) s += pf.per_au[m][au];
      report.fold_mean.per_au[m][au] = s / static_cast<double>(folds.size());
    }
    double s = 0.0;
    for (double v : report.fold_mean.per_au[m]) s += v;
    report.fold_mean.average[m] = s / static_cast<double>(report.au_names.size());
  }
  return report;
}

}  // namespace csn
