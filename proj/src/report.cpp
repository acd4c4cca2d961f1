#include "csn/report.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

#include "csn/container.hpp"
#include "csn/errors.hpp"
#include "json.hpp"

namespace csn {
namespace {

using nlohmann::json;

std::string fixed(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

json block_json(const MetricBlock& b, const std::vector<std::string>& aus) {
  json j = json::object();
  for (std::size_t m = 0; m < b.metrics.size(); ++m) {
    json per = json::object();
    for (std::size_t a = 0; a < aus.size(); ++a) per[aus[a]] = b.per_au[m][a];
    j[b.metrics[m]] = {{"per_au", per}, {"average", b.average[m]}};
  }
  return j;
}

json report_json(const MetricReport& r) {
  json j;
  j["method"] = r.method;
  j["task"] = std::string(task_name(r.task));
  j["pooling"] = r.pooling;
  j["pooled"] = block_json(r.pooled, r.au_names);
  j["fold_mean"] = block_json(r.fold_mean, r.au_names);
  json folds = json::array();
  for (const auto& f : r.per_fold) folds.push_back(block_json(f, r.au_names));
  j["per_fold"] = folds;
  return j;
}

json log_json(const TrainingLog& l) {
  return {{"epoch_mean_loss", l.epoch_mean_loss}, {"eval_loss", l.eval_loss}, {"steps", l.steps}, {"items", l.items}};
}

json crossval_obj(const CrossvalResult& r) {
  json j;
  j["config_hash"] = r.config.hash();
  j["config"] = r.config.canonical();
  j["seed"] = r.config.seed;
  j["task"] = std::string(task_name(r.config.task));
  j["au_names"] = r.au_names;
  json folds = json::object();
  for (const auto& [p, f] : r.folds.fold_of) folds[p] = f;
  j["folds"] = {{"k", r.folds.k}, {"assignment", folds}};
  json protocol = json::array();
  std::size_t leaked = 0, refs_scored = 0;
  for (const auto& p : r.protocol) {
    json logs = json::object();
    for (const auto& [k, l] : p.logs) logs[k] = log_json(l);
    protocol.push_back({{"fold", p.fold},
                        {"train_participants", p.train_participants},
                        {"val_participants", p.val_participants},
                        {"val_references", p.val_references},
                        {"train_frames", p.train_frames},
                        {"val_frames_in_training", p.val_frames_in_training},
                        {"scored_frames", p.scored_frames},
                        {"reference_frames_scored", p.reference_frames_scored},
                        {"weights", json::parse(weights_json(p.weights))},
                        {"training", logs}});
    leaked += p.val_frames_in_training;
    refs_scored += p.reference_frames_scored;
  }
  j["protocol"] = protocol;
  j["protocol_totals"] = {{"val_frames_in_training", leaked}, {"reference_frames_scored", refs_scored}};
  json reports = json::array();
  for (const auto& rep : r.reports) reports.push_back(report_json(rep));
  j["reports"] = reports;
  return j;
}

std::string sanitize(const std::string& key) {
  std::string s;
  for (char c : key) s += (std::isalnum(static_cast<unsigned char>(c)) ? c : '_');
  return s;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot open " + path.string() + " for writing");
  f << text;
}

}  // namespace

void write_report_csv(std::ostream& out, const std::vector<MetricReport>& reports) {
  if (reports.empty()) return;
  const auto& aus = reports.front().au_names;
  out << "metric,method";
  for (const auto& a : aus) out << ',' << a;
  out << ",Average\n";
  const auto& metrics = reports.front().pooled.metrics;
  for (std::size_t m = 0; m < metrics.size(); ++m)
    for (const auto& r : reports) {
      out << metrics[m] << ',' << r.method;
      for (double v : r.pooled.per_au[m]) out << ',' << fixed(v);
      out << ',' << fixed(r.pooled.average[m]) << '\n';
    }
}

void write_ablation_csv(std::ostream& out, const AblationResult& ab) {
  if (ab.runs.empty()) return;
  const auto& metrics = ab.runs.front().reports.front().pooled.metrics;
  out << "variant";
  for (const auto& m : metrics) out << ',' << m;
  out << '\n';
  for (std::size_t i = 0; i < ab.runs.size(); ++i) {
    out << "CSN-" << ab.merges[i].name();
    for (double v : ab.runs[i].reports.front().pooled.average) out << ',' << fixed(v);
    out << '\n';
  }
}

std::string weights_json(const WeightTables& w) {
  json j;
  j["reg"] = w.reg;
  j["cls"] = w.cls;
  j["det"] = w.det;
  return j.dump();
}

std::string crossval_json(const CrossvalResult& result) { return crossval_obj(result).dump(2); }

std::string ablation_json(const AblationResult& result) {
  json j = json::array();
  for (std::size_t i = 0; i < result.runs.size(); ++i)
    j.push_back({{"merge", result.merges[i].name()}, {"run", crossval_obj(result.runs[i])}});
  return j.dump(2);
}

void write_predictions_csv(std::ostream& out, const PredictionSet& preds) {
  out << "participant,frame,au,label,prediction\n";
  char buf[64];
  for (const auto& r : preds.rows) {
    std::snprintf(buf, sizeof buf, "%.17g", r.prediction);
    out << r.participant << ',' << r.frame << ',' << preds.au_names.at(r.au) << ',' << r.label << ',' << buf << '\n';
  }
}

PredictionSet read_predictions_csv(std::istream& in, Task task, const std::string& source) {
  PredictionSet ps;
  ps.task = task;
  std::string line;
  std::size_t lineno = 0;
  auto fail = [&](const std::string& msg) { throw DataError(source + ":" + std::to_string(lineno) + ": " + msg); };
  if (!std::getline(in, line)) fail("empty file");
  ++lineno;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "participant,frame,au,label,prediction") fail("expected header participant,frame,au,label,prediction");
  std::map<std::string, std::size_t> au_index;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 5) fail("expected 5 fields");
    PredictionRow r;
    r.participant = cells[0];
    try {
      std::size_t used = 0;
      r.frame = std::stol(cells[1], &used);
      if (used != cells[1].size()) throw std::invalid_argument("frame");
      r.label = std::stod(cells[3]);
      r.prediction = std::stod(cells[4]);
    } catch (const std::exception&) {
      fail("malformed numeric field");
    }
    auto it = au_index.find(cells[2]);
    if (it == au_index.end()) {
      it = au_index.emplace(cells[2], ps.au_names.size()).first;
      ps.au_names.push_back(cells[2]);
    }
    r.au = it->second;
    ps.rows.push_back(std::move(r));
  }
  try {
    ps.validate();
  } catch (const std::invalid_argument& e) {
    throw DataError(source + ": " + e.what());
  }
  return ps;
}

void write_crossval_outputs(const CrossvalResult& result, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ostringstream csv;
  write_report_csv(csv, result.reports);
  write_text(dir / "report.csv", csv.str());
  write_text(dir / "report.json", crossval_json(result) + "\n");
  for (std::size_t m = 0; m < result.modes.size(); ++m) {
    PredictionSet all;
    all.task = result.config.task;
    all.au_names = result.au_names;
    for (const auto& f : result.predictions[m]) all.rows.insert(all.rows.end(), f.rows.begin(), f.rows.end());
    std::ostringstream p;
    write_predictions_csv(p, all);
    write_text(dir / ("predictions_" + sanitize(result.modes[m].key()) + ".csv"), p.str());
  }
}

void write_ablation_outputs(const AblationResult& result, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ostringstream csv;
  write_ablation_csv(csv, result);
  write_text(dir / "ablation.csv", csv.str());
  write_text(dir / "ablation.json", ablation_json(result) + "\n");
}

void save_checkpoint(const std::filesystem::path& path, const ParamStore& params, const OptimState& state) {
  auto entries = params.to_named();
  for (auto& e : state.to_named(params)) entries.push_back(std::move(e));
  write_container(path, entries);
}

}  // namespace csn
