// csn_lab: experiment driver for the calibrating Siamese network lab.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "csn/config.hpp"
#include "csn/data.hpp"
#include "csn/errors.hpp"
#include "csn/experiment.hpp"
#include "csn/gradcheck_suite.hpp"
#include "csn/report.hpp"
#include "csn/synth.hpp"
#include "json.hpp"

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3 };

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::string> sets;
};

csn::ExperimentConfig resolve_config(const Globals& g) {
  csn::ExperimentConfig cfg = g.config.empty() ? csn::ExperimentConfig{} : csn::load_config(g.config);
  for (const auto& kv : g.sets) {
    auto eq = kv.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value, got '" + kv + "'");
    csn::apply_setting(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (g.seed) cfg.seed = *g.seed;
  if (!g.out.empty()) cfg.out_dir = g.out;
  cfg.validate();
  return cfg;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

int cmd_synth(const Globals& g) {
  auto cfg = resolve_config(g);
  auto data = csn::generate_synthetic(cfg.effective_synth());
  csn::write_synthetic(data, cfg.out_dir);
  std::cout << "wrote " << data.manifest.frames.size() << " frames of " << data.manifest.participants().size()
            << " participants to " << cfg.out_dir << "\n";
  return kOk;
}

int cmd_train(const Globals& g, std::optional<std::size_t> fold, const std::string& merge_text) {
  auto cfg = resolve_config(g);
  auto data = csn::load_experiment_data(cfg);
  std::vector<std::string> participants = data.manifest.participants();
  if (fold) {
    auto folds = csn::make_folds(data.manifest, cfg.folds, cfg.seed);
    if (*fold >= folds.k) throw std::invalid_argument("--fold out of range");
    participants.clear();
    for (const auto& [p, f] : folds.fold_of)
      if (f != *fold) participants.push_back(p);
  }
  std::optional<csn::MergePoint> merge;
  if (merge_text != "none") merge = csn::parse_merge_point(merge_text);

  auto t0 = std::chrono::steady_clock::now();
  auto result = csn::train(cfg, data, participants, merge);
  double elapsed = seconds_since(t0);

  std::filesystem::create_directories(cfg.out_dir);
  const auto dir = std::filesystem::path(cfg.out_dir);
  csn::save_checkpoint(dir / "checkpoint.csnt", result.params, result.state);
  nlohmann::json log;
  log["config_hash"] = cfg.hash();
  log["config"] = cfg.canonical();
  log["seed"] = cfg.seed;
  log["participants"] = participants;
  log["merge"] = merge ? merge->name() : "none";
  log["epoch_mean_loss"] = result.log.epoch_mean_loss;
  log["eval_loss"] = result.log.eval_loss;
  log["steps"] = result.log.steps;
  log["items"] = result.log.items;
  log["weights"] = nlohmann::json::parse(csn::weights_json(result.weights));
  std::ofstream(dir / "train_log.json") << log.dump(2) << "\n";

  for (std::size_t e = 0; e < result.log.epoch_mean_loss.size(); ++e)
    std::printf("epoch %zu  loss %.6f\n", e + 1, result.log.epoch_mean_loss[e]);
  std::printf("%zu steps in %.1fs; checkpoint in %s\n", result.log.steps, elapsed, cfg.out_dir.c_str());
  return kOk;
}

int cmd_xval(const Globals& g) {
  auto cfg = resolve_config(g);
  auto data = csn::load_experiment_data(cfg);
  auto t0 = std::chrono::steady_clock::now();
  auto result = csn::run_crossval(cfg, data);
  csn::write_crossval_outputs(result, cfg.out_dir);
  csn::write_report_csv(std::cout, result.reports);
  std::fprintf(stderr, "xval finished in %.1fs; outputs in %s\n", seconds_since(t0), cfg.out_dir.c_str());
  return kOk;
}

int cmd_ablate(const Globals& g, const std::vector<std::string>& merge_texts) {
  auto cfg = resolve_config(g);
  auto data = csn::load_experiment_data(cfg);
  std::vector<csn::MergePoint> merges;
  if (merge_texts.empty()) {
    for (std::size_t k = 1; k <= cfg.backbone.stages.size(); ++k) merges.push_back(csn::MergePoint::Stage(k));
    merges.push_back(csn::MergePoint::FC());
    merges.push_back(csn::MergePoint::Output());
  } else {
    for (const auto& m : merge_texts) merges.push_back(csn::parse_merge_point(m));
  }
  auto t0 = std::chrono::steady_clock::now();
  auto result = csn::run_ablation(cfg, data, merges);
  csn::write_ablation_outputs(result, cfg.out_dir);
  csn::write_ablation_csv(std::cout, result);
  std::fprintf(stderr, "ablation finished in %.1fs; outputs in %s\n", seconds_since(t0), cfg.out_dir.c_str());
  return kOk;
}

int cmd_score(const Globals& g, const std::string& path, const std::string& task_text, const std::string& mode_text,
              std::optional<double> bs_delta) {
  auto cfg = resolve_config(g);
  csn::Task task = task_text.empty() ? cfg.task : csn::parse_task(task_text);
  auto mode = csn::parse_prediction_mode(mode_text);
  std::ifstream in(path);
  if (!in) throw csn::DataError("cannot open " + path);
  auto preds = csn::read_predictions_csv(in, task, path);
  auto report = csn::build_report(mode.name(), {preds}, csn::detection_rule(mode, bs_delta.value_or(cfg.bs_delta)));
  csn::write_report_csv(std::cout, {report});
  if (!g.out.empty()) {
    std::filesystem::create_directories(g.out);
    std::ofstream f(std::filesystem::path(g.out) / "score.csv");
    csn::write_report_csv(f, {report});
  }
  return kOk;
}

int cmd_gradcheck(const Globals& g, std::size_t points, bool primitives_only) {
  auto cfg = resolve_config(g);
  csn::BackboneSpec spec = cfg.backbone;
  spec.validate();
  auto t0 = std::chrono::steady_clock::now();
  auto cases = csn::primitive_cases(cfg.seed);
  if (!primitives_only) {
    auto net = csn::network_cases(spec, cfg.seed, points);
    cases.insert(cases.end(), std::make_move_iterator(net.begin()), std::make_move_iterator(net.end()));
  }
  auto results = csn::run_cases(cases);
  bool ok = true;
  std::printf("%-34s %8s %8s %14s\n", "case", "checked", "skipped", "max_rel_error");
  for (const auto& r : results) {
    std::size_t checked = 0;
    for (const auto& e : r.report.entries) checked += e.checked;
    std::printf("%-34s %8zu %8zu %14.3e %s\n", r.name.c_str(), checked, r.report.total_skipped(),
                r.report.max_rel_error(), r.report.passed() ? "ok" : "FAIL");
    ok = ok && r.report.passed();
  }
  std::printf("%zu cases, %.1fs, tolerance %.0e: %s\n", results.size(), seconds_since(t0),
              cases.empty() ? 0.0 : cases.front().options.tolerance, ok ? "passed" : "FAILED");
  return ok ? kOk : kNumerical;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Calibrating Siamese network lab"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "flat key = value config file");
  app.add_option("--seed", g.seed, "overrides the config seed");
  app.add_option("--out", g.out, "output directory");
  app.add_option("--set", g.sets, "key=value override, repeatable");

  auto* synth = app.add_subcommand("synth", "generate the synthetic dataset");
  auto* train = app.add_subcommand("train", "train one model and write a checkpoint");
  std::optional<std::size_t> fold;
  std::string merge = "none";
  train->add_option("--fold", fold, "train on all folds but this one");
  train->add_option("--merge", merge, "Siamese merge point (stage<k>, fc, output) or none");
  auto* xval = app.add_subcommand("xval", "participant-exclusive cross-validation over all modes");
  auto* ablate = app.add_subcommand("ablate", "cross-validate OFC_CSN at several merge points");
  std::vector<std::string> merges;
  ablate->add_option("--merges", merges, "merge points; default every stage, fc and output")->delimiter(',');
  auto* score = app.add_subcommand("score", "metrics for a prediction CSV");
  std::string pred_path, task_text, mode_text = "ncg";
  std::optional<double> bs_delta;
  score->add_option("predictions", pred_path, "participant,frame,au,label,prediction CSV")->required();
  score->add_option("--task", task_text, "intensity or detection; default from config");
  score->add_option("--mode", mode_text, "ncg, ofc_bs or ofc_csn[:merge]; selects the detection rule");
  score->add_option("--bs-delta", bs_delta, "OFC_BS detection margin");
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every primitive and network graph");
  std::size_t points = 3;
  bool primitives_only = false;
  gradcheck->add_option("--points", points, "sampled coordinates per network parameter tensor");
  gradcheck->add_flag("--primitives-only", primitives_only);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*synth) return cmd_synth(g);
    if (*train) return cmd_train(g, fold, merge);
    if (*xval) return cmd_xval(g);
    if (*ablate) return cmd_ablate(g, merges);
    if (*score) return cmd_score(g, pred_path, task_text, mode_text, bs_delta);
    if (*gradcheck) return cmd_gradcheck(g, points, primitives_only);
  } catch (const csn::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const csn::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kNumerical;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  }
  return kUsage;
}
