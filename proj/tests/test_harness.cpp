#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "csn/config.hpp"
#include "csn/container.hpp"
#include "csn/experiment.hpp"
#include "csn/report.hpp"
#include "doctest.h"
#include "json.hpp"

using namespace csn;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("csn_test_harness_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

ExperimentConfig tiny_config() {
  std::istringstream in(R"(
# small enough for unit tests
synth.participants = 6
synth.frames = 16
synth.image_size = 16
synth.num_aus = 3
backbone.stages = 4,8
backbone.hidden = 8
train.epochs = 2
train.batch_size = 16
optim.lr_last = 1e-3
optim.lr_rest = 1e-3
xval.folds = 3
modes = ncg,ofc_bs,ofc_csn:stage2
)");
  return parse_config(in, "tiny");
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

int run_cli(const std::string& args, const fs::path& out_file) {
  const std::string cmd = std::string(CSN_LAB_PATH) + " " + args + " > " + out_file.string() + " 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

const MetricReport& report_for(const CrossvalResult& r, const std::string& method) {
  for (const auto& rep : r.reports)
    if (rep.method == method) return rep;
  throw std::runtime_error("no report " + method);
}

}  // namespace

TEST_CASE("config parsing, validation and hashing") {
  ExperimentConfig c = tiny_config();
  CHECK(c.synth.participants == 6);
  CHECK(c.backbone.stages.size() == 2);
  CHECK(c.backbone.stages[1].channels == 8);
  CHECK(c.optim.lr_rest == 1e-3);
  CHECK(c.hash().size() == 8);
  ExperimentConfig d = c;
  apply_setting(d, "train.epochs", "3");
  CHECK(d.hash() != c.hash());
  apply_setting(d, "out", "elsewhere");
  apply_setting(d, "train.epochs", "2");
  CHECK(d.hash() == c.hash());
  CHECK_THROWS_AS(apply_setting(d, "train.epochz", "2"), std::invalid_argument);
  CHECK_THROWS_AS(apply_setting(d, "train.epochs", "two"), std::invalid_argument);
  apply_setting(d, "train.epochs", "0");
  CHECK_THROWS(d.validate());
  ExperimentConfig e;
  e.modes.clear();
  CHECK_THROWS(e.validate());
  CHECK_THROWS(load_config("/nonexistent/csn.cfg"));
  ExperimentConfig defaults;
  CHECK(defaults.epochs == 3);
  CHECK(defaults.batch_size == 64);
  CHECK(defaults.seed == 42);
  CHECK(defaults.optim.lr_last == 1e-4);
  CHECK(defaults.optim.lr_rest == 1e-5);
  CHECK(defaults.optim.weight_decay == 5e-4);
}

TEST_CASE("training is deterministic to the bit") {
  ExperimentConfig c = tiny_config();
  Dataset data = load_experiment_data(c);
  auto ps = data.manifest.participants();
  for (std::optional<MergePoint> m : {std::optional<MergePoint>{}, std::optional<MergePoint>{MergePoint::Stage(2)}}) {
    TrainResult a = train(c, data, ps, m), b = train(c, data, ps, m);
    CHECK(a.params == b.params);
    CHECK(encode_container(a.params.to_named()) == encode_container(b.params.to_named()));
    CHECK(a.log.epoch_mean_loss == b.log.epoch_mean_loss);
  }
  ExperimentConfig c2 = c;
  c2.seed = 7;
  c2.synth_seed = c.seed;
  CHECK_FALSE(train(c2, data, ps, std::nullopt).params == train(c, data, ps, std::nullopt).params);
  CHECK_THROWS(train(c, data, {}, std::nullopt));
}

TEST_CASE("training loss falls from the epoch-0 evaluation, median of three seeds") {
  ExperimentConfig c = tiny_config();
  c.epochs = 3;
  c.eval_each_epoch = true;
  std::vector<std::vector<double>> curves;
  for (std::uint64_t seed : {1, 2, 3}) {
    c.seed = seed;
    c.synth_seed = 42;  // fixed dataset
    Dataset data = load_experiment_data(c);
    TrainResult r = train(c, data, data.manifest.participants(), MergePoint::Stage(2));
    REQUIRE(r.log.eval_loss.size() == 4);
    curves.push_back(r.log.eval_loss);
  }
  std::vector<double> median;
  for (std::size_t e = 0; e < 4; ++e) {
    std::vector<double> v{curves[0][e], curves[1][e], curves[2][e]};
    std::sort(v.begin(), v.end());
    median.push_back(v[1]);
  }
  for (std::size_t e = 1; e < 4; ++e) CHECK(median[e] < median[e - 1]);
}

TEST_CASE("calibration null: target always equal to its reference") {
  ExperimentConfig c = tiny_config();
  c.epochs = 3;
  c.eval_each_epoch = true;
  Dataset data = load_experiment_data(c);
  // Every frame of a participant shows the same image; labels still vary.
  for (const auto& p : data.manifest.participants()) {
    auto idx = data.manifest.frames_of(p);
    for (auto i : idx) data.images[i] = data.images[idx.front()];
  }
  TrainResult r = train(c, data, data.manifest.participants(), MergePoint::Stage(2));
  CHECK(r.log.eval_loss.back() < r.log.eval_loss.front());
  BackboneSpec spec = resolve_backbone(c, data);
  PredictionSet preds = predict_participants(spec, r.params, PredictionMode::OfcCSN(MergePoint::Stage(2)), data,
                                             data.manifest.participants());
  // A constant predictor: one value per AU across every frame.
  std::vector<double> first(3, 0.0);
  std::vector<bool> seen(3, false);
  for (const auto& row : preds.rows) {
    if (!seen[row.au]) first[row.au] = row.prediction, seen[row.au] = true;
    CHECK(row.prediction == first[row.au]);
  }
  // ... that moved toward the label mean from its initial value.
  double label_mean = 0.0;
  for (const auto& row : preds.rows) label_mean += row.label;
  label_mean /= double(preds.rows.size());
  CHECK(std::abs((first[0] + first[1] + first[2]) / 3 - label_mean) < 1.5);
}

TEST_CASE("cross-validation protocol") {
  ExperimentConfig c = tiny_config();
  Dataset data = load_experiment_data(c);
  ExperimentConfig one = c;
  one.folds = 1;
  CHECK_THROWS(run_crossval(one, data));

  CrossvalResult r = run_crossval(c, data);
  REQUIRE(r.reports.size() == 3);
  CHECK(r.reports[0].method == "NCG");
  CHECK(r.reports[1].method == "OFC_BS");
  CHECK(r.reports[2].method == "OFC_CSN(stage2)");
  std::size_t scored = 0;
  for (const auto& p : r.protocol) {
    CHECK(p.val_frames_in_training == 0);
    CHECK(p.reference_frames_scored == 0);
    CHECK(p.val_references.size() == p.val_participants.size());
    for (const auto& v : p.val_participants)
      CHECK(std::find(p.train_participants.begin(), p.train_participants.end(), v) == p.train_participants.end());
    CHECK(p.logs.count("plain") == 1);
    CHECK(p.logs.count("csn:stage2") == 1);
    scored += p.scored_frames;
  }
  // 6 participants x 16 frames, minus one reference each.
  CHECK(scored == 6 * 15);
  for (std::size_t m = 0; m < r.modes.size(); ++m) {
    std::size_t rows = 0;
    for (const auto& f : r.predictions[m]) rows += f.rows.size();
    CHECK(rows == scored * 3);
  }

  // Adding or dropping OFC_BS leaves NCG untouched.
  ExperimentConfig only_ncg = c;
  only_ncg.modes = {PredictionMode::NCG()};
  CrossvalResult n = run_crossval(only_ncg, data);
  CHECK(n.reports[0].pooled.per_au == report_for(r, "NCG").pooled.per_au);

  // Report layout and provenance.
  std::ostringstream csv;
  write_report_csv(csv, r.reports);
  std::istringstream lines(csv.str());
  std::string header;
  std::getline(lines, header);
  CHECK(header == "metric,method,AU1,AU2,AU4,Average");
  auto j = nlohmann::json::parse(crossval_json(r));
  CHECK(j["config_hash"] == c.hash());
  CHECK(j["seed"] == c.seed);
  CHECK(j["protocol_totals"]["val_frames_in_training"] == 0);
  CHECK(j["protocol_totals"]["reference_frames_scored"] == 0);
  CHECK(j["protocol"][0]["weights"]["reg"].size() == 3);
  CHECK(j["reports"][0]["per_fold"].size() == 3);

  // Same config and seed: identical report bytes.
  std::ostringstream csv2;
  write_report_csv(csv2, run_crossval(c, data).reports);
  CHECK(csv.str() == csv2.str());
}

TEST_CASE("ablation rows, and the untrained output merge equals BS") {
  ExperimentConfig c = tiny_config();
  Dataset data = load_experiment_data(c);
  CHECK_THROWS(run_ablation(c, data, {MergePoint::Output()}));

  c.optim.lr_last = 0.0;
  c.optim.lr_rest = 0.0;
  c.epochs = 1;
  AblationResult ab = run_ablation(c, data, {MergePoint::Stage(2), MergePoint::Output()});
  REQUIRE(ab.runs.size() == 2);
  std::ostringstream csv;
  write_ablation_csv(csv, ab);
  std::string s = csv.str();
  CHECK(std::count(s.begin(), s.end(), '\n') == 3);
  CHECK(s.find("CSN-stage2,") != std::string::npos);
  CHECK(s.find("CSN-output,") != std::string::npos);

  ExperimentConfig bs = c;
  bs.modes = {PredictionMode::OfcBS()};
  const CrossvalResult bs_run = run_crossval(bs, data);
  const MetricReport& b = bs_run.reports[0];
  const MetricReport& o = ab.runs[1].reports[0];
  for (std::size_t m = 0; m < b.pooled.metrics.size(); ++m)
    for (std::size_t a = 0; a < 3; ++a) CHECK(std::abs(o.pooled.per_au[m][a] - b.pooled.per_au[m][a]) < 1e-9);
}

TEST_CASE("prediction CSV round trip") {
  PredictionSet s;
  s.task = Task::kIntensity;
  s.au_names = {"AU1", "AU2"};
  s.rows = {{"P1", 3, 0, 2, 1.25}, {"P1", 3, 1, 0, -0.1}, {"P2", 0, 1, 5, 4.999999999}};
  std::ostringstream out;
  write_predictions_csv(out, s);
  std::istringstream in(out.str());
  PredictionSet back = read_predictions_csv(in, Task::kIntensity);
  REQUIRE(back.rows.size() == 3);
  CHECK(back.rows[2].prediction == s.rows[2].prediction);
  CHECK(back.au_names == s.au_names);
  std::istringstream bad("participant,frame,au,label,prediction\nP1,x,AU1,1,1\n");
  CHECK_THROWS(read_predictions_csv(bad, Task::kIntensity));
}

TEST_CASE("command line") {
  fs::path dir = scratch("cli");
  fs::path log = dir / "log.txt";
  CHECK(run_cli("", log) == 1);
  CHECK(run_cli("frobnicate", log) == 1);
  CHECK(run_cli("xval --config /nonexistent/x.cfg", log) == 1);
  CHECK(run_cli("gradcheck --primitives-only", log) == 0);
  CHECK(slurp(log).find("max_rel_error") != std::string::npos);

  {
    std::ofstream f(dir / "int.csv");
    f << "participant,frame,au,label,prediction\n"
         "A,0,AU1,0,0.5\nA,1,AU1,1,1.5\nA,2,AU1,2,2\nA,3,AU1,3,3.5\n";
  }
  CHECK(run_cli("score " + (dir / "int.csv").string(), log) == 0);
  std::string out = slurp(log);
  // MAE = (0.5 + 0.5 + 0 + 0.5) / 4.
  CHECK(out.find("MAE,NCG,0.375000,0.375000") != std::string::npos);

  {
    std::ofstream f(dir / "det.csv");
    f << "participant,frame,au,label,prediction\n"
         "A,0,AU1,2,0.9\nA,1,AU1,0,0.6\nA,2,AU1,3,0.2\nA,3,AU1,1,0.1\n";
  }
  CHECK(run_cli("score --task detection " + (dir / "det.csv").string(), log) == 0);
  out = slurp(log);
  CHECK(out.find("F1,NCG,0.500000,0.500000") != std::string::npos);
  CHECK(out.find("Accuracy,NCG,0.500000,0.500000") != std::string::npos);

  {
    std::ofstream f(dir / "broken.csv");
    f << "participant,frame,au,label,prediction\nA,0,AU1,9,0.5\n";
  }
  CHECK(run_cli("score " + (dir / "broken.csv").string(), log) == 2);
  CHECK(run_cli("score " + (dir / "absent.csv").string(), log) == 2);
  CHECK(run_cli("xval --set data.manifest=" + (dir / "none.csv").string(), log) == 2);

  const std::string tiny =
      "--set synth.participants=3 --set synth.frames=6 --set synth.image_size=16 --set backbone.stages=4,8 "
      "--set backbone.hidden=8 --set train.epochs=1 --set train.batch_size=6 --set modes=ncg,ofc_csn:stage2 ";
  CHECK(run_cli("synth " + tiny + "--out " + (dir / "synth").string(), log) == 0);
  CHECK(fs::exists(dir / "synth" / "manifest.csv"));
  CHECK(fs::exists(dir / "synth" / "images.csnt"));
  CHECK(run_cli("train " + tiny + "--set data.manifest=" + (dir / "synth" / "manifest.csv").string() +
                    " --merge stage2 --out " + (dir / "train").string(),
                log) == 0);
  CHECK(fs::exists(dir / "train" / "checkpoint.csnt"));
  auto ck = read_container(dir / "train" / "checkpoint.csnt");
  CHECK(std::any_of(ck.begin(), ck.end(), [](const NamedTensor& t) { return t.name == "adam.step"; }));
  CHECK(std::any_of(ck.begin(), ck.end(), [](const NamedTensor& t) { return t.name == "head.fc2.w"; }));
  CHECK(run_cli("train " + tiny + "--set optim.lr_rest=1e300 --set optim.lr_last=1e300 --out " +
                    (dir / "nan").string(),
                log) == 3);
}
