#include "csn/experiment.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <set>
#include <stdexcept>

#include "csn/errors.hpp"
#include "csn/ops.hpp"

namespace csn {

Dataset load_experiment_data(const ExperimentConfig& cfg) {
  if (!cfg.manifest.empty()) return load_dataset(cfg.manifest);
  return generate_synthetic(cfg.effective_synth()).dataset();
}

BackboneSpec resolve_backbone(const ExperimentConfig& cfg, const Dataset& data) {
  if (data.images.empty()) throw DataError("dataset has no frames");
  BackboneSpec spec = cfg.backbone;
  const Shape& s = data.images.front().shape();
  spec.in_channels = s.at(0);
  spec.height = s.at(1);
  spec.width = s.at(2);
  spec.num_aus = data.manifest.au_names.size();
  spec.task = cfg.task;
  spec.validate();
  return spec;
}

namespace {

struct Item {
  std::size_t frame;
  std::size_t reference;
};

std::vector<Item> training_items(const Dataset& data, const std::vector<std::string>& participants) {
  std::vector<Item> items;
  for (const auto& p : participants) {
    const auto idx = data.manifest.frames_of(p);
    if (idx.empty()) throw DataError("training participant " + p + " has no frames");
    const std::size_t ref = data.manifest.index_of(p, select_reference(data.manifest, p));
    for (auto i : idx) items.push_back({i, ref});
  }
  return items;
}

struct Batch {
  Tensor targets;
  Tensor references;
  LabelBatch labels;
};

Batch make_batch(const Dataset& data, std::span<const Item> items, bool with_refs) {
  std::vector<Tensor> t, r;
  Batch b;
  for (const auto& it : items) {
    t.push_back(data.images[it.frame]);
    if (with_refs) r.push_back(data.images[it.reference]);
    b.labels.push_back(data.manifest.frames[it.frame].intensities);
  }
  b.targets = stack(t);
  if (with_refs) b.references = stack(r);
  return b;
}

HeadOutputs run_graph(const BackboneSpec& spec, const BoundParams& bound, Tape& tape, const Batch& b,
                      std::optional<MergePoint> merge, const CsnOptions& csn) {
  Var x = tape.constant(b.targets);
  if (!merge) return forward(spec, bound, x);
  return forward_csn(spec, bound, x, tape.constant(b.references), *merge, csn);
}

std::mt19937_64 epoch_rng(std::uint64_t seed, std::size_t epoch) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch)};
  return std::mt19937_64(seq);
}

constexpr std::size_t kEvalBatch = 64;

double mean_loss(const ExperimentConfig& cfg, const BackboneSpec& spec, const Dataset& data,
                 const std::vector<Item>& items, std::optional<MergePoint> merge, const ParamStore& params,
                 const WeightTables& weights) {
  double total = 0.0;
  for (std::size_t start = 0; start < items.size(); start += kEvalBatch) {
    const std::size_t len = std::min(kEvalBatch, items.size() - start);
    Batch b = make_batch(data, std::span<const Item>(items).subspan(start, len), merge.has_value());
    Tape tape;
    BoundParams bound = BoundParams::bind(tape, params, false);
    Var loss = batch_loss(spec.task, b.labels, run_graph(spec, bound, tape, b, merge, cfg.csn), weights);
    total += loss.value().item() * static_cast<double>(len);
  }
  return total / static_cast<double>(items.size());
}

WeightTables weights_for(const BackboneSpec& spec, const Dataset& data, const std::vector<Item>& items) {
  LabelBatch labels;
  labels.reserve(items.size());
  for (const auto& it : items) labels.push_back(data.manifest.frames[it.frame].intensities);
  return compute_weights(IntensityCounts::from_labels(spec.num_aus, labels));
}

}  // namespace

double evaluate_loss(const ExperimentConfig& cfg, const Dataset& data, const std::vector<std::string>& participants,
                     std::optional<MergePoint> merge, const ParamStore& params, const WeightTables& weights) {
  const BackboneSpec spec = resolve_backbone(cfg, data);
  return mean_loss(cfg, spec, data, training_items(data, participants), merge, params, weights);
}

TrainResult train(const ExperimentConfig& cfg, const Dataset& data, const std::vector<std::string>& participants,
                  std::optional<MergePoint> merge) {
  cfg.validate();
  if (participants.empty()) throw std::invalid_argument("train: empty training split");
  const BackboneSpec spec = resolve_backbone(cfg, data);
  if (merge) merge->validate(spec);
  const std::vector<Item> items = training_items(data, participants);

  TrainResult res;
  res.params = init_backbone(spec, cfg.seed);
  res.state = init_optim_state(res.params);
  res.weights = weights_for(spec, data, items);
  res.log.items = items.size();
  if (cfg.eval_each_epoch)
    res.log.eval_loss.push_back(mean_loss(cfg, spec, data, items, merge, res.params, res.weights));

  std::vector<std::size_t> order(items.size());
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto rng = epoch_rng(cfg.seed, epoch);
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t len = std::min(cfg.batch_size, order.size() - start);
      std::vector<Item> chunk;
      for (std::size_t k = 0; k < len; ++k) chunk.push_back(items[order[start + k]]);
      Batch b = make_batch(data, chunk, merge.has_value());
      Tape tape;
      BoundParams bound = BoundParams::bind(tape, res.params, true);
      Var loss = batch_loss(spec.task, b.labels, run_graph(spec, bound, tape, b, merge, cfg.csn), res.weights);
      tape.backward(loss);
      std::vector<Tensor> grads;
      grads.reserve(bound.vars().size());
      for (const auto& v : bound.vars()) grads.push_back(tape.grad(v));
      adam_step(res.params, grads, res.state, cfg.optim);
      epoch_total += loss.value().item() * static_cast<double>(len);
      ++res.log.steps;
    }
    res.log.epoch_mean_loss.push_back(epoch_total / static_cast<double>(items.size()));
    if (cfg.eval_each_epoch)
      res.log.eval_loss.push_back(mean_loss(cfg, spec, data, items, merge, res.params, res.weights));
  }
  return res;
}

PredictionSet predict_participants(const BackboneSpec& spec, const ParamStore& params, const PredictionMode& mode,
                                   const Dataset& data, const std::vector<std::string>& participants,
                                   const PredictOptions& options) {
  PredictionSet out;
  out.task = spec.task;
  out.au_names = data.manifest.au_names;
  for (const auto& p : participants) {
    const long ref_frame = select_reference(data.manifest, p);
    const std::size_t ref = data.manifest.index_of(p, ref_frame);
    std::vector<Item> items;
    for (auto i : data.manifest.frames_of(p))
      if (i != ref) items.push_back({i, ref});
    for (std::size_t start = 0; start < items.size(); start += kEvalBatch) {
      const std::size_t len = std::min(kEvalBatch, items.size() - start);
      auto chunk = std::span<const Item>(items).subspan(start, len);
      Batch b = make_batch(data, chunk, mode.needs_reference());
      Tensor est = predict(spec, params, mode, b.targets, mode.needs_reference() ? &b.references : nullptr, options);
      const std::size_t n = spec.num_aus;
      for (std::size_t k = 0; k < len; ++k) {
        const auto& rec = data.manifest.frames[chunk[k].frame];
        for (std::size_t au = 0; au < n; ++au)
          out.rows.push_back({rec.participant, rec.frame, au, static_cast<double>(rec.intensities[au]), est[k * n + au]});
      }
    }
  }
  return out;
}

CrossvalResult run_crossval(const ExperimentConfig& cfg, const Dataset& data) {
  cfg.validate();
  if (cfg.folds < 2) throw std::invalid_argument("cross-validation needs at least 2 folds (k = 1 leaves no held-out participants)");
  const BackboneSpec spec = resolve_backbone(cfg, data);
  CrossvalResult res;
  res.config = cfg;
  res.au_names = data.manifest.au_names;
  res.modes = cfg.modes;
  res.folds = make_folds(data.manifest, cfg.folds, cfg.seed);
  res.predictions.assign(cfg.modes.size(), {});

  const bool need_plain = std::any_of(cfg.modes.begin(), cfg.modes.end(), [](const PredictionMode& m) {
    return m.kind != PredictionMode::Kind::kOfcCSN;
  });
  PredictOptions popts;
  popts.clamp = cfg.clamp;
  popts.csn = cfg.csn;

  for (std::size_t f = 0; f < res.folds.k; ++f) {
    FoldProtocol proto;
    proto.fold = f;
    proto.val_participants = res.folds.participants_in(f);
    for (const auto& p : data.manifest.participants())
      if (res.folds.fold_of.at(p) != f) proto.train_participants.push_back(p);
    const std::set<std::string> val_set(proto.val_participants.begin(), proto.val_participants.end());
    for (const auto& p : proto.train_participants) {
      for (auto i : data.manifest.frames_of(p)) {
        ++proto.train_frames;
        if (val_set.count(data.manifest.frames[i].participant)) ++proto.val_frames_in_training;
      }
    }
    for (const auto& p : proto.val_participants) proto.val_references[p] = select_reference(data.manifest, p);

    std::optional<TrainResult> plain;
    std::map<std::string, TrainResult> csn_models;
    if (need_plain) {
      plain = train(cfg, data, proto.train_participants, std::nullopt);
      proto.logs["plain"] = plain->log;
      proto.weights = plain->weights;
    }
    for (std::size_t m = 0; m < cfg.modes.size(); ++m) {
      const auto& mode = cfg.modes[m];
      const ParamStore* params = nullptr;
      if (mode.kind == PredictionMode::Kind::kOfcCSN) {
        const std::string key = "csn:" + mode.merge.name();
        auto it = csn_models.find(key);
        if (it == csn_models.end()) {
          it = csn_models.emplace(key, train(cfg, data, proto.train_participants, mode.merge)).first;
          proto.logs[key] = it->second.log;
          if (!plain) proto.weights = it->second.weights;
        }
        params = &it->second.params;
      } else {
        params = &plain->params;
      }
      PredictionSet preds = predict_participants(spec, *params, mode, data, proto.val_participants, popts);
      if (m == 0) {
        std::set<std::pair<std::string, long>> scored;
        for (const auto& r : preds.rows) scored.emplace(r.participant, r.frame);
        proto.scored_frames = scored.size();
        for (const auto& [p, ref] : proto.val_references)
          if (scored.count({p, ref})) ++proto.reference_frames_scored;
      }
      res.predictions[m].push_back(std::move(preds));
    }
    res.protocol.push_back(std::move(proto));
  }

  for (std::size_t m = 0; m < cfg.modes.size(); ++m)
    res.reports.push_back(build_report(cfg.modes[m].name(), res.predictions[m], detection_rule(cfg.modes[m], cfg.bs_delta)));
  return res;
}

AblationResult run_ablation(const ExperimentConfig& cfg, const Dataset& data, const std::vector<MergePoint>& merges) {
  if (merges.size() < 2) throw std::invalid_argument("ablation needs at least 2 merge points");
  AblationResult out;
  for (const auto& m : merges) {
    ExperimentConfig c = cfg;
    c.modes = {PredictionMode::OfcCSN(m)};
    out.merges.push_back(m);
    out.runs.push_back(run_crossval(c, data));
  }
  return out;
}

}  // namespace csn
