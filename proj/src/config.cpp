#include "csn/config.hpp"

#include <zlib.h>

#include <charconv>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "csn/errors.hpp"

namespace csn {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) out.push_back(trim(item));
  return out;
}

template <class T>
T to_uint(const std::string& key, const std::string& v) {
  T out{};
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty())
    throw std::invalid_argument(key + ": expected a non-negative integer, got '" + v + "'");
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument("trailing");
    return d;
  } catch (const std::exception&) {
    throw std::invalid_argument(key + ": expected a number, got '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw std::invalid_argument(key + ": expected true/false, got '" + v + "'");
}

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string join_modes(const std::vector<PredictionMode>& modes) {
  std::string s;
  for (const auto& m : modes) s += (s.empty() ? "" : ",") + m.key();
  return s;
}

}  // namespace

void ExperimentConfig::validate() const {
  if (modes.empty()) throw std::invalid_argument("config: at least one prediction mode is required");
  if (epochs < 1) throw std::invalid_argument("config: train.epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("config: train.batch_size must be >= 1");
  if (manifest.empty()) effective_synth().validate();
  for (const auto& m : modes)
    if (m.kind == PredictionMode::Kind::kOfcCSN) {
      BackboneSpec probe = backbone;
      probe.validate();
      m.merge.validate(probe);
    }
}

SynthConfig ExperimentConfig::effective_synth() const {
  SynthConfig s = synth;
  s.seed = synth_seed.value_or(seed);
  return s;
}

void apply_setting(ExperimentConfig& c, const std::string& key, const std::string& raw) {
  const std::string v = trim(raw);
  using Z = std::size_t;
  if (key == "data.manifest") c.manifest = v;
  else if (key == "synth.participants") c.synth.participants = to_uint<Z>(key, v);
  else if (key == "synth.frames") c.synth.frames_per_participant = to_uint<Z>(key, v);
  else if (key == "synth.image_size") c.synth.image_size = to_uint<Z>(key, v);
  else if (key == "synth.num_aus") c.synth.num_aus = to_uint<Z>(key, v);
  else if (key == "synth.bias_blobs") c.synth.bias_blobs = to_uint<Z>(key, v);
  else if (key == "synth.overlap") c.synth.overlap = to_double(key, v);
  else if (key == "synth.bias_strength") c.synth.bias_strength = to_double(key, v);
  else if (key == "synth.base_strength") c.synth.base_strength = to_double(key, v);
  else if (key == "synth.zero_mass") c.synth.zero_mass = to_double(key, v);
  else if (key == "synth.decay") c.synth.decay = to_double(key, v);
  else if (key == "synth.noise") c.synth.noise = to_double(key, v);
  else if (key == "synth.seed") c.synth_seed = to_uint<std::uint64_t>(key, v);
  else if (key == "task") c.task = parse_task(v);
  else if (key == "modes") {
    c.modes.clear();
    for (const auto& m : split(v, ',')) c.modes.push_back(parse_prediction_mode(m));
  } else if (key == "backbone.stages") {
    const auto parts = split(v, ',');
    std::vector<StageSpec> stages;
    for (std::size_t i = 0; i < parts.size(); ++i)
      stages.push_back({to_uint<Z>(key, parts[i]), i < c.backbone.stages.size() ? c.backbone.stages[i].blocks : 1});
    c.backbone.stages = stages;
  } else if (key == "backbone.blocks") {
    const auto parts = split(v, ',');
    for (std::size_t i = 0; i < c.backbone.stages.size(); ++i)
      c.backbone.stages[i].blocks = to_uint<Z>(key, parts.size() == 1 ? parts[0] : parts.at(i));
  } else if (key == "backbone.hidden") c.backbone.hidden = to_uint<Z>(key, v);
  else if (key == "train.epochs") c.epochs = to_uint<Z>(key, v);
  else if (key == "train.batch_size") c.batch_size = to_uint<Z>(key, v);
  else if (key == "train.eval_each_epoch") c.eval_each_epoch = to_bool(key, v);
  else if (key == "seed") c.seed = to_uint<std::uint64_t>(key, v);
  else if (key == "optim.lr_last") c.optim.lr_last = to_double(key, v);
  else if (key == "optim.lr_rest") c.optim.lr_rest = to_double(key, v);
  else if (key == "optim.beta1") c.optim.beta1 = to_double(key, v);
  else if (key == "optim.beta2") c.optim.beta2 = to_double(key, v);
  else if (key == "optim.eps") c.optim.eps = to_double(key, v);
  else if (key == "optim.weight_decay") c.optim.weight_decay = to_double(key, v);
  else if (key == "optim.decoupled") c.optim.decoupled = to_bool(key, v);
  else if (key == "xval.folds") c.folds = to_uint<Z>(key, v);
  else if (key == "detect.bs_delta") c.bs_delta = to_double(key, v);
  else if (key == "predict.clamp") c.clamp = to_bool(key, v);
  else if (key == "merge.fc_before_hidden") c.csn.fc_before_hidden = to_bool(key, v);
  else if (key == "out") c.out_dir = v;
  else throw std::invalid_argument("unknown config key '" + key + "'");
}

ExperimentConfig parse_config(std::istream& in, const std::string& source) {
  ExperimentConfig c;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument(source + ":" + std::to_string(lineno) + ": expected 'key = value'");
    try {
      apply_setting(c, trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument(source + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::invalid_argument("cannot open config " + path.string());
  return parse_config(f, path.string());
}

std::string ExperimentConfig::canonical() const {
  std::map<std::string, std::string> kv;
  const SynthConfig s = effective_synth();
  kv["data.manifest"] = manifest;
  kv["synth.participants"] = std::to_string(s.participants);
  kv["synth.frames"] = std::to_string(s.frames_per_participant);
  kv["synth.image_size"] = std::to_string(s.image_size);
  kv["synth.num_aus"] = std::to_string(s.num_aus);
  kv["synth.bias_blobs"] = std::to_string(s.bias_blobs);
  kv["synth.overlap"] = fmt_double(s.overlap);
  kv["synth.bias_strength"] = fmt_double(s.bias_strength);
  kv["synth.base_strength"] = fmt_double(s.base_strength);
  kv["synth.zero_mass"] = fmt_double(s.zero_mass);
  kv["synth.decay"] = fmt_double(s.decay);
  kv["synth.noise"] = fmt_double(s.noise);
  kv["synth.seed"] = std::to_string(s.seed);
  kv["task"] = std::string(task_name(task));
  kv["modes"] = join_modes(modes);
  std::string stages, blocks;
  for (const auto& st : backbone.stages) {
    stages += (stages.empty() ? "" : ",") + std::to_string(st.channels);
    blocks += (blocks.empty() ? "" : ",") + std::to_string(st.blocks);
  }
  kv["backbone.stages"] = stages;
  kv["backbone.blocks"] = blocks;
  kv["backbone.hidden"] = std::to_string(backbone.hidden);
  kv["train.epochs"] = std::to_string(epochs);
  kv["train.batch_size"] = std::to_string(batch_size);
  kv["train.eval_each_epoch"] = eval_each_epoch ? "true" : "false";
  kv["seed"] = std::to_string(seed);
  kv["optim.lr_last"] = fmt_double(optim.lr_last);
  kv["optim.lr_rest"] = fmt_double(optim.lr_rest);
  kv["optim.beta1"] = fmt_double(optim.beta1);
  kv["optim.beta2"] = fmt_double(optim.beta2);
  kv["optim.eps"] = fmt_double(optim.eps);
  kv["optim.weight_decay"] = fmt_double(optim.weight_decay);
  kv["optim.decoupled"] = optim.decoupled ? "true" : "false";
  kv["xval.folds"] = std::to_string(folds);
  kv["detect.bs_delta"] = fmt_double(bs_delta);
  kv["predict.clamp"] = clamp ? "true" : "false";
  kv["merge.fc_before_hidden"] = csn.fc_before_hidden ? "true" : "false";
  std::string out;
  for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
  return out;
}

std::string ExperimentConfig::hash() const {
  const std::string text = canonical();
  const auto crc = crc32(0L, reinterpret_cast<const Bytef*>(text.data()), static_cast<uInt>(text.size()));
  char buf[16];
  std::snprintf(buf, sizeof buf, "%08lx", static_cast<unsigned long>(crc));
  return buf;
}

}  // namespace csn
