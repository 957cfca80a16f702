#include "metadiffub/config.hpp"

#include <fstream>
#include <limits>

#include "metadiffub/errors.hpp"

namespace metadiffub {

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = {
      {"seed", "0", "root seed for every random stream"},
      {"threads", "1", "worker cap for exploration epochs"},
      {"data.task", "copy", "synthetic task when no corpus is given: copy, reverse or sort"},
      {"data.train", "", "training JSONL corpus with src and trg fields"},
      {"data.valid", "", "held-out JSONL corpus"},
      {"data.tokenizer", "whitespace", "whitespace or char"},
      {"data.min_freq", "1", "minimum token count for the vocabulary"},
      {"data.synthetic_vocab", "16", "symbol count of synthetic tasks"},
      {"data.min_len", "8", "shortest synthetic source"},
      {"data.max_src_len", "8", "longest synthetic source"},
      {"data.train_size", "2000", "synthetic training pairs"},
      {"data.valid_size", "64", "synthetic held-out pairs"},
      {"data.max_len", "20", "encoded sequence length: src, SEP, target, EOS and padding"},
      {"model.layers", "2", "transformer blocks"},
      {"model.heads", "4", "attention heads"},
      {"model.dim", "32", "model and embedding width"},
      {"model.ffn_mult", "4", "feed-forward expansion"},
      {"model.train_embeddings", "false", "update the token embedding table"},
      {"model.embed_std", "1", "token embedding initial scale"},
      {"diffusion.T", "64", "diffusion steps"},
      {"diffusion.s", "0.0001", "sqrt schedule offset"},
      {"diffusion.lambda", "1", "weight of the z_0 norm regulariser"},
      {"diffusion.rounding", "false", "add the rounding cross-entropy term"},
      {"scheduler.hidden", "32", "LSTM width"},
      {"scheduler.enc_max_len", "128", "longest source the scheduler reads"},
      {"scheduler.init_bias", "2", "initial instruction logit bias"},
      {"scheduler.lr", "1", "scheduler ascent step size"},
      {"train.epochs", "2000", "exploiter optimizer steps"},
      {"train.E", "4", "exploration epochs per scheduler round"},
      {"train.total_batch", "32", "exploiter batch size"},
      {"train.period", "10", "exploiter steps between scheduler rounds"},
      {"train.lr", "0.001", "exploiter Adam step size"},
      {"train.reward_baseline", "true", "subtract the mean Meta-Reward within a round"},
      {"train.reward_steps", "16", "generation steps for Meta-Reward probes"},
      {"train.eval_every", "0", "held-out evaluation interval; 0 evaluates at start and end"},
      {"train.eval_steps", "0", "generation steps for held-out evaluation; 0 uses T"},
      {"train.early_stop", "0", "evaluations without BLEU gain before stopping; 0 disables"},
      {"train.checkpoint_every", "0", "checkpoint interval; 0 saves start and end"},
      {"train.fixed_sqrt", "false", "train with the fixed sqrt schedule"},
      {"generate.steps", "0", "generation steps; 0 uses T"},
      {"generate.mbr", "5", "MBR candidate count"},
      {"analysis.K", "32", "difficulty bucket size"},
  };
  return keys;
}

RunConfig::RunConfig() {
  for (const auto& k : config_keys()) values_[k.name] = k.default_value;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second = value;
}

void RunConfig::set_assignment(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + assignment + "'");
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void RunConfig::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    try {
      set_assignment(line);
    } catch (const ConfigError& e) {
      throw ConfigError(path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
}

const std::string& RunConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

std::int64_t RunConfig::get_int(const std::string& key) const {
  const std::string& v = get(key);
  try {
    std::size_t used = 0;
    const long long x = std::stoll(v, &used);
    if (used == v.size()) return x;
  } catch (const std::exception&) {
  }
  throw ConfigError("config key " + key + " expects an integer, got '" + v + "'");
}

std::size_t RunConfig::get_size(const std::string& key) const {
  const std::int64_t x = get_int(key);
  if (x < 0) throw ConfigError("config key " + key + " must be nonnegative");
  return static_cast<std::size_t>(x);
}

double RunConfig::get_double(const std::string& key) const {
  const std::string& v = get(key);
  try {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used == v.size()) return x;
  } catch (const std::exception&) {
  }
  throw ConfigError("config key " + key + " expects a number, got '" + v + "'");
}

bool RunConfig::get_bool(const std::string& key) const {
  const std::string& v = get(key);
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config key " + key + " expects true or false, got '" + v + "'");
}

std::string RunConfig::resolved() const {
  std::string out;
  for (const auto& k : config_keys()) out += k.name + "=" + values_.at(k.name) + "\n";
  return out;
}

ExploiterConfig exploiter_config(const RunConfig& cfg) {
  ExploiterConfig e;
  e.layers = cfg.get_size("model.layers");
  e.heads = cfg.get_size("model.heads");
  e.dim = cfg.get_size("model.dim");
  e.ffn_mult = cfg.get_size("model.ffn_mult");
  e.train_embeddings = cfg.get_bool("model.train_embeddings");
  e.embed_std = cfg.get_double("model.embed_std");
  e.T = cfg.get_size("diffusion.T");
  e.max_len = cfg.get_size("data.max_len");
  e.lambda = cfg.get_double("diffusion.lambda");
  e.rounding_loss = cfg.get_bool("diffusion.rounding");
  e.schedule_s = cfg.get_double("diffusion.s");
  return e;
}

SchedulerConfig scheduler_config(const RunConfig& cfg) {
  SchedulerConfig s;
  s.dim = cfg.get_size("model.dim");
  s.hidden = cfg.get_size("scheduler.hidden");
  s.enc_max_len = cfg.get_size("scheduler.enc_max_len");
  s.T = cfg.get_size("diffusion.T");
  s.init_bias = cfg.get_double("scheduler.init_bias");
  return s;
}

TrainConfig train_config(const RunConfig& cfg) {
  TrainConfig t;
  t.E = cfg.get_size("train.E");
  t.total_batch = cfg.get_size("train.total_batch");
  t.period = cfg.get_size("train.period");
  t.epochs = cfg.get_size("train.epochs");
  t.exploiter_lr = cfg.get_double("train.lr");
  t.scheduler_lr = cfg.get_double("scheduler.lr");
  t.reward_baseline = cfg.get_bool("train.reward_baseline");
  t.reward_steps = cfg.get_size("train.reward_steps");
  t.eval_every = cfg.get_size("train.eval_every");
  t.eval_steps = cfg.get_size("train.eval_steps");
  t.early_stop = cfg.get_size("train.early_stop");
  t.checkpoint_every = cfg.get_size("train.checkpoint_every");
  t.threads = cfg.get_size("threads");
  t.fixed_sqrt = cfg.get_bool("train.fixed_sqrt");
  t.validate();
  return t;
}

}  // namespace metadiffub
