#pragma once

// Experiment configuration: defaults, the flat `key = value` config file
// format, typed overrides, validation, and the resolved echo written into
// every run directory. Unknown keys and settings that do not apply to the
// selected algorithm are rejected outright.

#include <fstream>
#include <set>

#include "noisymarl/algos.hpp"
#include "noisymarl/textio.hpp"

namespace noisymarl::trainer {

inline const std::set<std::string>& known_algos() {
  static const std::set<std::string> algos = {"mapg",    "mappo",    "ippo",     "nv-mapg",
                                              "nv-mappo", "nv-ippo", "na-mappo", "qmix"};
  return algos;
}

inline bool algo_is_nv(const std::string& a) { return a.rfind("nv-", 0) == 0; }
inline bool algo_is_na(const std::string& a) { return a == "na-mappo"; }
inline bool algo_is_qmix(const std::string& a) { return a == "qmix"; }
inline bool algo_is_mapg(const std::string& a) { return a == "mapg" || a == "nv-mapg"; }
inline bool algo_is_ippo(const std::string& a) { return a == "ippo" || a == "nv-ippo"; }
inline bool algo_uses_central_state(const std::string& a) {
  return !algo_is_ippo(a) && !algo_is_qmix(a);
}

struct ExperimentConfig {
  std::string algo = "mappo";
  std::string env = "matrix1";

  int num_envs = 32;
  int buffer_length = 1;
  long long total_steps = 20000;
  long long eval_every = 200;
  int eval_episodes = 32;
  int seeds = 5;
  long long seed_base = 0;

  algos::HyperParams hp;  // gamma, gae_lambda, clip, entropy_coef, alpha, lr, epochs, minibatches

  std::string network = "mlp";  // mlp | rnn
  int stacked_frames = 1;
  double gain = 0.01;
  int hidden_dim = 64;
  bool per_agent_params = false;

  int noise_dim = 10;
  double sigma = 1.0;
  long long shuffle_interval = 0;  // 0 = never (the +inf default)
  bool na_resample_per_iteration = false;

  int value_input_pad = 0;          // zero-pads the critic input (plain variants only)
  std::string return_mode = "gae";  // gae: R = A + v; nstep: discounted return + bootstrap
  bool value_norm = true;           // critic learns running-normalized return targets

  int qmix_batch = 128;
  int qmix_buffer = 5000;
  long long eps_anneal_steps = 10000;
  double eps_start = 1.0;
  double eps_end = 0.05;
  int target_sync = 200;
  int mixer_embed = 32;

  std::set<std::string> explicit_keys;

  bool was_set(const std::string& key) const { return explicit_keys.count(key) > 0; }
};

[[noreturn]] inline void config_error(const std::string& msg) {
  throw std::invalid_argument("config: " + msg);
}

// Applies one typed key=value override and records the key as explicit.
inline void apply_kv(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  auto i64 = [&](long long& out) {
    if (!parse_i64(value, out)) config_error("bad integer for " + key + ": '" + value + "'");
  };
  auto ival = [&](int& out) {
    long long v;
    if (!parse_i64(value, v)) config_error("bad integer for " + key + ": '" + value + "'");
    out = static_cast<int>(v);
  };
  auto f64 = [&](double& out) {
    if (!parse_f64(value, out)) config_error("bad real for " + key + ": '" + value + "'");
  };
  auto bval = [&](bool& out) {
    if (!parse_bool(value, out)) config_error("bad bool for " + key + ": '" + value + "'");
  };

  if (key == "algo") cfg.algo = trim(value);
  else if (key == "env") cfg.env = trim(value);
  else if (key == "num_envs") ival(cfg.num_envs);
  else if (key == "buffer_length") ival(cfg.buffer_length);
  else if (key == "total_steps") i64(cfg.total_steps);
  else if (key == "eval_every") i64(cfg.eval_every);
  else if (key == "eval_episodes") ival(cfg.eval_episodes);
  else if (key == "seeds") ival(cfg.seeds);
  else if (key == "seed_base") i64(cfg.seed_base);
  else if (key == "gamma") f64(cfg.hp.gamma);
  else if (key == "gae_lambda") f64(cfg.hp.gae_lambda);
  else if (key == "clip") f64(cfg.hp.clip);
  else if (key == "entropy_coef") f64(cfg.hp.entropy_coef);
  else if (key == "alpha") f64(cfg.hp.alpha);
  else if (key == "lr") f64(cfg.hp.lr);
  else if (key == "epochs") ival(cfg.hp.epochs);
  else if (key == "minibatches") ival(cfg.hp.minibatches);
  else if (key == "network") cfg.network = trim(value);
  else if (key == "stacked_frames") ival(cfg.stacked_frames);
  else if (key == "gain") f64(cfg.gain);
  else if (key == "hidden_dim") ival(cfg.hidden_dim);
  else if (key == "per_agent_params") bval(cfg.per_agent_params);
  else if (key == "noise_dim") ival(cfg.noise_dim);
  else if (key == "sigma") f64(cfg.sigma);
  else if (key == "shuffle_interval") i64(cfg.shuffle_interval);
  else if (key == "na_resample_per_iteration") bval(cfg.na_resample_per_iteration);
  else if (key == "value_input_pad") ival(cfg.value_input_pad);
  else if (key == "return_mode") cfg.return_mode = trim(value);
  else if (key == "value_norm") bval(cfg.value_norm);
  else if (key == "qmix_batch") ival(cfg.qmix_batch);
  else if (key == "qmix_buffer") ival(cfg.qmix_buffer);
  else if (key == "eps_anneal_steps") i64(cfg.eps_anneal_steps);
  else if (key == "eps_start") f64(cfg.eps_start);
  else if (key == "eps_end") f64(cfg.eps_end);
  else if (key == "target_sync") ival(cfg.target_sync);
  else if (key == "mixer_embed") ival(cfg.mixer_embed);
  else config_error("unknown key '" + key + "'");
  cfg.explicit_keys.insert(key);
}

// Flat `key = value` lines; '#' starts a comment; blank lines ignored.
inline void apply_config_file(ExperimentConfig& cfg, const std::string& path) {
  std::ifstream is(path);
  if (!is) config_error("cannot open config file " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      config_error(path + ":" + std::to_string(lineno) + ": expected key = value");
    apply_kv(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

// Resolves algorithm-dependent defaults (QMIX learning rate) and rejects
// invalid or stray settings.
inline void finalize(ExperimentConfig& cfg) {
  if (!known_algos().count(cfg.algo)) config_error("unknown algo '" + cfg.algo + "'");
  if (cfg.env != "matrix1" && cfg.env != "matrix2" && cfg.env != "decoupled-bandit")
    config_error("unknown env '" + cfg.env + "'");
  if (cfg.network != "mlp" && cfg.network != "rnn")
    config_error("network must be mlp or rnn");
  if (cfg.return_mode != "gae" && cfg.return_mode != "nstep")
    config_error("return_mode must be gae or nstep");

  if (algo_is_qmix(cfg.algo) && !cfg.was_set("lr")) cfg.hp.lr = 1e-3;
  if (algo_is_mapg(cfg.algo)) {
    if ((cfg.was_set("epochs") && cfg.hp.epochs != 1) ||
        (cfg.was_set("minibatches") && cfg.hp.minibatches != 1))
      config_error(cfg.algo + " performs a single full-batch pass; epochs/minibatches must be 1");
    if (cfg.was_set("clip")) config_error(cfg.algo + " has no ratio clipping");
    cfg.hp.epochs = 1;
    cfg.hp.minibatches = 1;
  }

  auto reject_if_set = [&](const std::string& key, const std::string& why) {
    if (cfg.was_set(key)) config_error(key + " does not apply: " + why);
  };
  if (!algo_is_nv(cfg.algo)) {
    reject_if_set("sigma", cfg.algo + " draws no value noise");
    reject_if_set("noise_dim", cfg.algo + " draws no value noise");
    reject_if_set("shuffle_interval", cfg.algo + " draws no value noise");
  }
  if (!algo_is_na(cfg.algo)) {
    reject_if_set("alpha", cfg.algo + " does not mix advantage noise");
    reject_if_set("na_resample_per_iteration", cfg.algo + " does not mix advantage noise");
  }
  if (!algo_is_qmix(cfg.algo)) {
    for (const char* k : {"qmix_batch", "qmix_buffer", "eps_anneal_steps", "eps_start",
                          "eps_end", "target_sync", "mixer_embed"})
      reject_if_set(k, cfg.algo + " is not qmix");
  } else {
    for (const char* k : {"clip", "entropy_coef", "gae_lambda", "epochs", "minibatches",
                          "value_input_pad", "return_mode", "value_norm"})
      reject_if_set(k, "qmix has no PPO update");
  }
  if (algo_is_nv(cfg.algo) || algo_is_qmix(cfg.algo))
    reject_if_set("value_input_pad", "padding only applies to noise-free critics");

  try {
    cfg.hp.validate();
  } catch (const std::exception& e) {
    config_error(e.what());
  }
  if (cfg.num_envs < 1 || cfg.buffer_length < 1 || cfg.seeds < 1 || cfg.eval_episodes < 1 ||
      cfg.total_steps < 1 || cfg.eval_every < 1)
    config_error("counts must be positive");
  if (cfg.stacked_frames < 1) config_error("stacked_frames must be >= 1");
  if (!(cfg.gain > 0.0)) config_error("gain must be positive");
  if (cfg.hidden_dim < 1) config_error("hidden_dim must be >= 1");
  if (cfg.noise_dim < 1) config_error("noise_dim must be >= 1");
  if (cfg.sigma < 0.0) config_error("sigma must be >= 0");
  if (cfg.value_input_pad < 0) config_error("value_input_pad must be >= 0");
  if (algo_is_qmix(cfg.algo)) {
    if (cfg.qmix_batch < 1 || cfg.qmix_buffer < cfg.qmix_batch)
      config_error("qmix replay must hold at least one batch");
    if (!(cfg.eps_start >= 0.0 && cfg.eps_start <= 1.0 && cfg.eps_end >= 0.0 &&
          cfg.eps_end <= cfg.eps_start))
      config_error("epsilon schedule must satisfy 0 <= eps_end <= eps_start <= 1");
    if (cfg.eps_anneal_steps < 1 || cfg.target_sync < 1 || cfg.mixer_embed < 1)
      config_error("qmix schedule values must be positive");
  }
}

// Every field, effective value, fixed order — the `config.resolved` contract.
inline std::string resolved_text(const ExperimentConfig& cfg) {
  std::ostringstream os;
  auto kv = [&](const std::string& k, const std::string& v) { os << k << " = " << v << "\n"; };
  kv("algo", cfg.algo);
  kv("env", cfg.env);
  kv("num_envs", std::to_string(cfg.num_envs));
  kv("buffer_length", std::to_string(cfg.buffer_length));
  kv("total_steps", std::to_string(cfg.total_steps));
  kv("eval_every", std::to_string(cfg.eval_every));
  kv("eval_episodes", std::to_string(cfg.eval_episodes));
  kv("seeds", std::to_string(cfg.seeds));
  kv("seed_base", std::to_string(cfg.seed_base));
  kv("gamma", format_double(cfg.hp.gamma));
  kv("gae_lambda", format_double(cfg.hp.gae_lambda));
  kv("clip", format_double(cfg.hp.clip));
  kv("entropy_coef", format_double(cfg.hp.entropy_coef));
  kv("alpha", format_double(cfg.hp.alpha));
  kv("lr", format_double(cfg.hp.lr));
  kv("epochs", std::to_string(cfg.hp.epochs));
  kv("minibatches", std::to_string(cfg.hp.minibatches));
  kv("network", cfg.network);
  kv("stacked_frames", std::to_string(cfg.stacked_frames));
  kv("gain", format_double(cfg.gain));
  kv("hidden_dim", std::to_string(cfg.hidden_dim));
  kv("per_agent_params", cfg.per_agent_params ? "true" : "false");
  kv("noise_dim", std::to_string(cfg.noise_dim));
  kv("sigma", format_double(cfg.sigma));
  kv("shuffle_interval", std::to_string(cfg.shuffle_interval));
  kv("na_resample_per_iteration", cfg.na_resample_per_iteration ? "true" : "false");
  kv("value_input_pad", std::to_string(cfg.value_input_pad));
  kv("return_mode", cfg.return_mode);
  kv("value_norm", cfg.value_norm ? "true" : "false");
  kv("qmix_batch", std::to_string(cfg.qmix_batch));
  kv("qmix_buffer", std::to_string(cfg.qmix_buffer));
  kv("eps_anneal_steps", std::to_string(cfg.eps_anneal_steps));
  kv("eps_start", format_double(cfg.eps_start));
  kv("eps_end", format_double(cfg.eps_end));
  kv("target_sync", std::to_string(cfg.target_sync));
  kv("mixer_embed", std::to_string(cfg.mixer_embed));
  return os.str();
}

}  // namespace noisymarl::trainer
