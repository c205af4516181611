// Command-line entry point: train / eval / oracle / gradcheck /
// reproduce-matrix. Exit codes: 0 success, 1 run or acceptance failure,
// 2 usage/config error.

#include <CLI11.hpp>

#include <iostream>

#include "noisymarl/gradsuite.hpp"
#include "noisymarl/oracle.hpp"
#include "noisymarl/reproduce.hpp"

namespace {

using namespace noisymarl;
using trainer::ExperimentConfig;

// Records flag overrides in command-line order; they are applied after the
// config file so flags always win.
struct ConfigFlags {
  std::vector<std::pair<std::string, std::string>> overrides;
  std::string config_file;

  void attach(CLI::App* cmd) {
    static const std::vector<std::pair<const char*, const char*>> kValueFlags = {
        {"--algo", "algo"},
        {"--env", "env"},
        {"--num-envs", "num_envs"},
        {"--buffer-length", "buffer_length"},
        {"--steps", "total_steps"},
        {"--eval-every", "eval_every"},
        {"--eval-episodes", "eval_episodes"},
        {"--seeds", "seeds"},
        {"--seed-base", "seed_base"},
        {"--gamma", "gamma"},
        {"--gae-lambda", "gae_lambda"},
        {"--clip", "clip"},
        {"--entropy-coef", "entropy_coef"},
        {"--alpha", "alpha"},
        {"--lr", "lr"},
        {"--epochs", "epochs"},
        {"--minibatches", "minibatches"},
        {"--network", "network"},
        {"--stacked-frames", "stacked_frames"},
        {"--gain", "gain"},
        {"--hidden-dim", "hidden_dim"},
        {"--noise-dim", "noise_dim"},
        {"--sigma", "sigma"},
        {"--shuffle-interval", "shuffle_interval"},
        {"--value-input-pad", "value_input_pad"},
        {"--return-mode", "return_mode"},
        {"--qmix-batch", "qmix_batch"},
        {"--qmix-buffer", "qmix_buffer"},
        {"--eps-anneal-steps", "eps_anneal_steps"},
        {"--eps-start", "eps_start"},
        {"--eps-end", "eps_end"},
        {"--target-sync", "target_sync"},
        {"--mixer-embed", "mixer_embed"},
    };
    for (const auto& [flag, key] : kValueFlags) {
      const std::string key_copy = key;
      cmd->add_option_function<std::string>(
          flag, [this, key_copy](const std::string& v) { overrides.emplace_back(key_copy, v); },
          std::string("config field ") + key_copy);
    }
    for (const char* key : {"per_agent_params", "na_resample_per_iteration"}) {
      std::string flag = std::string("--") + key;
      for (auto& ch : flag)
        if (ch == '_') ch = '-';
      const std::string key_copy = key;
      cmd->add_flag_function(
          flag, [this, key_copy](std::int64_t) { overrides.emplace_back(key_copy, "true"); },
          std::string("enable config field ") + key_copy);
    }
    cmd->add_option("--config", config_file, "flat key = value config file");
  }

  ExperimentConfig build() const {
    ExperimentConfig cfg;
    if (!config_file.empty()) trainer::apply_config_file(cfg, config_file);
    for (const auto& [key, value] : overrides) trainer::apply_kv(cfg, key, value);
    trainer::finalize(cfg);
    return cfg;
  }
};

int cmd_train(const ConfigFlags& flags, const std::string& out_dir) {
  ExperimentConfig cfg = flags.build();
  trainer::RunOutcome out = trainer::run_experiment(cfg, out_dir);
  for (std::size_t k = 0; k < out.seeds.size(); ++k) {
    const auto& s = out.seeds[k];
    if (s.ok) {
      double final_eval = 0.0;
      for (const auto& row : s.rows)
        if (row.metric == "eval_return_mean") final_eval = row.value;
      std::cout << "seed_" << k << " (seed " << s.seed_value
                << "): done, final eval_return_mean " << format_double(final_eval) << "\n";
    } else {
      std::cout << "seed_" << k << " (seed " << s.seed_value << "): FAILED: " << s.error << "\n";
    }
  }
  if (!out.aggregate.empty())
    std::cout << "final median_return " << format_double(out.aggregate.back().median_return)
              << "\n";
  std::cout << "run directory: " << out.dir << "\n";
  return out.all_ok ? 0 : 1;
}

int cmd_eval(const ConfigFlags& flags, const std::string& params_path) {
  ExperimentConfig cfg = flags.build();
  double ret = 0.0;
  if (trainer::algo_is_qmix(cfg.algo)) {
    trainer::QmixTrainer tr(cfg, 0);
    tr.load_checkpoint(params_path);
    ret = tr.evaluate();
  } else {
    trainer::PpoTrainer tr(cfg, 0);
    tr.load_checkpoint(params_path);
    ret = tr.evaluate();
  }
  std::cout << "eval_return_mean " << format_double(ret) << "\n";
  return 0;
}

int cmd_oracle(const std::string& env_name) {
  if (env_name != "matrix1" && env_name != "matrix2" && env_name != "decoupled-bandit")
    throw std::invalid_argument("unknown environment '" + env_name +
                                "' (expected matrix1, matrix2 or decoupled-bandit)");
  envs::TeamGame env = envs::TeamGame::by_name(env_name);
  std::cout << "environment: " << env.name() << "\n\npayoff (rows: agent 1, cols: agent 2):\n";
  double best = env.payoff(0, 0);
  int ba = 0, bb = 0;
  for (int a = 0; a < env.n_actions(); ++a) {
    for (int b = 0; b < env.n_actions(); ++b) {
      std::cout << "\t" << format_double(env.payoff(a, b));
      if (env.payoff(a, b) > best) {
        best = env.payoff(a, b);
        ba = a;
        bb = b;
      }
    }
    std::cout << "\n";
  }
  std::cout << "\ngreedy joint maximum: " << format_double(best) << " at (" << ba << "," << bb
            << ")\n";

  oracle::TabularPolicy uniform = oracle::TabularPolicy::uniform(env.n_agents(), env.n_actions());
  const double v = oracle::exact_expected_return(env, uniform);
  std::cout << "expected return under uniform policies: " << format_double(v) << "\n";
  std::cout << "\nmarginal advantages under uniform policies (V = E[r]):\n";
  auto value_fn = [&](const std::vector<double>&) { return v; };
  for (int agent = 0; agent < env.n_agents(); ++agent) {
    std::cout << "agent " << agent << ":";
    for (int a = 0; a < env.n_actions(); ++a)
      std::cout << "\ta" << a << "="
                << format_double(oracle::marginal_advantage(env, uniform, agent, a, value_fn));
    std::cout << "\n";
  }
  return 0;
}

int cmd_gradcheck(int seeds, double tolerance) {
  auto results = gradsuite::run_gradient_suite(seeds, tolerance);
  bool all = true;
  for (const auto& r : results) {
    std::cout << (r.pass ? "[ok]   " : "[FAIL] ") << r.name << ": " << r.checks
              << " checks, max rel err " << format_double(r.worst) << "\n";
    all = all && r.pass;
  }
  std::cout << (all ? "gradcheck passed" : "gradcheck FAILED") << " (tolerance "
            << format_double(tolerance) << ")\n";
  return all ? 0 : 1;
}

int cmd_reproduce(const std::string& out_dir, int seeds) {
  trainer::ReproduceReport report = trainer::reproduce_matrix_games(out_dir, seeds);
  for (const auto& c : report.checks) {
    const char* tag = !c.gating ? "[info] " : (c.pass ? "[PASS] " : "[FAIL] ");
    std::cout << tag << c.name << "\n        " << c.detail << "\n";
  }
  std::cout << (report.pass ? "reproduce-matrix passed" : "reproduce-matrix FAILED") << "\n";
  return report.pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cooperative multi-agent RL testbed: PPO-family algorithms with "
               "noise-regularized advantages and a QMIX baseline on one-step team games"};
  app.require_subcommand(1);

  ConfigFlags train_flags, eval_flags;
  std::string train_out, eval_params, oracle_env = "matrix1", repro_out;
  int gradcheck_seeds = 20, repro_seeds = 5;
  double gradcheck_tol = 1e-4;

  CLI::App* train = app.add_subcommand("train", "run a multi-seed experiment");
  train_flags.attach(train);
  train->add_option("--out", train_out, "run directory")->required();

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint greedily");
  eval_flags.attach(eval);
  eval->add_option("--params", eval_params, "checkpoint file (final.params)")->required();

  CLI::App* orc = app.add_subcommand("oracle", "print enumeration tables for an environment");
  orc->add_option("--env", oracle_env, "matrix1 | matrix2 | decoupled-bandit");

  CLI::App* grad = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  grad->add_option("--seeds", gradcheck_seeds, "instances per loss (default 20)");
  grad->add_option("--tolerance", gradcheck_tol, "max relative error (default 1e-4)");

  CLI::App* repro = app.add_subcommand(
      "reproduce-matrix", "run nv-mappo and qmix on both payoff matrices with desk settings");
  repro->add_option("--out", repro_out, "output directory")->required();
  repro->add_option("--seeds", repro_seeds, "independent runs per experiment (default 5)");

  try {
    app.parse(argc, argv);
    if (train->parsed()) return cmd_train(train_flags, train_out);
    if (eval->parsed()) return cmd_eval(eval_flags, eval_params);
    if (orc->parsed()) return cmd_oracle(oracle_env);
    if (grad->parsed()) return cmd_gradcheck(gradcheck_seeds, gradcheck_tol);
    if (repro->parsed()) return cmd_reproduce(repro_out, repro_seeds);
    return 2;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    app.exit(e);
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
