#pragma once

// The matrix-game reproduction grid: nv-mappo and qmix on both payoff
// tables with the desk-scale settings (32 envs, buffer 1, noise dim 10, 10
// epochs, sigma 1, 20k steps, eval every 200 steps). Shared by the
// `reproduce-matrix` CLI subcommand and the acceptance suite.

#include "noisymarl/runner.hpp"

namespace noisymarl::trainer {

inline ExperimentConfig appendix_config(const std::string& algo, const std::string& env,
                                        int seeds) {
  ExperimentConfig cfg;
  apply_kv(cfg, "algo", algo);
  apply_kv(cfg, "env", env);
  apply_kv(cfg, "num_envs", "32");
  apply_kv(cfg, "buffer_length", "1");
  apply_kv(cfg, "total_steps", "20000");
  apply_kv(cfg, "eval_every", "200");
  apply_kv(cfg, "eval_episodes", "32");
  apply_kv(cfg, "seeds", std::to_string(seeds));
  if (algo_is_nv(algo)) {
    apply_kv(cfg, "noise_dim", "10");
    apply_kv(cfg, "sigma", "1");
  }
  if (!algo_is_qmix(algo)) apply_kv(cfg, "epochs", "10");
  finalize(cfg);
  return cfg;
}

// Median curve across seeds must sit at `target` for the whole final
// quarter of the evaluations.
inline bool median_holds(const RunOutcome& out, double target, std::string* detail) {
  if (out.aggregate.empty()) {
    *detail = "no evaluation points";
    return false;
  }
  const std::size_t len = out.aggregate.size();
  const std::size_t from = len - len / 4;
  bool ok = true;
  for (std::size_t j = from; j < len; ++j) ok = ok && out.aggregate[j].median_return == target;
  std::ostringstream os;
  os << "final-quarter median returns: [";
  for (std::size_t j = from; j < len; ++j) os << (j > from ? " " : "") << out.aggregate[j].median_return;
  os << "], target " << target;
  *detail = os.str();
  return ok;
}

// Per-seed final-quarter median <= bound for at least `min_seeds` seeds.
inline bool seeds_below(const RunOutcome& out, double bound, int min_seeds, std::string* detail) {
  int hits = 0;
  std::ostringstream os;
  os << "per-seed final-quarter medians: [";
  for (std::size_t k = 0; k < out.seeds.size(); ++k) {
    if (!out.seeds[k].ok) continue;
    auto curve = out.eval_curve(static_cast<int>(k));
    std::vector<double> tail(curve.begin() + (curve.size() - curve.size() / 4), curve.end());
    const double med = median_of(tail);
    os << (k ? " " : "") << med;
    if (med <= bound + 1e-9) ++hits;
  }
  os << "], bound " << bound << ", hits " << hits << "/" << out.seeds.size();
  *detail = os.str();
  return hits >= min_seeds;
}

struct MatrixCheck {
  std::string name;
  bool gating = true;  // informational rows never fail the report
  bool pass = false;
  std::string detail;
};

struct ReproduceReport {
  std::vector<MatrixCheck> checks;
  bool pass = true;
};

inline ReproduceReport reproduce_matrix_games(const std::string& out_dir, int seeds) {
  ReproduceReport report;
  auto gate = [&](MatrixCheck check) {
    if (check.gating) report.pass = report.pass && check.pass;
    report.checks.push_back(std::move(check));
  };

  {
    auto out = run_experiment(appendix_config("nv-mappo", "matrix1", seeds),
                              out_dir + "/nv-mappo-matrix1");
    MatrixCheck c;
    c.name = "nv-mappo matrix1 median reaches 8 and holds";
    c.pass = out.all_ok && median_holds(out, 8.0, &c.detail);
    gate(std::move(c));
  }
  {
    auto out = run_experiment(appendix_config("nv-mappo", "matrix2", seeds),
                              out_dir + "/nv-mappo-matrix2");
    MatrixCheck c;
    c.name = "nv-mappo matrix2 median reaches 12 and holds";
    c.pass = out.all_ok && median_holds(out, 12.0, &c.detail);
    gate(std::move(c));
  }
  {
    auto out = run_experiment(appendix_config("qmix", "matrix2", seeds),
                              out_dir + "/qmix-matrix2");
    MatrixCheck c;
    c.name = "qmix matrix2 stays at most 10 in a majority of seeds";
    c.pass = out.all_ok && seeds_below(out, 10.0, (seeds + 1) / 2 + (seeds % 2 == 0 ? 1 : 0),
                                       &c.detail);
    gate(std::move(c));
  }
  {
    auto out = run_experiment(appendix_config("qmix", "matrix1", seeds),
                              out_dir + "/qmix-matrix1");
    MatrixCheck c;
    c.name = "qmix matrix1 median return (informational)";
    c.gating = false;
    std::string detail;
    c.pass = out.all_ok;
    median_holds(out, 8.0, &detail);
    c.detail = detail;
    gate(std::move(c));
  }
  return report;
}

}  // namespace noisymarl::trainer
