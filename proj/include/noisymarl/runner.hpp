#pragma once

// Multi-seed experiment orchestration. Seeds run in parallel workers capped
// by NOISY_MARL_THREADS, sharing nothing but the read-only config; metric
// files are written per seed, then the parent merges the evaluation curves
// into an elementwise-median aggregate.
//
// Run directory layout:
//   config.resolved
//   seed_<k>/metrics.csv    header: step,episodes,metric,value
//   seed_<k>/final.params
//   aggregate.csv           header: step,episodes,median_return

#include <atomic>
#include <filesystem>
#include <thread>

#include "noisymarl/qmix.hpp"
#include "noisymarl/trainer.hpp"

namespace noisymarl::trainer {

struct SeedOutcome {
  long long seed_value = 0;
  bool ok = false;
  std::string error;
  std::vector<MetricRow> rows;
};

struct EvalPoint {
  long long step = 0;
  long long episodes = 0;
  double median_return = 0.0;
};

struct RunOutcome {
  std::string dir;
  std::vector<SeedOutcome> seeds;
  std::vector<EvalPoint> aggregate;
  bool all_ok = false;

  // Per-seed evaluation curve (values only, eval order).
  std::vector<double> eval_curve(int k) const {
    std::vector<double> out;
    for (const auto& row : seeds[k].rows)
      if (row.metric == "eval_return_mean") out.push_back(row.value);
    return out;
  }
};

inline int thread_cap() {
  if (const char* env = std::getenv("NOISY_MARL_THREADS")) {
    long long v = 0;
    if (parse_i64(env, v) && v >= 1) return static_cast<int>(v);
  }
  unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

inline std::vector<MetricRow> run_one_seed(const ExperimentConfig& cfg, std::uint64_t seed,
                                           const std::string& checkpoint_path) {
  std::vector<MetricRow> rows;
  if (algo_is_qmix(cfg.algo)) {
    QmixTrainer tr(cfg, seed);
    rows = tr.run();
    if (!checkpoint_path.empty()) tr.save_checkpoint(checkpoint_path);
  } else {
    PpoTrainer tr(cfg, seed);
    rows = tr.run();
    if (!checkpoint_path.empty()) tr.save_checkpoint(checkpoint_path);
  }
  return rows;
}

inline void write_metrics_csv(const std::string& path, const std::vector<MetricRow>& rows) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail("run_experiment", "cannot open " + path);
  os << "step,episodes,metric,value\n";
  for (const auto& r : rows)
    os << r.step << ',' << r.episodes << ',' << r.metric << ',' << format_double(r.value) << '\n';
}

inline double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline RunOutcome run_experiment(const ExperimentConfig& cfg, const std::string& out_dir) {
  namespace fs = std::filesystem;
  RunOutcome out;
  out.dir = out_dir;
  fs::create_directories(out_dir);
  {
    std::ofstream os(out_dir + "/config.resolved", std::ios::binary);
    if (!os) fail("run_experiment", "cannot open " + out_dir + "/config.resolved");
    os << resolved_text(cfg);
  }

  out.seeds.resize(cfg.seeds);
  std::atomic<int> next{0};
  const int workers = std::min(cfg.seeds, thread_cap());
  auto work = [&]() {
    for (;;) {
      const int k = next.fetch_add(1);
      if (k >= cfg.seeds) return;
      SeedOutcome& slot = out.seeds[k];
      slot.seed_value = cfg.seed_base + k;
      const std::string seed_dir = out_dir + "/seed_" + std::to_string(k);
      fs::create_directories(seed_dir);
      try {
        slot.rows = run_one_seed(cfg, static_cast<std::uint64_t>(slot.seed_value),
                                 seed_dir + "/final.params");
        write_metrics_csv(seed_dir + "/metrics.csv", slot.rows);
        slot.ok = true;
      } catch (const std::exception& e) {
        slot.error = e.what();
        std::ofstream os(seed_dir + "/error.txt");
        os << e.what() << "\n";
      }
    }
  };
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) pool.emplace_back(work);
  for (auto& th : pool) th.join();

  out.all_ok = true;
  for (const auto& s : out.seeds) out.all_ok = out.all_ok && s.ok;

  // Elementwise median of the per-seed evaluation curves.
  std::vector<std::vector<const MetricRow*>> curves;
  for (const auto& s : out.seeds) {
    if (!s.ok) continue;
    std::vector<const MetricRow*> curve;
    for (const auto& row : s.rows)
      if (row.metric == "eval_return_mean") curve.push_back(&row);
    curves.push_back(std::move(curve));
  }
  if (!curves.empty()) {
    const std::size_t len = curves[0].size();
    for (const auto& c : curves)
      if (c.size() != len) fail("run_experiment", "evaluation curves are misaligned across seeds");
    for (std::size_t j = 0; j < len; ++j) {
      std::vector<double> vals;
      vals.reserve(curves.size());
      for (const auto& c : curves) vals.push_back(c[j]->value);
      out.aggregate.push_back({curves[0][j]->step, curves[0][j]->episodes, median_of(vals)});
    }
    std::ofstream os(out_dir + "/aggregate.csv", std::ios::binary);
    if (!os) fail("run_experiment", "cannot open " + out_dir + "/aggregate.csv");
    os << "step,episodes,median_return\n";
    for (const auto& p : out.aggregate)
      os << p.step << ',' << p.episodes << ',' << format_double(p.median_return) << '\n';
  }
  return out;
}

}  // namespace noisymarl::trainer
