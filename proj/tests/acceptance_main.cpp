// Acceptance suite: runs every gate criterion end to end at its stated
// tolerance and prints one pass/fail line per criterion. Exits nonzero if
// any gating criterion fails.

#include <filesystem>
#include <iostream>

#include "noisymarl/gradsuite.hpp"
#include "noisymarl/oracle.hpp"
#include "noisymarl/reproduce.hpp"

using namespace noisymarl;
using trainer::ExperimentConfig;
using trainer::PpoTrainer;
using trainer::RunOutcome;

namespace {

int g_failures = 0;

void report(int id, bool pass, const std::string& title, const std::string& detail) {
  std::cout << (pass ? "[PASS] " : "[FAIL] ") << "criterion " << id << ": " << title;
  if (!detail.empty()) std::cout << " -- " << detail;
  std::cout << "\n" << std::flush;
  if (!pass) ++g_failures;
}

std::string run_dir(const std::string& leaf) {
  auto base = std::filesystem::temp_directory_path() / "noisymarl-acceptance";
  std::filesystem::create_directories(base);
  return (base / leaf).string();
}

// criterion 3: parameter-level bit-exact equivalence after 10 iterations
bool params_match_after(ExperimentConfig a, ExperimentConfig b, std::uint64_t seed) {
  PpoTrainer ta(a, seed), tb(b, seed);
  for (int it = 0; it < 10; ++it) {
    ta.step_once();
    tb.step_once();
  }
  return ta.policy_params().values_equal(tb.policy_params()) &&
         ta.value_params().values_equal(tb.value_params());
}

}  // namespace

int main() {
  std::cout << "running acceptance suite (desk-scale experiments; several minutes)\n";

  // --- criteria 1, 2, 7 need the full matrix-game runs ----------------------

  RunOutcome m1 = trainer::run_experiment(trainer::appendix_config("nv-mappo", "matrix1", 5),
                                          run_dir("nv-mappo-matrix1"));
  {
    std::string detail;
    bool pass = m1.all_ok && trainer::median_holds(m1, 8.0, &detail);
    report(1, pass,
           "matrix game 1: nv-mappo median greedy return reaches 8 within 20k steps and holds "
           "the final quarter",
           detail);
  }

  {
    RunOutcome m2 = trainer::run_experiment(trainer::appendix_config("nv-mappo", "matrix2", 5),
                                            run_dir("nv-mappo-matrix2"));
    std::string d2;
    const bool nv_ok = m2.all_ok && trainer::median_holds(m2, 12.0, &d2);
    RunOutcome q2 = trainer::run_experiment(trainer::appendix_config("qmix", "matrix2", 5),
                                            run_dir("qmix-matrix2"));
    std::string dq;
    const bool q_ok = q2.all_ok && trainer::seeds_below(q2, 10.0, 3, &dq);
    report(2, nv_ok && q_ok,
           "matrix game 2: nv-mappo median greedy return reaches 12; qmix stays at most 10 in "
           "at least 3 of 5 seeds",
           "nv-mappo: " + d2 + "; qmix: " + dq);
  }

  // --- criterion 3: degeneracy equivalences, bit-exact -----------------------
  {
    ExperimentConfig na;
    trainer::apply_kv(na, "algo", "na-mappo");
    trainer::apply_kv(na, "alpha", "0");
    trainer::finalize(na);
    ExperimentConfig base;
    trainer::apply_kv(base, "algo", "mappo");
    trainer::finalize(base);
    const bool na_ok = params_match_after(na, base, 42);

    ExperimentConfig nv;
    trainer::apply_kv(nv, "algo", "nv-mappo");
    trainer::apply_kv(nv, "sigma", "0");
    trainer::apply_kv(nv, "noise_dim", "10");
    trainer::finalize(nv);
    ExperimentConfig padded;
    trainer::apply_kv(padded, "algo", "mappo");
    trainer::apply_kv(padded, "value_input_pad", "10");
    trainer::finalize(padded);
    const bool nv_ok = params_match_after(nv, padded, 42);

    report(3, na_ok && nv_ok,
           "degeneracies are bit-exact over 10 iterations: na-mappo(alpha=0) == mappo and "
           "nv-mappo(sigma=0) == zero-padded mappo",
           std::string("na: ") + (na_ok ? "identical" : "diverged") +
               ", nv: " + (nv_ok ? "identical" : "diverged"));
  }

  // --- criterion 4: GAE vs the O(T^2) reference oracle -----------------------
  {
    auto g = make_rng(404, RngStream::kInit);
    double worst = 0.0;
    int instances = 0;
    for (int rep = 0; rep < 100; ++rep) {
      const int len = 1 + draw_int(g, 50);
      std::vector<double> r(len), v(len + 1);
      std::vector<char> term(len);
      for (double& x : r) x = 6.0 * draw_uniform(g) - 3.0;
      for (double& x : v) x = 6.0 * draw_uniform(g) - 3.0;
      for (int t = 0; t < len; ++t) term[t] = draw_uniform(g) < 0.25 ? 1 : 0;
      for (double lambda : {0.0, 0.5, 0.95, 1.0}) {
        auto a = algos::compute_gae(r, v, term, 0.99, lambda);
        auto b = oracle::reference_gae(r, v, term, 0.99, lambda);
        for (int t = 0; t < len; ++t) worst = std::max(worst, std::abs(a[t] - b[t]));
      }
      ++instances;
    }
    report(4, worst < 1e-10,
           "compute_gae agrees with the summation oracle on 100 random instances within 1e-10",
           std::to_string(instances) + " instances, max abs diff " + format_double(worst));
  }

  // --- criterion 5: finite-difference gradient suite --------------------------
  {
    auto results = gradsuite::run_gradient_suite(20, 1e-4);
    bool all = true;
    double worst = 0.0;
    std::string breakdown;
    for (const auto& r : results) {
      all = all && r.pass;
      worst = std::max(worst, r.worst);
      breakdown += (breakdown.empty() ? "" : ", ") + r.name + " " + format_double(r.worst);
    }
    report(5, all, "every loss passes finite-difference checks at 1e-4 on 20 seeds each",
           breakdown);
  }

  // --- criterion 6: the POMAC gap on the decoupled bandit ---------------------
  {
    envs::TeamGame db = envs::TeamGame::decoupled_bandit();
    oracle::TabularPolicy uni = oracle::TabularPolicy::uniform(2, 3);
    const double v = oracle::exact_expected_return(db, uni);
    auto value_fn = [&](const std::vector<double>&) { return v; };
    bool exact_zero = true;
    for (int a = 0; a < 3; ++a)
      exact_zero = exact_zero && oracle::marginal_advantage(db, uni, 0, a, value_fn) == 0.0;

    ExperimentConfig cfg;
    trainer::apply_kv(cfg, "algo", "mappo");
    trainer::apply_kv(cfg, "env", "decoupled-bandit");
    trainer::finalize(cfg);
    PpoTrainer tr(cfg, 7);
    auto col = tr.collect();
    tr.train_iteration(col.buffer);
    const auto& adv = tr.last_advantages();
    double mean = 0.0;
    int n = 0;
    for (std::size_t k = 0; k < adv.size(); k += 2) {
      mean += adv[k];
      ++n;
    }
    mean /= n;
    double var = 0.0;
    for (std::size_t k = 0; k < adv.size(); k += 2) var += (adv[k] - mean) * (adv[k] - mean);
    var /= n;
    report(6, exact_zero && var > 0.0,
           "decoupled bandit: exact marginal advantage of the irrelevant agent is 0 for all "
           "actions, while its sampled batch advantages have nonzero variance",
           std::string("marginal exactly zero: ") + (exact_zero ? "yes" : "no") +
               ", sampled advantage variance " + format_double(var));
  }

  // --- criterion 7: instrumentation of the noise mechanism --------------------
  {
    bool std_positive = true;
    for (const auto& s : m1.seeds) {
      if (!s.ok) std_positive = false;
      for (const auto& row : s.rows)
        if (row.metric == "value_std_agents" && !(row.value > 0.0)) std_positive = false;
    }

    ExperimentConfig zero_cfg = trainer::appendix_config("nv-mappo", "matrix1", 1);
    trainer::apply_kv(zero_cfg, "sigma", "0");
    trainer::apply_kv(zero_cfg, "total_steps", "2000");
    trainer::finalize(zero_cfg);
    PpoTrainer zr(zero_cfg, 0);
    bool std_zero = true;
    for (auto rows = zr.run(); const auto& row : rows)
      if (row.metric == "value_std_agents" && row.value != 0.0) std_zero = false;

    std::vector<double> final_entropy;
    for (std::size_t k = 0; k < m1.seeds.size(); ++k) {
      if (!m1.seeds[k].ok) continue;
      double last = 0.0;
      for (const auto& row : m1.seeds[k].rows)
        if (row.metric == "policy_entropy") last = row.value;
      final_entropy.push_back(last);
    }
    const double entropy_med = trainer::median_of(final_entropy);
    const bool entropy_ok = entropy_med < 0.1;

    std::string detail = std::string("sigma>0 std positive at every logged step: ") +
                         (std_positive ? "yes" : "no") +
                         "; sigma=0 std exactly zero: " + (std_zero ? "yes" : "no") +
                         "; median final policy entropy on matrix1 " +
                         format_double(entropy_med) + " (target < 0.1)";
    report(7, std_positive && std_zero && entropy_ok,
           "noisy-value instrumentation: per-agent value std behaves per the mechanism and the "
           "converged matrix-1 policy is committed",
           detail);
  }

  // --- criterion 8: SMAC is explicitly out of scope ----------------------------
  report(8, true,
         "SMAC win-rate table is not reproducible at desk scale; no criterion references it",
         "out of scope by specification");

  std::cout << (g_failures == 0
                    ? "acceptance suite passed"
                    : "acceptance suite FAILED (" + std::to_string(g_failures) + " criterion(s))")
            << "\n";
  return g_failures == 0 ? 0 : 1;
}
