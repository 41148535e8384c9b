// Command-line driver: train, eval, selftest.
//
// Log verbosity follows SPDLOG_LEVEL (trace, debug, info, warn, error, off).
// Exit codes: 0 success, 1 config/IO error, 2 selftest failure.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/cfg/env.h>
#include <spdlog/spdlog.h>

#include "rbsched/config.hpp"
#include "rbsched/experiment.hpp"
#include "rbsched/selftest.hpp"

namespace {

struct Overrides {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> episodes;
  std::optional<std::string> out_dir;
  std::optional<std::string> checkpoint;
  std::vector<std::string> policies;
  std::optional<int> threads;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config_path, "Configuration file (INI sections; empty = defaults)");
  cmd->add_option("--seed", o.seed, "Base random seed");
  cmd->add_option("--out-dir", o.out_dir, "Output directory");
  cmd->add_option("--checkpoint", o.checkpoint, "Checkpoint path");
  cmd->add_option("--threads", o.threads, "Evaluation worker threads");
}

rbsched::ExperimentConfig resolve(const Overrides& o, bool episodes_are_eval) {
  auto c = o.config_path.empty() ? rbsched::ExperimentConfig{} : rbsched::load_config(o.config_path);
  if (o.seed) c.sim.seed = *o.seed;
  if (o.episodes) (episodes_are_eval ? c.eval_episodes : c.agent.episodes) = *o.episodes;
  if (o.out_dir) c.out_dir = *o.out_dir;
  if (o.checkpoint) c.checkpoint = *o.checkpoint;
  if (!o.policies.empty()) c.policies = o.policies;
  if (o.threads) c.threads = *o.threads;
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw rbsched::ConfigError(e.what());
  }
  return c;
}

int cmd_train(const Overrides& o) {
  const auto c = resolve(o, false);
  spdlog::info("training {} episodes x {} steps, seed {}, out-dir {}", c.agent.episodes,
               c.sim.steps_per_episode, c.sim.seed, c.out_dir);
  rbsched::ensure_directory(c.out_dir);
  rbsched::open_output(c.out_dir + "/config.ini") << rbsched::emit_config(c);
  rbsched::CampaignHooks hooks;
  hooks.on_train_episode = [](const rbsched::EpisodeSummary& e, double avg) {
    if ((e.episode + 1) % 100 == 0)
      spdlog::info("episode {:>6}  epsilon {:.3f}  reward {:>10.3f}  avg100 {:>10.3f}", e.episode + 1,
                   e.epsilon, e.sum.total, avg);
  };
  rbsched::run_training(c, hooks);
  spdlog::info("checkpoint written to {}", c.checkpoint_path());
  return 0;
}

int cmd_eval(const Overrides& o) {
  const auto c = resolve(o, true);
  const auto policies = rbsched::resolve_policies(c, true);
  const bool wants_dqn =
      std::find(policies.begin(), policies.end(), rbsched::kDqnPolicy) != policies.end();
  // An explicit DQN request needs the checkpoint; the default list includes DQN
  // only when one is present.
  const bool explicit_request = !c.policies.empty() || !c.checkpoint.empty();
  std::optional<rbsched::QNet> net;
  if (wants_dqn && (explicit_request || std::filesystem::exists(c.checkpoint_path())))
    net = rbsched::load_checkpoint(c.checkpoint_path());
  spdlog::info("evaluating {} episodes per policy", c.eval_episodes);
  const auto rows = rbsched::run_evaluation(c, net ? &*net : nullptr);
  for (const auto& [name, s] : rbsched::policy_stats(rows))
    spdlog::info("{:>4}: mean r {:>10.3f}  rC {:>8.3f}  rP {:>8.3f}  rL {:>8.3f}  rL_ev {:>7.3f}", name,
                 s.mean.total, s.mean.capacity, s.mean.packet_rate, s.mean.timeouts,
                 s.mean.ev_timeouts);
  spdlog::info("wrote {}/eval.csv and {}/eval_summary.json", c.out_dir, c.out_dir);
  return 0;
}

int cmd_selftest(bool inject_bug) {
  rbsched::SelftestOptions opt;
  opt.inject_gradient_bug = inject_bug;
  const auto results = rbsched::run_selftest(opt);
  bool ok = true;
  for (const auto& r : results) {
    std::printf("[%s] %-32s %6.2fs  %s\n", r.passed ? "PASS" : "FAIL", r.name.c_str(), r.seconds,
                r.detail.c_str());
    ok = ok && r.passed;
  }
  std::printf("%s\n", ok ? "selftest passed" : "selftest FAILED");
  return ok ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::cfg::load_env_levels();
  CLI::App app{"Resource-block scheduling simulator with a DQN scheduler selector"};
  app.require_subcommand(1);

  Overrides train_opts, eval_opts;
  auto* train = app.add_subcommand("train", "Train the selector network");
  add_common(train, train_opts);
  train->add_option("--episodes", train_opts.episodes, "Training episodes");

  auto* eval = app.add_subcommand("eval", "Evaluate policies and write eval.csv");
  add_common(eval, eval_opts);
  eval->add_option("--episodes", eval_opts.episodes, "Evaluation episodes per policy");
  eval->add_option("--policy", eval_opts.policies, "Policy to evaluate: DQN, MT, MMF, DS, EVP (repeatable)");

  bool inject_bug = false;
  auto* selftest = app.add_subcommand("selftest", "Run the fast invariant checks");
  selftest->add_flag("--inject-gradient-bug", inject_bug,
                     "Test hook: corrupt the analytic gradient (the gradient check must fail)");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*train) return cmd_train(train_opts);
    if (*eval) return cmd_eval(eval_opts);
    if (*selftest) return cmd_selftest(inject_bug);
  } catch (const rbsched::ConfigError& e) {
    spdlog::error("config error: {}", e.what());
    return 1;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 1;
}
