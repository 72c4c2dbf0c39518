// scratch: watch the hold-task learning curve
#include <cstdio>

#include "rlid/trainer.hpp"
#include "rlid/world.hpp"

using namespace rlid;

int main() {
  const WorldParams wp;
  Dataset ds;
  ds.schema = toy_schema();
  ScriptedDemo hold = generate_hold_demo(1.0, wp, ds.schema);
  hold.traj.skill = "hold";
  ds.skills["hold"].push_back(hold.traj);

  TrainerConfig cfg;
  cfg.seed = 1;
  cfg.n_envs = 16;
  cfg.steps_per_env = 30;
  cfg.episode_len = 30;
  cfg.minibatch = 240;
  cfg.ppo_epochs = 3;
  cfg.iterations = 120;
  cfg.adam_stepsize = 2e-5;
  cfg.policy.policy_hidden = {64, 32};
  cfg.policy.value_hidden = {64, 32};
  cfg.policy.history_len = 10;
  cfg.pretrain.steps = 100;
  cfg.use = AblationSwitches{false, false, false, false};
  const TrainResult res = train(cfg, ds, "/tmp/dbg_hold");
  std::FILE* f = std::fopen("/tmp/dbg_hold/metrics.csv", "r");
  char line[512];
  int i = 0;
  while (std::fgets(line, sizeof(line), f)) {
    if (i % 10 == 1) std::printf("%s", line);
    ++i;
  }
  std::fclose(f);
  return 0;
}
