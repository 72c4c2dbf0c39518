// scratch: inspect what one trainer env actually does at iteration 0
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
  const StateSchema& schema = ds.schema;
  const RewardWeights w = RewardWeights::from_schema(schema);

  TrainerConfig cfg;
  cfg.policy.obs_dim = observation_dim(schema);
  cfg.policy.policy_hidden = {64, 32};
  cfg.policy.history_len = 10;
  cfg.use = AblationSwitches{false, false, false, false};

  Rng init(1, 0xA110);
  PolicyBundle b = make_policy_bundle(cfg.policy, {"hold"}, init);

  const Trajectory& tr = ds.skills.at("hold").front();
  auto [s, cursor] = reset_from_clip(tr, schema, wp);
  Rng arng(5);
  for (int t = 0; t < 20; ++t) {
    const Eigen::VectorXd obs = to_local_observation(frame_from_state(s, schema), schema);
    Eigen::VectorXd h = Eigen::VectorXd::Zero(cfg.policy.history_dim);
    const ActResult ar = act(b, 0, obs, h, cfg.policy.sigma, &arng);
    const Action a = policy_world_action(ar.action);
    s = step(s, a, wp);
    const auto r = reward_product(frame_from_state(s, schema), tr.frames[t + 1], schema, w);
    std::printf(
        "t=%2d mean=(%6.3f,%6.3f,%6.3f) grab=%4.2f hand=(%6.3f,%6.3f) ball=(%6.3f,%6.3f) hb=%d r=%.4f\n",
        t, ar.mean[0], ar.mean[1], ar.mean[2], a.grab, s.hand_pos.x(), s.hand_pos.y(), s.ball_pos.x(),
        s.ball_pos.y(), s.contact_hand_ball, r.value());
  }
  return 0;
}
