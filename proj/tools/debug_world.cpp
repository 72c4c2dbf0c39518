// scratch harness for controller tuning; not installed
#include <cstdio>

#include "rlid/world.hpp"

using namespace rlid;

int main(int argc, char** argv) {
  const WorldParams p;
  const StateSchema schema = toy_schema();
  const std::string what = argc > 1 ? argv[1] : "dribble";

  if (what == "dribble" || what == "toss" || what == "carry") {
    const Skill sk = *skill_from_name(what);
    const ScriptedDemo demo = generate_demo_with_actions(sk, 1.5, p, schema);
    WorldState s = demo.states.front();
    std::vector<WorldState> rollout{s};
    for (int t = 0; t < 300; ++t) {
      s = step(s, controllers::oracle_policy(sk, s, p), p);
      rollout.push_back(s);
      if (t % 5 == 0)
        std::printf(
            "t=%5.2f hand=(%6.3f,%6.3f) hv=(%6.2f,%6.2f) ball=(%6.3f,%6.3f) bv=(%6.2f,%6.2f) "
            "hb=%d bf=%d\n",
            (t + 1) / 60.0, s.hand_pos.x(), s.hand_pos.y(), s.hand_vel.x(), s.hand_vel.y(),
            s.ball_pos.x(), s.ball_pos.y(), s.ball_vel.x(), s.ball_vel.y(), s.contact_hand_ball,
            s.contact_ball_floor);
    }
    std::printf("success=%d\n", is_success(sk, rollout, p, {}));
  } else if (what == "ht") {
    const ScriptedDemo ht = generate_drive_hold_toss(0.6, 18, 90, p, schema);
    for (std::size_t t = 0; t < ht.states.size(); t += 2) {
      const auto& s = ht.states[t];
      std::printf(
          "t=%5.2f hand=(%6.3f,%6.3f) hv=(%6.2f,%6.2f) ball=(%6.3f,%6.3f) bv=(%6.2f,%6.2f) hb=%d\n",
          t / 60.0, s.hand_pos.x(), s.hand_pos.y(), s.hand_vel.x(), s.hand_vel.y(), s.ball_pos.x(),
          s.ball_pos.y(), s.ball_vel.x(), s.ball_vel.y(), s.contact_hand_ball);
    }
    std::printf("success=%d\n", is_success(Skill::Toss, std::span<const WorldState>(ht.states), p, {}));
  }
  return 0;
}
