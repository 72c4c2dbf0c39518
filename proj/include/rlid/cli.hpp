#pragma once

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "rlid/ats.hpp"
#include "rlid/config.hpp"
#include "rlid/io.hpp"
#include "rlid/metrics.hpp"
#include "rlid/trainer.hpp"
#include "rlid/world.hpp"

namespace rlid::cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;
inline constexpr int kExitUsage = 64;

struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail_cli {

inline void write_run_manifest(const std::string& out_dir, const std::string& command,
                               const std::map<std::string, std::string>& extra) {
  std::map<std::string, std::string> m = extra;
  m["command"] = command;
  write_manifest(m, (fs::path(out_dir) / "manifest.txt").string());
}

inline AblationSwitches parse_ablate(const std::string& spec) {
  AblationSwitches sw;
  if (spec.empty() || spec == "none") return sw;
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item == "all") {
      sw.stf = sw.stg = sw.ats = sw.he = false;
    } else if (item == "stf") {
      sw.stf = false;
    } else if (item == "stg") {
      sw.stg = false;
    } else if (item == "ats") {
      sw.ats = false;
    } else if (item == "he") {
      sw.he = false;
    } else {
      throw ValidationError("unknown ablation '" + item + "' (expect stf,stg,ats,he,all,none)");
    }
  }
  return sw;
}

inline Dataset load_and_check(const std::string& dir) {
  Dataset ds = load_dataset(dir);
  const auto problems = validate(ds);
  if (!problems.empty()) {
    std::ostringstream oss;
    oss << "dataset '" << dir << "' failed validation:";
    for (const auto& p : problems) oss << "\n  " << p;
    throw ValidationError(oss.str());
  }
  return ds;
}

inline int cmd_gen_demos(const std::string& skill_arg, double seconds, const std::string& out,
                         double sigma, double drop, std::uint64_t seed) {
  const WorldParams wp;
  const StateSchema schema = toy_schema();
  std::vector<Skill> wanted;
  if (skill_arg == "all") {
    wanted = {Skill::Dribble, Skill::Carry, Skill::Toss};
  } else {
    const auto sk = skill_from_name(skill_arg);
    if (!sk) throw ValidationError("unknown skill '" + skill_arg + "'");
    wanted = {*sk};
  }
  Dataset ds;
  ds.schema = schema;
  for (Skill sk : wanted)
    ds.skills[std::string(skill_name(sk))].push_back(generate_demo(sk, seconds, wp, schema));
  save_dataset(ds, out);
  if (sigma > 0.0 || drop > 0.0) {
    Rng rng(seed, 0xC0);
    Dataset corrupted;
    corrupted.schema = schema;
    for (const auto& [name, trajs] : ds.skills)
      for (const auto& tr : trajs)
        corrupted.skills[name].push_back(corrupt(tr, sigma, drop, schema, rng));
    save_dataset(corrupted, (fs::path(out) / "corrupted").string());
  }
  std::map<std::string, std::string> m;
  m["skill"] = skill_arg;
  m["seconds"] = rlid::detail::format_double(seconds);
  m["sigma"] = rlid::detail::format_double(sigma);
  m["drop"] = rlid::detail::format_double(drop);
  m["seed"] = std::to_string(seed);
  detail_cli::write_run_manifest(out, "gen-demos", m);
  std::cout << "wrote " << wanted.size() << " demo(s) to " << out << "\n";
  return kExitOk;
}

inline int cmd_corrupt(const std::string& in, const std::string& out, double sigma, double drop,
                       std::uint64_t seed) {
  Dataset ds = load_and_check(in);
  Rng rng(seed, 0xC0);
  Dataset corrupted;
  corrupted.schema = ds.schema;
  for (const auto& [name, trajs] : ds.skills)
    for (const auto& tr : trajs)
      corrupted.skills[name].push_back(corrupt(tr, sigma, drop, ds.schema, rng));
  save_dataset(corrupted, out);
  std::map<std::string, std::string> m;
  m["input"] = in;
  m["sigma"] = rlid::detail::format_double(sigma);
  m["drop"] = rlid::detail::format_double(drop);
  m["seed"] = std::to_string(seed);
  detail_cli::write_run_manifest(out, "corrupt", m);
  std::cout << "wrote corrupted dataset to " << out << "\n";
  return kExitOk;
}

inline int cmd_augment(const std::string& dataset_dir, const std::string& skill, int count,
                       const std::string& out, std::uint64_t seed, const AugmentParams& aug) {
  Dataset ds = load_and_check(dataset_dir);
  if (!ds.skills.count(skill)) throw ValidationError("dataset has no skill '" + skill + "'");
  const RewardWeights w = RewardWeights::from_schema(ds.schema);
  const WorldParams wp;
  StitchedGraph stg = build_stg(ds, skill, aug, w);
  const Trajectory& a = stg.target;
  std::vector<int> starts;
  for (int i = 0; i + 1 < a.length(); ++i)
    if (a.frames[static_cast<std::size_t>(i)].real()) starts.push_back(i);
  const std::vector<double> probs(starts.size(), 1.0 / static_cast<double>(starts.size()));
  const FrameFixup fixup = world_frame_fixup(ds.schema, wp);
  Rng rng(seed, 0xA7);

  fs::create_directories(out);
  std::ofstream manifest(fs::path(out) / "clips.txt");
  manifest << "# file source perturbed fallback entry_index mask_count similarity\n";
  for (int i = 0; i < count; ++i) {
    const ClipSample s = sample_augmented(stg, starts, probs, ds.schema, w, rng, fixup);
    char name[32];
    std::snprintf(name, sizeof(name), "clip_%04d.traj", i);
    save_trajectory(s.clip, ds.schema, (fs::path(out) / name).string());
    manifest << name << ' '
             << (s.source == ClipSample::Source::External
                     ? "external:" + std::to_string(s.connection_index)
                     : "reference:" + std::to_string(s.start_index))
             << ' ' << (s.perturbed ? 1 : 0) << ' ' << (s.fallback ? 1 : 0) << ' ' << s.entry_index
             << ' ' << s.mask_count << ' ' << rlid::detail::format_double(s.similarity) << "\n";
  }
  save_schema_manifest(ds.schema, (fs::path(out) / "schema").string());
  std::map<std::string, std::string> m;
  m["dataset"] = dataset_dir;
  m["skill"] = skill;
  m["count"] = std::to_string(count);
  m["seed"] = std::to_string(seed);
  m["external_connections"] = std::to_string(stg.external.size());
  detail_cli::write_run_manifest(out, "augment", m);
  std::cout << "wrote " << count << " clips (" << stg.external.size() << " external connections) to "
            << out << "\n";
  return kExitOk;
}

inline int cmd_pretrain(const std::string& dataset_dir, const std::string& out_dir,
                        std::uint64_t seed, PretrainOptions opt, int history_len, int history_dim) {
  Dataset ds = load_and_check(dataset_dir);
  PolicyConfig pc;
  pc.obs_dim = observation_dim(ds.schema);
  pc.history_len = history_len;
  pc.history_dim = history_dim;
  std::vector<std::string> skills;
  for (const auto& [name, trajs] : ds.skills) skills.push_back(name);
  Rng init_rng(seed, 0xA110);
  PolicyBundle bundle = make_policy_bundle(pc, skills, init_rng);
  Rng pre_rng(seed, 0xB00);
  const auto losses = pretrain_history_encoder(bundle, ds, opt, pre_rng);
  fs::create_directories(out_dir);
  save_policy_bundle(bundle, (fs::path(out_dir) / "pretrained.txt").string());
  std::ofstream loss_out(fs::path(out_dir) / "pretrain_loss.csv");
  loss_out << "step,loss\n";
  for (std::size_t i = 0; i < losses.size(); ++i)
    loss_out << i << ',' << rlid::detail::format_double(losses[i]) << "\n";
  std::map<std::string, std::string> m;
  m["dataset"] = dataset_dir;
  m["seed"] = std::to_string(seed);
  m["steps"] = std::to_string(opt.steps);
  detail_cli::write_run_manifest(out_dir, "pretrain-he", m);
  std::cout << "pre-training loss " << losses.front() << " -> " << losses.back() << "; bundle at "
            << out_dir << "/pretrained.txt\n";
  return kExitOk;
}

inline int cmd_train(const std::string& config_path, const std::string& dataset_dir,
                     const std::string& out_dir, std::uint64_t seed, const std::string& ablate) {
  KeyValueConfig kv;
  if (!config_path.empty()) kv = KeyValueConfig::from_file(config_path);
  TrainerConfig cfg = trainer_config_from_kv(kv);
  for (const auto& k : kv.unused_keys())
    std::cerr << "warning: unused config key '" << k << "'\n";
  cfg.seed = seed;
  cfg.use = detail_cli::parse_ablate(ablate);
  Dataset ds = load_and_check(dataset_dir);
  const TrainResult res = train(cfg, ds, out_dir, dataset_dir);
  std::cout << "training done; metrics at " << res.metrics_path << ", checkpoint at "
            << res.checkpoint_path << "\n";
  return kExitOk;
}

inline int cmd_eval(const std::string& checkpoint, const std::string& dataset_dir,
                    const std::string& metric, const std::string& skill, const std::string& to_skill,
                    double epsilon_scale, int trials, double horizon_s, std::uint64_t seed,
                    const std::string& out_csv) {
  Dataset ds = load_and_check(dataset_dir);
  const WorldParams wp;
  PolicyBundle bundle = load_policy_bundle(checkpoint);
  EvalOptions opt;
  opt.trials = trials;
  opt.seed = seed;
  opt.horizon_steps = static_cast<int>(std::lround(horizon_s / wp.control_dt()));
  std::cout << "note: horizon " << horizon_s << " s substitutes the 10 s continuous-execution "
            << "protocol; success predicates are toy-world substitutes\n";

  EvalCsvRow row;
  row.metric = metric;
  row.skill_pair = skill;
  row.epsilon_scale = 0.0;
  const bool use_history = bundle.cfg.history_dim > 0;
  if (metric == "sr") {
    row.result = eval_sr(bundle_policy(bundle, skill, ds.schema, use_history), ds, skill, opt, wp);
  } else if (metric == "tsr") {
    if (to_skill.empty()) throw ValidationError("tsr requires --to <skill>");
    row.skill_pair = skill + "->" + to_skill;
    row.result =
        eval_tsr(bundle_policy(bundle, to_skill, ds.schema, use_history), ds, skill, to_skill, opt, wp);
  } else if (metric == "ensr") {
    row.epsilon_scale = epsilon_scale;
    row.result = eval_ensr(bundle_policy(bundle, skill, ds.schema, use_history), ds, skill,
                           epsilon_scale, opt, wp);
  } else if (metric == "nr") {
    row.result = eval_nr(bundle_policy(bundle, skill, ds.schema, use_history), ds, skill, opt, wp);
  } else {
    throw ValidationError("unknown metric '" + metric + "' (expect sr|tsr|ensr|nr)");
  }
  write_eval_csv({row}, out_csv);
  std::cout << metric << '(' << row.skill_pair << ") = " << row.result.value << " +- "
            << row.result.ci_halfwidth << " over " << row.result.trials << " trials\n";
  return kExitOk;
}

inline int cmd_stats(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open stats file '" + path + "'");
  AtsScheduler sched = AtsScheduler::load(in);
  for (const auto& skill : sched.skill_names()) {
    std::cout << skill << ": class mean reward " << sched.class_reward(skill) << " over "
              << sched.episode_count(skill) << " episodes\n";
    const auto& idx = sched.start_indices(skill);
    const auto probs = sched.start_distribution(skill, sched.config().lambda_start);
    for (std::size_t i = 0; i < idx.size(); ++i)
      std::cout << "  start " << idx[i] << " rbar " << sched.mean_reward(skill, idx[i]) << " visits "
                << sched.visit_count(skill, idx[i]) << " p " << probs[i] << "\n";
  }
  return kExitOk;
}

}  // namespace detail_cli

/// Entry point shared by the binary and the tests. Exit codes: 0 success,
/// 1 validation error, 2 runtime failure, 64 usage error.
inline int run(std::vector<std::string> args) {
  CLI::App app{"Interaction-skill imitation workbench: demonstration tooling, trajectory "
               "stitching and neighborhood augmentation, curriculum-scheduled PPO training, and "
               "success-rate evaluation for a 2D hand-ball world"};
  app.require_subcommand(1);

  // gen-demos
  auto* gen = app.add_subcommand("gen-demos", "Write scripted demonstration trajectories");
  std::string gd_skill = "all", gd_out;
  double gd_seconds = 1.5, gd_sigma = 0.0, gd_drop = 0.0;
  std::uint64_t gd_seed = 0;
  gen->add_option("--skill", gd_skill, "dribble|carry|toss|all");
  gen->add_option("--seconds", gd_seconds, "demo duration in seconds");
  gen->add_option("--out", gd_out, "output dataset directory")->required();
  gen->add_option("--sigma", gd_sigma, "also write a corrupted copy with this noise half-width");
  gen->add_option("--drop", gd_drop, "fraction of frames masked in the corrupted copy");
  gen->add_option("--seed", gd_seed, "corruption seed");

  // corrupt
  auto* cor = app.add_subcommand("corrupt", "Degrade a dataset (object noise + frame drop)");
  std::string c_in, c_out;
  double c_sigma = 0.02, c_drop = 0.1;
  std::uint64_t c_seed = 0;
  cor->add_option("--in", c_in)->required();
  cor->add_option("--out", c_out)->required();
  cor->add_option("--sigma", c_sigma, "uniform noise half-width on object positions");
  cor->add_option("--drop", c_drop, "fraction of frames masked (one contiguous block)");
  cor->add_option("--seed", c_seed);

  // augment
  auto* aug = app.add_subcommand("augment", "Sample augmented clips for inspection");
  std::string a_ds, a_skill, a_out;
  int a_count = 50;
  std::uint64_t a_seed = 0;
  AugmentParams a_params;
  aug->add_option("--dataset", a_ds)->required();
  aug->add_option("--skill", a_skill)->required();
  aug->add_option("-n,--count", a_count);
  aug->add_option("--out", a_out)->required();
  aug->add_option("--seed", a_seed);
  aug->add_option("--p-external", a_params.p_external);
  aug->add_option("--p-neighborhood", a_params.p_neighborhood);
  aug->add_option("--tau", a_params.tau);
  aug->add_option("--n-max", a_params.max_masks);

  // pretrain-he
  auto* pre = app.add_subcommand("pretrain-he", "Pre-train the history encoder");
  std::string p_ds, p_out;
  std::uint64_t p_seed = 0;
  PretrainOptions p_opt;
  int p_hist_len = 30, p_hist_dim = 3;
  pre->add_option("--dataset", p_ds)->required();
  pre->add_option("--out", p_out)->required();
  pre->add_option("--seed", p_seed);
  pre->add_option("--steps", p_opt.steps);
  pre->add_option("--batch", p_opt.batch_size);
  pre->add_option("--stepsize", p_opt.lr);
  pre->add_option("--history-len", p_hist_len);
  pre->add_option("--history-dim", p_hist_dim);

  // train
  auto* tr = app.add_subcommand("train", "Train a policy with PPO");
  std::string t_config, t_ds, t_out, t_ablate = "none";
  std::uint64_t t_seed = 0;
  tr->add_option("--config", t_config, "flat key-value config file");
  tr->add_option("--dataset", t_ds)->required();
  tr->add_option("--out", t_out)->required();
  tr->add_option("--seed", t_seed);
  tr->add_option("--ablate", t_ablate, "comma list of components to disable: stf,stg,ats,he|all|none");

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  std::string e_ckpt, e_ds, e_metric = "sr", e_skill, e_to, e_out = "eval.csv";
  double e_eps = 1.0, e_horizon = 5.0;
  int e_trials = 1000;
  std::uint64_t e_seed = 0;
  ev->add_option("--checkpoint", e_ckpt)->required();
  ev->add_option("--dataset", e_ds)->required();
  ev->add_option("--metric", e_metric, "sr|tsr|ensr|nr");
  ev->add_option("--skill", e_skill)->required();
  ev->add_option("--to", e_to, "target skill for tsr");
  ev->add_option("--epsilon", e_eps, "neighborhood scale for ensr (1 = training epsilon)");
  ev->add_option("--trials", e_trials);
  ev->add_option("--horizon", e_horizon, "rollout horizon in seconds");
  ev->add_option("--seed", e_seed);
  ev->add_option("--out", e_out, "output CSV path");

  // stats
  auto* st = app.add_subcommand("stats", "Print a curriculum stats snapshot");
  std::string s_in;
  st->add_option("--in", s_in)->required();

  std::reverse(args.begin(), args.end());  // CLI11 wants reversed argv-style input
  try {
    app.parse(args);
  } catch (const CLI::CallForHelp& e) {
    std::cout << app.help() << "\n";
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n" << app.help() << "\n";
    return kExitUsage;
  }

  try {
    if (gen->parsed())
      return detail_cli::cmd_gen_demos(gd_skill, gd_seconds, gd_out, gd_sigma, gd_drop, gd_seed);
    if (cor->parsed()) return detail_cli::cmd_corrupt(c_in, c_out, c_sigma, c_drop, c_seed);
    if (aug->parsed())
      return detail_cli::cmd_augment(a_ds, a_skill, a_count, a_out, a_seed, a_params);
    if (pre->parsed()) {
      PretrainOptions opt = p_opt;
      return detail_cli::cmd_pretrain(p_ds, p_out, p_seed, opt, p_hist_len, p_hist_dim);
    }
    if (tr->parsed()) return detail_cli::cmd_train(t_config, t_ds, t_out, t_seed, t_ablate);
    if (ev->parsed())
      return detail_cli::cmd_eval(e_ckpt, e_ds, e_metric, e_skill, e_to, e_eps, e_trials, e_horizon,
                                  e_seed, e_out);
    if (st->parsed()) return detail_cli::cmd_stats(s_in);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace rlid::cli
