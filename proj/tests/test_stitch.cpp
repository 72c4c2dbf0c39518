#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "rlid/stitch.hpp"
#include "rlid/world.hpp"
#include "test_helpers.hpp"

using namespace rlid;

TEST_CASE("nearest_reference: exact match, tie-break, brute-force oracle") {
  const StateSchema s = toy_schema();
  const RewardWeights w = RewardWeights::from_schema(s);
  Rng rng(21);
  Trajectory tr = test::random_trajectory(s, "a", 20, rng);

  // exact match
  const auto [j, beta] = nearest_reference(tr.frames[4], tr, s, w);
  CHECK(j == 4);
  CHECK(beta == 1.0);

  // constructed symmetric pair: frames 2 and 5 identical -> smallest index wins
  Trajectory sym = tr;
  sym.frames[5] = sym.frames[2];
  const auto [jt, bt] = nearest_reference(sym.frames[5], sym, s, w);
  CHECK(jt == 2);
  CHECK(bt == 1.0);

  // random query vs exhaustive scan
  for (int rep = 0; rep < 50; ++rep) {
    const Frame q = test::random_frame(s, rng);
    int best = -1;
    double best_sim = -1.0;
    for (int i = 0; i < tr.length(); ++i) {
      const double sim = kinematic_similarity(q, tr.frames[static_cast<std::size_t>(i)], s, w);
      if (sim > best_sim) {
        best_sim = sim;
        best = i;
      }
    }
    const auto [ji, bi] = nearest_reference(q, tr, s, w);
    CHECK(ji == best);
    CHECK(bi == best_sim);
  }

  // all-masked is an error
  Trajectory masked;
  masked.skill = "a";
  masked.frames = {Frame::masked_frame(), Frame::masked_frame()};
  CHECK_THROWS_AS(nearest_reference(tr.frames[0], masked, s, w), std::invalid_argument);
}

TEST_CASE("mask_count: acceptance table and monotonicity") {
  const double tau = 1e-10;
  const int nmax = 10;
  CHECK(mask_count(1.0, tau, nmax).value() == 0);
  CHECK(mask_count(0.5, tau, nmax).value() == 1);
  CHECK(mask_count(1e-3, tau, nmax).value() == 3);
  CHECK(mask_count(1e-9, tau, nmax).value() == 9);
  CHECK(mask_count(1e-10, tau, nmax).value() == 10);  // boundary accepted, capped
  CHECK_FALSE(mask_count(5e-11, tau, nmax).has_value());
  CHECK_THROWS_AS(mask_count(0.0, tau, nmax), std::invalid_argument);
  CHECK_THROWS_AS(mask_count(-1.0, tau, nmax), std::invalid_argument);

  // monotone nonincreasing in beta
  Rng rng(22);
  for (int rep = 0; rep < 200; ++rep) {
    double b1 = std::pow(10.0, rng.uniform(-9.9, 0.0));
    double b2 = std::pow(10.0, rng.uniform(-9.9, 0.0));
    if (b1 > b2) std::swap(b1, b2);
    CHECK(mask_count(b1, tau, nmax).value() >= mask_count(b2, tau, nmax).value());
  }
}

TEST_CASE("align_root_xy translates every positional pair") {
  const StateSchema s = toy_schema();
  Rng rng(23);
  const Frame target = test::random_frame(s, rng);

  // already aligned -> unchanged
  Frame already = test::random_frame(s, rng);
  group_values(already, s, "hand-pos") = group_values(target, s, "hand-pos");
  const Frame out0 = align_root_xy(already, target, s);
  CHECK((out0.values - already.values).norm() == 0.0);

  // root offset (1,-2): every positional channel shifts by (-1, 2)
  Frame off = target;
  for (std::size_t gi = 0; gi < s.groups.size(); ++gi) {
    if (!is_positional(s.groups[gi].kind)) continue;
    const int o = s.group_offset(gi);
    for (int p = 0; p < s.groups[gi].dim; p += 2) {
      off.values[o + p] += 1.0;
      off.values[o + p + 1] += -2.0;
    }
  }
  const Frame aligned = align_root_xy(off, target, s);
  CHECK((aligned.values - target.values).lpNorm<Eigen::Infinity>() < 1e-12);

  // similarity of a pure-translation copy after alignment is exactly 1
  const RewardWeights w = RewardWeights::from_schema(s);
  CHECK(kinematic_similarity(aligned, target, s, w) == Catch::Approx(1.0).margin(1e-12));
  CHECK(kinematic_similarity(aligned, target, s, w) >= kinematic_similarity(off, target, s, w));

  // non-positional channels untouched
  CHECK((group_values(aligned, s, "hand-vel") - group_values(off, s, "hand-vel")).norm() == 0.0);
  CHECK((aligned.contacts - off.contacts).norm() == 0.0);
}

TEST_CASE("assemble_clip: identity, mask block, validity") {
  const StateSchema s = toy_schema();
  Rng rng(24);
  const Trajectory tr = test::random_trajectory(s, "a", 12, rng);

  // start at frame 0 with no masks reproduces the trajectory
  const Trajectory same = assemble_clip(tr.frames[0], tr, 0, 0);
  REQUIRE(same.length() == tr.length());
  for (int i = 0; i < tr.length(); ++i)
    CHECK((same.frames[static_cast<std::size_t>(i)].values -
           tr.frames[static_cast<std::size_t>(i)].values)
              .norm() == 0.0);

  // three masks sit right after the start state
  const Frame start = test::random_frame(s, rng);
  const Trajectory clip = assemble_clip(start, tr, 4, 3);
  REQUIRE(clip.length() == 1 + 3 + (tr.length() - 1 - 4));
  CHECK(clip.frames[0].real());
  CHECK(clip.frames[1].masked);
  CHECK(clip.frames[2].masked);
  CHECK(clip.frames[3].masked);
  for (int i = 4; i < clip.length(); ++i) CHECK(clip.frames[static_cast<std::size_t>(i)].real());
  CHECK(clip.skill == tr.skill);
  CHECK(clip.dt == tr.dt);

  // assembled clips validate as trajectories
  Dataset ds;
  ds.schema = s;
  ds.skills["a"].push_back(clip);
  CHECK(validate(ds).empty());

  CHECK_THROWS_AS(assemble_clip(start, tr, tr.length() - 1, 0), std::invalid_argument);
  CHECK_THROWS_AS(assemble_clip(start, tr, -1, 0), std::invalid_argument);
  CHECK_THROWS_AS(assemble_clip(Frame::masked_frame(), tr, 2, 0), std::invalid_argument);
}

namespace {

/// Exhaustive re-application of the connection rules, used as the build
/// oracle: for each external state, align to every candidate entry, take the
/// best similarity and apply the acceptance rule.
int brute_force_connection_count(const Dataset& ds, const std::string& target,
                                 const AugmentParams& p, const RewardWeights& w) {
  const Trajectory& a = ds.skills.at(target).front();
  int count = 0;
  for (const auto& [skill, trajs] : ds.skills) {
    if (skill == target) continue;
    for (const auto& tr : trajs) {
      for (const auto& b : tr.frames) {
        if (b.masked) continue;
        double best = -1.0;
        for (int j = 0; j + 1 < a.length(); ++j) {
          if (a.frames[static_cast<std::size_t>(j)].masked) continue;
          const Frame al = align_root_xy(b, a.frames[static_cast<std::size_t>(j)], ds.schema);
          best = std::max(best, kinematic_similarity(al, a.frames[static_cast<std::size_t>(j)],
                                                     ds.schema, w));
        }
        if (best >= p.tau) ++count;
      }
    }
  }
  return count;
}

}  // namespace

TEST_CASE("build_stg: no externals for a single skill; exact-match connection") {
  const StateSchema s = toy_schema();
  const RewardWeights w = RewardWeights::from_schema(s);
  Rng rng(25);
  AugmentParams p;

  Dataset solo;
  solo.schema = s;
  solo.skills["only"].push_back(test::random_trajectory(s, "only", 10, rng));
  const StitchedGraph g0 = build_stg(solo, "only", p, w);
  CHECK(g0.external.empty());

  // a B state identical to frame 5 of A (up to translation) connects with N=0
  Dataset ds;
  ds.schema = s;
  ds.skills["a"].push_back(test::random_trajectory(s, "a", 10, rng));
  Trajectory btr;
  btr.skill = "b";
  btr.dt = 1.0 / 60;
  Frame copy = ds.skills["a"][0].frames[5];
  for (std::size_t gi = 0; gi < s.groups.size(); ++gi) {
    if (!is_positional(s.groups[gi].kind)) continue;
    const int off = s.group_offset(gi);
    for (int q = 0; q < s.groups[gi].dim; q += 2) {
      copy.values[off + q] += 3.0;
      copy.values[off + q + 1] += -1.0;
    }
  }
  btr.frames = {copy, test::random_frame(s, rng)};
  ds.skills["b"].push_back(btr);
  const StitchedGraph g = build_stg(ds, "a", p, w);
  REQUIRE_FALSE(g.external.empty());
  CHECK(g.external[0].entry_index == 5);
  CHECK(g.external[0].mask_count == 0);
  CHECK(g.external[0].similarity == Catch::Approx(1.0).margin(1e-12));

  CHECK_THROWS_AS(build_stg(Dataset{}, "a", p, w), std::invalid_argument);
}

TEST_CASE("build_stg matches the exhaustive rule-application oracle") {
  // make half the external states far enough to be discarded: huge velocity
  // differences survive alignment, so crank the velocity weight up
  StateSchema s = toy_schema();
  s.lambda["hand-vel"] = Eigen::VectorXd::Constant(1, 20.0);
  const RewardWeights w = RewardWeights::from_schema(s);
  AugmentParams p;
  p.tau = 1e-10;

  Rng rng(26);
  Dataset ds;
  ds.schema = s;
  ds.skills["a"].push_back(test::random_trajectory(s, "a", 8, rng));
  Trajectory btr;
  btr.skill = "b";
  btr.dt = 1.0 / 60;
  for (int i = 0; i < 24; ++i) {
    // near copies of A's frames connect; huge velocity outliers cannot
    Frame f = ds.skills["a"][0].frames[static_cast<std::size_t>(i % 8)];
    for (int d = 0; d < f.values.size(); ++d) f.values[d] += rng.uniform(-0.01, 0.01);
    if (i % 2 == 0) group_values(f, s, "hand-vel") = Eigen::Vector2d(80.0, -80.0);  // hopeless
    btr.frames.push_back(f);
  }
  ds.skills["b"].push_back(btr);

  const StitchedGraph g = build_stg(ds, "a", p, w);
  const int expect = brute_force_connection_count(ds, "a", p, w);
  CHECK(static_cast<int>(g.external.size()) == expect);
  CHECK(expect < 24);  // the oracle actually discarded some
  CHECK(expect > 0);

  // deterministic: repeated builds identical
  const StitchedGraph g2 = build_stg(ds, "a", p, w);
  REQUIRE(g.external.size() == g2.external.size());
  for (std::size_t i = 0; i < g.external.size(); ++i) {
    CHECK(g.external[i].entry_index == g2.external[i].entry_index);
    CHECK(g.external[i].mask_count == g2.external[i].mask_count);
    CHECK(g.external[i].similarity == g2.external[i].similarity);
    CHECK((g.external[i].source.values - g2.external[i].source.values).norm() == 0.0);
  }
}

TEST_CASE("epsilon_nsi: degenerate, bounded, covering") {
  StateSchema s = toy_schema();
  Rng rng(27);
  const Frame f = test::random_frame(s, rng);

  // all-zero neighborhood: frame unchanged
  StateSchema zero = s;
  for (auto& [k, v] : zero.epsilon) v = 0.0;
  Rng r0(1);
  const Frame same = epsilon_nsi(f, zero, r0, {});
  CHECK((same.values - f.values).norm() == 0.0);

  // bounds: 1e4 draws all within +-eps per channel (the acceptance suite
  // runs the full 1e5 version)
  Rng r1(2);
  Eigen::VectorXd lo = Eigen::VectorXd::Constant(f.values.size(), 1e9);
  Eigen::VectorXd hi = Eigen::VectorXd::Constant(f.values.size(), -1e9);
  for (int rep = 0; rep < 10000; ++rep) {
    const Frame g = epsilon_nsi(f, s, r1, {});
    for (int i = 0; i < f.values.size(); ++i) {
      const double d = g.values[i] - f.values[i];
      REQUIRE(std::abs(d) <= 0.1);
      lo[i] = std::min(lo[i], d);
      hi[i] = std::max(hi[i], d);
    }
    CHECK((g.contacts - f.contacts).norm() == 0.0);
  }
  for (int i = 0; i < f.values.size(); ++i) {
    CHECK(lo[i] < -0.09);
    CHECK(hi[i] > 0.09);
  }

  // fixup applies the floor clamp
  const WorldParams wp;
  Frame low = f;
  group_values(low, s, "ball-pos") = Eigen::Vector2d(0.0, wp.floor_y + wp.ball_radius);
  Rng r2(3);
  const auto fix = world_frame_fixup(s, wp);
  for (int rep = 0; rep < 200; ++rep) {
    const Frame g = epsilon_nsi(low, s, r2, fix);
    CHECK(group_values(g, s, "ball-pos")[1] >= wp.floor_y + wp.ball_radius);
  }
}

TEST_CASE("sample_augmented: degenerate probabilities and forced choices") {
  const StateSchema s = toy_schema();
  const RewardWeights w = RewardWeights::from_schema(s);
  Rng rng(28);

  Dataset ds;
  ds.schema = s;
  ds.skills["a"].push_back(test::random_trajectory(s, "a", 10, rng));
  const Trajectory& a = ds.skills["a"][0];

  std::vector<int> starts;
  for (int i = 0; i + 1 < a.length(); ++i) starts.push_back(i);
  const std::vector<double> uniform(starts.size(), 1.0 / starts.size());

  SECTION("p_e = p_n = 0 reduces to reference-state initialization") {
    AugmentParams p;
    p.p_external = 0.0;
    p.p_neighborhood = 0.0;
    StitchedGraph stg;
    stg.target = a;
    stg.params = p;
    Rng r(4);
    for (int rep = 0; rep < 200; ++rep) {
      const ClipSample cs = sample_augmented(stg, starts, uniform, s, w, r);
      CHECK(cs.source == ClipSample::Source::Reference);
      CHECK_FALSE(cs.perturbed);
      CHECK(cs.mask_count == 0);
      CHECK(cs.similarity == 1.0);
      CHECK(cs.entry_index == cs.start_index);
      // the clip is exactly the suffix starting at the chosen index
      REQUIRE(cs.clip.length() == a.length() - cs.start_index);
      for (int i = 0; i < cs.clip.length(); ++i)
        CHECK((cs.clip.frames[static_cast<std::size_t>(i)].values -
               a.frames[static_cast<std::size_t>(cs.start_index + i)].values)
                  .norm() == 0.0);
    }
  }

  SECTION("p_e = 1 with external connections always starts at one") {
    Dataset two = ds;
    Trajectory btr;
    btr.skill = "b";
    btr.dt = 1.0 / 60;
    btr.frames = {a.frames[3], a.frames[3]};
    two.skills["b"].push_back(btr);
    AugmentParams p;
    p.p_external = 1.0;
    p.p_neighborhood = 0.0;
    StitchedGraph stg = build_stg(two, "a", p, w);
    REQUIRE(stg.external.size() == 2);
    Rng r(5);
    for (int rep = 0; rep < 50; ++rep) {
      const ClipSample cs = sample_augmented(stg, starts, uniform, s, w, r);
      CHECK(cs.source == ClipSample::Source::External);
      CHECK((cs.clip.frames[0].values -
             stg.external[static_cast<std::size_t>(cs.connection_index)].source.values)
                .norm() == 0.0);
    }
  }
}

TEST_CASE("sample_augmented: external-start fraction tracks p_e") {
  const StateSchema s = toy_schema();
  const RewardWeights w = RewardWeights::from_schema(s);
  Rng rng(29);

  Dataset ds;
  ds.schema = s;
  ds.skills["a"].push_back(test::random_trajectory(s, "a", 10, rng));
  Trajectory btr;
  btr.skill = "b";
  btr.dt = 1.0 / 60;
  for (int i = 0; i < 5; ++i)
    btr.frames.push_back(ds.skills["a"][0].frames[static_cast<std::size_t>(i)]);
  ds.skills["b"].push_back(btr);

  AugmentParams p;
  p.p_external = 0.1;
  p.p_neighborhood = 0.0;
  StitchedGraph stg = build_stg(ds, "a", p, w);
  REQUIRE_FALSE(stg.external.empty());

  const Trajectory& a = stg.target;
  std::vector<int> starts;
  for (int i = 0; i + 1 < a.length(); ++i) starts.push_back(i);
  const std::vector<double> uniform(starts.size(), 1.0 / starts.size());

  const int n = 10000;
  int external = 0;
  Rng r(6);
  for (int i = 0; i < n; ++i) {
    const ClipSample cs = sample_augmented(stg, starts, uniform, s, w, r);
    if (cs.source == ClipSample::Source::External) ++external;
  }
  const double frac = static_cast<double>(external) / n;
  const double sd = std::sqrt(0.1 * 0.9 / n);
  CHECK(std::abs(frac - 0.1) <= 3.0 * sd);
}

TEST_CASE("emitted clips satisfy the structural invariant") {
  const StateSchema s = toy_schema();
  const RewardWeights w = RewardWeights::from_schema(s);
  Rng rng(30);
  Dataset ds;
  ds.schema = s;
  ds.skills["a"].push_back(test::random_trajectory(s, "a", 12, rng));
  const Trajectory& a = ds.skills["a"][0];

  AugmentParams p;
  p.p_external = 0.0;
  p.p_neighborhood = 0.9;
  StitchedGraph stg;
  stg.target = a;
  stg.params = p;

  std::vector<int> starts;
  for (int i = 0; i + 1 < a.length(); ++i) starts.push_back(i);
  const std::vector<double> uniform(starts.size(), 1.0 / starts.size());

  Rng r(7);
  for (int rep = 0; rep < 500; ++rep) {
    const ClipSample cs = sample_augmented(stg, starts, uniform, s, w, r);
    REQUIRE(cs.clip.length() >= 2);
    CHECK(cs.clip.frames.front().real());
    int i = 1;
    int masks = 0;
    while (i < cs.clip.length() && cs.clip.frames[static_cast<std::size_t>(i)].masked) {
      ++masks;
      ++i;
    }
    CHECK(masks <= p.max_masks);
    CHECK(masks == cs.mask_count);
    // all later frames real and an exact suffix of A
    const int suffix_start = cs.entry_index + 1;
    for (; i < cs.clip.length(); ++i) {
      REQUIRE(cs.clip.frames[static_cast<std::size_t>(i)].real());
      const int src = suffix_start + (i - 1 - masks);
      CHECK((cs.clip.frames[static_cast<std::size_t>(i)].values -
             a.frames[static_cast<std::size_t>(src)].values)
                .norm() == 0.0);
    }
  }
}
