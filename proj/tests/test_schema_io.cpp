#include <catch2/catch_amalgamated.hpp>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "rlid/io.hpp"
#include "rlid/schema.hpp"
#include "rlid/world.hpp"
#include "test_helpers.hpp"

using namespace rlid;
namespace fs = std::filesystem;

namespace {

Dataset two_skill_dataset(Rng& rng, int frames = 8) {
  Dataset ds;
  ds.schema = toy_schema();
  ds.skills["alpha"].push_back(test::random_trajectory(ds.schema, "alpha", frames, rng));
  ds.skills["beta"].push_back(test::random_trajectory(ds.schema, "beta", frames, rng));
  return ds;
}

}  // namespace

TEST_CASE("validate: well-formed dataset yields an empty report") {
  Rng rng(1);
  const Dataset ds = two_skill_dataset(rng);
  CHECK(validate(ds).empty());
  // idempotent and side-effect free
  CHECK(validate(ds).empty());
}

TEST_CASE("validate: masked endpoint is reported") {
  Rng rng(2);
  Dataset ds = two_skill_dataset(rng);
  ds.skills["alpha"][0].frames.front() = Frame::masked_frame();
  const auto report = validate(ds);
  REQUIRE_FALSE(report.empty());
  bool found = false;
  for (const auto& r : report)
    if (r.find("masked endpoint") != std::string::npos) found = true;
  CHECK(found);
}

TEST_CASE("validate: wrong channel width is a dim mismatch") {
  Rng rng(3);
  Dataset ds = two_skill_dataset(rng);
  ds.skills["beta"][0].frames[2].values.conservativeResize(ds.schema.value_dim() + 1);
  const auto report = validate(ds);
  REQUIRE_FALSE(report.empty());
  CHECK(report.front().find("dim mismatch") != std::string::npos);
}

TEST_CASE("validate: nonpositive dt is reported") {
  Rng rng(4);
  Dataset ds = two_skill_dataset(rng);
  ds.skills["alpha"][0].dt = 0.0;
  const auto report = validate(ds);
  REQUIRE_FALSE(report.empty());
  CHECK(report.front().find("dt") != std::string::npos);
}

TEST_CASE("local observation subtracts the root, keeping root height") {
  const StateSchema s = toy_schema();
  Frame f = Frame::zero(s);
  group_values(f, s, "hand-pos") = Eigen::Vector2d(2.0, 1.0);
  group_values(f, s, "ball-pos") = Eigen::Vector2d(2.5, 1.2);
  const Eigen::VectorXd obs = to_local_observation(f, s);
  const int ball_off = s.group_offset(static_cast<std::size_t>(s.group_index("ball-pos")));
  CHECK(obs[0] == 0.0);                       // root x
  CHECK(obs[1] == 1.0);                       // root height stays absolute
  CHECK(obs[ball_off] == Catch::Approx(0.5)); // ball local x
  CHECK(obs[ball_off + 1] == Catch::Approx(0.2));
}

TEST_CASE("local observation with root at origin is the raw concatenation plus contacts") {
  const StateSchema s = toy_schema();
  Rng rng(5);
  Frame f = test::random_frame(s, rng);
  group_values(f, s, "hand-pos") = Eigen::Vector2d(0.0, 0.0);
  const Eigen::VectorXd obs = to_local_observation(f, s);
  CHECK((obs.head(s.value_dim()) - f.values).norm() == 0.0);
  CHECK((obs.tail(s.contact_pairs()) - f.contacts).norm() == 0.0);
}

TEST_CASE("local observation is invariant under horizontal translation") {
  // oracle: translate every positional group by a random horizontal offset
  // and compare observation vectors
  const StateSchema s = toy_schema();
  Rng rng(6);
  for (int rep = 0; rep < 50; ++rep) {
    const Frame f = test::random_frame(s, rng);
    const double dx = rng.uniform(-5.0, 5.0);
    Frame g = f;
    for (std::size_t gi = 0; gi < s.groups.size(); ++gi) {
      if (!is_positional(s.groups[gi].kind)) continue;
      const int off = s.group_offset(gi);
      for (int p = 0; p < s.groups[gi].dim; p += 2) g.values[off + p] += dx;
    }
    const Eigen::VectorXd oa = to_local_observation(f, s);
    const Eigen::VectorXd ob = to_local_observation(g, s);
    CHECK((oa - ob).lpNorm<Eigen::Infinity>() < 1e-12);
  }
}

TEST_CASE("masked frames have no observation") {
  const StateSchema s = toy_schema();
  CHECK_THROWS_AS(to_local_observation(Frame::masked_frame(), s), std::invalid_argument);
}

TEST_CASE("save/load round-trips a random dataset exactly") {
  Rng rng(7);
  Dataset ds = two_skill_dataset(rng, 6);
  ds.skills["alpha"].push_back(test::random_trajectory(ds.schema, "alpha", 5, rng));
  ds.skills["alpha"][1].frames[2] = Frame::masked_frame();
  const std::string dir = test::scratch_dir("roundtrip");
  save_dataset(ds, dir);
  const Dataset back = load_dataset(dir);

  REQUIRE(back.skills.size() == ds.skills.size());
  for (const auto& [skill, trajs] : ds.skills) {
    REQUIRE(back.skills.count(skill) == 1);
    const auto& btrajs = back.skills.at(skill);
    REQUIRE(btrajs.size() == trajs.size());
    for (std::size_t i = 0; i < trajs.size(); ++i) {
      REQUIRE(btrajs[i].frames.size() == trajs[i].frames.size());
      CHECK(btrajs[i].dt == trajs[i].dt);  // bit-exact
      for (std::size_t k = 0; k < trajs[i].frames.size(); ++k) {
        const Frame& a = trajs[i].frames[k];
        const Frame& b = btrajs[i].frames[k];
        REQUIRE(a.masked == b.masked);
        if (a.masked) continue;
        REQUIRE(a.values.size() == b.values.size());
        CHECK(std::memcmp(a.values.data(), b.values.data(),
                          sizeof(double) * static_cast<std::size_t>(a.values.size())) == 0);
        CHECK((a.contacts - b.contacts).norm() == 0.0);
      }
    }
  }
  // schema weights round-trip too
  for (const auto& g : ds.schema.groups) {
    CHECK(back.schema.lambda_of(g.name) == ds.schema.lambda_of(g.name));
    CHECK(back.schema.epsilon_of(g.name) == ds.schema.epsilon_of(g.name));
  }
}

TEST_CASE("MASK rows load as masked frames") {
  Rng rng(8);
  Dataset ds = two_skill_dataset(rng, 5);
  ds.skills["alpha"][0].frames[2] = Frame::masked_frame();
  const std::string dir = test::scratch_dir("maskrow");
  save_dataset(ds, dir);

  std::ifstream in(fs::path(dir) / "alpha_000.traj");
  std::string line;
  int mask_lines = 0;
  while (std::getline(in, line))
    if (line == "MASK") ++mask_lines;
  CHECK(mask_lines == 1);

  const Dataset back = load_dataset(dir);
  CHECK(back.skills.at("alpha")[0].frames[2].masked);
}

TEST_CASE("wrong column count names the offending line") {
  Rng rng(9);
  Dataset ds = two_skill_dataset(rng, 4);
  const std::string dir = test::scratch_dir("badcols");
  save_dataset(ds, dir);
  const auto path = fs::path(dir) / "alpha_000.traj";
  std::ofstream out(path, std::ios::app);
  out << "1 2 3\n";  // row 5 of the data block, line 9 of the file
  out.close();
  try {
    load_dataset(dir);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("alpha_000.traj:9") != std::string::npos);
    CHECK(msg.find("columns") != std::string::npos);
  }
}

TEST_CASE("unknown group kind is rejected with a location") {
  const std::string dir = test::scratch_dir("badkind");
  {
    std::ofstream out(fs::path(dir) / "schema");
    out << "name broken\ngroups a:warp-drive:2\nlambda a 1\nepsilon a 0\n";
  }
  CHECK_THROWS_AS(load_dataset(dir), ParseError);
}
