#include <doctest.h>

#include <vector>

#include "reward_oracle.hpp"
#include "rta/reward.hpp"
#include "rta/sampling.hpp"
#include "rta/task.hpp"

using namespace rta;

namespace {

Step flagged_step(bool correct, bool well_formed, int n_tokens,
                  double confidence) {
  Step s;
  s.tokens.assign(static_cast<std::size_t>(n_tokens), tok::digit(1));
  s.is_correct = correct;
  s.well_formed = well_formed;
  s.confidence = confidence;
  s.terminator = tok::STEP_SEP;
  return s;
}

Trajectory make_traj(const std::vector<Step>& steps) {
  Trajectory t;
  for (const Step& s : steps) t.steps.push_back(s);
  t.effective_depth = static_cast<int>(steps.size());
  for (std::size_t i = 0; i < steps.size(); ++i) {
    if (steps[i].is_correct) {
      t.effective_depth = static_cast<int>(i) + 1;
      break;
    }
  }
  return t;
}

RewardConfig caps(int soft, int hard) {
  RewardConfig c;
  c.length_soft_cap = soft;
  c.length_hard_cap = hard;
  return c;
}

}  // namespace

TEST_CASE("r_increase counts strict rises over consecutive confidences") {
  CHECK(r_increase({0.3, 0.6, 0.4, 0.7}, 4, false) ==
        doctest::Approx(2.0 / 3.0));
  CHECK(r_increase({0.2, 0.2, 0.3}, 3, false) == doctest::Approx(0.5));
  CHECK(r_increase({0.9, 0.1}, 2, false) == 0.0);
  // Single retained step: correctness decides everything.
  CHECK(r_increase({0.05}, 1, true) == 1.0);
  CHECK(r_increase({0.99}, 1, false) == 0.0);
  CHECK(r_increase({}, 0, false) == 0.0);
  CHECK_THROWS_AS(r_increase({0.1, 0.2}, 3, false), Error);
}

TEST_CASE("r_increase is order-sensitive, not a set function") {
  const double up = r_increase({0.1, 0.9}, 2, false);
  const double down = r_increase({0.9, 0.1}, 2, false);
  CHECK(up == 1.0);
  CHECK(down == 0.0);
  CHECK(up != down);
}

TEST_CASE("r_final threshold is inclusive") {
  CHECK(r_final(0.55, 0.55) == 1.0);
  CHECK(r_final(0.5499999, 0.55) == 0.0);
  CHECK(r_final(1.0, 0.55) == 1.0);
}

TEST_CASE("r_format is all-or-nothing") {
  CHECK(r_format(make_traj({flagged_step(false, true, 3, 0.5),
                            flagged_step(false, true, 3, 0.5)})) == 1.0);
  CHECK(r_format(make_traj({flagged_step(false, true, 3, 0.5),
                            flagged_step(false, false, 3, 0.5)})) == 0.0);
  CHECK(r_format(make_traj({})) == 0.0);
}

TEST_CASE("r_answer looks at the final retained step only") {
  CHECK(r_answer(make_traj({flagged_step(false, true, 3, 0.5),
                            flagged_step(true, true, 3, 0.5)})) == 1.0);
  CHECK(r_answer(make_traj({flagged_step(false, true, 3, 0.5)})) == 0.0);
  CHECK(r_answer(make_traj({})) == 0.0);
}

TEST_CASE("r_length: flat, linear ramp, floor") {
  const RewardConfig c = caps(10, 20);
  CHECK(r_length(0, c) == 0.0);
  CHECK(r_length(10, c) == 0.0);
  CHECK(r_length(15, c) == doctest::Approx(-0.5));
  CHECK(r_length(20, c) == -1.0);
  CHECK(r_length(100, c) == -1.0);
  CHECK_THROWS_AS(r_length(5, caps(20, 10)), ConfigError);
}

TEST_CASE("total_reward sums enabled components and zeroes disabled ones") {
  // Two wrong steps then a correct one; confidences rising.
  Trajectory traj = make_traj({flagged_step(false, true, 4, 0.3),
                               flagged_step(false, true, 4, 0.5),
                               flagged_step(true, true, 4, 0.8)});
  RewardConfig config = caps(20, 40);
  const std::vector<double> confs{0.3, 0.5, 0.8};
  const RewardBreakdown full = total_reward(traj, confs, config);
  CHECK(full.r_increase == 1.0);
  CHECK(full.r_final == 1.0);  // 0.8 >= 0.55
  CHECK(full.r_format == 1.0);
  CHECK(full.r_answer == 1.0);
  CHECK(full.r_length == 0.0);  // 15 tokens (incl. terminators) <= 20
  CHECK(full.total == 4.0);

  config.toggles.increase = false;
  config.toggles.answer = false;
  const RewardBreakdown cut = total_reward(traj, confs, config);
  CHECK(cut.r_increase == 0.0);
  CHECK(cut.r_answer == 0.0);
  CHECK(cut.total == 2.0);
}

TEST_CASE("dump records match the standalone oracle bitwise") {
  Rng rng(55);
  RewardConfig config = caps(12, 30);
  reward_oracle::Config ocfg;
  ocfg.tau = config.tau;
  ocfg.soft_cap = config.length_soft_cap;
  ocfg.hard_cap = config.length_hard_cap;

  for (int trial = 0; trial < 500; ++trial) {
    std::vector<Step> steps;
    const int n = 1 + static_cast<int>(rng.below(4));
    bool done = false;
    for (int i = 0; i < n && !done; ++i) {
      const bool correct = rng.below(4) == 0;
      const bool well = rng.below(5) != 0;
      const int len = 1 + static_cast<int>(rng.below(10));
      steps.push_back(flagged_step(correct, well, len, rng.uniform()));
      if (correct) done = true;  // mirror training truncation
    }
    Trajectory traj = make_traj(steps);
    std::vector<double> confs;
    for (const Step& s : traj.steps) confs.push_back(*s.confidence);
    const RewardBreakdown rb = total_reward(traj, confs, config);

    const nlohmann::json record = [&]() {
      nlohmann::json j = trajectory_to_json(traj, 0);
      return j;
    }();
    const reward_oracle::TrajInfo info = reward_oracle::from_json(record);
    CHECK(reward_oracle::total_reward(info, ocfg) == rb.total);
  }
}
