#pragma once

#include <vector>

#include "rta/sampling.hpp"

namespace rta {

struct RewardToggles {
  bool increase = true;
  bool final_conf = true;
  bool format = true;
  bool answer = true;
  bool length = true;
};

struct RewardConfig {
  double tau = 0.55;
  int length_soft_cap = 0;  // tokens; 0 means derive from hard cap
  int length_hard_cap = 0;
  RewardToggles toggles;

  void validate() const;
};

struct RewardBreakdown {
  double r_increase = 0.0;
  double r_final = 0.0;
  double r_format = 0.0;
  double r_answer = 0.0;
  double r_length = 0.0;
  double total = 0.0;
};

// Mean strict-increase indicator over consecutive confidences up to M; a
// single-step trajectory scores 1 when that step is correct, else 0.
double r_increase(const std::vector<double>& confidences, int M,
                  bool first_correct);

// 1 iff the final retained step's confidence meets the threshold
// (inclusive).
double r_final(double conf_m, double tau);

// 1 iff every retained step is well-formed; empty trajectories score 0.
double r_format(const Trajectory& trajectory);

// 1 iff the final retained step is correct.
double r_answer(const Trajectory& trajectory);

// 0 up to the soft cap, linear to -1 at the hard cap, -1 beyond.
double r_length(int total_tokens, const RewardConfig& config);

// All components with disabled ones zeroed; total is the sum of the
// enabled components.
RewardBreakdown total_reward(const Trajectory& trajectory,
                             const std::vector<double>& confidences,
                             const RewardConfig& config);

}  // namespace rta
