#include "rta/reward.hpp"

#include "rta/errors.hpp"

namespace rta {

void RewardConfig::validate() const {
  if (tau < 0.0 || tau > 1.0) throw ConfigError("RewardConfig.tau must be in [0,1]");
  if (length_hard_cap <= 0) throw ConfigError("RewardConfig.length_hard_cap must be positive");
  if (length_soft_cap < 0 || length_soft_cap >= length_hard_cap) {
    throw ConfigError("RewardConfig.length_soft_cap must be < length_hard_cap");
  }
}

double r_increase(const std::vector<double>& confidences, int M,
                  bool first_correct) {
  if (static_cast<int>(confidences.size()) != M) {
    throw Error("r_increase: confidence count " +
                std::to_string(confidences.size()) + " != M " +
                std::to_string(M));
  }
  if (M <= 1) {
    // One retained step: full reward only when that step is correct.
    return first_correct ? 1.0 : 0.0;
  }
  int increases = 0;
  for (int t = 0; t + 1 < M; ++t) {
    if (confidences[static_cast<std::size_t>(t) + 1] >
        confidences[static_cast<std::size_t>(t)]) {
      ++increases;
    }
  }
  return static_cast<double>(increases) / static_cast<double>(M - 1);
}

double r_final(double conf_m, double tau) { return conf_m >= tau ? 1.0 : 0.0; }

double r_format(const Trajectory& trajectory) {
  if (trajectory.steps.empty()) return 0.0;
  for (const Step& s : trajectory.steps) {
    if (!s.well_formed) return 0.0;
  }
  return 1.0;
}

double r_answer(const Trajectory& trajectory) {
  if (trajectory.steps.empty()) return 0.0;
  return trajectory.steps.back().is_correct ? 1.0 : 0.0;
}

double r_length(int total_tokens, const RewardConfig& config) {
  config.validate();
  if (total_tokens <= config.length_soft_cap) return 0.0;
  if (total_tokens >= config.length_hard_cap) return -1.0;
  return -static_cast<double>(total_tokens - config.length_soft_cap) /
         static_cast<double>(config.length_hard_cap - config.length_soft_cap);
}

RewardBreakdown total_reward(const Trajectory& trajectory,
                             const std::vector<double>& confidences,
                             const RewardConfig& config) {
  config.validate();
  RewardBreakdown b;
  const int m = trajectory.effective_depth;
  const bool first_correct =
      !trajectory.steps.empty() && trajectory.steps.front().is_correct;
  b.r_increase = r_increase(confidences, m, first_correct);
  b.r_final = confidences.empty()
                  ? 0.0
                  : r_final(confidences.back(), config.tau);
  b.r_format = r_format(trajectory);
  b.r_answer = r_answer(trajectory);
  b.r_length = r_length(trajectory.decoding_tokens(), config);

  const RewardToggles& t = config.toggles;
  if (!t.increase) b.r_increase = 0.0;
  if (!t.final_conf) b.r_final = 0.0;
  if (!t.format) b.r_format = 0.0;
  if (!t.answer) b.r_answer = 0.0;
  if (!t.length) b.r_length = 0.0;
  b.total = b.r_increase + b.r_final + b.r_format + b.r_answer + b.r_length;
  return b;
}

}  // namespace rta
