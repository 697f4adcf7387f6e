#include "reward_oracle.hpp"

#include <stdexcept>

namespace reward_oracle {

int count_tokens(const std::string& decoded) {
  int count = 0;
  std::size_t i = 0;
  while (i < decoded.size()) {
    if (decoded[i] == '<') {
      const std::size_t close = decoded.find('>', i);
      if (close == std::string::npos) {
        throw std::runtime_error("unterminated marker in: " + decoded);
      }
      i = close + 1;
    } else {
      ++i;
    }
    ++count;
  }
  return count;
}

TrajInfo from_json(const nlohmann::json& record) {
  TrajInfo traj;
  traj.m = record.at("M").get<int>();
  for (const auto& s : record.at("steps")) {
    StepInfo info;
    info.token_count = count_tokens(s.at("tokens").get<std::string>());
    if (s.contains("terminator")) ++info.token_count;
    info.well_formed = s.at("well_formed").get<bool>();
    info.is_correct = s.at("is_correct").get<bool>();
    if (s.contains("confidence")) {
      info.confidence = s.at("confidence").get<double>();
      info.has_confidence = true;
    }
    traj.steps.push_back(info);
  }
  // Cross-check the recorded effective depth against its definition.
  int m = static_cast<int>(traj.steps.size());
  for (std::size_t i = 0; i < traj.steps.size(); ++i) {
    if (traj.steps[i].is_correct) {
      m = static_cast<int>(i) + 1;
      break;
    }
  }
  if (m != traj.m) throw std::runtime_error("dump M contradicts step flags");
  return traj;
}

double total_reward(const TrajInfo& traj, const Config& config) {
  const int m = traj.m;

  double inc;
  if (m <= 1) {
    inc = !traj.steps.empty() && traj.steps.front().is_correct ? 1.0 : 0.0;
  } else {
    int rises = 0;
    for (int t = 1; t < m; ++t) {
      if (traj.steps[static_cast<std::size_t>(t)].confidence >
          traj.steps[static_cast<std::size_t>(t) - 1].confidence) {
        ++rises;
      }
    }
    inc = static_cast<double>(rises) / static_cast<double>(m - 1);
  }

  double fin = 0.0;
  if (m >= 1) {
    const StepInfo& last = traj.steps[static_cast<std::size_t>(m) - 1];
    fin = last.has_confidence && last.confidence >= config.tau ? 1.0 : 0.0;
  }

  double fmt = traj.steps.empty() ? 0.0 : 1.0;
  for (const StepInfo& s : traj.steps) {
    if (!s.well_formed) fmt = 0.0;
  }

  const double ans =
      !traj.steps.empty() && traj.steps.back().is_correct ? 1.0 : 0.0;

  int tokens = 0;
  for (const StepInfo& s : traj.steps) tokens += s.token_count;
  double len;
  if (tokens <= config.soft_cap) {
    len = 0.0;
  } else if (tokens >= config.hard_cap) {
    len = -1.0;
  } else {
    len = -static_cast<double>(tokens - config.soft_cap) /
          static_cast<double>(config.hard_cap - config.soft_cap);
  }

  double total = 0.0;
  // Same accumulation order as the trainer so equality is bitwise.
  total += config.toggles.increase ? inc : 0.0;
  total += config.toggles.final_conf ? fin : 0.0;
  total += config.toggles.format ? fmt : 0.0;
  total += config.toggles.answer ? ans : 0.0;
  total += config.toggles.length ? len : 0.0;
  return total;
}

}  // namespace reward_oracle
