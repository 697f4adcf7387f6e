#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "rta/model.hpp"
#include "rta/rng.hpp"
#include "rta/task.hpp"

namespace rta {

struct SamplingParams {
  double temperature = 1.0;
  double top_p = 0.95;
  int top_k = 50;
  double repetition_penalty = 1.05;
  int max_step_tokens = 24;

  void validate() const;
};

enum class StepEnd { Sep, Eos, Cap, Overflow };

// One Think-Answer unit. tokens excludes the sampled terminator, which is
// kept separately so policy-ratio updates can cover it.
struct Step {
  std::vector<int> tokens;
  std::optional<int> terminator;  // STEP_SEP or EOS when sampled
  StepEnd end = StepEnd::Sep;
  std::optional<std::string> parsed_answer;
  bool is_correct = false;
  bool well_formed = false;
  std::optional<double> confidence;
  // logit(STEP_SEP) - logit(EOS) at the step boundary; drives the
  // inference-time continue/terminate decision.
  double sep_minus_eos_logit = 0.0;
};

struct Trajectory {
  TaskInstance task;
  std::vector<Step> steps;
  int effective_depth = 0;  // M: first correct step (1-based) or step count
  bool truncated = false;   // stopped before T because a step was correct

  // question + step tokens joined with STEP_SEP separators, plus the last
  // step's sampled terminator when present.
  std::vector<int> full_tokens() const;
  // Positions (into full_tokens) of policy-generated tokens and the tokens
  // actually sampled there. The sampled token can differ from the context
  // token at separator slots (the model may have sampled EOS while the
  // conditioning context always carries STEP_SEP between steps).
  void generated(std::vector<int>& positions, std::vector<int>& sampled) const;
  int decoding_tokens() const;
};

struct Group {
  TaskInstance task;
  std::vector<Trajectory> trajectories;
  std::vector<double> rewards;
  std::vector<double> advantages;
};

// Repetition penalty, temperature, top-k, then top-p truncation (smallest
// probability-sorted prefix with cumulative mass >= top_p, ties by token id
// ascending), renormalization, categorical draw.
int sample_token(std::span<const double> logit_row,
                 std::span<const int> context, const SamplingParams& params,
                 Rng& rng);

Step generate_step(const ModelParams& params, const std::vector<int>& context,
                   const SamplingParams& sampling, Rng& rng);

// Up to T steps, early stop at the first correct step (training mode).
Trajectory generate_trajectory(const ModelParams& params,
                               const TaskInstance& task, int T,
                               const SamplingParams& sampling, Rng& rng);

// Inference mode: no ground-truth access; stops at EOS, at a well-formed
// step whose boundary prefers EOS over STEP_SEP, or at t_max.
Trajectory eval_trajectory(const ModelParams& params, const TaskInstance& task,
                           int t_max, const SamplingParams& sampling,
                           Rng& rng);

// G trajectories with per-trajectory rng streams derived from
// (run_seed, task id, trajectory index); rewards/advantages left empty.
Group sample_group(const ModelParams& params, const TaskInstance& task, int G,
                   int T, const SamplingParams& sampling,
                   std::uint64_t run_seed);

nlohmann::json trajectory_to_json(const Trajectory& traj, int index);

}  // namespace rta
