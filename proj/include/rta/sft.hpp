#pragma once

#include <cstdint>
#include <vector>

#include "rta/model.hpp"
#include "rta/rng.hpp"
#include "rta/task.hpp"

namespace rta {

// Supervised warm-start for the policy: behavior cloning on scripted teacher
// traces so RL starts from a model that already emits the step grammar.
struct SftConfig {
  int depth = 4;              // steps per teacher trace (upper bound)
  double correct_rate = 0.5;  // chance a teacher step answers correctly
  int traces_per_task = 4;
  int epochs = 20;
  int batch_size = 8;
  double learning_rate_start = 3e-3;
  double learning_rate_end = 3e-4;  // linear decay across all steps
  double grad_clip = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

// One cloning example: the full token sequence plus the (logit row, target)
// pairs covering every post-question token.
struct SftExample {
  std::vector<int> tokens;
  std::vector<int> rows;
  std::vector<int> targets;
};

// Scripted trace: each step is a well-formed think/answer unit (the think
// segment replays the expression, retry steps open with the revision cue);
// correct steps end the trace with EOS, wrong steps continue with the step
// separator up to depth, and the last step always ends with EOS.
SftExample make_teacher_trace(const TaskInstance& task, int depth,
                              double correct_rate, Rng& rng);

// Cross-entropy on generated positions only; returns the mean training loss
// per epoch.
std::vector<double> sft_train(ModelParams& theta,
                              const std::vector<TaskInstance>& tasks,
                              const SftConfig& config);

}  // namespace rta
