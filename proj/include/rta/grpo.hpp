#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "rta/confidence.hpp"
#include "rta/config.hpp"
#include "rta/metrics.hpp"
#include "rta/model.hpp"
#include "rta/optim.hpp"
#include "rta/reward.hpp"
#include "rta/sampling.hpp"

namespace rta {

// A_i = (R_i - mean) / max(population std, std_guard); all-equal groups map
// to all-zero advantages.
std::vector<double> compute_advantages(const std::vector<double>& rewards,
                                       double std_guard);

// Everything the clipped-surrogate loss needs for one trajectory, with the
// frozen-model log-probs precomputed once per outer batch.
struct RatioData {
  std::vector<int> full;     // question + generated tokens
  std::vector<int> rows;     // logit rows predicting each generated token
  std::vector<int> sampled;  // the tokens actually drawn there
  std::vector<double> logp_old;
  std::vector<double> logp_ref;
  std::vector<double> advantage;  // sequence advantage broadcast per token
  double weight = 1.0;            // contribution to the batch mean
};

// Per-token log-probs of the sampled tokens under params (forward only).
std::vector<double> per_token_log_probs(const ModelParams& params,
                                        const std::vector<int>& full,
                                        const std::vector<int>& rows,
                                        const std::vector<int>& sampled);

RatioData make_ratio_data(const Trajectory& trajectory, double advantage,
                          const ModelParams& theta_old, const ModelParams& ref,
                          const GrpoConfig& config);

struct GrpoLossStats {
  double clip_fraction = 0.0;
  double kl_mean = 0.0;
  std::int64_t tokens = 0;
};

// Taped negated GRPO objective over a batch of trajectories: token-level
// clipped ratios against logp_old, k3 KL penalty against logp_ref,
// token-mean per trajectory, then the weighted sum over trajectories.
// Trajectories without generated tokens contribute nothing.
int build_grpo_loss(Tape& tape, const ModelParams& theta,
                    const std::map<std::string, int>& leaves,
                    std::span<const RatioData> batch, const GrpoConfig& config,
                    GrpoLossStats* stats = nullptr);

// Single-group convenience wrapper (forward value only); requires the group's
// advantages to be filled and leaves theta_old/ref untouched.
double grpo_loss(const ModelParams& theta, const ModelParams& theta_old,
                 const ModelParams& ref, const Group& group,
                 const GrpoConfig& config, GrpoLossStats* stats = nullptr);

struct TrainState {
  ModelParams theta;
  ModelParams theta_old;
  ModelParams ref;
  ConfidenceParams conf;
  AdamW policy_opt;
  AdamW conf_opt;
  int iteration = 0;
  std::uint64_t run_seed = 0;
};

struct IterationMetrics {
  double mean_reward = 0.0;
  double r_increase = 0.0;
  double r_final = 0.0;
  double r_format = 0.0;
  double r_answer = 0.0;
  double r_length = 0.0;
  double accuracy = 0.0;  // final-step correctness rate, toggle-independent
  double mean_m = 0.0;
  double oops_mean = 0.0;
  double clip_fraction = 0.0;
  double kl_mean = 0.0;
  double grad_norm = 0.0;
  int policy_updates = 0;
  int conf_updates = 0;
  std::int64_t decoding_tokens = 0;
};

// One outer batch: snapshot theta_old, roll out a group per task with it,
// score confidences, compute rewards and advantages, then mu confidence
// updates followed by mu policy updates. Groups are returned through *out
// when the caller wants to dump them.
IterationMetrics train_step(TrainState& state,
                            const std::vector<TaskInstance>& batch,
                            const GrpoConfig& config,
                            const RewardConfig& reward_config,
                            const SamplingParams& sampling,
                            std::vector<Group>* out_groups = nullptr);

// Full training loop: manifest, per-iteration metrics.csv and timing.csv,
// trajectory dump, periodic checkpoints (iter-N/policy, iter-N/confidence),
// summary.json. Resumes from the latest checkpoint when resume is set.
void train(const TrainConfig& config, bool resume);

}  // namespace rta
