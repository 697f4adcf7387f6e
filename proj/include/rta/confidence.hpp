#pragma once

#include <cstdint>
#include <vector>

#include "rta/model.hpp"
#include "rta/optim.hpp"
#include "rta/sampling.hpp"
#include "rta/task.hpp"

namespace rta {

// Confidence scorer: policy backbone with the language head swapped for a
// d x 1 head plus sigmoid over the last-token hidden state.
struct ConfidenceParams {
  ModelParams model;  // role Confidence; holds conf_head.w / conf_head.b
};

// Builds the scorer from a frozen reference policy: backbone weights are
// copied, the language head is dropped, the confidence head starts at the
// usual scaled-Gaussian init (bias zero).
ConfidenceParams init_confidence(const ModelParams& ref, std::uint64_t seed);

// Conf = sigmoid(head . h_last + bias) on question || step; in (0,1).
double score(const ConfidenceParams& conf, std::span<const int> question,
             std::span<const int> step_tokens);

// Taped scalar logit (pre-sigmoid) for training losses.
int build_confidence_logit(Tape& tape, const ConfidenceParams& conf,
                           const std::map<std::string, int>& leaves,
                           std::span<const int> question,
                           std::span<const int> step_tokens);

struct LabeledExample {
  std::vector<int> question_tokens;
  std::vector<int> step_tokens;
  bool correct = false;
};

struct PretrainSchedule {
  int n_per_task = 128;          // single-step samples per question
  double learning_rate_start = 1e-5;
  double learning_rate_end = 1e-6;  // linear decay across all steps
  int epochs = 10;
  int batch_size = 16;
  std::uint64_t seed = 0;

  void validate() const;
};

// N single-step generations per task, labeled by the verifier, with the
// majority class subsampled toward a balanced set. Tasks where one class is
// empty keep everything; class weighting in the loss handles the imbalance.
std::vector<LabeledExample> build_pretrain_set(
    const ModelParams& policy, const std::vector<TaskInstance>& tasks,
    const PretrainSchedule& schedule, const SamplingParams& sampling);

// Class-mean-weighted binary cross-entropy over a batch: each class mean is
// averaged separately, then the two halves are averaged.
struct BceBatch {
  std::vector<const LabeledExample*> examples;
  std::vector<int> labels;
  std::vector<double> weights;
};
BceBatch make_bce_batch(std::vector<const LabeledExample*> examples);

// Forward-only full-set loss.
double bce_loss(const ConfidenceParams& conf,
                const std::vector<LabeledExample>& examples);

// Supervised pretraining; returns the full-set loss before each epoch plus
// a final entry after the last epoch.
std::vector<double> pretrain(ConfidenceParams& conf,
                             const std::vector<LabeledExample>& examples,
                             const PretrainSchedule& schedule);

// mu full-batch gradient steps at the RL-phase learning rate. Empty batches
// are a no-op. The caller owns the optimizer so moments persist across
// outer iterations.
void online_update(ConfidenceParams& conf,
                   const std::vector<LabeledExample>& batch, int mu,
                   double learning_rate, AdamW& optimizer);

}  // namespace rta
