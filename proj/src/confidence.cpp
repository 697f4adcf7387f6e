#include "rta/confidence.hpp"

#include <algorithm>
#include <cmath>

#include <omp.h>

#include "rta/errors.hpp"

namespace rta {

void PretrainSchedule::validate() const {
  if (n_per_task < 2) throw ConfigError("PretrainSchedule.n_per_task must be >= 2");
  if (!(learning_rate_start >= learning_rate_end &&
        learning_rate_end > 0.0)) {
    throw ConfigError(
        "PretrainSchedule: learning_rate_start >= learning_rate_end > 0 required");
  }
  if (epochs < 1) throw ConfigError("PretrainSchedule.epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("PretrainSchedule.batch_size must be >= 1");
}

ConfidenceParams init_confidence(const ModelParams& ref, std::uint64_t seed) {
  ConfidenceParams conf;
  conf.model = ref;
  conf.model.role = ParamRole::Confidence;
  conf.model.tensors.erase("head.w");
  conf.model.tensors.erase("head.b");
  Rng rng(Rng::mix(seed, 0x636f6e66ULL));
  Tensor w = Tensor::zeros({ref.config.d_model, 1});
  for (double& v : w.data) v = rng.gaussian() * 0.02;
  conf.model.tensors["conf_head.w"] = std::move(w);
  conf.model.tensors["conf_head.b"] = Tensor::zeros({1});
  return conf;
}

int build_confidence_logit(Tape& tape, const ConfidenceParams& conf,
                           const std::map<std::string, int>& leaves,
                           std::span<const int> question,
                           std::span<const int> step_tokens) {
  std::vector<int> all(question.begin(), question.end());
  all.insert(all.end(), step_tokens.begin(), step_tokens.end());
  const int h = build_hidden(tape, conf.model, leaves, all);
  const int last = static_cast<int>(all.size()) - 1;
  const int row = tape.gather_rows(h, std::span<const int>(&last, 1));
  const int z = tape.matmul(row, leaves.at("conf_head.w"));
  return tape.add(z, leaves.at("conf_head.b"));
}

double score(const ConfidenceParams& conf, std::span<const int> question,
             std::span<const int> step_tokens) {
  Tape tape;
  auto leaves = bind_params(tape, conf.model, false);
  const int z =
      build_confidence_logit(tape, conf, leaves, question, step_tokens);
  return 1.0 / (1.0 + std::exp(-tape.scalar_val(z)));
}

std::vector<LabeledExample> build_pretrain_set(
    const ModelParams& policy, const std::vector<TaskInstance>& tasks,
    const PretrainSchedule& schedule, const SamplingParams& sampling) {
  schedule.validate();
  std::vector<LabeledExample> out;
  const int n = schedule.n_per_task;
  for (const TaskInstance& task : tasks) {
    std::vector<LabeledExample> correct, wrong;
    std::vector<Step> steps(static_cast<std::size_t>(n));
#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < n; ++i) {
      Rng rng(Rng::mix(schedule.seed, task.id, static_cast<std::uint64_t>(i)));
      steps[static_cast<std::size_t>(i)] =
          generate_step(policy, task.question_tokens, sampling, rng);
    }
    for (Step& step : steps) {
      LabeledExample ex;
      ex.question_tokens = task.question_tokens;
      ex.step_tokens = std::move(step.tokens);
      const auto ans = parse_answer(ex.step_tokens);
      ex.correct = ans.has_value() && verify_answer(task, *ans);
      (ex.correct ? correct : wrong).push_back(std::move(ex));
    }
    // Subsample the majority class toward K ~= N/2 per task.
    if (!correct.empty() && !wrong.empty()) {
      const std::size_t keep = std::min(correct.size(), wrong.size());
      Rng rng(Rng::mix(schedule.seed, task.id, 0xba1a9ceULL));
      auto subsample = [&](std::vector<LabeledExample>& v) {
        for (std::size_t i = v.size() - 1; i > 0; --i) {
          std::swap(v[i], v[rng.below(i + 1)]);
        }
        v.resize(keep);
      };
      if (correct.size() > keep) subsample(correct);
      if (wrong.size() > keep) subsample(wrong);
    }
    for (auto& e : correct) out.push_back(std::move(e));
    for (auto& e : wrong) out.push_back(std::move(e));
  }
  return out;
}

BceBatch make_bce_batch(std::vector<const LabeledExample*> examples) {
  BceBatch batch;
  batch.examples = std::move(examples);
  std::size_t n_correct = 0;
  for (const auto* e : batch.examples) n_correct += e->correct ? 1 : 0;
  const std::size_t n_wrong = batch.examples.size() - n_correct;
  // Per-class means averaged together; a missing class leaves the other
  // with full weight so degenerate batches stay well-defined.
  const double w_correct =
      n_correct == 0 ? 0.0
                     : (n_wrong == 0 ? 1.0 / static_cast<double>(n_correct)
                                     : 0.5 / static_cast<double>(n_correct));
  const double w_wrong =
      n_wrong == 0 ? 0.0
                   : (n_correct == 0 ? 1.0 / static_cast<double>(n_wrong)
                                     : 0.5 / static_cast<double>(n_wrong));
  for (const auto* e : batch.examples) {
    batch.labels.push_back(e->correct ? 1 : 0);
    batch.weights.push_back(e->correct ? w_correct : w_wrong);
  }
  return batch;
}

double bce_loss(const ConfidenceParams& conf,
                const std::vector<LabeledExample>& examples) {
  if (examples.empty()) throw Error("bce_loss: empty example set");
  std::vector<const LabeledExample*> ptrs;
  for (const auto& e : examples) ptrs.push_back(&e);
  const BceBatch batch = make_bce_batch(std::move(ptrs));
  double loss = 0.0;
  for (std::size_t i = 0; i < batch.examples.size(); ++i) {
    Tape tape;
    auto leaves = bind_params(tape, conf.model, false);
    const int z = build_confidence_logit(tape, conf, leaves,
                                         batch.examples[i]->question_tokens,
                                         batch.examples[i]->step_tokens);
    const double zi = tape.scalar_val(z);
    const double softplus =
        std::max(zi, 0.0) + std::log1p(std::exp(-std::abs(zi)));
    loss += batch.weights[i] * (softplus - batch.labels[i] * zi);
  }
  return loss;
}

namespace {

// One full forward+backward over a batch; gradients are accumulated across
// examples (each example gets its own tape, parameters are shared).
GradientMap batch_gradients(const ConfidenceParams& conf,
                            const BceBatch& batch, double* loss_out) {
  GradientMap total;
  double loss = 0.0;
  for (std::size_t i = 0; i < batch.examples.size(); ++i) {
    Tape tape;
    auto leaves = bind_params(tape, conf.model, true);
    const int z = build_confidence_logit(tape, conf, leaves,
                                         batch.examples[i]->question_tokens,
                                         batch.examples[i]->step_tokens);
    const int label = batch.labels[i];
    const double weight = batch.weights[i];
    const int loss_node = tape.weighted_bce_logits(
        z, std::span<const int>(&label, 1), std::span<const double>(&weight, 1));
    loss += tape.scalar_val(loss_node);
    GradientMap g = tape.backward(loss_node, leaves);
    if (total.empty()) {
      total = std::move(g);
    } else {
      for (auto& [name, grad] : g) {
        Tensor& dst = total.at(name);
        for (std::int64_t k = 0; k < grad.size(); ++k) {
          dst.data[static_cast<std::size_t>(k)] +=
              grad.data[static_cast<std::size_t>(k)];
        }
      }
    }
  }
  if (loss_out) *loss_out = loss;
  return total;
}

}  // namespace

std::vector<double> pretrain(ConfidenceParams& conf,
                             const std::vector<LabeledExample>& examples,
                             const PretrainSchedule& schedule) {
  schedule.validate();
  if (examples.empty()) throw Error("pretrain: empty example set");

  std::vector<double> history;
  AdamW optimizer;
  Rng shuffle_rng(Rng::mix(schedule.seed, 0x70726574ULL));

  std::vector<std::size_t> order(examples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  const std::size_t batches_per_epoch =
      (examples.size() + schedule.batch_size - 1) / schedule.batch_size;
  const std::size_t total_steps = batches_per_epoch * schedule.epochs;
  std::size_t step_index = 0;

  for (int epoch = 0; epoch < schedule.epochs; ++epoch) {
    history.push_back(bce_loss(conf, examples));
    for (std::size_t i = order.size() - 1; i > 0; --i) {
      std::swap(order[i], order[shuffle_rng.below(i + 1)]);
    }
    for (std::size_t b = 0; b < order.size();
         b += static_cast<std::size_t>(schedule.batch_size)) {
      std::vector<const LabeledExample*> ptrs;
      const std::size_t hi =
          std::min(order.size(), b + static_cast<std::size_t>(schedule.batch_size));
      for (std::size_t i = b; i < hi; ++i) ptrs.push_back(&examples[order[i]]);
      const BceBatch batch = make_bce_batch(std::move(ptrs));
      GradientMap grads = batch_gradients(conf, batch, nullptr);
      const double frac =
          total_steps <= 1
              ? 0.0
              : static_cast<double>(step_index) /
                    static_cast<double>(total_steps - 1);
      const double lr = schedule.learning_rate_start +
                        frac * (schedule.learning_rate_end -
                                schedule.learning_rate_start);
      clip_global_norm(grads, 1.0);
      optimizer.step(conf.model.tensors, grads, lr);
      ++step_index;
    }
  }
  history.push_back(bce_loss(conf, examples));
  return history;
}

void online_update(ConfidenceParams& conf,
                   const std::vector<LabeledExample>& batch, int mu,
                   double learning_rate, AdamW& optimizer) {
  if (mu < 1) throw ConfigError("online_update: mu must be >= 1");
  if (batch.empty()) return;  // logged by the caller
  std::vector<const LabeledExample*> ptrs;
  for (const auto& e : batch) ptrs.push_back(&e);
  const BceBatch bce = make_bce_batch(std::move(ptrs));
  for (int step = 0; step < mu; ++step) {
    GradientMap grads = batch_gradients(conf, bce, nullptr);
    clip_global_norm(grads, 1.0);
    optimizer.step(conf.model.tensors, grads, learning_rate);
  }
}

}  // namespace rta
