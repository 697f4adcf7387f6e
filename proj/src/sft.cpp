#include "rta/sft.hpp"

#include <algorithm>
#include <cmath>

#include "rta/errors.hpp"
#include "rta/optim.hpp"

namespace rta {

void SftConfig::validate() const {
  if (depth < 1) throw ConfigError("sft.depth must be >= 1");
  if (correct_rate < 0.0 || correct_rate > 1.0) {
    throw ConfigError("sft.correct_rate must be in [0,1]");
  }
  if (traces_per_task < 1) throw ConfigError("sft.traces_per_task must be >= 1");
  if (epochs < 1) throw ConfigError("sft.epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("sft.batch_size must be >= 1");
  if (learning_rate_start <= 0.0 || learning_rate_end <= 0.0) {
    throw ConfigError("sft learning rates must be positive");
  }
  if (grad_clip <= 0.0) throw ConfigError("sft.grad_clip must be positive");
}

namespace {

std::vector<int> encode_number(const std::string& digits) {
  std::vector<int> out;
  out.reserve(digits.size());
  for (char c : digits) out.push_back(tok::digit(c - '0'));
  return out;
}

std::string wrong_answer(const TaskInstance& task, Rng& rng) {
  const std::uint64_t bound =
      task.spec.family == TaskFamily::ModularChain
          ? static_cast<std::uint64_t>(std::max(task.spec.modulus, 2))
          : 100;
  for (;;) {
    const std::string cand = std::to_string(rng.below(bound));
    if (cand != task.ground_truth) return cand;
  }
}

}  // namespace

SftExample make_teacher_trace(const TaskInstance& task, int depth,
                              double correct_rate, Rng& rng) {
  SftExample ex;
  ex.tokens = task.question_tokens;
  const std::size_t qlen = ex.tokens.size();
  // Expression body: question without the BOS / QUESTION_END frame.
  const std::vector<int> expr(task.question_tokens.begin() + 1,
                              task.question_tokens.end() - 1);

  for (int t = 0; t < depth; ++t) {
    const bool correct = rng.uniform() < correct_rate;
    ex.tokens.push_back(tok::THINK_OPEN);
    if (t > 0) ex.tokens.push_back(tok::REVISE_CUE);
    ex.tokens.insert(ex.tokens.end(), expr.begin(), expr.end());
    ex.tokens.push_back(tok::THINK_CLOSE);
    ex.tokens.push_back(tok::ANS_OPEN);
    const std::string answer =
        correct ? task.ground_truth : wrong_answer(task, rng);
    const std::vector<int> digits = encode_number(answer);
    ex.tokens.insert(ex.tokens.end(), digits.begin(), digits.end());
    ex.tokens.push_back(tok::ANS_CLOSE);
    if (correct || t + 1 == depth) {
      ex.tokens.push_back(tok::EOS);
      break;
    }
    ex.tokens.push_back(tok::STEP_SEP);
  }

  for (std::size_t p = qlen; p < ex.tokens.size(); ++p) {
    ex.rows.push_back(static_cast<int>(p) - 1);
    ex.targets.push_back(ex.tokens[p]);
  }
  return ex;
}

std::vector<double> sft_train(ModelParams& theta,
                              const std::vector<TaskInstance>& tasks,
                              const SftConfig& config) {
  config.validate();
  if (tasks.empty()) throw MissingInputError("sft_train: no tasks");

  std::vector<SftExample> examples;
  for (const TaskInstance& task : tasks) {
    for (int k = 0; k < config.traces_per_task; ++k) {
      Rng rng(Rng::mix(config.seed, task.id, static_cast<std::uint64_t>(k)));
      SftExample ex = make_teacher_trace(task, config.depth,
                                         config.correct_rate, rng);
      if (static_cast<int>(ex.tokens.size()) > theta.config.max_context) {
        throw ConfigError("sft_train: teacher trace exceeds max_context");
      }
      examples.push_back(std::move(ex));
    }
  }

  const int n = static_cast<int>(examples.size());
  const int batches_per_epoch = (n + config.batch_size - 1) / config.batch_size;
  const int total_steps = config.epochs * batches_per_epoch;
  AdamW opt;
  int step_idx = 0;
  std::vector<double> history;

  std::vector<int> order(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    Rng shuffle_rng(Rng::mix(config.seed, 0x5f1eULL,
                             static_cast<std::uint64_t>(epoch)));
    for (int i = n - 1; i > 0; --i) {
      const int j = static_cast<int>(
          shuffle_rng.below(static_cast<std::uint64_t>(i) + 1));
      std::swap(order[static_cast<std::size_t>(i)],
                order[static_cast<std::size_t>(j)]);
    }

    double epoch_loss = 0.0;
    for (int b = 0; b < batches_per_epoch; ++b) {
      const int lo = b * config.batch_size;
      const int hi = std::min(n, lo + config.batch_size);
      Tape tape;
      const auto leaves = bind_params(tape, theta, true);
      int acc = -1;
      const double w = 1.0 / static_cast<double>(hi - lo);
      for (int i = lo; i < hi; ++i) {
        const SftExample& ex = examples[static_cast<std::size_t>(
            order[static_cast<std::size_t>(i)])];
        const int logits = build_logits(tape, theta, leaves, ex.tokens);
        const int gathered = tape.gather_rows(logits, ex.rows);
        const int ce = tape.softmax_cross_entropy(gathered, ex.targets);
        const int mean = tape.reduce_mean(ce);
        const int weighted = tape.scalar_scale(mean, w);
        acc = acc < 0 ? weighted : tape.add(acc, weighted);
      }
      epoch_loss += tape.scalar_val(acc);
      GradientMap grads = tape.backward(acc, leaves);
      clip_global_norm(grads, config.grad_clip);
      const double frac =
          total_steps > 1
              ? static_cast<double>(step_idx) / (total_steps - 1)
              : 0.0;
      const double lr = config.learning_rate_start +
                        (config.learning_rate_end -
                         config.learning_rate_start) * frac;
      opt.step(theta.tensors, grads, lr);
      ++step_idx;
    }
    history.push_back(epoch_loss / batches_per_epoch);
  }
  return history;
}

}  // namespace rta
