#include "rta/sampling.hpp"

#include <algorithm>
#include <cmath>

#include <omp.h>

#include "rta/errors.hpp"

namespace rta {

void SamplingParams::validate() const {
  if (temperature <= 0.0) throw ConfigError("SamplingParams.temperature must be positive");
  if (top_p <= 0.0 || top_p > 1.0) throw ConfigError("SamplingParams.top_p must be in (0,1]");
  if (top_k < 1) throw ConfigError("SamplingParams.top_k must be positive");
  if (repetition_penalty < 1.0) throw ConfigError("SamplingParams.repetition_penalty must be >= 1");
  if (max_step_tokens < 1) throw ConfigError("SamplingParams.max_step_tokens must be positive");
}

int sample_token(std::span<const double> logit_row,
                 std::span<const int> context, const SamplingParams& params,
                 Rng& rng) {
  const int vocab = static_cast<int>(logit_row.size());
  std::vector<double> logits(logit_row.begin(), logit_row.end());

  // Repetition penalty for tokens present in the context, applied once per
  // distinct token: positive logits divided, negative multiplied.
  if (params.repetition_penalty > 1.0) {
    std::vector<char> seen(static_cast<std::size_t>(vocab), 0);
    for (int t : context) {
      if (t >= 0 && t < vocab) seen[static_cast<std::size_t>(t)] = 1;
    }
    for (int t = 0; t < vocab; ++t) {
      if (!seen[static_cast<std::size_t>(t)]) continue;
      double& l = logits[static_cast<std::size_t>(t)];
      l = l > 0.0 ? l / params.repetition_penalty
                  : l * params.repetition_penalty;
    }
  }

  for (double& l : logits) l /= params.temperature;

  // Sort token ids by (logit desc, id asc); top-k keeps a prefix.
  std::vector<int> order(static_cast<std::size_t>(vocab));
  for (int i = 0; i < vocab; ++i) order[static_cast<std::size_t>(i)] = i;
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    const double la = logits[static_cast<std::size_t>(a)];
    const double lb = logits[static_cast<std::size_t>(b)];
    if (la != lb) return la > lb;
    return a < b;
  });
  int kept = std::min(params.top_k, vocab);

  // Softmax over the kept prefix (stable).
  const double mx = logits[static_cast<std::size_t>(order[0])];
  std::vector<double> probs(static_cast<std::size_t>(kept));
  double z = 0.0;
  for (int i = 0; i < kept; ++i) {
    probs[static_cast<std::size_t>(i)] =
        std::exp(logits[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] - mx);
    z += probs[static_cast<std::size_t>(i)];
  }
  for (double& p : probs) p /= z;

  // Nucleus: smallest prefix of the probability-sorted tokens reaching
  // top_p. The order above is already by probability desc with id-ascending
  // tie-breaks, so the prefix rule applies directly.
  double cum = 0.0;
  int nucleus = kept;
  for (int i = 0; i < kept; ++i) {
    cum += probs[static_cast<std::size_t>(i)];
    if (cum >= params.top_p) {
      nucleus = i + 1;
      break;
    }
  }
  if (nucleus < 1) throw Error("sample_token: truncation emptied the support");

  double mass = 0.0;
  for (int i = 0; i < nucleus; ++i) mass += probs[static_cast<std::size_t>(i)];
  const double u = rng.uniform() * mass;
  double acc = 0.0;
  for (int i = 0; i < nucleus; ++i) {
    acc += probs[static_cast<std::size_t>(i)];
    if (u < acc) return order[static_cast<std::size_t>(i)];
  }
  return order[static_cast<std::size_t>(nucleus - 1)];
}

namespace {

bool is_well_formed(const std::vector<int>& tokens) {
  // THINK_OPEN think* THINK_CLOSE ANS_OPEN digit+ ANS_CLOSE
  std::size_t i = 0;
  if (i >= tokens.size() || tokens[i] != tok::THINK_OPEN) return false;
  ++i;
  auto think_ok = [](int t) {
    return tok::is_digit(t) || t == tok::PLUS || t == tok::STAR ||
           t == tok::MOD || t == tok::REVISE_CUE;
  };
  while (i < tokens.size() && think_ok(tokens[i])) ++i;
  if (i >= tokens.size() || tokens[i] != tok::THINK_CLOSE) return false;
  ++i;
  if (i >= tokens.size() || tokens[i] != tok::ANS_OPEN) return false;
  ++i;
  std::size_t digits = 0;
  while (i < tokens.size() && tok::is_digit(tokens[i])) {
    ++i;
    ++digits;
  }
  if (digits == 0) return false;
  if (i >= tokens.size() || tokens[i] != tok::ANS_CLOSE) return false;
  ++i;
  return i == tokens.size();
}

void finalize_step(Step& step, const TaskInstance& task) {
  step.parsed_answer = parse_answer(step.tokens);
  step.well_formed = step.end != StepEnd::Overflow && is_well_formed(step.tokens);
  step.is_correct =
      step.parsed_answer.has_value() && verify_answer(task, *step.parsed_answer);
}

}  // namespace

Step generate_step(const ModelParams& params, const std::vector<int>& context,
                   const SamplingParams& sampling, Rng& rng) {
  sampling.validate();
  Step step;
  const int max_context = params.config.max_context;
  std::vector<int> ctx = context;

  for (int n = 0; n < sampling.max_step_tokens; ++n) {
    if (static_cast<int>(ctx.size()) >= max_context) {
      step.end = StepEnd::Overflow;
      return step;
    }
    const std::vector<double> row = last_logits(params, ctx);
    const int t = sample_token(row, ctx, sampling, rng);
    step.sep_minus_eos_logit =
        row[static_cast<std::size_t>(tok::STEP_SEP)] -
        row[static_cast<std::size_t>(tok::EOS)];
    if (t == tok::STEP_SEP || t == tok::EOS) {
      step.terminator = t;
      step.end = t == tok::STEP_SEP ? StepEnd::Sep : StepEnd::Eos;
      return step;
    }
    step.tokens.push_back(t);
    ctx.push_back(t);
  }
  step.end = StepEnd::Cap;
  // Boundary logits for the inference stop rule when no terminator was drawn.
  if (static_cast<int>(ctx.size()) < max_context) {
    const std::vector<double> row = last_logits(params, ctx);
    step.sep_minus_eos_logit =
        row[static_cast<std::size_t>(tok::STEP_SEP)] -
        row[static_cast<std::size_t>(tok::EOS)];
  }
  return step;
}

namespace {

Trajectory run_trajectory(const ModelParams& params, const TaskInstance& task,
                          int t_cap, const SamplingParams& sampling, Rng& rng,
                          bool training_mode) {
  if (t_cap < 1) throw ConfigError("recursion depth must be >= 1");
  Trajectory traj;
  traj.task = task;
  std::vector<int> ctx = task.question_tokens;

  for (int t = 0; t < t_cap; ++t) {
    Step step = generate_step(params, ctx, sampling, rng);
    const bool overflow = step.end == StepEnd::Overflow;
    finalize_step(step, task);
    const StepEnd end = step.end;
    const bool correct = step.is_correct;
    const bool well_formed = step.well_formed;
    const double boundary = step.sep_minus_eos_logit;
    const bool has_tokens = !step.tokens.empty() || step.terminator.has_value();
    if (overflow && !has_tokens) break;  // nothing generated, trajectory ends
    for (int tk : step.tokens) ctx.push_back(tk);
    ctx.push_back(tok::STEP_SEP);  // conditioning separator, always STEP_SEP
    traj.steps.push_back(std::move(step));
    if (training_mode) {
      if (correct) {
        traj.truncated = t + 1 < t_cap;
        break;
      }
      if (overflow) break;
    } else {
      if (end == StepEnd::Eos) break;
      if (well_formed && boundary < 0.0) break;
      if (overflow) break;
    }
  }

  // Effective depth M: first correct step (1-based) or step count.
  traj.effective_depth = static_cast<int>(traj.steps.size());
  for (std::size_t i = 0; i < traj.steps.size(); ++i) {
    if (traj.steps[i].is_correct) {
      traj.effective_depth = static_cast<int>(i) + 1;
      break;
    }
  }
  return traj;
}

}  // namespace

Trajectory generate_trajectory(const ModelParams& params,
                               const TaskInstance& task, int T,
                               const SamplingParams& sampling, Rng& rng) {
  return run_trajectory(params, task, T, sampling, rng, true);
}

Trajectory eval_trajectory(const ModelParams& params, const TaskInstance& task,
                           int t_max, const SamplingParams& sampling,
                           Rng& rng) {
  return run_trajectory(params, task, t_max, sampling, rng, false);
}

Group sample_group(const ModelParams& params, const TaskInstance& task, int G,
                   int T, const SamplingParams& sampling,
                   std::uint64_t run_seed) {
  if (G < 2) throw ConfigError("sample_group: G must be >= 2");
  Group group;
  group.task = task;
  group.trajectories.resize(static_cast<std::size_t>(G));
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < G; ++i) {
    Rng rng(Rng::mix(run_seed, task.id, static_cast<std::uint64_t>(i)));
    group.trajectories[static_cast<std::size_t>(i)] =
        generate_trajectory(params, task, T, sampling, rng);
  }
  return group;
}

std::vector<int> Trajectory::full_tokens() const {
  std::vector<int> out = task.question_tokens;
  for (std::size_t s = 0; s < steps.size(); ++s) {
    const Step& st = steps[s];
    out.insert(out.end(), st.tokens.begin(), st.tokens.end());
    const bool last = s + 1 == steps.size();
    if (!last) {
      out.push_back(tok::STEP_SEP);
    } else if (st.terminator.has_value()) {
      out.push_back(*st.terminator);
    }
  }
  return out;
}

void Trajectory::generated(std::vector<int>& positions,
                           std::vector<int>& sampled) const {
  positions.clear();
  sampled.clear();
  int pos = static_cast<int>(task.question_tokens.size());
  for (const Step& st : steps) {
    for (int tk : st.tokens) {
      positions.push_back(pos++);
      sampled.push_back(tk);
    }
    if (st.terminator.has_value()) {
      positions.push_back(pos);
      sampled.push_back(*st.terminator);
    }
    if (st.end != StepEnd::Overflow) ++pos;  // separator slot
  }
}

int Trajectory::decoding_tokens() const {
  int n = 0;
  for (const Step& st : steps) {
    n += static_cast<int>(st.tokens.size());
    if (st.terminator.has_value()) ++n;
  }
  return n;
}

nlohmann::json trajectory_to_json(const Trajectory& traj, int index) {
  nlohmann::json steps = nlohmann::json::array();
  for (const Step& st : traj.steps) {
    nlohmann::json s{{"tokens", Vocabulary::decode(st.tokens)},
                     {"is_correct", st.is_correct},
                     {"well_formed", st.well_formed}};
    if (st.parsed_answer) s["parsed_answer"] = *st.parsed_answer;
    if (st.confidence) s["confidence"] = *st.confidence;
    if (st.terminator) s["terminator"] = Vocabulary::symbol(*st.terminator);
    steps.push_back(std::move(s));
  }
  return nlohmann::json{{"task_id", traj.task.id},
                        {"trajectory_index", index},
                        {"steps", std::move(steps)},
                        {"M", traj.effective_depth},
                        {"truncated", traj.truncated}};
}

}  // namespace rta
