#include "rta/grpo.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>
#include <omp.h>

#include "rta/checkpoint.hpp"
#include "rta/errors.hpp"
#include "rta/task.hpp"

namespace rta {

namespace fs = std::filesystem;

std::vector<double> compute_advantages(const std::vector<double>& rewards,
                                       double std_guard) {
  if (rewards.size() < 2) {
    throw Error("compute_advantages: group size " +
                std::to_string(rewards.size()) + " < 2");
  }
  const bool constant =
      std::all_of(rewards.begin(), rewards.end(),
                  [&](double r) { return r == rewards.front(); });
  if (constant) return std::vector<double>(rewards.size(), 0.0);
  const double n = static_cast<double>(rewards.size());
  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= n;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double sd = std::sqrt(var / n);
  std::vector<double> out(rewards.size());
  const double denom = std::max(sd, std_guard);
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    out[i] = (rewards[i] - mean) / denom;
  }
  return out;
}

std::vector<double> per_token_log_probs(const ModelParams& params,
                                        const std::vector<int>& full,
                                        const std::vector<int>& rows,
                                        const std::vector<int>& sampled) {
  if (rows.empty()) return {};
  Tape tape;
  const auto leaves = bind_params(tape, params, false);
  const int logits = build_logits(tape, params, leaves, full);
  const int gathered = tape.gather_rows(logits, rows);
  const int ce = tape.softmax_cross_entropy(gathered, sampled);
  const Tensor& nll = tape.val(ce);
  std::vector<double> out(nll.data.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = -nll.data[i];
  return out;
}

RatioData make_ratio_data(const Trajectory& trajectory, double advantage,
                          const ModelParams& theta_old, const ModelParams& ref,
                          const GrpoConfig& config) {
  RatioData d;
  d.full = trajectory.full_tokens();
  std::vector<int> positions;
  trajectory.generated(positions, d.sampled);
  d.rows.reserve(positions.size());
  for (int p : positions) d.rows.push_back(p - 1);
  d.logp_old = per_token_log_probs(theta_old, d.full, d.rows, d.sampled);
  d.logp_ref = per_token_log_probs(ref, d.full, d.rows, d.sampled);
  d.advantage.assign(d.sampled.size(), advantage);
  (void)config;
  return d;
}

namespace {

void accumulate_stats(const std::vector<double>& logp,
                      const RatioData& d, const GrpoConfig& config,
                      GrpoLossStats& stats) {
  for (std::size_t i = 0; i < logp.size(); ++i) {
    const double r = std::exp(logp[i] - d.logp_old[i]);
    const double a = d.advantage[i];
    const double u = r * a;
    const double cl =
        std::clamp(r, 1.0 - config.epsilon, 1.0 + config.epsilon) * a;
    if (u > cl) stats.clip_fraction += 1.0;
    const double kl_ratio = std::exp(d.logp_ref[i] - logp[i]);
    const double kl = kl_ratio - (d.logp_ref[i] - logp[i]) - 1.0;
    if (kl < -1e-12) throw Error("grpo: negative KL estimate");
    stats.kl_mean += kl;
    ++stats.tokens;
  }
}

}  // namespace

int build_grpo_loss(Tape& tape, const ModelParams& theta,
                    const std::map<std::string, int>& leaves,
                    std::span<const RatioData> batch, const GrpoConfig& config,
                    GrpoLossStats* stats) {
  config.validate();
  GrpoLossStats local;
  int acc = -1;
  for (const RatioData& d : batch) {
    if (d.sampled.empty()) continue;
    const int logits = build_logits(tape, theta, leaves, d.full);
    const int gathered = tape.gather_rows(logits, d.rows);
    const int ce = tape.softmax_cross_entropy(gathered, d.sampled);
    const int logp = tape.scalar_scale(ce, -1.0);
    int tl;
    if (config.sequence_level_ratio) {
      const int logp_sum = tape.reduce_sum(logp);
      double old_sum = 0.0, ref_sum = 0.0;
      for (double v : d.logp_old) old_sum += v;
      for (double v : d.logp_ref) ref_sum += v;
      const double adv = d.advantage.empty() ? 0.0 : d.advantage.front();
      const std::vector<double> o{old_sum}, rf{ref_sum}, av{adv};
      tl = tape.grpo_token_loss(logp_sum, o, rf, av, config.epsilon,
                                config.beta);
    } else {
      tl = tape.grpo_token_loss(logp, d.logp_old, d.logp_ref, d.advantage,
                                config.epsilon, config.beta);
    }
    const Tensor& lp = tape.val(logp);
    accumulate_stats(lp.data, d, config, local);
    const int weighted = tape.scalar_scale(tl, d.weight);
    acc = acc < 0 ? weighted : tape.add(acc, weighted);
  }
  if (acc < 0) acc = tape.leaf(Tensor::scalar(0.0));
  if (stats) {
    *stats = local;
    if (local.tokens > 0) {
      stats->clip_fraction /= static_cast<double>(local.tokens);
      stats->kl_mean /= static_cast<double>(local.tokens);
    }
  }
  return acc;
}

double grpo_loss(const ModelParams& theta, const ModelParams& theta_old,
                 const ModelParams& ref, const Group& group,
                 const GrpoConfig& config, GrpoLossStats* stats) {
  if (group.advantages.size() != group.trajectories.size()) {
    throw Error("grpo_loss: group advantages missing or incomplete");
  }
  const std::uint64_t old_sum = params_checksum(theta_old);
  const std::uint64_t ref_sum = params_checksum(ref);
  std::vector<RatioData> batch(group.trajectories.size());
  const double w = 1.0 / static_cast<double>(group.trajectories.size());
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < static_cast<int>(group.trajectories.size()); ++i) {
    const std::size_t u = static_cast<std::size_t>(i);
    batch[u] = make_ratio_data(group.trajectories[u], group.advantages[u],
                               theta_old, ref, config);
    batch[u].weight = w;
  }
  Tape tape;
  const auto leaves = bind_params(tape, theta, false);
  const int loss = build_grpo_loss(tape, theta, leaves, batch, config, stats);
  if (params_checksum(theta_old) != old_sum ||
      params_checksum(ref) != ref_sum) {
    throw Error("grpo_loss: frozen policy mutated");
  }
  return tape.scalar_val(loss);
}

IterationMetrics train_step(TrainState& state,
                            const std::vector<TaskInstance>& batch,
                            const GrpoConfig& config,
                            const RewardConfig& reward_config,
                            const SamplingParams& sampling,
                            std::vector<Group>* out_groups) {
  config.validate();
  reward_config.validate();
  sampling.validate();
  if (batch.empty()) throw ConfigError("train_step: empty task batch");

  state.theta_old = clone_frozen(state.theta, ParamRole::ThetaOld);
  const std::uint64_t roll_seed =
      Rng::mix(state.run_seed, 0x726f6cULL,
               static_cast<std::uint64_t>(state.iteration));

  std::vector<Group> groups(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    groups[b] = sample_group(state.theta_old, batch[b], config.group_size,
                             config.depth, sampling, roll_seed);
  }

  // Confidence scoring on the frozen pre-update scorer.
  std::vector<Trajectory*> flat;
  for (Group& g : groups) {
    for (Trajectory& t : g.trajectories) flat.push_back(&t);
  }
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < static_cast<int>(flat.size()); ++i) {
    Trajectory& t = *flat[static_cast<std::size_t>(i)];
    for (Step& st : t.steps) {
      st.confidence = score(state.conf, t.task.question_tokens, st.tokens);
    }
  }

  IterationMetrics mets;
  const OopsLexicon lexicon;
  const double inv_n = 1.0 / static_cast<double>(flat.size());
  for (Group& g : groups) {
    g.rewards.resize(g.trajectories.size());
    for (std::size_t i = 0; i < g.trajectories.size(); ++i) {
      const Trajectory& t = g.trajectories[i];
      std::vector<double> confs;
      confs.reserve(t.steps.size());
      for (const Step& st : t.steps) confs.push_back(*st.confidence);
      const RewardBreakdown rb = total_reward(t, confs, reward_config);
      g.rewards[i] = rb.total;
      mets.mean_reward += rb.total * inv_n;
      mets.r_increase += rb.r_increase * inv_n;
      mets.r_final += rb.r_final * inv_n;
      mets.r_format += rb.r_format * inv_n;
      mets.r_answer += rb.r_answer * inv_n;
      mets.r_length += rb.r_length * inv_n;
      mets.accuracy += (r_answer(t) > 0.0 ? 1.0 : 0.0) * inv_n;
      mets.mean_m += t.effective_depth * inv_n;
      mets.oops_mean += oops_count(t, lexicon) * inv_n;
      mets.decoding_tokens += t.decoding_tokens();
    }
    g.advantages = compute_advantages(g.rewards, config.std_guard);
  }

  // mu confidence updates on the rollout batch labels (Alg. order: before
  // the policy updates).
  std::vector<LabeledExample> labeled;
  for (const Trajectory* t : flat) {
    for (const Step& st : t->steps) {
      labeled.push_back({t->task.question_tokens, st.tokens, st.is_correct});
    }
  }
  online_update(state.conf, labeled, config.mu, config.conf_learning_rate,
                state.conf_opt);
  mets.conf_updates = labeled.empty() ? 0 : config.mu;

  std::vector<RatioData> data(flat.size());
  {
    std::size_t k = 0;
    std::vector<std::pair<const Trajectory*, double>> items;
    for (const Group& g : groups) {
      const double w = 1.0 / (static_cast<double>(g.trajectories.size()) *
                              static_cast<double>(groups.size()));
      for (std::size_t i = 0; i < g.trajectories.size(); ++i) {
        items.emplace_back(&g.trajectories[i], g.advantages[i]);
        data[k++].weight = w;
      }
    }
#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < static_cast<int>(items.size()); ++i) {
      const std::size_t u = static_cast<std::size_t>(i);
      const double w = data[u].weight;
      data[u] = make_ratio_data(*items[u].first, items[u].second,
                                state.theta_old, state.ref, config);
      data[u].weight = w;
    }
  }

  for (int u = 0; u < config.mu; ++u) {
    Tape tape;
    const auto leaves = bind_params(tape, state.theta, true);
    GrpoLossStats stats;
    const int loss =
        build_grpo_loss(tape, state.theta, leaves, data, config, &stats);
    GradientMap grads = tape.backward(loss, leaves);
    const double norm = clip_global_norm(grads, config.grad_clip);
    state.policy_opt.step(state.theta.tensors, grads, config.learning_rate);
    if (u == 0) {
      mets.clip_fraction = stats.clip_fraction;
      mets.kl_mean = stats.kl_mean;
      mets.grad_norm = norm;
    }
  }
  mets.policy_updates = config.mu;

  ++state.iteration;
  if (out_groups) *out_groups = std::move(groups);
  return mets;
}

namespace {

int latest_checkpoint_iter(const std::string& out_dir) {
  int best = -1;
  if (!fs::exists(out_dir)) return best;
  for (const auto& e : fs::directory_iterator(out_dir)) {
    const std::string name = e.path().filename().string();
    if (name.rfind("iter-", 0) != 0) continue;
    const int it = std::atoi(name.c_str() + 5);
    if (it > best && fs::exists(e.path() / "policy" / "manifest.txt") &&
        fs::exists(e.path() / "confidence" / "manifest.txt")) {
      best = it;
    }
  }
  return best;
}

void save_iteration(const std::string& out_dir, int iteration,
                    const TrainState& state) {
  const fs::path dir = fs::path(out_dir) / ("iter-" + std::to_string(iteration));
  save_checkpoint((dir / "policy").string(), state.theta);
  save_checkpoint((dir / "confidence").string(), state.conf.model);
}

nlohmann::json group_to_json(const Group& g, int iteration) {
  nlohmann::json arr = nlohmann::json::array();
  for (std::size_t i = 0; i < g.trajectories.size(); ++i) {
    nlohmann::json j = trajectory_to_json(g.trajectories[i],
                                          static_cast<int>(i));
    j["iteration"] = iteration;
    j["reward"] = g.rewards[i];
    j["advantage"] = g.advantages[i];
    arr.push_back(std::move(j));
  }
  return arr;
}

}  // namespace

void train(const TrainConfig& config_in, bool resume) {
  TrainConfig config = config_in;
  config.resolve();
  config.validate();

  if (!fs::exists(config.tasks_path)) {
    throw MissingInputError("task file not found: " + config.tasks_path);
  }
  const std::vector<TaskInstance> tasks = load_tasks(config.tasks_path);
  if (tasks.empty()) {
    throw MissingInputError("task file is empty: " + config.tasks_path);
  }
  if (!fs::exists(fs::path(config.policy_ckpt) / "manifest.txt")) {
    throw MissingInputError("policy checkpoint not found: " +
                            config.policy_ckpt);
  }
  if (!fs::exists(fs::path(config.conf_ckpt) / "manifest.txt")) {
    throw MissingInputError("confidence checkpoint not found: " +
                            config.conf_ckpt);
  }
  fs::create_directories(config.out_dir);

  TrainState state;
  state.run_seed = config.run_seed;
  state.theta = load_checkpoint(config.policy_ckpt);
  state.theta.role = ParamRole::Theta;

  const fs::path ref_dir = fs::path(config.out_dir) / "ref";
  if (resume && fs::exists(ref_dir / "manifest.txt")) {
    state.ref = load_checkpoint(ref_dir.string());
  } else {
    state.ref = clone_frozen(state.theta, ParamRole::Ref);
    save_checkpoint(ref_dir.string(), state.ref);
  }
  const std::uint64_t ref_checksum = params_checksum(state.ref);

  state.conf.model = load_checkpoint(config.conf_ckpt);
  state.conf.model.role = ParamRole::Confidence;

  int start_iter = 0;
  if (resume) {
    const int latest = latest_checkpoint_iter(config.out_dir);
    if (latest >= 0) {
      const fs::path dir =
          fs::path(config.out_dir) / ("iter-" + std::to_string(latest));
      state.theta = load_checkpoint((dir / "policy").string());
      state.theta.role = ParamRole::Theta;
      state.conf.model = load_checkpoint((dir / "confidence").string());
      state.conf.model.role = ParamRole::Confidence;
      start_iter = latest;
    }
  }
  state.iteration = start_iter;
  state.theta_old = clone_frozen(state.theta, ParamRole::ThetaOld);

  const std::string manifest_path =
      (fs::path(config.out_dir) / "manifest.txt").string();
  if (!resume || !fs::exists(manifest_path)) {
    write_manifest(config, manifest_path);
  }

  const std::vector<std::string> columns{
      "iteration",     "mean_reward", "r_increase",    "r_final",
      "r_format",      "r_answer",    "r_length",      "accuracy",
      "mean_m",        "oops_mean",   "clip_fraction", "kl_mean",
      "grad_norm",     "decoding_tokens", "total_decoding_tokens"};
  CsvEmitter metrics((fs::path(config.out_dir) / "metrics.csv").string(),
                     columns);
  CsvEmitter timing((fs::path(config.out_dir) / "timing.csv").string(),
                    {"iteration", "wall_seconds"});
  std::int64_t total_tokens = 0;
  if (resume) {
    const std::string mpath =
        (fs::path(config.out_dir) / "metrics.csv").string();
    if (fs::exists(mpath)) {
      const CsvTable prev = read_csv(mpath);
      const int it_col = prev.column("iteration");
      const int tot_col = prev.column("total_decoding_tokens");
      for (const auto& row : prev.rows) {
        if (row[static_cast<std::size_t>(it_col)] <=
            static_cast<double>(start_iter)) {
          metrics.append(row);
          total_tokens = static_cast<std::int64_t>(
              row[static_cast<std::size_t>(tot_col)]);
        }
      }
    }
  }

  std::ofstream dump(fs::path(config.out_dir) / "trajectories.jsonl",
                     resume ? std::ios::app : std::ios::trunc);
  if (!dump) throw IoError("cannot write trajectory dump in " + config.out_dir);

  // Running tallies for the end-of-run summary (last 10% of iterations).
  std::vector<double> tail_acc, tail_oops;

  for (int it = start_iter; it < config.grpo.iterations; ++it) {
    Rng pick(Rng::mix(config.run_seed, 0xb17cULL,
                      static_cast<std::uint64_t>(it)));
    std::vector<TaskInstance> batch;
    for (int b = 0; b < config.grpo.batch_tasks; ++b) {
      batch.push_back(tasks[static_cast<std::size_t>(
          pick.below(static_cast<std::uint64_t>(tasks.size())))]);
    }

    const auto t0 = std::chrono::steady_clock::now();
    std::vector<Group> groups;
    const IterationMetrics m = train_step(state, batch, config.grpo,
                                          config.reward, config.sampling,
                                          &groups);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();

    total_tokens += m.decoding_tokens;
    const double iter_d = static_cast<double>(state.iteration);
    metrics.append({iter_d, m.mean_reward, m.r_increase, m.r_final,
                    m.r_format, m.r_answer, m.r_length, m.accuracy, m.mean_m,
                    m.oops_mean, m.clip_fraction, m.kl_mean, m.grad_norm,
                    static_cast<double>(m.decoding_tokens),
                    static_cast<double>(total_tokens)});
    metrics.flush();
    timing.append({iter_d, secs});
    timing.flush();

    for (const Group& g : groups) {
      for (const auto& j : group_to_json(g, state.iteration)) {
        dump << j.dump() << "\n";
      }
    }
    dump.flush();

    const int tail_start = config.grpo.iterations -
                           std::max(1, config.grpo.iterations / 10);
    if (state.iteration > tail_start) {
      tail_acc.push_back(m.accuracy);
      tail_oops.push_back(m.oops_mean);
    }

    if (state.iteration % config.save_every == 0 ||
        state.iteration == config.grpo.iterations) {
      save_iteration(config.out_dir, state.iteration, state);
    }
  }

  if (params_checksum(state.ref) != ref_checksum) {
    throw Error("train: reference policy mutated during the run");
  }

  auto mean_of = [](const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  nlohmann::json summary{{"final_accuracy", mean_of(tail_acc)},
                         {"mean_oops", mean_of(tail_oops)},
                         {"token_totals",
                          {{"decoding_tokens", total_tokens}}},
                         {"iterations", state.iteration},
                         {"config_digest", config_digest(config)}};
  std::ofstream sf(fs::path(config.out_dir) / "summary.json",
                   std::ios::trunc);
  if (!sf) throw IoError("cannot write summary.json in " + config.out_dir);
  sf << summary.dump(2) << "\n";
}

}  // namespace rta
