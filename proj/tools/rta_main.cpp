#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "rta/checkpoint.hpp"
#include "rta/confidence.hpp"
#include "rta/config.hpp"
#include "rta/errors.hpp"
#include "rta/grpo.hpp"
#include "rta/metrics.hpp"
#include "rta/model.hpp"
#include "rta/reward.hpp"
#include "rta/sampling.hpp"
#include "rta/sft.hpp"
#include "rta/task.hpp"

namespace fs = std::filesystem;

namespace {

// Exit codes: 2 bad flags, 3 io failure, 4 missing input artifact, 5 config
// schema violation.
constexpr int kExitBadFlags = 2;
constexpr int kExitIo = 3;
constexpr int kExitMissingInput = 4;
constexpr int kExitConfigSchema = 5;

[[noreturn]] void fail(int code, const std::string& msg) {
  std::cerr << "error: " << msg << "\n";
  std::exit(code);
}

// Maps library errors to exit codes; config_code distinguishes flag-level
// validation (gen-tasks et al., exit 2) from config-file schema checks
// (train/ablate, exit 5).
template <typename Fn>
void run_mapped(int config_code, Fn&& fn) {
  try {
    fn();
  } catch (const rta::MissingInputError& e) {
    fail(kExitMissingInput, e.what());
  } catch (const rta::ConfigError& e) {
    fail(config_code, e.what());
  } catch (const rta::IoError& e) {
    fail(kExitIo, e.what());
  } catch (const rta::Error& e) {
    fail(1, e.what());
  }
}

rta::ModelParams load_policy_or_exit(const std::string& dir) {
  if (!fs::exists(fs::path(dir) / "manifest.txt")) {
    fail(kExitMissingInput, "policy checkpoint not found: " + dir);
  }
  rta::ModelParams p = rta::load_checkpoint(dir);
  p.role = rta::ParamRole::Theta;
  return p;
}

std::vector<rta::TaskInstance> load_tasks_or_exit(const std::string& path) {
  if (!fs::exists(path)) fail(kExitIo, "task file not found: " + path);
  std::vector<rta::TaskInstance> tasks = rta::load_tasks(path);
  if (tasks.empty()) fail(kExitMissingInput, "task file is empty: " + path);
  return tasks;
}

void write_loss_csv(const std::string& path, const std::string& column,
                    const std::vector<double>& losses) {
  rta::CsvEmitter csv(path, {"index", column});
  for (std::size_t i = 0; i < losses.size(); ++i) {
    csv.append({static_cast<double>(i), losses[i]});
  }
  csv.flush();
}

struct EvalTotals {
  int correct = 0;
  double steps = 0.0;
  double oops = 0.0;
  std::int64_t tokens = 0;
};

void setup_gen_tasks(CLI::App& app) {
  auto* cmd = app.add_subcommand("gen-tasks", "generate a verifiable task set");
  auto family = std::make_shared<std::string>("modular-chain");
  auto difficulty = std::make_shared<int>(2);
  auto modulus = std::make_shared<int>(7);
  auto count = std::make_shared<int>(1000);
  auto seed = std::make_shared<std::uint64_t>(0);
  auto out = std::make_shared<std::string>();
  cmd->add_option("--family", *family, "modular-chain | multi-digit-add");
  cmd->add_option("--difficulty", *difficulty, "operand / digit count");
  cmd->add_option("--modulus", *modulus, "modulus (modular-chain)");
  cmd->add_option("--count", *count, "number of tasks");
  cmd->add_option("--seed", *seed, "generation seed");
  cmd->add_option("--out", *out, "output path (jsonl)")->required();
  cmd->callback([=]() {
    run_mapped(kExitBadFlags, [&]() {
      if (*count < 1) throw rta::ConfigError("--count must be >= 1");
      rta::TaskSpec spec;
      spec.family = rta::family_from_name(*family);
      spec.difficulty = *difficulty;
      spec.modulus = *modulus;
      spec.seed = *seed;
      spec.validate();
      rta::Rng rng(*seed);
      std::vector<rta::TaskInstance> tasks;
      tasks.reserve(static_cast<std::size_t>(*count));
      for (int i = 0; i < *count; ++i) {
        tasks.push_back(rta::generate_task(spec, rng));
      }
      rta::save_tasks(*out, tasks);
      std::cout << "count=" << tasks.size() << "\n"
                << "checksum=" << rta::file_checksum(*out) << "\n"
                << "path=" << *out << "\n";
    });
  });
}

void setup_pretrain_policy(CLI::App& app) {
  auto* cmd = app.add_subcommand(
      "pretrain-policy", "behavior-clone the step grammar into a fresh policy");
  auto tasks_path = std::make_shared<std::string>();
  auto out = std::make_shared<std::string>();
  auto seed = std::make_shared<std::uint64_t>(0);
  auto d_model = std::make_shared<int>(32);
  auto n_layers = std::make_shared<int>(2);
  auto n_heads = std::make_shared<int>(2);
  auto max_context = std::make_shared<int>(256);
  auto cfg = std::make_shared<rta::SftConfig>();
  cmd->add_option("--tasks", *tasks_path, "task set (jsonl)")->required();
  cmd->add_option("--out", *out, "checkpoint directory")->required();
  cmd->add_option("--seed", *seed, "run seed");
  cmd->add_option("--d-model", *d_model, "model width");
  cmd->add_option("--n-layers", *n_layers, "transformer blocks");
  cmd->add_option("--n-heads", *n_heads, "attention heads");
  cmd->add_option("--max-context", *max_context, "context length");
  cmd->add_option("--depth", cfg->depth, "teacher trace depth");
  cmd->add_option("--correct-rate", cfg->correct_rate,
                  "teacher step correctness rate");
  cmd->add_option("--traces-per-task", cfg->traces_per_task,
                  "teacher traces per task");
  cmd->add_option("--epochs", cfg->epochs, "training epochs");
  cmd->add_option("--batch-size", cfg->batch_size, "examples per step");
  cmd->add_option("--lr-start", cfg->learning_rate_start, "initial lr");
  cmd->add_option("--lr-end", cfg->learning_rate_end, "final lr");
  cmd->callback([=]() {
    run_mapped(kExitBadFlags, [&]() {
      const auto tasks = load_tasks_or_exit(*tasks_path);
      rta::ModelConfig mc;
      mc.vocab_size = rta::Vocabulary::size();
      mc.d_model = *d_model;
      mc.n_layers = *n_layers;
      mc.n_heads = *n_heads;
      mc.max_context = *max_context;
      mc.seed = *seed;
      mc.validate();
      cfg->seed = *seed;
      rta::ModelParams theta = rta::init_policy(mc);
      const std::vector<double> losses = rta::sft_train(theta, tasks, *cfg);
      rta::save_checkpoint(*out, theta);
      write_loss_csv((fs::path(*out) / "sft_loss.csv").string(), "loss",
                     losses);
      std::cout << "epochs=" << losses.size() << "\n"
                << "first_loss=" << rta::format_g17(losses.front()) << "\n"
                << "final_loss=" << rta::format_g17(losses.back()) << "\n"
                << "checkpoint=" << *out << "\n";
    });
  });
}

void setup_pretrain_conf(CLI::App& app) {
  auto* cmd = app.add_subcommand("pretrain-conf",
                                 "pretrain the confidence scorer");
  auto tasks_path = std::make_shared<std::string>();
  auto policy_ckpt = std::make_shared<std::string>();
  auto out = std::make_shared<std::string>();
  auto seed = std::make_shared<std::uint64_t>(0);
  auto sched = std::make_shared<rta::PretrainSchedule>();
  auto sampling = std::make_shared<rta::SamplingParams>();
  cmd->add_option("--tasks", *tasks_path, "task set (jsonl)")->required();
  cmd->add_option("--policy-ckpt", *policy_ckpt, "policy checkpoint")
      ->required();
  cmd->add_option("--out", *out, "confidence checkpoint directory")
      ->required();
  cmd->add_option("--seed", *seed, "run seed");
  cmd->add_option("--n", sched->n_per_task, "samples per question");
  cmd->add_option("--epochs", sched->epochs, "training epochs");
  cmd->add_option("--batch-size", sched->batch_size, "examples per step");
  cmd->add_option("--lr-start", sched->learning_rate_start, "initial lr");
  cmd->add_option("--lr-end", sched->learning_rate_end, "final lr");
  cmd->add_option("--max-step-tokens", sampling->max_step_tokens,
                  "sampling cap per step");
  cmd->callback([=]() {
    run_mapped(kExitBadFlags, [&]() {
      const auto tasks = load_tasks_or_exit(*tasks_path);
      const rta::ModelParams policy = load_policy_or_exit(*policy_ckpt);
      sched->seed = *seed;
      const std::vector<rta::LabeledExample> examples =
          rta::build_pretrain_set(policy, tasks, *sched, *sampling);
      if (examples.empty()) {
        throw rta::MissingInputError(
            "pretraining set is empty for every task");
      }
      rta::ConfidenceParams conf = rta::init_confidence(policy, *seed);
      const std::vector<double> losses =
          rta::pretrain(conf, examples, *sched);
      rta::save_checkpoint(*out, conf.model);
      write_loss_csv((fs::path(*out) / "pretrain_loss.csv").string(), "loss",
                     losses);
      std::cout << "examples=" << examples.size() << "\n"
                << "first_loss=" << rta::format_g17(losses.front()) << "\n"
                << "final_loss=" << rta::format_g17(losses.back()) << "\n"
                << "checkpoint=" << *out << "\n";
    });
  });
}

void setup_train(CLI::App& app) {
  auto* cmd = app.add_subcommand("train", "run the recursive RL loop");
  auto config_path = std::make_shared<std::string>();
  auto resume = std::make_shared<bool>(false);
  cmd->add_option("--config", *config_path, "key=value config file")
      ->required();
  cmd->add_flag("--resume", *resume, "continue from the latest checkpoint");
  cmd->callback([=]() {
    run_mapped(kExitConfigSchema, [&]() {
      const rta::TrainConfig config = rta::load_train_config(*config_path);
      if (config.tasks_path.empty()) throw rta::ConfigError("run.tasks is required");
      if (config.out_dir.empty()) throw rta::ConfigError("run.out_dir is required");
      if (config.policy_ckpt.empty()) throw rta::ConfigError("run.policy_ckpt is required");
      if (config.conf_ckpt.empty()) throw rta::ConfigError("run.conf_ckpt is required");
      rta::train(config, *resume);
      std::cout << "out_dir=" << config.out_dir << "\n"
                << "iterations=" << config.grpo.iterations << "\n";
    });
  });
}

void setup_eval(CLI::App& app) {
  auto* cmd = app.add_subcommand(
      "eval", "inference-mode evaluation (no confidence model involved)");
  auto tasks_path = std::make_shared<std::string>();
  auto policy_ckpt = std::make_shared<std::string>();
  auto out = std::make_shared<std::string>();
  auto seed = std::make_shared<std::uint64_t>(0);
  auto t_max = std::make_shared<int>(4);
  auto sampling = std::make_shared<rta::SamplingParams>();
  cmd->add_option("--tasks", *tasks_path, "task set (jsonl)")->required();
  cmd->add_option("--policy-ckpt", *policy_ckpt, "policy checkpoint")
      ->required();
  cmd->add_option("--out", *out, "trajectory dump path (jsonl)");
  cmd->add_option("--seed", *seed, "evaluation seed");
  cmd->add_option("--t-max", *t_max, "recursion cap");
  cmd->add_option("--temperature", sampling->temperature, "softmax temperature");
  cmd->add_option("--top-p", sampling->top_p, "nucleus mass");
  cmd->add_option("--top-k", sampling->top_k, "candidate cap");
  cmd->add_option("--repetition-penalty", sampling->repetition_penalty,
                  "distinct-token penalty");
  cmd->add_option("--max-step-tokens", sampling->max_step_tokens,
                  "sampling cap per step");
  cmd->callback([=]() {
    run_mapped(kExitBadFlags, [&]() {
      if (*t_max < 1) throw rta::ConfigError("--t-max must be >= 1");
      const auto tasks = load_tasks_or_exit(*tasks_path);
      const rta::ModelParams policy = load_policy_or_exit(*policy_ckpt);
      std::ofstream dump;
      if (!out->empty()) {
        dump.open(*out, std::ios::trunc);
        if (!dump) throw rta::IoError("cannot write " + *out);
      }
      const rta::OopsLexicon lexicon;
      EvalTotals totals;
      for (std::size_t i = 0; i < tasks.size(); ++i) {
        rta::Rng rng(rta::Rng::mix(*seed, tasks[i].id, 0xe7a1ULL));
        const rta::Trajectory traj =
            rta::eval_trajectory(policy, tasks[i], *t_max, *sampling, rng);
        if (!traj.steps.empty() && traj.steps.back().is_correct) {
          ++totals.correct;
        }
        totals.steps += static_cast<double>(traj.steps.size());
        totals.oops += rta::oops_count(traj, lexicon);
        totals.tokens += traj.decoding_tokens();
        if (dump.is_open()) {
          dump << rta::trajectory_to_json(traj, static_cast<int>(i)).dump()
               << "\n";
        }
      }
      const double n = static_cast<double>(tasks.size());
      std::cout << "tasks=" << tasks.size() << "\n"
                << "accuracy=" << rta::format_g17(totals.correct / n) << "\n"
                << "mean_steps=" << rta::format_g17(totals.steps / n) << "\n"
                << "mean_oops=" << rta::format_g17(totals.oops / n) << "\n"
                << "decoding_tokens=" << totals.tokens << "\n";
    });
  });
}

void setup_ablate(CLI::App& app) {
  auto* cmd = app.add_subcommand(
      "ablate", "reward-component or recursion-depth sweep");
  auto config_path = std::make_shared<std::string>();
  auto sweep = std::make_shared<std::string>();
  cmd->add_option("--config", *config_path, "base key=value config file")
      ->required();
  cmd->add_option("--sweep", *sweep, "components | depth")->required();
  cmd->callback([=]() {
    run_mapped(kExitConfigSchema, [&]() {
      rta::TrainConfig base = rta::load_train_config(*config_path);
      if (base.out_dir.empty()) throw rta::ConfigError("run.out_dir is required");
      struct Variant {
        std::string name;
        rta::TrainConfig config;
      };
      std::vector<Variant> variants;
      if (*sweep == "depth") {
        for (int t = 1; t <= 4; ++t) {
          rta::TrainConfig c = base;
          c.grpo.depth = t;
          variants.push_back({"depth-" + std::to_string(t), std::move(c)});
        }
      } else if (*sweep == "components") {
        variants.push_back({"full", base});
        rta::TrainConfig c = base;
        c.reward.toggles.increase = false;
        variants.push_back({"no_increase", c});
        c = base;
        c.reward.toggles.final_conf = false;
        variants.push_back({"no_final_conf", c});
        c = base;
        c.reward.toggles.answer = false;
        variants.push_back({"no_answer", c});
      } else {
        throw rta::ConfigError("--sweep must be components or depth");
      }

      const std::string task_checksum = fs::exists(base.tasks_path)
                                            ? rta::file_checksum(base.tasks_path)
                                            : "";
      fs::create_directories(base.out_dir);
      std::ofstream table(fs::path(base.out_dir) / "comparison.csv",
                          std::ios::trunc);
      if (!table) {
        throw rta::IoError("cannot write comparison.csv in " + base.out_dir);
      }
      table << "name,final_accuracy,mean_oops,decoding_tokens,task_checksum\n";
      for (Variant& v : variants) {
        v.config.out_dir =
            (fs::path(base.out_dir) / v.name).string();
        rta::train(v.config, false);
        std::ifstream sf(fs::path(v.config.out_dir) / "summary.json");
        if (!sf) {
          throw rta::IoError("missing summary.json for " + v.name);
        }
        const nlohmann::json summary = nlohmann::json::parse(sf);
        table << v.name << ","
              << rta::format_g17(summary.at("final_accuracy").get<double>())
              << ","
              << rta::format_g17(summary.at("mean_oops").get<double>()) << ","
              << summary.at("token_totals").at("decoding_tokens")
                     .get<std::int64_t>()
              << "," << task_checksum << "\n";
        std::cout << "done=" << v.name << "\n";
      }
      std::cout << "table=" << (fs::path(base.out_dir) / "comparison.csv").string()
                << "\n";
    });
  });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"recursive think-answer training stack"};
  app.require_subcommand(1);
  setup_gen_tasks(app);
  setup_pretrain_policy(app);
  setup_pretrain_conf(app);
  setup_train(app);
  setup_eval(app);
  setup_ablate(app);
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitBadFlags;
  }
  return 0;
}
