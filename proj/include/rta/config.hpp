#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "rta/model.hpp"
#include "rta/reward.hpp"
#include "rta/sampling.hpp"

namespace rta {

struct GrpoConfig {
  double epsilon = 0.2;
  double beta = 0.04;
  int mu = 12;
  int group_size = 12;
  int depth = 4;  // T
  double learning_rate = 1e-6;
  double conf_learning_rate = 1e-6;
  int batch_tasks = 1;
  int iterations = 2000;
  double std_guard = 1e-8;
  double grad_clip = 1.0;
  bool sequence_level_ratio = false;

  void validate() const;
};

// Full run configuration; flat key=value file with typed schema validation.
struct TrainConfig {
  ModelConfig model;
  SamplingParams sampling;
  RewardConfig reward;
  GrpoConfig grpo;
  std::string tasks_path;
  std::string out_dir;
  std::string policy_ckpt;
  std::string conf_ckpt;
  std::uint64_t run_seed = 0;
  int save_every = 500;

  void validate() const;
  // Fills derived defaults (vocab size, reward caps) after parsing.
  void resolve();
  std::map<std::string, std::string> to_kv() const;
};

TrainConfig parse_train_config(const std::map<std::string, std::string>& kv);
TrainConfig load_train_config(const std::string& path);
std::map<std::string, std::string> read_kv_file(const std::string& path);

// Writes <out_dir>/manifest.txt: every resolved config key, tool version,
// run seed, timestamps, and checksums of the task file and input
// checkpoints.
void write_manifest(const TrainConfig& config, const std::string& path);

// FNV-1a over the sorted resolved key=value pairs, hex-encoded.
std::string config_digest(const TrainConfig& config);

inline constexpr const char* kToolVersion = "0.1.0";

}  // namespace rta
